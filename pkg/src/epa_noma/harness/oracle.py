"""
Exact-MAP cross-checks at small scale.

Uncoded symbol vectors are pushed through the scenario's codebooks and
channel model, and the per-user hard decisions of EPA, MMSE-PIC and the
exhaustive MAP detector are compared.  Every symbol vector is an
independent trial (fresh symbols, channel and noise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..baselines import MAP_BUDGET, exact_map_detect, mmse_pic_detect
from ..channel import draw_channel, noise_var_from_snr, transmit
from ..core import RngStream
from ..detector_epa import epa_detect, stack_codebooks
from .config import ConfigError, ScenarioConfig

__all__ = ["OracleReport", "uncoded_comparison"]


@dataclass(frozen=True)
class OracleReport:
    snr_db: float
    trials: int
    ser: dict  # detector name -> symbol error rate over all users
    epa_map_agreement: float  # fraction of (user, trial) hard decisions where EPA equals MAP

    def lines(self) -> list:
        out = [f"snr_db={self.snr_db:g} trials={self.trials}"]
        out += [f"  SER {name:9s} {v:.6g}" for name, v in self.ser.items()]
        out.append(f"  EPA/MAP agreement {self.epa_map_agreement:.6g}")
        return out


def _bits_to_index(llrs, labels, n_symbols):
    """Hard bit decisions (LLR < 0 is bit 1) mapped back to codeword indices."""
    K = llrs.shape[0]
    J = labels.shape[1]
    bits = (llrs.reshape(K, n_symbols, J) < 0).astype(int)
    weights = 1 << np.arange(J - 1, -1, -1)
    lookup = np.empty(1 << J, dtype=int)
    lookup[labels @ weights] = np.arange(labels.shape[0])
    return lookup[bits @ weights]


def uncoded_comparison(cfg: ScenarioConfig, snr_db: float, trials: int, batch: int = 10_000,
                       T_inner: int | None = None) -> OracleReport:
    """
    Uncoded SER of EPA, MMSE-PIC and exact MAP on the scenario's codebooks.

    Raises
    ------
    ConfigError
        If the joint hypothesis count ``M**K`` is beyond the exact-MAP budget.
    """
    if cfg.M**cfg.K > MAP_BUDGET:
        raise ConfigError(f"exact MAP needs M**K = {cfg.M**cfg.K} hypotheses, budget is {MAP_BUDGET}")
    codebooks, graph = cfg.codebooks, cfg.graph
    C, labels = stack_codebooks(codebooks)
    K = cfg.K
    T_inner = cfg.T_inner if T_inner is None else T_inner
    errors = {"epa": 0, "mmse-pic": 0, "map": 0}
    agree = 0
    for b, start in enumerate(range(0, trials, batch)):
        n = min(batch, trials - start)
        sym = RngStream(cfg.seed, b, "oracle-symbols").generator().integers(0, cfg.M, size=(K, n))
        x = C[np.arange(K)[:, None], sym]  # (K, n, L)
        ch = draw_channel(RngStream(cfg.seed, b, "oracle-channel").generator(), K, cfg.L, cfg.N_r,
                          cfg.channel, n_symbols=n, noise_var=noise_var_from_snr(snr_db))
        y = transmit(x, ch, RngStream(cfg.seed, b, "oracle-noise").generator())
        epa_hat = epa_detect(y, ch, graph, codebooks, T_inner=T_inner).posterior.hard_decision()
        map_hat = exact_map_detect(y, ch, graph, codebooks).hard_decision()
        mmse_hat = _bits_to_index(mmse_pic_detect(y, ch, graph, codebooks).extrinsic, labels, n)
        errors["epa"] += int((epa_hat != sym).sum())
        errors["map"] += int((map_hat != sym).sum())
        errors["mmse-pic"] += int((mmse_hat != sym).sum())
        agree += int((epa_hat == map_hat).sum())
    total = trials * K
    return OracleReport(float(snr_db), trials, {k: v / total for k, v in errors.items()}, agree / total)
