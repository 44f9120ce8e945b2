"""
Monte-Carlo trials, BLER aggregation and CSV output.

A trial is fully determined by ``(cfg.seed, trial_index)``: payloads,
channel and the unit-variance noise shape are drawn from independent
streams keyed by that pair, and the noise is scaled by the SNR point.  All
receivers and SNR points therefore see the same draws for a given trial,
which makes receiver comparisons paired.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .. import fec
from ..channel import ChannelRealization, draw_channel, noise_var_from_snr, transmit
from ..codebook import map_bits
from ..core import RngStream
from ..receiver import turbo_receive
from .config import ScenarioConfig

__all__ = ["TrialResult", "BlerRecord", "transmit_block", "run_trial", "sweep", "to_csv", "CSV_COLUMNS"]

log = logging.getLogger(__name__)

CSV_COLUMNS = ("scheme", "receiver", "K", "L", "M", "Nr", "payload_bytes", "snr_db",
               "trials", "block_errors", "bler", "ci_lo", "ci_hi")


@dataclass
class TrialResult:
    errors: np.ndarray  # per-user block error flags
    decoded_after: list
    detector_calls: int


@dataclass(frozen=True)
class BlerRecord:
    scheme: str
    receiver: str
    K: int
    L: int
    M: int
    Nr: int
    payload_bytes: int
    snr_db: float
    trials: int
    block_errors: int

    @property
    def blocks(self) -> int:
        return self.trials * self.K

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks

    @property
    def wilson(self) -> tuple:
        lo, hi = proportion_confint(self.block_errors, self.blocks, alpha=0.05, method="wilson")
        return float(lo), float(hi)

    def row(self) -> list:
        lo, hi = self.wilson
        return [self.scheme, self.receiver, self.K, self.L, self.M, self.Nr, self.payload_bytes,
                f"{self.snr_db:.6g}", self.trials, self.block_errors,
                f"{self.bler:.6g}", f"{lo:.6g}", f"{hi:.6g}"]


def transmit_block(cfg: ScenarioConfig, trial_index: int, snr_db: float):
    """Draw the transmit side of one trial: payloads, channel and received signal."""
    K, J = cfg.K, int(np.log2(cfg.M))
    payload_rng = RngStream(cfg.seed, trial_index, "payload").generator()
    payloads = payload_rng.integers(0, 2, size=(K, cfg.payload_bits), dtype=np.int8)
    x = np.empty((K, cfg.n_symbols, cfg.L), dtype=complex)
    for k in range(K):
        cc = cfg.code_configs[k]
        bits = fec.interleave(fec.encode(fec.crc_attach(payloads[k]), cc), cc.interleaver_seed)
        x[k] = map_bits(bits, cfg.codebooks[k]).reshape(cfg.n_symbols, cfg.L)
    ch = draw_channel(RngStream(cfg.seed, trial_index, "channel").generator(), K, cfg.L, cfg.N_r,
                      cfg.channel, n_symbols=cfg.n_symbols, noise_var=noise_var_from_snr(snr_db))
    y = transmit(x, ch, RngStream(cfg.seed, trial_index, "noise").generator())
    return payloads, ch, y


def run_trial(cfg: ScenarioConfig, trial_index: int, snr_db: float | None = None,
              receiver: str | None = None, T_outer: int | None = None) -> TrialResult:
    """
    One transport block per user through the full chain.

    A user's block is in error when its CRC fails or its decoded payload
    differs from the transmitted one.
    """
    snr_db = cfg.snr_db[0] if snr_db is None else snr_db
    receiver = cfg.receiver[0] if receiver is None else receiver
    payloads, ch, y = transmit_block(cfg, trial_index, snr_db)
    res = turbo_receive(y, ch, cfg.graph, cfg.codebooks, cfg.code_configs, cfg.turbo_config(receiver, T_outer))
    errors = np.array([
        (not u.crc_ok) or not np.array_equal(u.hard_payload[: cfg.payload_bits], payloads[k])
        for k, u in enumerate(res.users)
    ])
    return TrialResult(errors, res.decoded_after, res.detector_calls)


def _count_errors(job) -> int:
    cfg, receiver, snr_db, start, stop, T_outer = job
    return int(sum(run_trial(cfg, t, snr_db, receiver, T_outer).errors.sum() for t in range(start, stop)))


def sweep(cfg: ScenarioConfig, workers: int = 1, T_outer: int | None = None, chunk: int = 50) -> list:
    """
    BLER for every (receiver, SNR) point, sorted by receiver then SNR.

    ``workers > 1`` runs chunks of trials in a process pool; the integer
    error counts make the result independent of the split.
    """
    points = sorted({(r, float(s)) for r in cfg.receiver for s in cfg.snr_db})
    jobs = []
    for r, s in points:
        for start in range(0, cfg.trials, chunk):
            jobs.append((cfg, r, s, start, min(cfg.trials, start + chunk), T_outer))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(_count_errors, jobs))
    else:
        counts = [_count_errors(j) for j in jobs]
    totals = {}
    for job, c in zip(jobs, counts):
        totals[(job[1], job[2])] = totals.get((job[1], job[2]), 0) + c
    records = []
    for r, s in points:
        rec = BlerRecord(cfg.scheme, r, cfg.K, cfg.L, cfg.M, cfg.N_r, cfg.payload_bytes, s,
                         cfg.trials, totals[(r, s)])
        log.info("%s %s snr=%g bler=%.4g", cfg.scheme, r, s, rec.bler)
        records.append(rec)
    return records


def to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow(rec.row())
    return buf.getvalue()
