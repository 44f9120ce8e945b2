"""
Turbo-like outer loop between the multi-user detector and the per-user
decoders, with hybrid soft/hard parallel interference cancellation.

Every outer iteration:

1. the detector runs on the residual signal of the still-undecoded users,
   with the interleaved decoder extrinsics of the previous round as priors;
2. each undecoded user's detector extrinsics are deinterleaved and decoded;
   the decoder extrinsics are re-interleaved as the next detector priors;
3. users whose CRC passes are frozen.  With hard PIC on, their re-encoded
   signal is subtracted from the residual and they leave the factor graph;
   with hard PIC off they stay in the graph with saturated priors.

The loop ends after ``T_outer`` rounds or once every user is decoded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fec
from .baselines import map_detect, mmse_pic_detect, soft_symbols_from_llrs
from .channel import ChannelRealization, ReceivedSignal, noiseless
from .codebook import map_bits
from .core import FactorGraph
from .detector_epa import epa_detect

__all__ = ["TurboConfig", "UserResult", "TurboResult", "DETECTORS", "run_detector", "turbo_receive"]


@dataclass(frozen=True)
class TurboConfig:
    detector: str = "epa"
    T_outer: int = 3
    T_inner: int = 3
    hard_pic: bool = True
    damping: float = 1.0

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}; choose from {sorted(DETECTORS)}")
        if self.T_outer < 1 or self.T_inner < 1:
            raise ValueError("T_outer and T_inner must be at least 1")


@dataclass
class UserResult:
    hard_payload: np.ndarray
    crc_ok: bool
    iterations_used: int


@dataclass
class TurboResult:
    users: list
    detector_calls: int
    decoded_after: list = field(default_factory=list)  # decoded-user count after each round
    residual: np.ndarray | None = None


def _epa(y, ch, graph, codebooks, prior, cfg):
    return epa_detect(y, ch, graph, codebooks, prior, T_inner=cfg.T_inner, damping=cfg.damping)


def _mmse_pic(y, ch, graph, codebooks, prior, cfg):
    soft = None if prior is None else soft_symbols_from_llrs(prior, codebooks)
    return mmse_pic_detect(y, ch, graph, codebooks, soft)


def _map(y, ch, graph, codebooks, prior, cfg):
    return map_detect(y, ch, graph, codebooks, prior)


DETECTORS = {"epa": _epa, "mmse-pic": _mmse_pic, "map": _map}


def run_detector(name, y, ch, graph, codebooks, prior, cfg):
    """Dispatch to a detector; returns ``(K, coded_bits)`` extrinsic LLRs."""
    return DETECTORS[name](y, ch, graph, codebooks, prior, cfg).extrinsic


def turbo_receive(y: ReceivedSignal, ch: ChannelRealization, graph: FactorGraph, codebooks, code_cfgs,
                  cfg: TurboConfig = TurboConfig()) -> TurboResult:
    """
    Iterative detection and decoding of one transport block.

    Parameters
    ----------
    code_cfgs : list of fec.CodeConfig
        One per user; ``interleaver_seed`` selects the user's interleaver.
    """
    K = graph.num_users
    E = code_cfgs[0].coded_bits
    prior = np.zeros((K, E))
    decoded = np.zeros(K, dtype=bool)
    payloads = [np.zeros(c.payload_bits, dtype=np.int8) for c in code_cfgs]
    used = np.full(K, cfg.T_outer)
    residual = y.y.copy()
    calls = 0
    decoded_after = []

    for t in range(1, cfg.T_outer + 1):
        if cfg.hard_pic:
            users = np.flatnonzero(~decoded)
            y_in = ReceivedSignal(residual)
        else:
            users = np.arange(K)
            y_in = y
        sub_graph = graph.subgraph(users) if len(users) < K else graph
        sub_prior = None if t == 1 else prior[users]
        ext = run_detector(cfg.detector, y_in, ch.select_users(users), sub_graph,
                           [codebooks[k] for k in users], sub_prior, cfg)
        calls += 1

        newly = []
        for row, k in enumerate(users):
            if decoded[k]:
                continue
            seed = code_cfgs[k].interleaver_seed
            dec_in = fec.deinterleave(ext[row], seed)
            dec_ext, _, hard = fec.siso_decode(dec_in, code_cfgs[k])
            prior[k] = fec.interleave(dec_ext, seed)
            payloads[k] = hard
            if fec.crc_check(hard):
                newly.append(k)

        for k in newly:
            decoded[k] = True
            used[k] = t
            bits = fec.interleave(fec.encode(payloads[k], code_cfgs[k]), code_cfgs[k].interleaver_seed)
            if cfg.hard_pic:
                x = map_bits(bits, codebooks[k]).reshape(1, -1, codebooks[k].length)
                residual -= noiseless(x, ch.select_users([k]))
            else:
                prior[k] = fec.LLR_MAX * (1.0 - 2.0 * bits)
        decoded_after.append(int(decoded.sum()))
        if decoded.all():
            break

    users_out = [UserResult(payloads[k], bool(decoded[k]), int(used[k])) for k in range(K)]
    return TurboResult(users_out, calls, decoded_after, residual)
