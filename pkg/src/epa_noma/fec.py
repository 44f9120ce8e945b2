"""
Soft-in/soft-out coding chain.

* CRC-16/CCITT (polynomial 0x1021, init 0xFFFF, no reflection, no final XOR)
* rate-1/2 convolutional code, constraint length 7, generators (133, 171) octal,
  zero-terminated with 6 tail bits
* rate matching to ``payload_bits / rate`` coded bits, by evenly spaced
  puncturing or circular repetition of the mother codeword
* seeded pseudo-random bit interleaver
* log-MAP BCJR decoder

LLRs follow ``llr = log P(bit = 0) / P(bit = 1)`` everywhere.
"""

from __future__ import annotations

import binascii
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numba
import numpy as np

__all__ = [
    "LLR_MAX",
    "CodeConfig",
    "crc_attach",
    "crc_check",
    "encode",
    "interleave",
    "deinterleave",
    "interleaver_permutation",
    "siso_decode",
    "user_interleaver_seed",
]

LLR_MAX = 30.0
CRC_BITS = 16
MEMORY = 6
GENERATORS = (0o133, 0o171)


# xxxxxxxxxxxxxxx CRC xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def _crc16(bits: np.ndarray) -> int:
    if bits.size == 0:
        raise ValueError("empty payload")
    if bits.size % 8:
        raise ValueError(f"CRC input must be whole bytes, got {bits.size} bits")
    return binascii.crc_hqx(np.packbits(bits.astype(np.uint8)).tobytes(), 0xFFFF)


def crc_attach(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int8).ravel()
    crc = _crc16(bits)
    tail = (crc >> np.arange(CRC_BITS - 1, -1, -1)) & 1
    return np.concatenate([bits, tail.astype(np.int8)])


def crc_check(bits) -> bool:
    """True iff the CRC residual over payload and parity is zero."""
    bits = np.asarray(bits, dtype=np.int8).ravel()
    if bits.size <= CRC_BITS:
        return False
    return _crc16(bits) == 0


# xxxxxxxxxxxxxxx Code configuration and trellis xxxxxxxxxxxxxxxxxxxxxxxxxx
def _taps(g: int) -> np.ndarray:
    """Generator taps ordered ``[u_t, u_{t-1}, ..., u_{t-6}]``."""
    return (g >> np.arange(MEMORY, -1, -1)) & 1


def _trellis():
    n_states = 1 << MEMORY
    next_state = np.zeros((n_states, 2), dtype=np.int64)
    outputs = np.zeros((n_states, 2, 2), dtype=np.int64)
    for s in range(n_states):
        for u in range(2):
            reg = (u << MEMORY) | s  # bit 6 = u_t, bit 5 = u_{t-1}, ...
            next_state[s, u] = reg >> 1
            for i, g in enumerate(GENERATORS):
                outputs[s, u, i] = bin(reg & g).count("1") & 1
    return next_state, outputs


_NEXT_STATE, _OUTPUTS = _trellis()


@dataclass(frozen=True)
class CodeConfig:
    """
    Parameters
    ----------
    payload_bits : int
        Information bits per block including the CRC.
    rate : float
        Target code rate; ``payload_bits / rate`` coded bits are sent.
    interleaver_seed : int
        Seed of this user's bit interleaver.
    """
    payload_bits: int
    rate: float = 0.5
    interleaver_seed: int = 0
    crc: str = "crc16-ccitt"

    def __post_init__(self):
        if self.payload_bits <= CRC_BITS:
            raise ValueError("payload must be longer than the CRC")
        if not 0 < self.rate <= 1:
            raise ValueError("code rate must be in (0, 1]")
        e = self.payload_bits / self.rate
        if abs(e - round(e)) > 1e-9:
            raise ValueError(f"payload_bits/rate = {e} is not an integer")
        if self.crc != "crc16-ccitt":
            raise ValueError(f"unsupported CRC {self.crc!r}")

    @property
    def coded_bits(self) -> int:
        return int(round(self.payload_bits / self.rate))

    @property
    def mother_bits(self) -> int:
        return 2 * (self.payload_bits + MEMORY)

    @cached_property
    def rate_match_index(self) -> np.ndarray:
        """Mother-code position of every transmitted bit."""
        n, e = self.mother_bits, self.coded_bits
        if e <= n:
            return (np.arange(e) * n) // e
        return np.arange(e) % n


def user_interleaver_seed(base_seed: int, user: int) -> int:
    return int(base_seed) + int(user)


# xxxxxxxxxxxxxxx Encoder, rate matching, interleaver xxxxxxxxxxxxxxxxxxxxx
def encode_mother(payload) -> np.ndarray:
    """Terminated (133, 171) encoding, outputs interleaved ``c1(0) c2(0) c1(1) ...``."""
    u = np.asarray(payload, dtype=np.int64).ravel()
    streams = [np.convolve(u, _taps(g)) & 1 for g in GENERATORS]
    return np.stack(streams, axis=1).ravel().astype(np.int8)


def encode(payload_bits, cfg: CodeConfig) -> np.ndarray:
    payload_bits = np.asarray(payload_bits).ravel()
    if payload_bits.size != cfg.payload_bits:
        raise ValueError(f"payload has {payload_bits.size} bits, config expects {cfg.payload_bits}")
    return encode_mother(payload_bits)[cfg.rate_match_index]


@lru_cache(maxsize=256)
def interleaver_permutation(seed: int, length: int) -> np.ndarray:
    perm = np.random.default_rng([int(seed), int(length)]).permutation(length)
    perm.setflags(write=False)
    return perm


def interleave(bits, seed: int) -> np.ndarray:
    bits = np.asarray(bits)
    return bits[interleaver_permutation(seed, bits.size)]


def deinterleave(llrs, seed: int) -> np.ndarray:
    llrs = np.asarray(llrs)
    out = np.empty_like(llrs)
    out[interleaver_permutation(seed, llrs.size)] = llrs
    return out


# xxxxxxxxxxxxxxx BCJR xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# MAP recursion in the probability domain with per-step normalisation of the
# forward/backward metrics; equivalent to exact log-MAP but with only four
# exponentials per trellis step.
@numba.njit(cache=True)
def _bcjr(llr, n_info, next_state, outputs):
    T = llr.shape[0]
    S = next_state.shape[0]
    # output pair (c1, c2) of every branch, packed as 2*c1 + c2
    code = np.empty((S, 2), dtype=np.int64)
    for s in range(S):
        for u in range(2):
            code[s, u] = 2 * outputs[s, u, 0] + outputs[s, u, 1]
    # branch weight per output pair, scaled so the largest is 1
    gam = np.empty((T, 4))
    for t in range(T):
        l1 = 0.5 * llr[t, 0]
        l2 = 0.5 * llr[t, 1]
        off = abs(l1) + abs(l2)
        gam[t, 0] = np.exp(l1 + l2 - off)
        gam[t, 1] = np.exp(l1 - l2 - off)
        gam[t, 2] = np.exp(-l1 + l2 - off)
        gam[t, 3] = np.exp(-l1 - l2 - off)

    alpha = np.zeros((T + 1, S))
    alpha[0, 0] = 1.0
    for t in range(T):
        n_inputs = 2 if t < n_info else 1
        g = gam[t]
        for s in range(S):
            a = alpha[t, s]
            for u in range(n_inputs):
                alpha[t + 1, next_state[s, u]] += a * g[code[s, u]]
        inv = 1.0 / np.sum(alpha[t + 1])
        for s in range(S):
            alpha[t + 1, s] *= inv

    beta = np.zeros((T + 1, S))
    beta[T, 0] = 1.0
    post_coded = np.zeros((T, 2))
    post_info = np.zeros(n_info)
    tiny = 1e-300
    # backward pass fused with the output APPs
    for t in range(T - 1, -1, -1):
        n_inputs = 2 if t < n_info else 1
        g = gam[t]
        tot = 0.0
        c1_0 = 0.0
        c1_1 = 0.0
        c2_0 = 0.0
        c2_1 = 0.0
        u_0 = 0.0
        u_1 = 0.0
        for s in range(S):
            a = alpha[t, s]
            acc = 0.0
            for u in range(n_inputs):
                c = code[s, u]
                gb = g[c] * beta[t + 1, next_state[s, u]]
                acc += gb
                w = a * gb
                if u == 0:
                    u_0 += w
                else:
                    u_1 += w
                if c >= 2:
                    c1_1 += w
                else:
                    c1_0 += w
                if c & 1:
                    c2_1 += w
                else:
                    c2_0 += w
            beta[t, s] = acc
            tot += acc
        inv = 1.0 / tot
        for s in range(S):
            beta[t, s] *= inv
        post_coded[t, 0] = np.log(c1_0 + tiny) - np.log(c1_1 + tiny)
        post_coded[t, 1] = np.log(c2_0 + tiny) - np.log(c2_1 + tiny)
        if t < n_info:
            post_info[t] = np.log(u_0 + tiny) - np.log(u_1 + tiny)
    return post_coded, post_info


def siso_decode(prior_llrs, cfg: CodeConfig):
    """
    Log-MAP decoding of one block.

    Parameters
    ----------
    prior_llrs : array_like
        ``cfg.coded_bits`` channel/detector LLRs of the transmitted bits.

    Returns
    -------
    extrinsic : ndarray
        Posterior minus prior for every transmitted bit, clamped to
        ``+-LLR_MAX``.
    posterior : ndarray
        Posterior LLR of every transmitted bit, clamped to ``+-LLR_MAX``.
    hard_payload : ndarray
        Decisions on the ``cfg.payload_bits`` information bits, taken from
        the input-bit APPs (the code is not systematic).
    """
    prior = np.clip(np.asarray(prior_llrs, dtype=float).ravel(), -LLR_MAX, LLR_MAX)
    if prior.size != cfg.coded_bits:
        raise ValueError(f"got {prior.size} LLRs, expected {cfg.coded_bits}")
    idx = cfg.rate_match_index
    mother = np.zeros(cfg.mother_bits)
    np.add.at(mother, idx, prior)
    post_coded, post_info = _bcjr(mother.reshape(-1, 2), cfg.payload_bits, _NEXT_STATE, _OUTPUTS)
    posterior = post_coded.ravel()[idx]
    extrinsic = np.clip(posterior - prior, -LLR_MAX, LLR_MAX)
    hard = (post_info < 0).astype(np.int8)
    return extrinsic, np.clip(posterior, -LLR_MAX, LLR_MAX), hard
