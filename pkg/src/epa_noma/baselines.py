"""
Reference detectors: codeword-level soft MMSE-PIC and exact joint MAP.

The MMSE-PIC baseline follows the classical turbo soft-interference
cancellation recipe.  For user ``k`` on RE ``l`` the soft means of all other
users are cancelled, an LMMSE filter is formed with their residual
variances (user ``k`` itself enters with zero mean and its full chip
energy), the filter output is turned into an extrinsic Gaussian
observation of ``x_kl``, demapped to bit LLRs per chip, and the chip LLRs
of the same bit are added over the REs the user occupies.

The exact MAP detector enumerates all ``M**K`` joint hypotheses and is
meant for oracles at small scale only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, ReceivedSignal
from .core import FactorGraph, GaussianMessage, SymbolPosterior, gaussian_divide
from .detector_epa import (
    DetectorOutput,
    PriorTable,
    _stacked_views,
    bit_llrs,
    extrinsic_llrs,
    fn_mmse_update,
    prior_from_llrs,
    stack_codebooks,
    vn_project,
)
from .fec import LLR_MAX

__all__ = [
    "MAP_BUDGET",
    "SoftSymbolEstimate",
    "soft_symbols_from_llrs",
    "mmse_pic_detect",
    "exact_map_detect",
    "map_detect",
]

MAP_BUDGET = 10**6


@dataclass(frozen=True)
class SoftSymbolEstimate:
    """Per-chip mean and variance ``(K, Ns, L)`` induced by bit priors."""
    mean: np.ndarray
    var: np.ndarray


def soft_symbols_from_llrs(llrs, codebooks, n_symbols: int | None = None) -> SoftSymbolEstimate:
    C, labels = stack_codebooks(codebooks)
    K = C.shape[0]
    prior = prior_from_llrs(llrs, labels, n_symbols=n_symbols, n_users=K)
    msg = vn_project(prior.probs, C)
    on = np.any(C != 0, axis=1)[:, None, :]  # (K, 1, L)
    return SoftSymbolEstimate(np.where(on, msg.mean, 0.0), np.where(on, msg.variance, 0.0))


def mmse_pic_detect(y: ReceivedSignal, ch: ChannelRealization, graph: FactorGraph, codebooks,
                    soft: SoftSymbolEstimate | None = None) -> DetectorOutput:
    """
    Chip-level MMSE with soft parallel interference cancellation.

    ``soft=None`` (first outer iteration) means zero-mean interferers with
    full chip energy, i.e. plain chip-level LMMSE.  Returns extrinsic LLRs
    ``(K, Ns * J)``.
    """
    C, labels = stack_codebooks(codebooks)
    K, M, L = C.shape
    Ns = y.y.shape[1]
    J = labels.shape[1]
    edge = graph.adjacency[:, None, :]
    energy = np.broadcast_to(np.mean(np.abs(C) ** 2, axis=1)[:, None, :], (K, Ns, L))
    if soft is None:
        soft = SoftSymbolEstimate(np.zeros((K, Ns, L), dtype=complex), np.array(energy))
    ybar, Hbar = _stacked_views(y, ch)

    llr = np.zeros((K, Ns, J))
    for k in range(K):
        mean = soft.mean.copy()
        var = soft.var.copy()
        mean[k] = 0.0
        var[k] = energy[k]
        mean = np.where(edge, mean, 0.0)
        var = np.where(edge, var, 0.0)
        pm, pv = fn_mmse_update(np.transpose(mean, (1, 2, 0)), np.transpose(var, (1, 2, 0)),
                                ybar, Hbar, ch.noise_var)
        on = graph.adjacency[k]
        own_prior = GaussianMessage.from_moments(np.zeros((Ns, on.sum())), energy[k][:, on])
        post = GaussianMessage.from_moments(pm[..., k][:, on], np.maximum(pv[..., k][:, on], 1e-30))
        obs = gaussian_divide(post, own_prior)  # (Ns, |V(k)|)
        # per-chip Gaussian demapping with a uniform symbol prior
        chips = C[k][:, on]  # (M, |V(k)|)
        logw = -obs.precision[:, :, None] * np.abs(chips.T[None, :, :] - obs.mean[:, :, None]) ** 2
        llr[k] = bit_llrs(logw, labels).sum(axis=1)
    return DetectorOutput(np.clip(llr, -LLR_MAX, LLR_MAX).reshape(K, -1))


def exact_map_detect(y: ReceivedSignal, ch: ChannelRealization, graph: FactorGraph, codebooks,
                     prior: PriorTable | None = None, noise_var: float | None = None) -> SymbolPosterior:
    """
    Exact per-user marginals by enumerating every joint codeword tuple.

    Raises
    ------
    ValueError
        If ``M**K`` exceeds :data:`MAP_BUDGET`.
    """
    C, labels = stack_codebooks(codebooks)
    K, M, L = C.shape
    n_hyp = M**K
    if n_hyp > MAP_BUDGET:
        raise ValueError(f"exact MAP needs M**K = {n_hyp} hypotheses, budget is {MAP_BUDGET}")
    s2 = ch.noise_var if noise_var is None else noise_var
    s2 = max(s2, 1e-12)
    Ns = y.y.shape[1]
    if prior is None:
        prior = prior_from_llrs(None, labels, n_symbols=Ns, n_users=K)
    tuples = np.array(list(itertools.product(range(M), repeat=K)))  # (T, K)
    # contribution of user k with codeword m: (K, M, Nr, Ns, L)
    contrib = ch.h[:, None] * C[:, :, None, None, :]
    Nr = ch.h.shape[1]
    chunk = max(1, int(4e6 // (n_hyp * Nr * L)))
    marg = np.zeros((K, Ns, M))
    for start in range(0, Ns, chunk):
        sl = slice(start, min(Ns, start + chunk))
        signal = np.zeros((n_hyp, Nr, sl.stop - sl.start, L), dtype=complex)
        logp = np.zeros((sl.stop - sl.start, n_hyp))
        for k in range(K):
            signal += contrib[k][:, :, sl][tuples[:, k]]
            logp += prior.log_probs[k, sl][:, tuples[:, k]]
        err = np.abs(y.y[None, :, sl, :] - signal) ** 2
        logp -= err.sum(axis=(1, 3)).T / s2
        p = np.exp(logp - logp.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        p = p.reshape((-1,) + (M,) * K)
        for k in range(K):
            axes = tuple(a + 1 for a in range(K) if a != k)
            marg[k, sl] = p.sum(axis=axes)
    marg /= marg.sum(axis=-1, keepdims=True)
    return SymbolPosterior(marg)


def map_detect(y, ch, graph, codebooks, prior_llrs=None) -> DetectorOutput:
    """Exact MAP marginals turned into extrinsic LLRs, with the detector interface."""
    C, labels = stack_codebooks(codebooks)
    K = C.shape[0]
    Ns = y.y.shape[1]
    prior = prior_from_llrs(prior_llrs, labels, n_symbols=Ns, n_users=K)
    post = exact_map_detect(y, ch, graph, codebooks, prior)
    prior_bits = None if prior_llrs is None else np.asarray(prior_llrs, dtype=float).reshape(K, Ns, -1)
    return DetectorOutput(extrinsic_llrs(post, prior_bits, labels).reshape(K, -1), post)
