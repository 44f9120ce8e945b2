"""
Expectation-propagation multi-user detector.

Messages between the user nodes (VN) and the per-RE likelihood nodes (FN)
are scalar complex Gaussians, one per graph edge and symbol vector.  One
iteration performs, in this order, over all edges in parallel:

1. VN side: moments of the discrete symbol belief on every chip, divided by
   the incoming FN message (extrinsic VN -> FN message).
2. FN side: chip-by-chip LMMSE estimate with the VN -> FN messages as
   Gaussian priors, divided by the VN -> FN message (extrinsic FN -> VN).
3. Symbol beliefs are recomputed from the new FN -> VN messages.

After the last iteration the symbol beliefs are demapped to extrinsic bit
LLRs.  All arrays carry a user axis ``K`` and a symbol-vector axis ``Ns``
(see :mod:`epa_noma.channel` for the layout).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .channel import ChannelRealization, ReceivedSignal
from .core import FactorGraph, GaussianMessage, SymbolPosterior, gaussian_divide
from .fec import LLR_MAX

__all__ = [
    "VAR_FLOOR",
    "MMSE_JITTER",
    "PriorTable",
    "DetectorOutput",
    "stack_codebooks",
    "prior_from_llrs",
    "vn_log_weights",
    "vn_posterior",
    "vn_project",
    "fn_mmse_update",
    "bit_llrs",
    "extrinsic_llrs",
    "epa_detect",
]

VAR_FLOOR = 1e-8
MMSE_JITTER = 1e-12


@dataclass(frozen=True)
class PriorTable:
    """Log prior probabilities ``log P0(x_k = alpha)``, shape ``(..., Ns, M)``."""
    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass
class DetectorOutput:
    """
    Attributes
    ----------
    extrinsic : ndarray
        ``(K, Ns * J)`` extrinsic LLRs in transmitted bit order.
    posterior : SymbolPosterior or None
        Final symbol beliefs ``(K, Ns, M)`` when the detector forms them.
    """
    extrinsic: np.ndarray
    posterior: SymbolPosterior | None = None


def stack_codebooks(codebooks):
    """Stack codewords ``(K, M, L)`` and check that the labellings agree."""
    C = np.stack([cb.codewords for cb in codebooks])
    labels = codebooks[0].labels
    for cb in codebooks[1:]:
        if not np.array_equal(cb.labels, labels):
            raise ValueError("all users must share one bit labelling")
    return C, labels


def prior_from_llrs(llrs, labels, n_symbols: int | None = None, n_users: int | None = None) -> PriorTable:
    """
    Symbol priors from per-bit LLRs, assuming independent bits.

    ``llrs`` has shape ``(..., Ns * J)`` or ``(..., Ns, J)``; ``None`` gives
    uniform priors of shape ``(n_users, n_symbols, M)``.
    """
    labels = np.asarray(labels)
    M, J = labels.shape
    if llrs is None:
        shape = tuple(s for s in (n_users, n_symbols) if s is not None) + (M,)
        return PriorTable(np.full(shape, -np.log(M)))
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape[-1] != J:
        if llrs.shape[-1] % J:
            raise ValueError(f"LLR count {llrs.shape[-1]} is not a multiple of J={J}")
        llrs = llrs.reshape(llrs.shape[:-1] + (-1, J))
    llrs = np.clip(llrs, -LLR_MAX, LLR_MAX)
    # log P(c = b) = -log(1 + exp(-(1 - 2b) llr))
    sign = 1.0 - 2.0 * labels  # (M, J)
    log_pb = -np.logaddexp(0.0, -llrs[..., None, :] * sign)  # (..., Ns, M, J)
    return PriorTable(log_pb.sum(axis=-1))


def vn_log_weights(log_prior, messages: GaussianMessage, codewords) -> np.ndarray:
    """
    Unnormalised log belief ``log P0(alpha) - sum_n |alpha_n - mu_n|^2 / xi_n``.

    The ``alpha``-independent part of every Gaussian is dropped, so a
    message of precision zero contributes nothing.  ``messages`` has shape
    ``(..., Ns, L)``, ``codewords`` ``(..., M, L)``.
    """
    C = np.asarray(codewords)
    prec = np.asarray(messages.precision, dtype=float)
    wmean = np.asarray(messages.weighted_mean, dtype=complex)
    quad = prec @ np.swapaxes(np.abs(C) ** 2, -1, -2)
    lin = (wmean @ np.swapaxes(C.conj(), -1, -2)).real
    return log_prior - quad + 2.0 * lin


def vn_posterior(log_prior, messages: GaussianMessage, codewords) -> SymbolPosterior:
    return SymbolPosterior.from_log_weights(vn_log_weights(log_prior, messages, codewords))


def vn_project(probs, codewords) -> GaussianMessage:
    """
    Moment-match the discrete belief on every chip.

    Returns the per-chip Gaussian ``(mean, variance)`` as a message of shape
    ``(..., Ns, L)``; variances below ``VAR_FLOOR`` are raised to it.
    """
    p = np.asarray(probs, dtype=float)
    C = np.asarray(codewords)
    mean = p @ C
    var = p @ (np.abs(C) ** 2) - np.abs(mean) ** 2
    return GaussianMessage.from_moments(mean, np.maximum(var, VAR_FLOOR))


def fn_mmse_update(prior_mean, prior_var, ybar, Hbar, noise_var: float):
    """
    LMMSE estimate of the users on one RE.

    Parameters
    ----------
    prior_mean, prior_var : ndarray
        ``(..., d)`` Gaussian priors of the ``d`` users on the RE.  A zero
        variance pins a user to its prior mean.
    ybar : ndarray
        ``(..., Nr)`` observations.
    Hbar : ndarray
        ``(..., Nr, d)`` channel matrices.
    noise_var : float
        Noise variance per receive antenna.

    Returns
    -------
    post_mean, post_var : ndarray
        Posterior means and the diagonal of the posterior covariance.

    Notes
    -----
    The marginal of user ``k`` is evaluated with the other users folded
    into a coloured noise covariance ``C_k = sum_{j != k} v_j h_j h_j^H +
    sigma^2 I``, which gives the same numbers as the joint formula

        1 / var_k = 1 / v_k + h_k^H C_k^-1 h_k
        mean_k = m_k + var_k h_k^H C_k^-1 (y - H m)

    but never subtracts two large quantities.  That matters once a
    stabilised message of variance ``VAR_CAP`` sits next to a small noise
    variance.  Only ``Nr x Nr`` systems are solved; for one and two antennas
    the solve is written out with 2-D cross products (the adjugate of a 2x2
    matrix is linear), which keeps the determinants sums of nonnegative
    parts; the two-antenna kernel is compiled with numba.
    """
    m = np.asarray(prior_mean, dtype=complex)
    v = np.asarray(prior_var, dtype=float)
    H = np.asarray(Hbar, dtype=complex)
    y = np.asarray(ybar, dtype=complex)
    Nr, d = H.shape[-2:]
    s2 = noise_var if noise_var > 0 else MMSE_JITTER
    resid = y - (H @ m[..., None])[..., 0]
    others = 1.0 - np.eye(d)  # others[k, j] = [j != k]

    if Nr == 1:
        h = H[..., 0, :]
        c = s2 + (v * np.abs(h) ** 2) @ others
        q = np.abs(h) ** 2 / c
        g = h.conj() * resid / c
    elif Nr == 2:
        shape = v.shape
        mean, var = _lmmse_two_rx(_rows(np.broadcast_to(m, shape)), _rows(v), _rows(H[..., 0, :]),
                                  _rows(H[..., 1, :]), _rows(y), float(s2))
        return mean.reshape(shape), var.reshape(shape)
    else:
        w = v[..., None, :] * others  # (..., k, j)
        C = (H[..., None, :, :] * w[..., :, None, :]) @ np.conj(np.swapaxes(H, -1, -2))[..., None, :, :]
        C = C + s2 * np.eye(Nr)
        hk = np.swapaxes(H, -1, -2)  # (..., d, Nr)
        rhs = np.stack([hk, np.broadcast_to(resid[..., None, :], hk.shape)], axis=-1)
        sol = np.linalg.solve(C, rhs)
        q = np.sum(hk.conj() * sol[..., 0], axis=-1).real
        g = np.sum(hk.conj() * sol[..., 1], axis=-1)

    with np.errstate(divide="ignore"):
        post_var = 1.0 / (1.0 / v + q)
    return m + post_var * g, post_var


def _rows(a):
    return np.ascontiguousarray(a).reshape(-1, a.shape[-1])


@njit(cache=True)
def _lmmse_two_rx(m, v, h1, h2, y, s2):
    """
    Two-antenna case of :func:`fn_mmse_update` on flattened ``(n, d)`` inputs.

    With ``C_k = s2 I + sum_{j != k} v_j h_j h_j^H`` (2x2):

        det C_k = s2^2 + s2 sum_j v_j |h_j|^2 + sum_{i<j} v_i v_j |h_i x h_j|^2
        h_k^H adj(C_k) h_k = s2 |h_k|^2 + sum_j v_j |h_k x h_j|^2
        h_k^H adj(C_k) r   = s2 h_k^H r + sum_j v_j conj(h_k x h_j) (r x h_j)

    where ``a x b = a_1 b_2 - a_2 b_1``; all sums skip ``k``.
    """
    n, d = v.shape
    mean = np.empty((n, d), dtype=np.complex128)
    var = np.empty((n, d))
    X = np.empty((d, d), dtype=np.complex128)
    X2 = np.empty((d, d))
    for b in range(n):
        r1 = y[b, 0]
        r2 = y[b, 1]
        for j in range(d):
            r1 -= h1[b, j] * m[b, j]
            r2 -= h2[b, j] * m[b, j]
        for i in range(d):
            for j in range(d):
                X[i, j] = h1[b, i] * h2[b, j] - h2[b, i] * h1[b, j]
                X2[i, j] = X[i, j].real ** 2 + X[i, j].imag ** 2
        for k in range(d):
            vk = v[b, k]
            if vk <= 0.0:
                mean[b, k] = m[b, k]
                var[b, k] = 0.0
                continue
            det = s2 * s2
            qn = 0.0
            gn = 0j
            for j in range(d):
                vj = v[b, j]
                if j == k or vj == 0.0:
                    continue
                hj = h1[b, j].real ** 2 + h1[b, j].imag ** 2 + h2[b, j].real ** 2 + h2[b, j].imag ** 2
                det += s2 * vj * hj
                qn += vj * X2[k, j]
                gn += vj * np.conj(X[k, j]) * (r1 * h2[b, j] - r2 * h1[b, j])
                for i in range(j):
                    if i != k:
                        det += v[b, i] * vj * X2[i, j]
            hk1 = h1[b, k]
            hk2 = h2[b, k]
            hn = hk1.real ** 2 + hk1.imag ** 2 + hk2.real ** 2 + hk2.imag ** 2
            q = (s2 * hn + qn) / det
            g = (s2 * (np.conj(hk1) * r1 + np.conj(hk2) * r2) + gn) / det
            pv = 1.0 / (1.0 / vk + q)
            var[b, k] = pv
            mean[b, k] = m[b, k] + pv * g
    return mean, var


def bit_llrs(log_weights, labels) -> np.ndarray:
    """Unclamped ``log sum_{bit j = 0} w - log sum_{bit j = 1} w`` for every bit."""
    logw = np.asarray(log_weights, dtype=float)
    labels = np.asarray(labels)
    out = np.empty(logw.shape[:-1] + (labels.shape[1],))
    for j in range(labels.shape[1]):
        zero = np.logaddexp.reduce(logw[..., labels[:, j] == 0], axis=-1)
        one = np.logaddexp.reduce(logw[..., labels[:, j] == 1], axis=-1)
        with np.errstate(invalid="ignore"):
            out[..., j] = zero - one
    return out


def extrinsic_llrs(posterior: SymbolPosterior, prior_llrs, labels) -> np.ndarray:
    """
    Extrinsic bit LLRs ``log P(c=0 | y) / P(c=1 | y) - prior``, clamped.

    Returns shape ``(..., Ns, J)``.
    """
    with np.errstate(divide="ignore"):
        logp = np.log(posterior.probs)
    post = bit_llrs(logp, labels)
    if prior_llrs is not None:
        prior = np.clip(np.asarray(prior_llrs, dtype=float), -LLR_MAX, LLR_MAX).reshape(post.shape)
        post = post - prior
    return np.clip(post, -LLR_MAX, LLR_MAX)


def _stacked_views(y: ReceivedSignal, ch: ChannelRealization):
    """All-RE observation ``(Ns, L, Nr)`` and channel ``(Ns, L, Nr, K)``."""
    return np.transpose(y.y, (1, 2, 0)), np.transpose(ch.h, (2, 3, 1, 0))


def epa_detect(y: ReceivedSignal, ch: ChannelRealization, graph: FactorGraph, codebooks,
               prior_llrs=None, T_inner: int = 3, damping: float = 1.0) -> DetectorOutput:
    """
    Run the EPA detector on one transport block.

    Parameters
    ----------
    y, ch : received signal and channel of the users in ``graph``.
    graph : FactorGraph
    codebooks : list of Codebook, one per user in ``graph``.
    prior_llrs : ndarray, optional
        ``(K, Ns * J)`` a-priori LLRs fed back by the decoders; ``None`` for
        uniform priors.
    T_inner : int
        Number of EPA iterations.
    damping : float
        Weight of the new VN -> FN message in a convex combination (natural
        parameters) with the previous one; ``1.0`` disables damping.
    """
    if T_inner < 1:
        raise ValueError("T_inner must be at least 1")
    if not 0 < damping <= 1:
        raise ValueError("damping must be in (0, 1]")
    C, labels = stack_codebooks(codebooks)
    K, M, L = C.shape
    if ch.h.shape[0] != K or graph.num_users != K or graph.num_res != L:
        raise ValueError("graph, channel and codebooks disagree on K or L")
    Ns = y.y.shape[1]
    edge = graph.adjacency[:, None, :]  # (K, 1, L)

    prior = prior_from_llrs(prior_llrs, labels, n_symbols=Ns, n_users=K)
    ybar, Hbar = _stacked_views(y, ch)

    fn_to_vn = GaussianMessage.noninformative((K, Ns, L))
    vn_prev = None
    logw = prior.log_probs
    for _ in range(T_inner):
        belief = SymbolPosterior.from_log_weights(logw)
        vn_to_fn = gaussian_divide(vn_project(belief.probs, C), fn_to_vn)
        if vn_prev is not None and damping < 1.0:
            vn_to_fn = GaussianMessage(
                damping * vn_to_fn.precision + (1 - damping) * vn_prev.precision,
                damping * vn_to_fn.weighted_mean + (1 - damping) * vn_prev.weighted_mean,
            )
        vn_prev = vn_to_fn

        pri_mean = np.where(edge, vn_to_fn.mean, 0.0)
        pri_var = np.where(edge, vn_to_fn.variance, 0.0)
        post_mean, post_var = fn_mmse_update(
            np.transpose(pri_mean, (1, 2, 0)), np.transpose(pri_var, (1, 2, 0)), ybar, Hbar, ch.noise_var)
        post_mean = np.transpose(post_mean, (2, 0, 1))
        post_var = np.transpose(post_var, (2, 0, 1))
        post = GaussianMessage.from_moments(
            np.where(edge, post_mean, 0.0), np.where(edge, np.maximum(post_var, 1e-30), 1.0))
        ext = gaussian_divide(post, vn_to_fn)
        fn_to_vn = GaussianMessage(np.where(edge, ext.precision, 0.0), np.where(edge, ext.weighted_mean, 0.0))

        logw = vn_log_weights(prior.log_probs, fn_to_vn, C)

    belief = SymbolPosterior.from_log_weights(logw)
    prior_bits = None if prior_llrs is None else np.asarray(prior_llrs, dtype=float).reshape(K, Ns, -1)
    llr = extrinsic_llrs(belief, prior_bits, labels)
    return DetectorOutput(llr.reshape(K, -1), belief)
