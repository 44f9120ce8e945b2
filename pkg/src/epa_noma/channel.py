"""
Channel draws, the superposition model and per-RE views.

Array layout used throughout the package:

* transmitted codewords ``x``: ``(K, Ns, L)`` -- user, symbol vector, chip
* channel ``h``:               ``(K, Nr, Ns, L)``
* received ``y``:              ``(Nr, Ns, L)``

``Ns`` is the number of symbol vectors in a transport block.  Every symbol
vector is an independent instance of the per-symbol model, so the detectors
process all of them in one vectorised pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FactorGraph

__all__ = [
    "ChannelRealization",
    "ReceivedSignal",
    "CHANNEL_MODELS",
    "draw_channel",
    "transmit",
    "noiseless",
    "per_re_view",
    "noise_var_from_snr",
]

CHANNEL_MODELS = ("awgn-fixed", "block-rayleigh")


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    noise_var: float

    def __post_init__(self):
        if self.h.ndim != 4:
            raise ValueError("channel array must be (K, Nr, Ns, L)")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("channel coefficients must be finite")
        if not self.noise_var >= 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def num_users(self) -> int:
        return self.h.shape[0]

    @property
    def num_rx(self) -> int:
        return self.h.shape[1]

    def with_noise_var(self, noise_var: float) -> "ChannelRealization":
        return ChannelRealization(self.h, float(noise_var))

    def select_users(self, users) -> "ChannelRealization":
        return ChannelRealization(self.h[list(users)], self.noise_var)


@dataclass(frozen=True)
class ReceivedSignal:
    y: np.ndarray  # (Nr, Ns, L)


def noise_var_from_snr(snr_db: float) -> float:
    """Per-user SNR convention: ``sigma^2 = 10^(-SNR/10)``."""
    return float(10.0 ** (-snr_db / 10.0))


def draw_channel(rng: np.random.Generator, K: int, L: int, Nr: int, model: str = "block-rayleigh",
                 n_symbols: int = 1, noise_var: float = 0.0, flat_over_chips: bool = False
                 ) -> ChannelRealization:
    """
    Draw channel coefficients for ``n_symbols`` symbol vectors.

    ``block-rayleigh`` draws i.i.d. ``CN(0, 1)`` coefficients per user,
    antenna and RE.  With ``flat_over_chips`` one coefficient is shared by
    the ``L`` chips of a symbol vector.
    """
    if min(K, L, Nr, n_symbols) < 1:
        raise ValueError("channel dimensions must be positive")
    if model == "awgn-fixed":
        h = np.ones((K, Nr, n_symbols, L), dtype=complex)
    elif model == "block-rayleigh":
        shape = (K, Nr, n_symbols, 1 if flat_over_chips else L)
        h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
        if flat_over_chips:
            h = np.repeat(h, L, axis=3)
    else:
        raise ValueError(f"unknown channel model {model!r}; choose from {CHANNEL_MODELS}")
    return ChannelRealization(h, float(noise_var))


def noiseless(x: np.ndarray, ch: ChannelRealization) -> np.ndarray:
    """``sum_k diag(h_{k,r}) x_k`` for every antenna, ``(Nr, Ns, L)``."""
    return np.einsum("krnl,knl->rnl", ch.h, x)


def transmit(x: np.ndarray, ch: ChannelRealization, rng: np.random.Generator | None = None) -> ReceivedSignal:
    """Superpose the users' faded codewords and add ``CN(0, sigma^2)`` noise."""
    x = np.asarray(x, dtype=complex)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.shape[0] != ch.h.shape[0] or x.shape[1:] != ch.h.shape[2:]:
        raise ValueError(f"codeword array {x.shape} does not match channel {ch.h.shape}")
    y = noiseless(x, ch)
    if ch.noise_var > 0:
        if rng is None:
            raise ValueError("an RNG is required when noise_var > 0")
        w = (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) * np.sqrt(ch.noise_var / 2)
        y = y + w
    return ReceivedSignal(y)


def per_re_view(y: ReceivedSignal, ch: ChannelRealization, g: FactorGraph, l: int):
    """
    Observation and channel matrix of RE ``l`` for every symbol vector.

    Returns ``ybar`` of shape ``(Ns, Nr)`` and ``Hbar`` of shape
    ``(Ns, Nr, |F(l)|)`` whose columns follow ascending user index in F(l).
    """
    if not 0 <= l < g.num_res:
        raise IndexError(f"RE index {l} out of range")
    users = list(g.res_users[l])
    ybar = np.moveaxis(y.y[:, :, l], 0, 1)
    Hbar = np.transpose(ch.h[users][:, :, :, l], (2, 1, 0))
    return ybar, Hbar
