"""
Domain types shared by the detectors, the receiver and the harness.

Gaussian messages are kept in natural parameters (precision and
precision-weighted mean).  A variance of infinity is a precision of exactly
zero, which makes the non-informative initial messages of the detector an
ordinary value instead of a special case.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "FactorGraph",
    "GaussianMessage",
    "SymbolPosterior",
    "RngStream",
    "build_factor_graph",
    "gaussian_product",
    "gaussian_divide",
    "PREC_FLOOR",
    "VAR_CAP",
]

# Below this precision an extrinsic message is replaced by a non-informative one.
PREC_FLOOR = 1e-8
VAR_CAP = 1e8


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Factor graph xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
@dataclass(frozen=True)
class FactorGraph:
    """
    Bipartite user/RE adjacency.

    Parameters
    ----------
    num_users : int
        Number of variable nodes (users).
    num_res : int
        Number of factor nodes (resource elements of one symbol vector).
    user_res : tuple of tuple of int
        ``user_res[k]`` is the sorted set of REs used by user ``k``.
    res_users : tuple of tuple of int
        ``res_users[l]`` is the sorted set of users present on RE ``l``.
    """
    num_users: int
    num_res: int
    user_res: tuple
    res_users: tuple
    adjacency: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.num_users < 1 or self.num_res < 1:
            raise ValueError("factor graph needs at least one user and one RE")
        if len(self.user_res) != self.num_users or len(self.res_users) != self.num_res:
            raise ValueError("neighbour lists do not match the graph size")
        adj = np.zeros((self.num_users, self.num_res), dtype=bool)
        for k, res in enumerate(self.user_res):
            if not res:
                raise ValueError(f"user {k} is connected to no RE")
            for l in res:
                if not 0 <= l < self.num_res:
                    raise ValueError(f"user {k} references RE {l} out of range")
                adj[k, l] = True
        adj_t = np.zeros_like(adj)
        for l, users in enumerate(self.res_users):
            for k in users:
                if not 0 <= k < self.num_users:
                    raise ValueError(f"RE {l} references user {k} out of range")
                adj_t[k, l] = True
        if not np.array_equal(adj, adj_t):
            raise ValueError("user_res and res_users are not transposes of each other")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def from_adjacency(cls, adjacency) -> "FactorGraph":
        adj = np.asarray(adjacency, dtype=bool)
        num_users, num_res = adj.shape
        user_res = tuple(tuple(int(l) for l in np.flatnonzero(adj[k])) for k in range(num_users))
        res_users = tuple(tuple(int(k) for k in np.flatnonzero(adj[:, l])) for l in range(num_res))
        return cls(num_users, num_res, user_res, res_users)

    @property
    def df_max(self) -> int:
        return max(len(u) for u in self.res_users)

    @property
    def degrees(self) -> np.ndarray:
        """FN degrees ``|F(l)|``."""
        return self.adjacency.sum(axis=0)

    def is_tree(self) -> bool:
        # A connected bipartite graph is a tree iff |E| = |V| - 1; a forest
        # iff |E| = |V| - (number of components).
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(("u", k) for k in range(self.num_users))
        g.add_nodes_from(("r", l) for l in range(self.num_res))
        g.add_edges_from((("u", k), ("r", l)) for k, res in enumerate(self.user_res) for l in res)
        return nx.is_forest(g)

    def subgraph(self, users: Sequence[int]) -> "FactorGraph":
        """Graph restricted to ``users`` (renumbered 0..len(users)-1)."""
        return FactorGraph.from_adjacency(self.adjacency[list(users)])


def build_factor_graph(codebooks) -> FactorGraph:
    """
    Derive the factor graph from the nonzero support of each user's codebook.

    User ``k`` is attached to RE ``l`` iff some codeword of user ``k`` is
    nonzero on chip ``l``.
    """
    if not codebooks:
        raise ValueError("no codebooks given")
    lengths = {cb.length for cb in codebooks}
    if len(lengths) != 1:
        raise ValueError(f"codebooks disagree on the spreading length: {sorted(lengths)}")
    adj = np.array([np.any(cb.codewords != 0, axis=0) for cb in codebooks])
    for k, row in enumerate(adj):
        if not row.any():
            raise ValueError(f"user {k} has an all-zero codebook (empty support)")
    return FactorGraph.from_adjacency(adj)


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Gaussian messages xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
@dataclass(frozen=True)
class GaussianMessage:
    """
    Circularly-symmetric complex Gaussian ``CN(x; mean, variance)``.

    Stored as ``precision = 1/variance`` and ``weighted_mean = mean/variance``.
    Both fields may be numpy arrays of a common shape, in which case the
    object is a batch of independent scalar messages.
    """
    precision: np.ndarray
    weighted_mean: np.ndarray

    @classmethod
    def from_moments(cls, mean, variance) -> "GaussianMessage":
        variance = np.asarray(variance, dtype=float)
        mean = np.asarray(mean, dtype=complex)
        if np.any(~(variance > 0)):
            raise ValueError("variance must be positive or inf")
        precision = 1.0 / variance
        return cls(precision, mean * precision)

    @classmethod
    def noninformative(cls, shape=()) -> "GaussianMessage":
        return cls(np.zeros(shape), np.zeros(shape, dtype=complex))

    @property
    def variance(self):
        with np.errstate(divide="ignore"):
            return 1.0 / np.asarray(self.precision, dtype=float)

    @property
    def mean(self):
        prec = np.asarray(self.precision, dtype=float)
        safe = np.where(prec > 0, prec, 1.0)
        return np.where(prec > 0, self.weighted_mean / safe, 0.0 + 0.0j)

    def __getitem__(self, idx) -> "GaussianMessage":
        return GaussianMessage(np.asarray(self.precision)[idx], np.asarray(self.weighted_mean)[idx])


def gaussian_product(a: GaussianMessage, b: GaussianMessage) -> GaussianMessage:
    """Product of two Gaussian densities (renormalised)."""
    return GaussianMessage(
        np.asarray(a.precision) + np.asarray(b.precision),
        np.asarray(a.weighted_mean) + np.asarray(b.weighted_mean),
    )


def gaussian_divide(num: GaussianMessage, den: GaussianMessage) -> GaussianMessage:
    """
    Quotient ``num / den`` of two Gaussian densities.

    Where the resulting precision is not above ``PREC_FLOOR`` (the quotient
    would have negative or vanishing precision) a non-informative message
    with variance ``VAR_CAP`` and the mean of ``num`` is emitted instead.
    """
    prec = np.asarray(num.precision, dtype=float) - np.asarray(den.precision, dtype=float)
    wmean = np.asarray(num.weighted_mean, dtype=complex) - np.asarray(den.weighted_mean, dtype=complex)
    bad = prec <= PREC_FLOOR
    if np.any(bad):
        prec = np.where(bad, 1.0 / VAR_CAP, prec)
        wmean = np.where(bad, num.mean / VAR_CAP, wmean)
    return GaussianMessage(prec, wmean)


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Posteriors and RNG streams xxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
@dataclass(frozen=True)
class SymbolPosterior:
    """
    Discrete distribution over a user's codebook.

    ``probs`` has the codeword index on its last axis; leading axes index
    symbol vectors (and possibly users).
    """
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("posterior rows must be nonnegative and sum to one")

    @classmethod
    def from_log_weights(cls, logw) -> "SymbolPosterior":
        logw = np.asarray(logw, dtype=float)
        w = np.exp(logw - logw.max(axis=-1, keepdims=True))
        s = w.sum(axis=-1, keepdims=True)
        # max-subtraction leaves a 1 in every row, so no re-validation needed
        post = object.__new__(cls)
        object.__setattr__(post, "probs", w / s)
        return post

    def hard_decision(self) -> np.ndarray:
        return np.argmax(self.probs, axis=-1)


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """
    Reproducible random stream keyed by ``(seed, trial, purpose)``.

    The key goes through :class:`numpy.random.SeedSequence`, so draws
    depend only on the key and never on scheduling order.
    """
    seed: int
    trial: int
    purpose: str

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed & (2**64 - 1), self.trial, _purpose_code(self.purpose)])
        return np.random.Generator(np.random.PCG64(ss))
