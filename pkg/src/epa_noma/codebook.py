"""
Per-user NOMA codebooks: constellation x signature, and the bit mapping.

Bit labels are MSB-first: codeword index ``i`` carries the bits of
``np.binary_repr(i, J)``, so index 0 is the all-zero label.  Constellations
follow the 3GPP NR Gray mappings:

* BPSK   ``b0 -> 1 - 2 b0``
* QPSK   ``b0 b1 -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)``
* 16QAM  ``b0 b1 b2 b3 -> ((1 - 2 b0)(2 - (1 - 2 b2)) + j (1 - 2 b1)(2 - (1 - 2 b3))) / sqrt(10)``
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Constellation",
    "Codebook",
    "build_qam",
    "build_spread_codebook",
    "build_sparse_codebook",
    "map_bits",
    "label_bits",
    "FDS_SIGNATURES",
    "default_fds_signatures",
    "default_sparse_codebooks",
    "read_codebooks",
    "write_codebooks",
]


def label_bits(M: int) -> np.ndarray:
    """``(M, J)`` array of MSB-first bit labels in ascending index order."""
    J = int(np.log2(M))
    idx = np.arange(M)[:, None]
    return ((idx >> np.arange(J - 1, -1, -1)) & 1).astype(np.int8)


@dataclass(frozen=True)
class Constellation:
    points: np.ndarray  # indexed by label value

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def labels(self) -> np.ndarray:
        return label_bits(self.order)


def build_qam(M: int) -> Constellation:
    """Gray-labelled BPSK, QPSK or 16QAM with unit average energy."""
    b = label_bits(M).astype(float) if M in (2, 4, 16) else None
    if M == 2:
        pts = 1.0 - 2.0 * b[:, 0] + 0j
    elif M == 4:
        pts = ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / np.sqrt(2)
    elif M == 16:
        re = (1 - 2 * b[:, 0]) * (2 - (1 - 2 * b[:, 2]))
        im = (1 - 2 * b[:, 1]) * (2 - (1 - 2 * b[:, 3]))
        pts = (re + 1j * im) / np.sqrt(10)
    else:
        raise ValueError(f"unsupported modulation order M={M}; use 2, 4 or 16")
    return Constellation(np.asarray(pts, dtype=complex))


@dataclass(frozen=True)
class Codebook:
    """
    Codebook of one user: ``M`` codewords of length ``L``.

    ``codewords[i]`` is the codeword carrying label ``labels[i]``.
    """
    user: int
    codewords: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=complex)
        if cw.ndim != 2:
            raise ValueError("codewords must be an (M, L) array")
        M = cw.shape[0]
        if M < 2 or M & (M - 1):
            raise ValueError(f"codebook size must be a power of two, got {M}")
        labels = label_bits(M) if self.labels is None else np.asarray(self.labels, dtype=np.int8)
        if labels.shape != (M, int(np.log2(M))):
            raise ValueError("label array has the wrong shape")
        if len({tuple(r) for r in labels}) != M:
            raise ValueError("labelling is not a bijection")
        energy = np.mean(np.sum(np.abs(cw) ** 2, axis=1))
        if abs(energy - 1.0) > 1e-6:
            raise ValueError(f"user {self.user}: average codeword energy {energy:.6g} != 1")
        cw.setflags(write=False)
        object.__setattr__(self, "codewords", cw)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def length(self) -> int:
        return self.codewords.shape[1]

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def support(self) -> frozenset:
        return frozenset(int(l) for l in np.flatnonzero(np.any(self.codewords != 0, axis=0)))

    def bit_sets(self, j: int):
        """Codeword indices with bit ``j`` equal to 1 and to 0."""
        ones = np.flatnonzero(self.labels[:, j] == 1)
        zeros = np.flatnonzero(self.labels[:, j] == 0)
        return ones, zeros

    def chip_energy(self) -> np.ndarray:
        """Average energy per chip, ``(1/M) sum |alpha_l|^2``."""
        return np.mean(np.abs(self.codewords) ** 2, axis=0)


def build_spread_codebook(c: Constellation, seq, user: int = 0) -> Codebook:
    seq = np.asarray(seq, dtype=complex).ravel()
    norm = np.linalg.norm(seq)
    if norm == 0:
        raise ValueError("spreading sequence is all zero")
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"spreading sequence must have unit norm, got {norm:.12g}")
    return Codebook(user, np.outer(c.points, seq), c.labels)


def build_sparse_codebook(c: Constellation, mask, values, L: int, user: int = 0) -> Codebook:
    """Codebook nonzero only on the REs in ``mask`` (0-based), with chip values ``values``."""
    mask = sorted(int(m) for m in mask)
    if not mask:
        raise ValueError("sparse mask is empty")
    if len(set(mask)) != len(mask) or mask[0] < 0 or mask[-1] >= L:
        raise ValueError(f"invalid mask {mask} for L={L}")
    values = np.asarray(values, dtype=complex).ravel()
    if values.shape != (len(mask),):
        raise ValueError("need one sequence value per masked RE")
    seq = np.zeros(L, dtype=complex)
    seq[mask] = values
    return build_spread_codebook(c, seq, user)


def map_bits(bits, cb: Codebook) -> np.ndarray:
    """
    Map coded bits to codewords.

    ``bits`` is a flat array whose length is a multiple of ``J``; each group
    of ``J`` consecutive bits (MSB first) selects one codeword.  Returns an
    ``(n_symbols, L)`` array, or a single ``(L,)`` codeword when exactly
    ``J`` bits are given.
    """
    bits = np.asarray(bits, dtype=np.int64).ravel()
    J = cb.bits_per_symbol
    if bits.size % J:
        raise ValueError(f"bit count {bits.size} is not a multiple of J={J}")
    groups = bits.reshape(-1, J)
    idx = groups @ (1 << np.arange(J - 1, -1, -1))
    if not np.array_equal(cb.labels, label_bits(cb.size)):
        # label value -> codeword row for non-standard labellings
        inv = np.empty(cb.size, dtype=np.int64)
        inv[cb.labels.astype(np.int64) @ (1 << np.arange(J - 1, -1, -1))] = np.arange(cb.size)
        idx = inv[idx]
    out = cb.codewords[idx]
    return out[0] if groups.shape[0] == 1 else out


# Built-in FDS signatures: length-4 quaternary chips, first chip 1, entries in
# {+-1, +-j}/2.  Pairwise |correlation| <= 1/2 over all eight; the first six
# are used for K=6.
FDS_SIGNATURES = np.array([
    [1, 1j, 1, 1j],
    [1, -1, -1, 1],
    [1, -1j, -1j, -1j],
    [1, -1j, 1j, 1],
    [1, 1, -1, -1],
    [1, -1j, 1, -1],
    [1, 1j, -1, 1j],
    [1, 1j, 1, -1j],
], dtype=complex) / 2


def default_fds_signatures(K: int, L: int = 4, seed: int = 0) -> np.ndarray:
    """
    ``(K, L)`` unit-norm signatures.

    For ``L = 4`` and ``K <= 8`` the fixed table :data:`FDS_SIGNATURES` is
    used.  Other shapes draw seeded random quaternary sequences.
    """
    if L == 4 and K <= len(FDS_SIGNATURES):
        return FDS_SIGNATURES[:K].copy()
    if L == 1:
        return np.ones((K, 1), dtype=complex)
    rng = np.random.default_rng([seed, K, L])
    phases = np.array([1, 1j, -1, -1j])[rng.integers(0, 4, size=(K, L))]
    return phases / np.sqrt(L)


# Chip values on the two active REs of sparse users; the second chip is
# rotated per user so users sharing a pair of REs stay distinguishable.
_SPARSE_ROTATIONS = np.array([1, 1j, -1, -1j, np.exp(1j * np.pi / 4), np.exp(-1j * np.pi / 4)])


def default_sparse_codebooks(c: Constellation, K: int, L: int = 4):
    """One user per 2-subset of the L REs, in lexicographic order."""
    masks = list(itertools.combinations(range(L), 2))
    if K > len(masks):
        raise ValueError(f"at most {len(masks)} sparse users fit on L={L} REs")
    cbs = []
    for k in range(K):
        vals = np.array([1.0, _SPARSE_ROTATIONS[k % len(_SPARSE_ROTATIONS)]]) / np.sqrt(2)
        cbs.append(build_sparse_codebook(c, masks[k], vals, L, user=k))
    return cbs


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Codebook file format xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def _parse_complex(tok: str) -> complex:
    re, sep, im = tok.partition(":")
    if not sep:
        raise ValueError(f"bad complex entry {tok!r}; expected re:im")
    return complex(float(re), float(im))


def read_codebooks(path) -> list:
    """
    Read codebooks from text: header ``K L M``, then for every user ``M``
    lines of ``L`` entries ``re:im``.  Line ``i`` of a user is the codeword
    with label ``i``.  Blank lines and ``#`` comments are ignored.
    """
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        raise ValueError(f"{path}: empty codebook file")
    header = lines[0].split()
    if len(header) != 3:
        raise ValueError(f"{path}: header must be 'K L M'")
    K, L, M = (int(v) for v in header)
    body = lines[1:]
    if len(body) != K * M:
        raise ValueError(f"{path}: expected {K * M} codeword lines, found {len(body)}")
    cbs = []
    for k in range(K):
        rows = []
        for i in range(M):
            toks = body[k * M + i].split()
            if len(toks) != L:
                raise ValueError(f"{path}: user {k} codeword {i} has {len(toks)} entries, expected {L}")
            rows.append([_parse_complex(t) for t in toks])
        cbs.append(Codebook(k, np.array(rows)))
    return cbs


def write_codebooks(path, codebooks) -> None:
    K = len(codebooks)
    M, L = codebooks[0].codewords.shape
    out = [f"{K} {L} {M}"]
    for cb in codebooks:
        if cb.codewords.shape != (M, L):
            raise ValueError("all codebooks must share (M, L)")
        for row in cb.codewords:
            out.append(" ".join(f"{float(z.real)!r}:{float(z.imag)!r}" for z in row))
    Path(path).write_text("\n".join(out) + "\n")
