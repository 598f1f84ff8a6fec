"""Rank-based dependence: Kendall's tau and the empirical probability integral transform."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DomainError


def _tie_pairs(sorted_keys: np.ndarray) -> int:
    """Number of tied pairs sum t(t-1)/2 over runs of equal values in a sorted array."""
    if sorted_keys.size < 2:
        return 0
    edges = np.flatnonzero(np.diff(sorted_keys)) + 1
    counts = np.diff(np.concatenate(([0], edges, [sorted_keys.size])))
    return int(np.sum(counts * (counts - 1) // 2))


def count_inversions(a) -> int:
    """Number of pairs i < j with a[i] > a[j]; equal values are not inversions.

    Works on the binary digits of the dense ranks, most significant first.
    A pair is decided at the first bit where the two ranks differ: among
    elements sharing all higher bits, an inversion is an earlier element with
    bit 1 followed by a later element with bit 0.  Each of the log2(n) levels
    costs one stable (radix) sort of small integers, so the total is
    O(n log n).
    """
    a = np.asarray(a).ravel()
    n = a.size
    if n < 2:
        return 0
    keys = np.unique(a, return_inverse=True)[1].ravel()
    nbits = int(keys.max()).bit_length()
    keys = keys.astype(np.int16 if nbits < 15 else np.int64)
    total = 0
    for level in range(nbits - 1, -1, -1):
        prefix = keys >> (level + 1)
        order = np.argsort(prefix, kind="stable")
        bits = ((keys[order] >> level) & 1).astype(np.int64)
        grp = prefix[order]
        ones = np.cumsum(bits)
        starts = np.flatnonzero(np.r_[True, grp[1:] != grp[:-1]])
        before = np.repeat(np.r_[0, ones][starts], np.diff(np.r_[starts, n]))
        total += int(np.sum((ones - before)[bits == 0]))
    return total


def count_inversions_merge(a) -> int:
    """Inversion count by bottom-up merge sort (vectorised passes).

    Within a pair of adjacent sorted blocks, a right-block element overtakes
    every left-block element that the stable merge places after it.
    """
    a = np.asarray(a)
    n = a.size
    if n < 2:
        return 0
    # dense integer keys keep the merge keys exact
    keys = np.unique(a, return_inverse=True)[1].astype(np.int64).ravel()
    pos = np.arange(n)
    total = 0
    width = 1
    while width < n:
        pair = pos // (2 * width)
        in_right = (pos // width) % 2 == 1
        order = np.argsort(pair * (n + 1) + keys, kind="stable")
        merged_right = in_right[order]
        pair_sorted = pair[order]
        start = pair_sorted * 2 * width
        rank_in_pair = pos - start
        left_size = np.minimum(width, n - start)
        # index of each right element among the right block (stable => preserved)
        right_rank = np.cumsum(merged_right) - 1
        # cumulative count of right elements before this pair
        block_starts = np.flatnonzero(np.r_[True, pair_sorted[1:] != pair_sorted[:-1]])
        offsets = np.r_[0, np.cumsum(merged_right)][block_starts]
        first_right = np.repeat(offsets, np.diff(np.r_[block_starts, n]))
        idx_in_right = right_rank - first_right
        lefts_before = rank_in_pair - idx_in_right
        total += int(np.sum((left_size - lefts_before)[merged_right]))
        keys = keys[order]
        width *= 2
    return total


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall's tau-b in O(n log n)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = x.size
    if n != y.size:
        raise DataError(f"length mismatch: {n} vs {y.size}")
    if n < 2:
        raise DataError("Kendall's tau needs at least two observations")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    total = n * (n - 1) // 2
    xtie = _tie_pairs(xs)
    # pairs tied in x and y jointly: runs of equal (x, y) in lexicographic order
    same = np.r_[False, (xs[1:] == xs[:-1]) & (ys[1:] == ys[:-1])]
    run_id = np.cumsum(~same)
    joint = _tie_pairs(run_id)
    ytie = _tie_pairs(np.sort(ys))
    if xtie == total or ytie == total:
        raise DomainError("Kendall's tau is undefined for a constant input")
    discordant = count_inversions(ys)
    s = total - xtie - ytie + joint - 2 * discordant
    tau = s / np.sqrt(float(total - xtie) * float(total - ytie))
    return float(np.clip(tau, -1.0, 1.0))


def kendall_tau_bruteforce(x, y) -> float:
    """O(n^2) tau-b by explicit pair counting; reference implementation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(x.size, 1)
    s = np.sum(dx[iu] * dy[iu])
    nx = np.count_nonzero(dx[iu])
    ny = np.count_nonzero(dy[iu])
    return float(s / np.sqrt(float(nx) * float(ny)))


@dataclass
class CopulaSample:
    """An n x d sample on the copula scale with optional column labels."""

    data: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise DataError("copula sample must be two-dimensional")
        n, d = self.data.shape
        if n < 10:
            raise DataError(f"at least 10 observations are required, got {n}")
        if d < 2:
            raise DataError(f"at least 2 variables are required, got {d}")
        if not np.all((self.data > 0) & (self.data < 1)):
            raise DataError("copula-scale data must lie strictly inside (0, 1)")
        if not self.labels:
            self.labels = [f"V{j + 1}" for j in range(d)]
        elif len(self.labels) != d:
            raise DataError("number of labels does not match number of columns")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __getitem__(self, j):
        return self.data[:, j]


def to_copula_scale(raw, labels=None, min_n: int = 10) -> CopulaSample:
    """Column-wise ranks / (n + 1), average ranks on ties."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    n = raw.shape[0]
    if n < min_n:
        raise DataError(f"at least {min_n} observations are required, got {n}")
    if not np.all(np.isfinite(raw)):
        raise DataError("data contains missing or non-finite values")
    for j in range(raw.shape[1]):
        if np.all(raw[:, j] == raw[0, j]):
            raise DataError(f"column {j + 1} is constant")
    u = rankdata(raw, axis=0) / (n + 1)
    return CopulaSample(u, list(labels) if labels is not None else [])


def pit(column) -> np.ndarray:
    """Empirical PIT of one column without the sample-size checks."""
    column = np.asarray(column, dtype=float)
    return rankdata(column) / (column.size + 1)


def tau_matrix(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    d = data.shape[1]
    out = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            out[i, j] = out[j, i] = kendall_tau(data[:, i], data[:, j])
    return out
