"""Symmetric Chamfer distance with unsquared Euclidean nearest-neighbor terms.

Two exact nearest-neighbor searches back it: an exhaustive one and a
spatial hash with ring search over occupied cells. Both compute pair
distances with the same arithmetic, so they agree bit for bit; ties go to
the lowest-index neighbor in both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError
from .geometry import PointCloud
from .tensor import Tensor, make_op

# pair-distance matrices above this many entries are processed in row blocks
_BLOCK = 4_000_000


@dataclass(frozen=True)
class ChamferResult:
    value: float
    term1: float
    term2: float


def _points(p) -> np.ndarray:
    if isinstance(p, PointCloud):
        return p.points
    if isinstance(p, Tensor):
        return p.data
    return np.asarray(p, dtype=np.float64).reshape(-1, 3)


def pair_distances(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    dx = q[:, None, 0] - p[None, :, 0]
    dy = q[:, None, 1] - p[None, :, 1]
    dz = q[:, None, 2] - p[None, :, 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def nearest_bruteforce(q: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance to, and index of, the nearest ``p`` for every row of ``q``."""
    rows = max(1, _BLOCK // max(1, len(p)))
    dist = np.empty(len(q))
    idx = np.empty(len(q), dtype=np.int64)
    for start in range(0, len(q), rows):
        d = pair_distances(q[start : start + rows], p)
        j = np.argmin(d, axis=1)
        idx[start : start + rows] = j
        dist[start : start + rows] = d[np.arange(len(j)), j]
    return dist, idx


def mutual_nearest_bruteforce(a: np.ndarray, b: np.ndarray):
    """Nearest neighbors in both directions from one distance matrix."""
    d = pair_distances(a, b)
    ia = np.argmin(d, axis=1)
    ib = np.argmin(d, axis=0)
    return d[np.arange(len(a)), ia], ia, d[ib, np.arange(len(b))], ib


def _resolve(rows: np.ndarray, cols: np.ndarray, q: np.ndarray, p: np.ndarray, n: int):
    """Per query row, the exact nearest among candidate (row, col) pairs, lowest col on ties."""
    diff = q[rows] - p[cols]
    d = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])
    order = np.lexsort((cols, d, rows))
    first = order[np.r_[True, rows[order][1:] != rows[order][:-1]]]
    dist = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    dist[rows[first]] = d[first]
    idx[rows[first]] = cols[first]
    return dist, idx


def mutual_nearest_screened(a: np.ndarray, b: np.ndarray):
    """Exact nearest neighbors in both directions, screened through a matmul.

    Squared distances from ``|a|^2 + |b|^2 - 2 a.b`` are only accurate to a
    few ulps of the squared norms, so every entry within a tolerance of the
    row (column) minimum is kept as a candidate and re-measured with the same
    arithmetic as ``pair_distances``.
    """
    na = np.einsum("ij,ij->i", a, a)
    nb = np.einsum("ij,ij->i", b, b)
    d2 = na[:, None] + nb[None, :] - 2.0 * (a @ b.T)
    tol = 1e-9 * (1.0 + na.max() + nb.max())
    rows, cols = np.nonzero(d2 <= d2.min(axis=1, keepdims=True) + tol)
    d1, i1 = _resolve(rows, cols, a, b, len(a))
    rows, cols = np.nonzero(d2 <= d2.min(axis=0, keepdims=True) + tol)
    d2_, i2 = _resolve(cols, rows, b, a, len(b))
    return d1, i1, d2_, i2


def default_cell_size(p1: np.ndarray, p2: np.ndarray) -> float:
    """Median nearest-neighbor spacing of ``p2`` measured at up to 100 sample points."""
    pts = np.concatenate([p1, p2])
    ref = p2 if len(p2) > 1 else pts
    sample = ref[np.linspace(0, len(ref) - 1, min(100, len(ref))).astype(np.int64)]
    d = pair_distances(sample, ref)
    d[d == 0] = np.inf
    nn = d.min(axis=1)
    nn = nn[np.isfinite(nn)]
    if nn.size:
        return float(np.median(nn))
    span = float(np.ptp(pts, axis=0).max()) if len(pts) > 1 else 0.0
    return span if span > 0 else 1.0


def nearest_hash(q: np.ndarray, p: np.ndarray, cell_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest neighbor via a uniform grid over ``p``.

    Queries are grouped by their own cell. For each group the occupied cells
    of ``p`` are visited in rings of increasing Chebyshev cell distance; a
    point in ring ``k`` is at least ``(k - 1) * cell_size`` away from any
    query in the group, so the search stops once every running best is
    strictly below that bound.
    """
    if cell_size <= 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    inv = 1.0 / cell_size
    pkeys = np.floor(p * inv).astype(np.int64)
    cells, pinv = np.unique(pkeys, axis=0, return_inverse=True)
    pinv = pinv.reshape(-1)
    order = np.argsort(pinv, kind="stable")
    bounds = np.searchsorted(pinv[order], np.arange(len(cells) + 1))
    buckets = [order[bounds[i] : bounds[i + 1]] for i in range(len(cells))]

    qkeys = np.floor(q * inv).astype(np.int64)
    qcells, qinv = np.unique(qkeys, axis=0, return_inverse=True)
    qinv = qinv.reshape(-1)
    qorder = np.argsort(qinv, kind="stable")
    qbounds = np.searchsorted(qinv[qorder], np.arange(len(qcells) + 1))

    # slack for floor() rounding at cell boundaries
    slack = 1e-9 * (1.0 + float(np.abs(np.concatenate([p, q])).max(initial=0.0)))
    dist = np.full(len(q), np.inf)
    idx = np.full(len(q), -1, dtype=np.int64)
    for c in range(len(qcells)):
        members = qorder[qbounds[c] : qbounds[c + 1]]
        qs = q[members]
        ring = np.abs(cells - qcells[c]).max(axis=1)
        ring_order = np.argsort(ring, kind="stable")
        ring_sorted = ring[ring_order]
        starts = np.flatnonzero(np.r_[True, ring_sorted[1:] != ring_sorted[:-1]])
        ends = np.r_[starts[1:], len(ring_sorted)]
        best = np.full(len(members), np.inf)
        best_idx = np.full(len(members), -1, dtype=np.int64)
        for s, e in zip(starts, ends):
            k = ring_sorted[s]
            if np.all(best < (k - 1) * cell_size - slack):
                break
            cand = np.sort(np.concatenate([buckets[j] for j in ring_order[s:e]]))
            d = pair_distances(qs, p[cand])
            j = np.argmin(d, axis=1)
            dj = d[np.arange(len(j)), j]
            cj = cand[j]
            better = (dj < best) | ((dj == best) & (cj < best_idx))
            best[better] = dj[better]
            best_idx[better] = cj[better]
        dist[members] = best
        idx[members] = best_idx
    return dist, idx


def _check_nonempty(a: np.ndarray, b: np.ndarray) -> None:
    if len(a) == 0 or len(b) == 0:
        raise EmptyInputError(f"Chamfer distance needs non-empty clouds, got {len(a)} and {len(b)} points")


def chamfer_bruteforce(p1, p2) -> ChamferResult:
    a, b = _points(p1), _points(p2)
    _check_nonempty(a, b)
    t1 = float(np.mean(nearest_bruteforce(a, b)[0]))
    t2 = float(np.mean(nearest_bruteforce(b, a)[0]))
    return ChamferResult(t1 + t2, t1, t2)


def chamfer_fast(p1, p2, cell_size: float | None = None) -> ChamferResult:
    a, b = _points(p1), _points(p2)
    _check_nonempty(a, b)
    if cell_size is None:
        cell_size = default_cell_size(a, b)
    t1 = float(np.mean(nearest_hash(a, b, cell_size)[0]))
    t2 = float(np.mean(nearest_hash(b, a, cell_size)[0]))
    return ChamferResult(t1 + t2, t1, t2)


def chamfer_grad(p1: Tensor, p2, method: str = "auto") -> Tensor:
    """Chamfer distance as a differentiable scalar in the coordinates of ``p1``.

    Correspondences are recomputed on every call. Each matched pair pushes
    the unit vector from its target onto the ``p1`` point, scaled by the
    term's ``1/|P|``; coincident pairs contribute nothing.
    ``method`` selects the neighbor search: ``"bruteforce"``, ``"hash"``,
    ``"screened"``, or ``"auto"`` (screened when the distance matrix fits in
    memory, hash otherwise). All are exact.
    """
    a, b = p1.data, _points(p2)
    _check_nonempty(a, b)
    if method == "auto":
        method = "screened" if len(a) * len(b) <= 4 * _BLOCK else "hash"
    if method == "screened":
        d1, i1, d2, i2 = mutual_nearest_screened(a, b)
    elif method == "bruteforce":
        if len(a) * len(b) <= 4 * _BLOCK:
            d1, i1, d2, i2 = mutual_nearest_bruteforce(a, b)
        else:
            d1, i1 = nearest_bruteforce(a, b)
            d2, i2 = nearest_bruteforce(b, a)
    elif method == "hash":
        cell = default_cell_size(a, b)
        d1, i1 = nearest_hash(a, b, cell)
        d2, i2 = nearest_hash(b, a, cell)
    else:
        raise ValueError(f"unknown neighbor search {method!r}")
    value = d1.mean() + d2.mean()

    def backward(g):
        grad = np.zeros_like(a)
        diff1 = a - b[i1]
        with np.errstate(invalid="ignore", divide="ignore"):
            u1 = np.where(d1[:, None] > 0, diff1 / d1[:, None], 0.0)
            diff2 = a[i2] - b
            u2 = np.where(d2[:, None] > 0, diff2 / d2[:, None], 0.0)
        grad += u1 / len(a)
        np.add.at(grad, i2, u2 / len(b))
        return (g * grad,)

    return make_op(np.asarray(value), (p1,), backward)
