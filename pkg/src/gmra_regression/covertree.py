"""Batch cover tree over a point cloud.

The tree is stored as a nested family of nets. Level ``i`` has scale
``j = j_min + i`` and radius ``r0 * 2**-j``. Net points keep one *position*
for all levels they belong to: the net at level ``i`` is
``pos_point[:level_sizes[i]]``, so nesting holds by construction. A point
first inserted at level ``i`` has its parent at level ``i - 1`` recorded in
``pos_parent``; a point already in the net is its own parent.

Invariants (checked by :func:`check_invariants`):

* nesting: the net at level ``i`` is contained in the net at level ``i + 1``;
* covering: a net point at level ``i + 1`` is within ``r0 * 2**-j`` of its
  parent at level ``i`` (scale ``j``);
* separation: net points at level ``i`` are pairwise more than
  ``r0 * 2**-j`` apart.

Construction greedily extends each net in insertion order, which makes every
net maximal: each input point lies within the level radius of the net.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError

# Relatives of a net point are the net points within this many radii.
# 4 is the smallest factor for which relatives of children are found among
# children of relatives.
_REL_FACTOR = 4.0
_DIAMETER_SUBSAMPLE = 256


def _pair_dist(A, a, B, b):
    """Euclidean distances ``|A[a[t]] - B[b[t]]|`` for paired index arrays."""
    out = np.empty(len(a))
    step = max(1, (1 << 21) // max(A.shape[1], 1))
    for s in range(0, len(a), step):
        diff = A[a[s:s + step]] - B[b[s:s + step]]
        out[s:s + step] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


def _expand_slots(ptr, keys):
    """Expand each key into the slots of its CSR row. Returns (owner, slot)."""
    starts = ptr[keys]
    counts = ptr[keys + 1] - starts
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(keys)), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return owner, np.repeat(starts, counts) + offsets


def _expand(ptr, idx, keys):
    """Expand each key into its CSR row. Returns (owner, value) pair arrays."""
    owner, slot = _expand_slots(ptr, keys)
    return owner, idx[slot]


def _segment_argmin(values, owner, keys, n_owner):
    """Per-owner minimum of ``values`` and the smallest key attaining it.

    ``owner`` must be sorted and every owner in ``range(n_owner)`` present.
    """
    starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
    seg_min = np.minimum.reduceat(values, starts)
    tied = np.where(values == seg_min[owner], keys, np.iinfo(np.int64).max)
    best = np.minimum.reduceat(tied, starts)
    return seg_min, best, starts


def _csr_from_parent(parent, n_rows):
    """CSR rows listing, for each parent id, the indices whose parent it is."""
    order = np.argsort(parent, kind="stable")
    ptr = np.searchsorted(parent[order], np.arange(n_rows + 1))
    return ptr, order


def estimate_diameter(points, order=None, size=_DIAMETER_SUBSAMPLE):
    """Max pairwise distance over the first ``size`` points in ``order``."""
    X = np.asarray(points, dtype=float)
    idx = np.arange(len(X)) if order is None else np.asarray(order)
    sub = X[idx[:size]]
    sq = np.einsum("ij,ij->i", sub, sub)
    d2 = sq[:, None] + sq[None, :] - 2.0 * sub @ sub.T
    i, k = np.unravel_index(np.argmax(d2), d2.shape)
    return float(np.linalg.norm(sub[i] - sub[k]))


@dataclass
class CoverTree:
    points: np.ndarray
    order: np.ndarray
    base_radius: float
    j_min: int
    pos_point: np.ndarray
    pos_level: np.ndarray
    pos_parent: np.ndarray
    level_sizes: np.ndarray
    canonical: np.ndarray
    _children: list = field(default=None, repr=False)

    @property
    def n_levels(self) -> int:
        return len(self.level_sizes)

    @property
    def j_max(self) -> int:
        return self.j_min + self.n_levels - 1

    @property
    def root(self) -> int:
        return int(self.pos_point[0])

    def radius(self, j) -> float:
        return self.base_radius * 2.0 ** (-j)

    def net(self, j) -> np.ndarray:
        """Point indices of the net at scale ``j`` (in position order)."""
        i = j - self.j_min
        if not 0 <= i < self.n_levels:
            raise ParameterError(f"scale {j} outside [{self.j_min}, {self.j_max}]")
        return self.pos_point[:self.level_sizes[i]]

    def parents(self, j) -> np.ndarray:
        """Positions at scale ``j - 1`` of the parents of the net at scale ``j``."""
        i = j - self.j_min
        size = self.level_sizes[i]
        if i == 0:
            return np.full(size, -1)
        prev = self.level_sizes[i - 1]
        out = np.arange(size)
        out[prev:] = self.pos_parent[prev:size]
        return out

    def children_csr(self, i):
        """CSR (ptr, idx) of child positions at level ``i + 1`` per position at level ``i``."""
        if self._children is None:
            self._children = [None] * max(self.n_levels - 1, 0)
        if self._children[i] is None:
            par = self.parents(self.j_min + i + 1)
            self._children[i] = _csr_from_parent(par, self.level_sizes[i])
        return self._children[i]

    def ancestors(self) -> np.ndarray:
        """``anc[i, m]``: position at level ``i`` of the ancestor of final position ``m``."""
        L = self.n_levels
        n_final = self.level_sizes[-1]
        anc = np.empty((L, n_final), dtype=np.int64)
        anc[-1] = np.arange(n_final)
        for i in range(L - 2, -1, -1):
            cur = anc[i + 1]
            anc[i] = np.where(self.pos_level[cur] > i, self.pos_parent[cur], cur)
        return anc

    def nearest(self, queries, chunk=4096):
        """Exact nearest net point of the finest level for each query.

        Returns ``(positions, distances)``. Ties go to the smallest position.
        """
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        m = Q.shape[0]
        pos = np.empty(m, dtype=np.int64)
        dist = np.empty(m)
        for s in range(0, m, chunk):
            p, d = self._nearest_chunk(Q[s:s + chunk])
            pos[s:s + chunk] = p
            dist[s:s + chunk] = d
        return pos, dist

    def _nearest_chunk(self, Q):
        m = Q.shape[0]
        owner = np.arange(m)
        cand = np.zeros(m, dtype=np.int64)
        X = self.points
        d = _pair_dist(Q, owner, X, self.pos_point[cand])
        for i in range(self.n_levels - 1):
            ptr, idx = self.children_csr(i)
            rep, cand = _expand(ptr, idx, cand)
            owner = owner[rep]
            d = _pair_dist(Q, owner, X, self.pos_point[cand])
            seg_min, _, _ = _segment_argmin(d, owner, cand, m)
            # descendants of a level-(i+1) node lie within 2 r0 2^-(j+1) of it
            slack = 2.0 * self.radius(self.j_min + i + 1)
            keep = d <= seg_min[owner] + slack
            owner, cand, d = owner[keep], cand[keep], d[keep]
        seg_min, best, _ = _segment_argmin(d, owner, cand, m)
        return best, seg_min

    def to_dict(self) -> dict:
        return {
            "base_radius": self.base_radius,
            "j_min": self.j_min,
            "order": self.order.tolist(),
            "pos_point": self.pos_point.tolist(),
            "pos_level": self.pos_level.tolist(),
            "pos_parent": self.pos_parent.tolist(),
            "level_sizes": self.level_sizes.tolist(),
            "canonical": self.canonical.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, points) -> "CoverTree":
        return cls(
            points=np.asarray(points, dtype=float),
            order=np.asarray(data["order"], dtype=np.int64),
            base_radius=float(data["base_radius"]),
            j_min=int(data["j_min"]),
            pos_point=np.asarray(data["pos_point"], dtype=np.int64),
            pos_level=np.asarray(data["pos_level"], dtype=np.int64),
            pos_parent=np.asarray(data["pos_parent"], dtype=np.int64),
            level_sizes=np.asarray(data["level_sizes"], dtype=np.int64),
            canonical=np.asarray(data["canonical"], dtype=np.int64),
        )


def build_cover_tree(points, seed_order=None, base_radius=None, max_levels=64) -> CoverTree:
    """Build a cover tree whose nets satisfy nesting, covering and separation.

    Parameters
    ----------
    points : array of shape (n, D)
    seed_order : None, int or permutation of ``range(n)``
        Insertion priority. An int seeds a random permutation; None keeps
        the input order. The first point in this order is the root.
    base_radius : float, optional
        ``r0``. Defaults to the diameter of the first 256 points in insertion
        order. ``j_min`` is then the largest ``j <= 0`` whose radius still
        covers every point from the root.
    max_levels : int
        Hard cap on the number of levels; points closer together than the
        finest radius reached are treated as duplicates.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError("build_cover_tree needs a non-empty (n, D) array")
    if not np.all(np.isfinite(X)):
        raise ParameterError("points must be finite")
    n = X.shape[0]
    if seed_order is None:
        order = np.arange(n)
    elif np.isscalar(seed_order):
        order = np.random.default_rng(int(seed_order)).permutation(n)
    else:
        order = np.asarray(seed_order, dtype=np.int64)
        if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
            raise ParameterError("seed_order must be a permutation of range(n)")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    root = int(order[0])
    r0 = float(base_radius) if base_radius is not None else estimate_diameter(X, order)
    if not r0 > 0:
        r0 = 1.0
    near_d = np.linalg.norm(X - X[root], axis=1)
    j_min = 0
    far = float(near_d.max())
    while far > r0 * 2.0 ** (-j_min):
        j_min -= 1

    pos_point = [root]
    pos_level = [0]
    pos_parent = [-1]
    level_sizes = [1]
    is_net = np.zeros(n, dtype=bool)
    is_net[root] = True
    near = np.zeros(n, dtype=np.int64)
    rel_ptr = np.array([0, 1])
    rel_idx = np.array([0])
    rel_d = np.array([0.0])
    covered = np.zeros(n, dtype=bool)

    level = 0
    while level + 1 < max_levels:
        active = (~is_net) & (near_d > 0)
        if not active.any():
            break
        j_next = j_min + level + 1
        R = r0 * 2.0 ** (-j_next)
        P = len(pos_point)
        points_of_pos = np.asarray(pos_point)

        cand = np.flatnonzero(active & (near_d > R))
        new = []
        if len(cand):
            cand = cand[np.argsort(rank[cand])]
            par = near[cand]
            g_ptr, g_ord = _csr_from_parent(par, P)
            g_sorted = cand[g_ord]
            nbhd = {}
            for x in cand.tolist():
                if covered[x]:
                    continue
                new.append(x)
                p = int(near[x])
                nb = nbhd.get(p)
                if nb is None:
                    rels = rel_idx[rel_ptr[p]:rel_ptr[p + 1]]
                    nb = np.concatenate([g_sorted[g_ptr[q]:g_ptr[q + 1]] for q in rels])
                    nbhd[p] = nb
                diff = X[nb] - X[x]
                hit = np.einsum("ij,ij->i", diff, diff) <= R * R
                covered[nb[hit]] = True
            covered[cand] = False

        new = np.asarray(new, dtype=np.int64)
        new_pos = np.arange(P, P + len(new))
        new_par = near[new]
        pos_point.extend(new.tolist())
        pos_level.extend([level + 1] * len(new))
        pos_parent.extend(new_par.tolist())
        level_sizes.append(P + len(new))
        points_of_pos = np.asarray(pos_point)

        if len(new) == 0:
            keep = rel_d <= _REL_FACTOR * R
            counts = np.add.reduceat(keep.astype(np.int64), rel_ptr[:-1]) if len(keep) else np.zeros(P, int)
            rel_ptr = np.r_[0, np.cumsum(counts)]
            rel_idx, rel_d = rel_idx[keep], rel_d[keep]
            level += 1
            continue

        near_d_before = near_d
        near_d = near_d.copy()
        is_net[new] = True
        near[new] = new_pos
        near_d[new] = 0.0

        ch_par = np.concatenate([np.arange(P), new_par])
        ch_ptr, ch_idx = _csr_from_parent(ch_par, P)

        # distance of each new-level position to its parent
        offset = np.zeros(P + len(new))
        offset[P:] = near_d_before[new]

        # nearest net point at the new level, searched among children of relatives;
        # the old nearest stays a candidate, so its distance bounds the search
        pts = np.flatnonzero((~is_net) & (near_d > 0))
        if len(pts):
            o1, slot = _expand_slots(rel_ptr, near[pts])
            o2, c = _expand(ch_ptr, ch_idx, rel_idx[slot])
            owner = o1[o2]
            lower = rel_d[slot][o2] - near_d[pts][owner] - offset[c]
            keep = lower <= near_d[pts][owner]
            owner, c = owner[keep], c[keep]
            d = _pair_dist(X, pts[owner], X, points_of_pos[c])
            seg_min, best, _ = _segment_argmin(d, owner, c, len(pts))
            near[pts] = best
            near_d[pts] = seg_min

        # relatives at the new level
        all_pos = np.arange(P + len(new))
        o1, slot = _expand_slots(rel_ptr, ch_par)
        o2, c = _expand(ch_ptr, ch_idx, rel_idx[slot])
        owner = o1[o2]
        lower = rel_d[slot][o2] - offset[owner] - offset[c]
        keep = lower <= _REL_FACTOR * R
        owner, c = owner[keep], c[keep]
        d = _pair_dist(X, points_of_pos[owner], X, points_of_pos[c])
        keep = d <= _REL_FACTOR * R
        owner, c, d = owner[keep], c[keep], d[keep]
        srt = np.lexsort((c, owner))
        owner, rel_idx, rel_d = owner[srt], c[srt], d[srt]
        rel_ptr = np.searchsorted(owner, np.arange(len(all_pos) + 1))
        level += 1

    pos_point = np.asarray(pos_point, dtype=np.int64)
    canonical = np.arange(n)
    dup = ~is_net
    canonical[dup] = pos_point[near[dup]]
    return CoverTree(
        points=X,
        order=order,
        base_radius=r0,
        j_min=j_min,
        pos_point=pos_point,
        pos_level=np.asarray(pos_level, dtype=np.int64),
        pos_parent=np.asarray(pos_parent, dtype=np.int64),
        level_sizes=np.asarray(level_sizes, dtype=np.int64),
        canonical=canonical,
    )


def check_invariants(ct: CoverTree) -> dict:
    """Brute-force check of nesting, covering and separation at every level.

    Quadratic in the net sizes; meant for tests and small inputs. Returns a
    dict of booleans plus the worst covering and separation ratios.
    """
    X = ct.points
    nested = all(ct.level_sizes[i] <= ct.level_sizes[i + 1] for i in range(ct.n_levels - 1))
    worst_cover = 0.0
    min_sep = np.inf
    for i in range(ct.n_levels):
        j = ct.j_min + i
        R = ct.radius(j)
        net = X[ct.net(j)]
        if len(net) > 1:
            diff = net[:, None, :] - net[None, :, :]
            dd = np.sqrt((diff ** 2).sum(-1))
            np.fill_diagonal(dd, np.inf)
            min_sep = min(min_sep, float(dd.min()) / R)
        if i > 0:
            par = ct.parents(j)
            prev_net = ct.net(j - 1)
            dd = np.linalg.norm(net - X[prev_net[par]], axis=1)
            worst_cover = max(worst_cover, float(dd.max()) / ct.radius(j - 1))
    # every input point must be within the finest radius of the finest net
    finest = X[ct.pos_point]
    dd = np.sqrt(((X[:, None, :] - finest[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return {
        "nesting": bool(nested),
        "covering": worst_cover <= 1.0,
        "separation": bool(min_sep > 1.0),
        "worst_cover_ratio": worst_cover,
        "min_separation_ratio": float(min_sep),
        "finest_cover_ratio": float(dd.max() / ct.radius(ct.j_max)),
    }
