"""Multiscale cell decomposition derived from a cover tree.

Each regression sample is anchored to its nearest net point at the finest
cover-tree level; its cell at scale ``j`` is the cover-tree ancestor of that
anchor at ``j``. Cells therefore nest exactly and the cells of any scale
partition the samples that reach it. A branch ends at the first scale where
its cover-tree node holds a single tree point. The tree is then pruned top
down: a cell keeps its children only if every child holds at least
``min_leaf_count`` samples and every child is resolved, i.e. each of its
samples lies within the child's radius of its anchor. Beyond that scale the
cells would only trace the spacing of the tree half.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .covertree import CoverTree, _csr_from_parent
from .exceptions import ParameterError

THETA2 = 3.0


@dataclass
class MultiscaleTree:
    """Nested cells ``C_{j,k}`` over the regression half.

    Cells are numbered in (scale, location) order, so cell 0 is the root.
    ``membership[i, s]`` is the cell holding sample ``s`` at scale
    ``j_min + i``, or -1 below the leaf that ends the sample's branch.
    """

    cover: CoverTree
    scale: np.ndarray
    location: np.ndarray
    parent: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    membership: np.ndarray
    anchor: np.ndarray
    anchor_dist: np.ndarray
    min_leaf_count: int
    _samples: tuple = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.scale)

    @property
    def n_samples(self) -> int:
        return self.membership.shape[1]

    @property
    def j_min(self) -> int:
        return self.cover.j_min

    @property
    def j_max(self) -> int:
        return int(self.scale.max())

    @property
    def base_radius(self) -> float:
        return self.cover.base_radius

    def radius(self, cell):
        return self.cover.base_radius * 2.0 ** (-self.scale[cell].astype(float))

    def net_point(self, cell) -> np.ndarray:
        """Tree-half index of the net point of ``cell``."""
        return self.cover.pos_point[self.location[cell]]

    def children(self, cell) -> np.ndarray:
        return self.child_idx[self.child_ptr[cell]:self.child_ptr[cell + 1]]

    def n_children(self) -> np.ndarray:
        return np.diff(self.child_ptr)

    def is_leaf(self) -> np.ndarray:
        return self.n_children() == 0

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf())

    def level_of(self, cell) -> np.ndarray:
        return self.scale[cell] - self.j_min

    def _sample_csr(self):
        if self._samples is None:
            lev, smp = np.nonzero(self.membership >= 0)
            cells = self.membership[lev, smp]
            order = np.lexsort((smp, cells))
            ptr = np.searchsorted(cells[order], np.arange(self.n_cells + 1))
            self._samples = (ptr, smp[order])
        return self._samples

    def sample_indices(self, cell) -> np.ndarray:
        ptr, idx = self._sample_csr()
        return idx[ptr[cell]:ptr[cell + 1]]

    def counts(self) -> np.ndarray:
        ptr, _ = self._sample_csr()
        return np.diff(ptr)

    def cells_at(self, j) -> np.ndarray:
        return np.flatnonzero(self.scale == j)

    def uniform_partition(self, j) -> np.ndarray:
        """Cells at scale ``j`` plus leaves that end above ``j``."""
        j = int(np.clip(j, self.j_min, self.j_max))
        shallow_leaves = self.is_leaf() & (self.scale < j)
        return np.flatnonzero((self.scale == j) | shallow_leaves)

    def ancestors_of(self, cell) -> list[int]:
        out = [int(cell)]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out

    def to_dict(self) -> dict:
        cells = []
        for c in range(self.n_cells):
            cells.append({
                "j": int(self.scale[c]),
                "k": int(self.location[c]),
                "parent": int(self.parent[c]),
                "children": self.children(c).tolist(),
                "sample_indices": self.sample_indices(c).tolist(),
                "net_point": self.cover.points[self.net_point(c)].tolist(),
            })
        return {
            "base_radius": self.base_radius,
            "j_min": self.j_min,
            "j_max": self.j_max,
            "min_leaf_count": self.min_leaf_count,
            "cells": cells,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def derive_cells(ct: CoverTree, regression_points, d: int) -> MultiscaleTree:
    """Assign the regression half to cover-tree cells and prune small leaves.

    Parameters
    ----------
    ct : CoverTree
        Built on the tree half.
    regression_points : array of shape (n, D)
    d : int
        Intrinsic dimension; pruned leaves hold at least ``d`` samples.
    """
    Xr = np.asarray(regression_points, dtype=float)
    if Xr.ndim != 2 or Xr.shape[0] == 0:
        raise ParameterError("regression_points must be a non-empty (n, D) array")
    if Xr.shape[1] != ct.points.shape[1]:
        raise ParameterError("regression points and tree points differ in dimension")
    d = int(d)
    if d < 1:
        raise ParameterError("intrinsic dimension must be at least 1")
    n = Xr.shape[0]
    if n < d:
        raise ParameterError(f"need at least d={d} regression points, got {n}")

    anchor, anchor_dist = ct.nearest(Xr)
    anc = ct.ancestors()
    L = ct.n_levels

    # first level at which each node's subtree holds a single tree point
    n_final = ct.level_sizes[-1]
    singleton = np.empty((L, n_final), dtype=bool)
    for i in range(L):
        size = np.bincount(anc[i], minlength=ct.level_sizes[i])
        singleton[i] = size[anc[i]] == 1
    leaf_level = np.where(singleton.any(axis=0), singleton.argmax(axis=0), L - 1)

    node = anc[:, anchor]                      # (L, n) cover positions
    active = np.arange(L)[:, None] <= leaf_level[anchor][None, :]

    # raw cells per level
    raw_ids = np.full((L, n), -1, dtype=np.int64)
    raw_scale, raw_loc = [], []
    offset = 0
    for i in range(L):
        uniq, inv = np.unique(node[i, active[i]], return_inverse=True)
        raw_ids[i, active[i]] = inv + offset
        raw_scale.append(np.full(len(uniq), ct.j_min + i))
        raw_loc.append(uniq)
        offset += len(uniq)
    raw_scale = np.concatenate(raw_scale)
    raw_loc = np.concatenate(raw_loc)
    n_raw = offset

    raw_parent = np.full(n_raw, -1, dtype=np.int64)
    for i in range(1, L):
        m = active[i]
        raw_parent[raw_ids[i, m]] = raw_ids[i - 1, m]
    raw_count = np.bincount(raw_ids[raw_ids >= 0], minlength=n_raw)

    # a cell resolves its samples when each lies within the cell radius of its
    # anchor; finer cells would only reflect the spacing of the tree half
    max_eps = np.zeros(n_raw)
    for i in range(L):
        m = active[i]
        np.maximum.at(max_eps, raw_ids[i, m], anchor_dist[m])
    resolved = max_eps <= ct.base_radius * 2.0 ** (-raw_scale.astype(float))

    # prune top down: children survive only if every sibling is large enough
    # and resolved
    keep = np.zeros(n_raw, dtype=bool)
    keep[0] = True
    small_child = np.zeros(n_raw, dtype=bool)
    bad = (raw_count < d) | ~resolved
    np.logical_or.at(small_child, raw_parent[bad & (raw_parent >= 0)], True)
    for i in range(1, L):
        cells = np.flatnonzero(raw_scale == ct.j_min + i)
        par = raw_parent[cells]
        keep[cells] = keep[par] & ~small_child[par]

    new_id = np.full(n_raw, -1, dtype=np.int64)
    new_id[keep] = np.arange(int(keep.sum()))
    membership = np.where(raw_ids >= 0, new_id[np.maximum(raw_ids, 0)], -1)
    membership[raw_ids < 0] = -1
    last = int(np.max(np.flatnonzero((membership >= 0).any(axis=1))))
    membership = membership[:last + 1]

    parent = np.where(raw_parent[keep] >= 0, new_id[np.maximum(raw_parent[keep], 0)], -1)
    scale = raw_scale[keep]
    location = raw_loc[keep]
    child_ptr, child_order = _csr_from_parent(parent, len(scale))
    # root's entry (-1) sorts first; drop it from the children list
    n_root_like = int((parent < 0).sum())
    child_idx = child_order[n_root_like:]
    child_ptr = np.searchsorted(parent[child_idx], np.arange(len(scale) + 1))

    return MultiscaleTree(
        cover=ct,
        scale=scale,
        location=location,
        parent=parent,
        child_ptr=child_ptr,
        child_idx=child_idx,
        membership=membership,
        anchor=anchor,
        anchor_dist=anchor_dist,
        min_leaf_count=d,
    )


def check_partition(tree: MultiscaleTree, cells) -> tuple[bool, str]:
    """Antichain and exact-cover check for a set of cells.

    Returns ``(ok, reason)``; ``reason`` is empty when ``ok``.
    """
    cells = np.asarray(cells, dtype=np.int64)
    if len(cells) == 0:
        return False, "empty partition"
    if len(np.unique(cells)) != len(cells):
        return False, "repeated cell"
    chosen = np.zeros(tree.n_cells, dtype=bool)
    chosen[cells] = True
    for c in cells:
        p = tree.parent[c]
        while p >= 0:
            if chosen[p]:
                return False, f"cell {c} lies inside cell {p}"
            p = tree.parent[p]
    seen = np.zeros(tree.n_samples, dtype=np.int64)
    for c in cells:
        np.add.at(seen, tree.sample_indices(c), 1)
    if np.any(seen == 0):
        return False, f"{int((seen == 0).sum())} samples uncovered"
    if np.any(seen > 1):
        return False, f"{int((seen > 1).sum())} samples covered twice"
    return True, ""


@dataclass
class ValidationReport:
    """Per-assumption outcome and the tightest empirical constants."""

    passed: dict
    theta1: float
    theta2: float
    a_min: int
    a_max: int
    theta3: float | None
    theta4: float | None
    cells_per_scale: dict
    scale_count_slope: float | None
    theta2_by_scale: dict
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "passed": dict(self.passed),
            "theta1": self.theta1,
            "theta2": self.theta2,
            "a_min": self.a_min,
            "a_max": self.a_max,
            "theta3": self.theta3,
            "theta4": self.theta4,
            "cells_per_scale": {str(k): v for k, v in self.cells_per_scale.items()},
            "scale_count_slope": self.scale_count_slope,
            "theta2_by_scale": {str(k): v for k, v in self.theta2_by_scale.items()},
            "details": self.details,
        }


def validate_assumptions(tree: MultiscaleTree, points, charts=None, d=None,
                         skip_coarse=0) -> ValidationReport:
    """Check the structural conditions of a derived tree. Never raises on failure.

    A1: children partition their parent. A2: every scale partitions the
    samples. A3: scale ``j`` has at most ``2**(j d) / theta1`` cells. A4: every
    sample lies within ``theta2 * r_j`` of its cell mean. A5: local covariances
    have ``d`` dominant directions (i: ``lambda_d >= theta3 r_j**2 / d``, ii:
    ``lambda_{d+1} / lambda_d <= theta4 < 1``).

    ``points`` are the regression-half coordinates. ``charts`` (from
    :func:`gmra_regression.gmra.compute_charts`) enable the (A5) spectral
    checks. The scale-count slope and (A5) constants skip the first
    ``skip_coarse`` scales.
    """
    X = np.asarray(points, dtype=float)
    d = tree.min_leaf_count if d is None else int(d)
    n_ch = tree.n_children()
    inner = n_ch > 0

    # (A1): children partition the parent, one parent per non-root cell
    a1 = bool(np.sum(tree.parent < 0) == 1 and tree.parent[0] == -1)
    for c in np.flatnonzero(inner):
        kids = tree.children(c)
        union = np.sort(np.concatenate([tree.sample_indices(k) for k in kids]))
        if not np.array_equal(union, tree.sample_indices(c)):
            a1 = False
            break
    a_min = int(n_ch[inner].min()) if inner.any() else 1
    a_max = int(n_ch[inner].max()) if inner.any() else 1

    # (A2) and (A3): per-scale partitions
    a2 = True
    per_scale = {}
    for j in range(tree.j_min, tree.j_max + 1):
        part = tree.uniform_partition(j)
        ok, _ = check_partition(tree, part)
        a2 = a2 and ok
        per_scale[j] = int(len(part))
    theta1 = float(min(2.0 ** (j * d) / m for j, m in per_scale.items()))
    scales = np.array([j for j in per_scale if j >= tree.j_min + skip_coarse], dtype=float)
    slope = None
    if len(scales) >= 2:
        counts = np.array([per_scale[int(j)] for j in scales], dtype=float)
        slope = float(np.polyfit(scales, np.log2(counts), 1)[0])

    # (A4): radius about the empirical mean
    counts = tree.counts()
    centers = np.zeros((tree.n_cells, X.shape[1]))
    worst = np.zeros(tree.n_cells)
    for i in range(tree.membership.shape[0]):
        m = tree.membership[i]
        ok = m >= 0
        cells = m[ok]
        sums = np.zeros((tree.n_cells, X.shape[1]))
        np.add.at(sums, cells, X[ok])
        lvl = np.unique(cells)
        centers[lvl] = sums[lvl] / counts[lvl, None]
        dist = np.linalg.norm(X[ok] - centers[cells], axis=1)
        np.maximum.at(worst, cells, dist)
    ratio = worst / tree.radius(np.arange(tree.n_cells))
    theta2 = float(ratio.max())
    theta2_by_scale = {int(j): float(ratio[tree.scale == j].max())
                       for j in np.unique(tree.scale)}

    passed = {"A1": a1, "A2": a2, "A3": bool(np.isfinite(theta1) and theta1 > 0),
              "A4": theta2 <= THETA2}

    theta3 = theta4 = None
    if charts is not None:
        valid = (counts > d) & (tree.scale >= tree.j_min + skip_coarse)
        lam = charts.eigenvalues
        if valid.any():
            rad = tree.radius(np.arange(tree.n_cells))
            t3 = lam[valid, d - 1] * d / rad[valid] ** 2
            theta3 = float(t3.min())
            with np.errstate(divide="ignore", invalid="ignore"):
                t4 = np.where(lam[valid, d - 1] > 0, lam[valid, d] / lam[valid, d - 1], np.inf)
            theta4 = float(t4.max())
            passed["A5i"] = theta3 > 0
            passed["A5ii"] = theta4 < 1
    return ValidationReport(
        passed=passed, theta1=theta1, theta2=theta2, a_min=a_min, a_max=a_max,
        theta3=theta3, theta4=theta4, cells_per_scale=per_scale,
        scale_count_slope=slope, theta2_by_scale=theta2_by_scale,
        details={"n_cells": tree.n_cells, "n_samples": tree.n_samples,
                 "skip_coarse": skip_coarse},
    )
