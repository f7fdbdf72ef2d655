"""Truncated local polynomial estimators on tree cells and their global assembly."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .covertree import _expand, _segment_argmin, _pair_dist
from .exceptions import ParameterError
from .gmra import Charts, LocalChart
from .mstree import THETA2, MultiscaleTree, check_partition

logger = logging.getLogger(__name__)

# relative eigenvalue floor below which a chart direction gets no slope
EPS_LAMBDA = 1e-10


def truncate(values, M):
    """Clamp to ``[-M, M]``."""
    return np.clip(values, -M, M)


@dataclass(frozen=True)
class LocalEstimator:
    """Fit on one cell.

    For ``order == 1`` the coefficients are the ``d`` chart slopes followed
    by the intercept that multiplies the cell radius ``r0 * 2**-j``.
    """

    cell_id: tuple
    order: int
    coefficients: np.ndarray
    M: float
    scale_radius: float
    chart: LocalChart | None = None

    def predict_raw(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.order == 0:
            return np.full(X.shape[0], self.coefficients[0])
        coords = self.chart.coordinates(X)
        design = np.column_stack([coords, np.full(X.shape[0], self.scale_radius)])
        return design @ self.coefficients

    def predict(self, X) -> np.ndarray:
        return truncate(self.predict_raw(X), self.M)


def _check_order(order):
    if order not in (0, 1):
        raise ParameterError(f"polynomial order must be 0 or 1, got {order!r}")


def fit_local(chart: LocalChart, points, labels, order: int, M: float,
              scale_radius: float = 1.0) -> LocalEstimator:
    """Least-squares fit of a constant or linear function in chart coordinates.

    The linear fit uses the closed form with the top-``d`` covariance
    eigenvalues as normal matrix; directions whose eigenvalue is at most
    ``EPS_LAMBDA`` times the largest get zero slope.
    """
    _check_order(order)
    if not M > 0:
        raise ParameterError("truncation bound M must be positive")
    y = np.asarray(labels, dtype=float)
    if y.size == 0:
        raise ParameterError("cannot fit an empty cell")
    mean = y.sum() / y.size
    if order == 0:
        return LocalEstimator(chart.cell_id, 0, np.array([mean]), float(M), float(scale_radius), chart)
    coords = chart.coordinates(np.atleast_2d(points))
    # chart coordinates average to 0 on the cell, so centering y changes
    # nothing in exact arithmetic but removes round-off for near-constant y
    moment = ((y - mean)[:, None] * coords).sum(axis=0) / y.size
    slopes = _regularized_solve(moment[None, :], chart.eigenvalues[None, :len(moment)])[0]
    coef = np.append(slopes, mean / scale_radius)
    return LocalEstimator(chart.cell_id, 1, coef, float(M), float(scale_radius), chart)


def _regularized_solve(moments, lam):
    lam1 = lam[:, :1]
    ok = (lam > EPS_LAMBDA * lam1) & (lam1 > 0)
    return np.where(ok, moments / np.where(ok, lam, 1.0), 0.0)


@dataclass
class Fits:
    """Local estimators for every cell, stored as stacked arrays."""

    order: int
    M: float
    means: np.ndarray
    slopes: np.ndarray
    radius: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.means)

    def coefficients(self, cell) -> np.ndarray:
        if self.order == 0:
            return np.array([self.means[cell]])
        return np.append(self.slopes[cell], self.means[cell] / self.radius[cell])

    def local(self, cell, charts: Charts) -> LocalEstimator:
        chart = charts.chart(cell)
        return LocalEstimator(chart.cell_id, self.order, self.coefficients(cell),
                              self.M, float(self.radius[cell]), chart)

    def predict_raw(self, cells, X, charts: Charts) -> np.ndarray:
        """Untruncated prediction of cell ``cells[t]`` at ``X[t]``."""
        cells = np.asarray(cells)
        if self.order == 0:
            return self.means[cells].copy()
        coords = charts.coordinates(cells, X)
        # intercept * radius is the cell mean
        return np.einsum("nd,nd->n", coords, self.slopes[cells]) + self.means[cells]

    def predict(self, cells, X, charts: Charts) -> np.ndarray:
        return truncate(self.predict_raw(cells, X, charts), self.M)

    def to_dict(self) -> dict:
        return {"order": self.order, "M": self.M, "means": self.means.tolist(),
                "slopes": self.slopes.tolist(), "radius": self.radius.tolist()}

    @classmethod
    def from_dict(cls, data: dict, d: int) -> "Fits":
        return cls(order=int(data["order"]), M=float(data["M"]),
                   means=np.asarray(data["means"], dtype=float),
                   slopes=np.asarray(data["slopes"], dtype=float).reshape(-1, d),
                   radius=np.asarray(data["radius"], dtype=float))


def default_M(labels) -> float:
    """Largest absolute label, or 1 when all labels are 0."""
    m = float(np.max(np.abs(labels))) if len(labels) else 0.0
    return m if m > 0 else 1.0


def fit_all(tree: MultiscaleTree, charts: Charts, points, labels, order: int,
            M: float | None = None) -> Fits:
    """Fit the order-``order`` truncated estimator on every cell."""
    _check_order(order)
    X = np.asarray(points, dtype=float)
    y = np.asarray(labels, dtype=float)
    if y.shape != (tree.n_samples,):
        raise ParameterError("labels must match the regression half")
    M = default_M(y) if M is None else float(M)
    if not M > 0:
        raise ParameterError("truncation bound M must be positive")
    C = tree.n_cells
    d = charts.intrinsic_dim
    counts = charts.counts
    sums = np.zeros(C)
    for m in tree.membership:
        ok = m >= 0
        sums += np.bincount(m[ok], weights=y[ok], minlength=C)
    means = sums / counts
    slopes = np.zeros((C, d))
    if order == 1:
        moments = np.zeros((C, d))
        for m in tree.membership:
            ok = m >= 0
            cells = m[ok]
            coords = charts.coordinates(cells, X[ok])
            resid = y[ok] - means[cells]
            for k in range(d):
                moments[:, k] += np.bincount(cells, weights=resid * coords[:, k], minlength=C)
        slopes = _regularized_solve(moments / counts[:, None], charts.eigenvalues[:, :d])
    return Fits(order=order, M=M, means=means, slopes=slopes, radius=tree.radius(np.arange(C)))


def choose_jstar(n: int, s: float, d: int, mu: float = 1.0, r0: float = 1.0,
                 scale_range=(0, None)) -> int:
    """Scale whose radius ``r0 * 2**-j`` best matches ``mu (ln n / n)**(1/(2s+d))``.

    The result is clamped to ``scale_range`` (``None`` means unbounded).
    """
    if n < 2 or not s > 0 or not mu > 0 or d < 1:
        raise ParameterError("choose_jstar needs n >= 2, s > 0, mu > 0, d >= 1")
    target = mu * (math.log(n) / n) ** (1.0 / (2.0 * s + d))
    j = int(round(math.log2(r0 / target)))
    lo, hi = scale_range
    clamped = j
    if lo is not None:
        clamped = max(clamped, lo)
    if hi is not None:
        clamped = min(clamped, hi)
    if clamped != j:
        logger.info("j* = %d clamped to %d", j, clamped)
    return clamped


@dataclass
class Partition:
    """Antichain of cells covering the regression half."""

    cells: np.ndarray
    kind: str
    scale: int | None = None
    tau: float | None = None

    def __len__(self):
        return len(self.cells)

    def to_dict(self) -> dict:
        return {"cells": np.asarray(self.cells).tolist(), "kind": self.kind,
                "scale": self.scale, "tau": self.tau}

    @classmethod
    def from_dict(cls, data: dict) -> "Partition":
        return cls(np.asarray(data["cells"], dtype=np.int64), data["kind"],
                   data.get("scale"), data.get("tau"))


@dataclass
class GlobalEstimator:
    """Piecewise estimator: the local fit of the partition cell holding ``x``."""

    tree: MultiscaleTree
    charts: Charts
    fits: Fits
    partition: Partition
    out_of_support_value: float = 0.0
    _lookup: list = field(default=None, repr=False)
    _ancestors: np.ndarray = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return self.fits.order

    @property
    def M(self) -> float:
        return self.fits.M

    def _tables(self):
        if self._lookup is None:
            ct = self.tree.cover
            self._ancestors = ct.ancestors()
            self._lookup = []
            for i in range(ct.n_levels):
                table = np.full(ct.level_sizes[i], -1, dtype=np.int64)
                here = np.flatnonzero(self.tree.scale == ct.j_min + i)
                table[self.tree.location[here]] = here
                self._lookup.append(table)
        return self._lookup, self._ancestors

    def support_radius(self) -> float:
        return THETA2 * self.tree.base_radius * 2.0 ** (-self.tree.j_min)

    def route(self, X) -> np.ndarray:
        """Partition cell of each row of ``X``; -1 outside the explored support.

        A query follows the cover-tree ancestors of its nearest finest-level
        net point, exactly as regression samples were assigned. When that path
        leaves the populated cells before reaching the partition, it descends
        to the child with the nearest center.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = X.shape[0]
        out = np.full(m, -1, dtype=np.int64)
        inside = np.linalg.norm(X - self.charts.centers[0], axis=1) <= self.support_radius()
        q = np.flatnonzero(inside)
        if len(q) == 0:
            return out
        in_part = np.zeros(self.tree.n_cells, dtype=bool)
        in_part[self.partition.cells] = True
        lookup, anc = self._tables()
        anchor, _ = self.tree.cover.nearest(X[q])
        current = np.zeros(len(q), dtype=np.int64)
        assigned = np.full(len(q), -1, dtype=np.int64)
        for i in range(len(lookup)):
            todo = assigned < 0
            if not todo.any():
                break
            cand = lookup[i][anc[i][anchor]]
            step = todo & (cand >= 0)
            current[step] = cand[step]
            hit = step & in_part[cand.clip(0)]
            assigned[hit] = cand[hit]
        todo = np.flatnonzero(assigned < 0)
        while len(todo):
            owner, kids = _expand(self.tree.child_ptr, self.tree.child_idx, current[todo])
            if len(kids) == 0:
                raise RuntimeError("partition does not cover the tree")
            dist = _pair_dist(X[q], todo[owner], self.charts.centers, kids)
            _, best, _ = _segment_argmin(dist, owner, kids, len(todo))
            current[todo] = best
            hit = in_part[best]
            assigned[todo[hit]] = best[hit]
            todo = todo[~hit]
        out[q] = assigned
        return out

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cells = self.route(X)
        pred = np.full(X.shape[0], float(self.out_of_support_value))
        ok = cells >= 0
        if ok.any():
            pred[ok] = self.fits.predict(cells[ok], X[ok], self.charts)
        return pred

    def to_dict(self) -> dict:
        t = self.tree
        return {
            "format": "gmra-regression-model",
            "version": 1,
            "tree_points": t.cover.points.tolist(),
            "cover": t.cover.to_dict(),
            "cells": {
                "scale": t.scale.tolist(),
                "location": t.location.tolist(),
                "parent": t.parent.tolist(),
                "membership": t.membership.tolist(),
                "anchor": t.anchor.tolist(),
                "anchor_dist": t.anchor_dist.tolist(),
                "min_leaf_count": t.min_leaf_count,
            },
            "charts": self.charts.to_dict(),
            "fits": self.fits.to_dict(),
            "partition": self.partition.to_dict(),
            "M": self.M,
            "out_of_support_value": self.out_of_support_value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GlobalEstimator":
        from .covertree import CoverTree
        if data.get("format") != "gmra-regression-model":
            raise ParameterError("not a gmra-regression model file")
        ct = CoverTree.from_dict(data["cover"], data["tree_points"])
        cells = data["cells"]
        parent = np.asarray(cells["parent"], dtype=np.int64)
        n_cells = len(parent)
        order = np.argsort(parent, kind="stable")
        child_idx = order[int((parent < 0).sum()):]
        child_ptr = np.searchsorted(parent[child_idx], np.arange(n_cells + 1))
        membership = np.asarray(cells["membership"], dtype=np.int64)
        tree = MultiscaleTree(
            cover=ct,
            scale=np.asarray(cells["scale"], dtype=np.int64),
            location=np.asarray(cells["location"], dtype=np.int64),
            parent=parent,
            child_ptr=child_ptr,
            child_idx=child_idx,
            membership=membership.reshape(-1, len(cells["anchor"])),
            anchor=np.asarray(cells["anchor"], dtype=np.int64),
            anchor_dist=np.asarray(cells["anchor_dist"], dtype=float),
            min_leaf_count=int(cells["min_leaf_count"]),
        )
        charts = Charts.from_dict(data["charts"])
        fits = Fits.from_dict(data["fits"], charts.intrinsic_dim)
        return cls(tree, charts, fits, Partition.from_dict(data["partition"]),
                   float(data.get("out_of_support_value", 0.0)))


def assemble_uniform(tree: MultiscaleTree, charts: Charts, fits: Fits, j: int,
                     out_of_support_value: float = 0.0) -> GlobalEstimator:
    """Global estimator on the uniform partition at scale ``j``.

    Branches that end above ``j`` contribute their leaf.
    """
    cells = tree.uniform_partition(j)
    j = int(np.clip(j, tree.j_min, tree.j_max))
    return GlobalEstimator(tree, charts, fits, Partition(cells, "uniform", scale=j),
                           out_of_support_value)


def assemble(tree, charts, fits, partition: Partition, out_of_support_value=0.0,
             check=False) -> GlobalEstimator:
    if check:
        ok, why = check_partition(tree, partition.cells)
        if not ok:
            raise ParameterError(f"invalid partition: {why}")
    return GlobalEstimator(tree, charts, fits, partition, out_of_support_value)
