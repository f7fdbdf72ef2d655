"""Refinement signals, thresholding and adaptive partitions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import Fits, Partition
from .exceptions import ParameterError
from .gmra import Charts
from .mstree import MultiscaleTree


@dataclass
class DeltaMap:
    """Per-cell refinement signal.

    ``delta_sq[c]`` is ``(1/n) sum_{x_i in c} (f_c(x_i) - f_child(x_i))**2``
    over the regression half; ``delta`` is its square root.
    """

    delta_sq: np.ndarray
    counts: np.ndarray
    n: int

    @property
    def delta(self) -> np.ndarray:
        return np.sqrt(self.delta_sq)

    def bound_ratio(self, M: float) -> float:
        """Largest ``delta_sq / (4 M**2 rho)`` over cells; never above 1 for truncated fits."""
        rho = self.counts / self.n
        occupied = rho > 0
        if np.any(self.delta_sq[~occupied] > 0):
            return float("inf")
        if not occupied.any():
            return 0.0
        return float(np.max(self.delta_sq[occupied] / (4.0 * M * M * rho[occupied])))

    def to_dict(self) -> dict:
        return {"n": self.n, "delta": self.delta.tolist(), "counts": self.counts.tolist()}


def compute_deltas(tree: MultiscaleTree, charts: Charts, fits: Fits, points) -> DeltaMap:
    """Distance between each cell's fit and the fits of its children.

    Cells without children get 0.
    """
    X = np.asarray(points, dtype=float)
    n = tree.n_samples
    if X.shape[0] != n:
        raise ParameterError("points must be the regression half")
    C = tree.n_cells
    acc = np.zeros(C)
    contrib = np.zeros(C, dtype=np.int64)
    mem = tree.membership
    for i in range(mem.shape[0] - 1):
        ok = mem[i + 1] >= 0
        if not ok.any():
            continue
        par, kid, Xi = mem[i, ok], mem[i + 1, ok], X[ok]
        diff = fits.predict(par, Xi, charts) - fits.predict(kid, Xi, charts)
        acc += np.bincount(par, weights=diff * diff, minlength=C)
        contrib += np.bincount(par, minlength=C)
    return DeltaMap(delta_sq=acc / n, counts=contrib, n=n)


def threshold(n: int, kappa: float) -> float:
    """``kappa * sqrt(ln n / n)``."""
    if n < 2:
        raise ParameterError("threshold needs n >= 2")
    if not kappa > 0:
        raise ParameterError("kappa must be positive")
    return kappa * math.sqrt(math.log(n) / n)


@dataclass
class ProperSubtree:
    """Root-containing, parent-closed node set and its induced partition."""

    nodes: np.ndarray
    outer_leaves: np.ndarray
    inner_leaves: np.ndarray

    @property
    def partition_cells(self) -> np.ndarray:
        """Outer leaves plus member nodes that have no children."""
        return np.sort(np.concatenate([self.outer_leaves, self.inner_leaves]))

    @property
    def node_set(self) -> frozenset:
        return frozenset(np.flatnonzero(self.nodes).tolist())


def _parent_array(tree) -> np.ndarray:
    if isinstance(tree, MultiscaleTree):
        return tree.parent
    return np.asarray(tree, dtype=np.int64)


def smallest_proper_subtree(tree, flags) -> ProperSubtree:
    """Root plus every root path of a flagged cell.

    Parameters
    ----------
    tree : MultiscaleTree or array of parent indices
        With a parent array, the root is the single entry equal to -1.
    flags : boolean mask over cells, or an iterable of cell indices
    """
    parent = _parent_array(tree)
    C = len(parent)
    flags = np.asarray(flags)
    if flags.dtype == bool:
        if flags.shape != (C,):
            raise ParameterError("flag mask must have one entry per cell")
        mask = flags.copy()
    else:
        mask = np.zeros(C, dtype=bool)
        idx = flags.astype(np.int64).ravel()
        if np.any((idx < 0) | (idx >= C)):
            raise ParameterError("flagged cell out of range")
        mask[idx] = True
    roots = np.flatnonzero(parent < 0)
    if len(roots) != 1:
        raise ParameterError("tree must have exactly one root")
    mask[roots] = True
    frontier = mask.copy()
    while True:
        up = parent[frontier]
        up = up[up >= 0]
        new = up[~mask[up]]
        if len(new) == 0:
            break
        mask[new] = True
        frontier = np.zeros(C, dtype=bool)
        frontier[new] = True
    has_parent = parent >= 0
    outer = np.flatnonzero(~mask & has_parent & mask[np.maximum(parent, 0)])
    n_kids = np.bincount(parent[has_parent], minlength=C)
    inner = np.flatnonzero(mask & (n_kids == 0))
    return ProperSubtree(nodes=mask, outer_leaves=outer, inner_leaves=inner)


def extend_chains(tree: MultiscaleTree, flags) -> np.ndarray:
    """Add to ``flags`` every single-child cell whose parent is flagged.

    Such a cell holds the same samples and the same fit as its only child,
    so refining it changes the estimator not at all; following the chain
    lets the partition reach the cell where the chain ends.
    """
    out = np.asarray(flags, dtype=bool).copy()
    single = tree.n_children() == 1
    for j in range(tree.j_min + 1, tree.j_max + 1):
        cells = tree.cells_at(j)
        out[cells] |= single[cells] & out[tree.parent[cells]]
    return out


def leaf_cell_of_samples(tree: MultiscaleTree) -> np.ndarray:
    """Deepest cell holding each regression sample."""
    mem = tree.membership
    depth = (mem >= 0).sum(axis=0) - 1
    return mem[depth, np.arange(mem.shape[1])]


def default_kappa(tree: MultiscaleTree, charts: Charts, fits: Fits, points, labels) -> float:
    """``0.5 * (max|y| + sigma)`` with ``sigma`` a MAD scale of the leaf-fit residuals."""
    y = np.asarray(labels, dtype=float)
    cells = leaf_cell_of_samples(tree)
    resid = y - fits.predict(cells, np.asarray(points, dtype=float), charts)
    sigma = 1.4826 * float(np.median(np.abs(resid - np.median(resid))))
    kappa = 0.5 * (float(np.max(np.abs(y))) + sigma)
    return kappa if kappa > 0 else 1.0


def adaptive_partition(tree: MultiscaleTree, charts: Charts, fits: Fits, points,
                       kappa: float, deltas: DeltaMap | None = None):
    """Adaptive partition at threshold ``kappa * sqrt(ln n / n)``.

    Returns ``(partition, deltas, tau)``.
    """
    if deltas is None:
        deltas = compute_deltas(tree, charts, fits, points)
    tau = threshold(tree.n_samples, kappa)
    flags = extend_chains(tree, deltas.delta >= tau)
    sub = smallest_proper_subtree(tree, flags)
    part = Partition(sub.partition_cells, "adaptive", tau=tau)
    return part, deltas, tau
