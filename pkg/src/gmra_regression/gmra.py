"""Empirical GMRA: per-cell means, covariances and rank-d local PCA charts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError
from .mstree import MultiscaleTree


@dataclass(frozen=True)
class LocalChart:
    """Chart of a single cell.

    ``eigenvalues`` holds the top ``d + 1`` covariance eigenvalues in
    descending order; the last is 0 when ``D == d``.
    """

    cell_id: tuple
    count: int
    measure: float
    center: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray

    def coordinates(self, x) -> np.ndarray:
        return local_coordinates(self, x)


def local_coordinates(chart: LocalChart, x) -> np.ndarray:
    """``V^T (x - c)`` for one point or a stack of points."""
    x = np.asarray(x, dtype=float)
    return (x - chart.center) @ chart.basis


def _fix_signs(V):
    """Make the largest-magnitude entry of each column positive."""
    if V.size == 0:
        return V
    rows = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[rows, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _complete_basis(V, D, d):
    """Extend orthonormal columns ``V`` (D x m, m < d) to D x d deterministically."""
    m = V.shape[1]
    if m >= d:
        return V[:, :d]
    q, _ = np.linalg.qr(np.hstack([V, np.eye(D)]))
    extra = q[:, m:d]
    return np.hstack([V, _fix_signs(extra)])


def local_pca(cov, d: int):
    """Top-``d`` eigenvectors of a symmetric PSD matrix.

    Returns ``(V, lam)`` with ``V`` of shape (D, d) and ``lam`` the top
    ``d + 1`` eigenvalues in descending order (0-padded when ``D == d``).
    Negative round-off eigenvalues are clipped to 0.
    """
    S = np.asarray(cov, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ParameterError("covariance must be a square matrix")
    D = S.shape[0]
    if not 1 <= d <= D:
        raise ParameterError(f"need 1 <= d <= D, got d={d}, D={D}")
    scale = max(np.abs(S).max(), 1.0)
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-12 * scale):
        raise ParameterError("covariance must be symmetric")
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    w = np.clip(w[::-1], 0.0, None)
    U = U[:, ::-1]
    lam = np.zeros(d + 1)
    k = min(d + 1, D)
    lam[:k] = w[:k]
    return _fix_signs(U[:, :d]), lam


def _pca_from_points(Xc, d):
    """Chart basis and top ``d + 1`` eigenvalues from centered points."""
    n, D = Xc.shape
    lam = np.zeros(d + 1)
    if n == 1 or not np.any(Xc):
        return _complete_basis(np.zeros((D, 0)), D, d), lam
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    ev = s ** 2 / n
    k = min(d + 1, len(ev))
    lam[:k] = ev[:k]
    rank = int(np.sum(ev > ev[0] * 1e-13))
    V = _fix_signs(Vt[:min(d, rank)].T)
    return _complete_basis(V, D, d), lam


@dataclass
class Charts:
    """Charts for every cell of a tree, stored as stacked arrays."""

    intrinsic_dim: int
    counts: np.ndarray
    measure: np.ndarray
    centers: np.ndarray
    bases: np.ndarray
    eigenvalues: np.ndarray
    scale: np.ndarray
    location: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.counts)

    def chart(self, cell) -> LocalChart:
        return LocalChart(
            cell_id=(int(self.scale[cell]), int(self.location[cell])),
            count=int(self.counts[cell]),
            measure=float(self.measure[cell]),
            center=self.centers[cell],
            basis=self.bases[cell],
            eigenvalues=self.eigenvalues[cell],
        )

    def coordinates(self, cells, X) -> np.ndarray:
        """Row-wise chart coordinates: ``V_c^T (x - c_c)`` for paired rows."""
        cells = np.asarray(cells)
        diff = np.asarray(X, dtype=float) - self.centers[cells]
        return np.einsum("nD,nDd->nd", diff, self.bases[cells])

    def to_dict(self) -> dict:
        return {
            "intrinsic_dim": self.intrinsic_dim,
            "counts": self.counts.tolist(),
            "measure": self.measure.tolist(),
            "centers": self.centers.tolist(),
            "bases": self.bases.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "scale": self.scale.tolist(),
            "location": self.location.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Charts":
        D = len(data["centers"][0]) if data["centers"] else 0
        d = int(data["intrinsic_dim"])
        return cls(
            intrinsic_dim=d,
            counts=np.asarray(data["counts"], dtype=np.int64),
            measure=np.asarray(data["measure"], dtype=float),
            centers=np.asarray(data["centers"], dtype=float).reshape(-1, D),
            bases=np.asarray(data["bases"], dtype=float).reshape(-1, D, d),
            eigenvalues=np.asarray(data["eigenvalues"], dtype=float).reshape(-1, d + 1),
            scale=np.asarray(data["scale"], dtype=np.int64),
            location=np.asarray(data["location"], dtype=np.int64),
        )


def cell_statistics(tree: MultiscaleTree, points, cells=None) -> dict:
    """Count, mean and covariance of each requested cell.

    Returns ``{cell: (n_hat, c_hat, Sigma_hat)}``; covariance uses the
    ``1 / n_hat`` normalization.
    """
    X = np.asarray(points, dtype=float)
    cells = range(tree.n_cells) if cells is None else cells
    out = {}
    for c in cells:
        idx = tree.sample_indices(c)
        if len(idx) == 0:
            raise RuntimeError(f"cell {c} holds no samples; the tree is inconsistent")
        pts = X[idx]
        center = pts.mean(axis=0)
        Xc = pts - center
        out[int(c)] = (len(idx), center, Xc.T @ Xc / len(idx))
    return out


def compute_charts(tree: MultiscaleTree, points, d: int) -> Charts:
    """Local PCA charts for all cells of ``tree`` on the regression half.

    A cell holding exactly the samples of its parent reuses the parent's
    chart.
    """
    X = np.asarray(points, dtype=float)
    if X.shape[0] != tree.n_samples:
        raise ParameterError("points must be the regression half the tree was derived from")
    d = int(d)
    n, D = X.shape
    if d > D:
        raise ParameterError("intrinsic dimension exceeds ambient dimension")
    counts = tree.counts()
    if np.any(counts == 0):
        raise RuntimeError("empty cell in tree")
    C = tree.n_cells
    centers = np.zeros((C, D))
    for i in range(tree.membership.shape[0]):
        m = tree.membership[i]
        ok = m >= 0
        sums = np.zeros((C, D))
        np.add.at(sums, m[ok], X[ok])
        cells = np.unique(m[ok])
        centers[cells] = sums[cells] / counts[cells, None]

    bases = np.zeros((C, D, d))
    eig = np.zeros((C, d + 1))
    same_as_parent = np.zeros(C, dtype=bool)
    has_parent = tree.parent >= 0
    same_as_parent[has_parent] = counts[has_parent] == counts[tree.parent[has_parent]]
    for c in range(C):
        if same_as_parent[c]:
            p = tree.parent[c]
            bases[c] = bases[p]
            eig[c] = eig[p]
            centers[c] = centers[p]
            continue
        idx = tree.sample_indices(c)
        bases[c], eig[c] = _pca_from_points(X[idx] - centers[c], d)
    return Charts(
        intrinsic_dim=d,
        counts=counts,
        measure=counts / n,
        centers=centers,
        bases=bases,
        eigenvalues=eig,
        scale=tree.scale.copy(),
        location=tree.location.copy(),
    )
