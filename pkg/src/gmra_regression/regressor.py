"""Scikit-learn compatible front end for the multiscale regression pipeline."""
from __future__ import annotations

import json
import time

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adaptive import adaptive_partition, default_kappa
from .covertree import build_cover_tree
from .dataset import split
from .estimator import GlobalEstimator, Partition, assemble_uniform, choose_jstar, fit_all
from .exceptions import DatasetIOError, ParameterError
from .gmra import compute_charts
from .mstree import derive_cells

MODES = ("adaptive", "uniform")


class GMRARegressor(RegressorMixin, BaseEstimator):
    """Piecewise polynomial regression on a multiscale partition of the data.

    Half of the training points build the cover tree; the other half carries
    the labels used for the local fits.

    Parameters
    ----------
    intrinsic_dim : int
        Dimension ``d`` of the manifold the inputs lie near.
    order : {0, 1}
        Local polynomial order.
    mode : {"adaptive", "uniform"}
        Thresholded refinement, or a single scale.
    kappa : float, optional
        Threshold constant for adaptive mode. Default
        ``0.5 * (max|y| + sigma_hat)``.
    scale : int, optional
        Scale for uniform mode. When omitted, it is derived from ``s`` and
        ``mu``, or the finest scale is used when ``s`` is also omitted.
    s : float, optional
        Assumed regularity, used to pick the uniform scale.
    mu : float
        Constant in the uniform scale rule.
    M : float, optional
        Truncation bound. Default ``max|y|`` over the regression half.
    out_of_support_value : float
        Prediction far from the training data.
    random_state : int or None
        Seeds the half split and the cover-tree insertion order.
    """

    def __init__(self, intrinsic_dim=1, order=1, mode="adaptive", kappa=None, scale=None,
                 s=None, mu=1.0, M=None, out_of_support_value=0.0, random_state=None):
        self.intrinsic_dim = intrinsic_dim
        self.order = order
        self.mode = mode
        self.kappa = kappa
        self.scale = scale
        self.s = s
        self.mu = mu
        self.M = M
        self.out_of_support_value = out_of_support_value
        self.random_state = random_state

    def _check_params(self, D):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.order not in (0, 1):
            raise ParameterError("order must be 0 or 1")
        d = int(self.intrinsic_dim)
        if not 1 <= d <= D:
            raise ParameterError(f"intrinsic_dim must be in [1, {D}], got {self.intrinsic_dim}")
        if self.kappa is not None and not self.kappa > 0:
            raise ParameterError("kappa must be positive")
        if self.M is not None and not self.M > 0:
            raise ParameterError("M must be positive")
        if not self.mu > 0:
            raise ParameterError("mu must be positive")
        return d

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 4:
            raise ParameterError("need at least 4 training points")
        halves = split(X.shape[0], 0.0, self.random_state)
        return self.fit_halves(X[halves.tree_half], X[halves.regression_half],
                               y[halves.regression_half])

    def fit_halves(self, X_tree, X_reg, y_reg):
        """Fit with an explicit tree half and labelled regression half."""
        X_tree = check_array(X_tree, dtype=np.float64)
        X_reg, y_reg = check_X_y(X_reg, y_reg, dtype=np.float64, y_numeric=True)
        if X_tree.shape[1] != X_reg.shape[1]:
            raise ParameterError("tree and regression halves differ in dimension")
        if X_reg.shape[0] < 2:
            raise ParameterError("need at least 2 regression points")
        d = self._check_params(X_reg.shape[1])
        timings = {}

        t = time.perf_counter()
        cover = build_cover_tree(X_tree, self.random_state)
        tree = derive_cells(cover, X_reg, d)
        timings["tree"] = time.perf_counter() - t

        t = time.perf_counter()
        charts = compute_charts(tree, X_reg, d)
        timings["gmra"] = time.perf_counter() - t

        t = time.perf_counter()
        fits = fit_all(tree, charts, X_reg, y_reg, int(self.order), self.M)
        timings["fit"] = time.perf_counter() - t

        t = time.perf_counter()
        self.deltas_ = None
        self.tau_ = None
        self.kappa_ = None
        if self.mode == "adaptive":
            kappa = self.kappa
            if kappa is None:
                kappa = default_kappa(tree, charts, fits, X_reg, y_reg)
            partition, self.deltas_, self.tau_ = adaptive_partition(tree, charts, fits, X_reg, kappa)
            self.kappa_ = float(kappa)
            estimator = GlobalEstimator(tree, charts, fits, partition, float(self.out_of_support_value))
        else:
            j = self.scale
            if j is None:
                if self.s is None:
                    j = tree.j_max
                else:
                    j = choose_jstar(X_reg.shape[0], float(self.s), d, float(self.mu),
                                     tree.base_radius, (max(0, tree.j_min), tree.j_max))
            estimator = assemble_uniform(tree, charts, fits, int(j), float(self.out_of_support_value))
        timings["select"] = time.perf_counter() - t

        self.estimator_ = estimator
        self.tree_ = tree
        self.charts_ = charts
        self.fits_ = fits
        self.partition_ = estimator.partition
        self.M_ = fits.M
        self.n_features_in_ = X_reg.shape[1]
        self.timings_ = timings
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ParameterError(
                f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        return self.estimator_.predict(X)

    @property
    def n_cells_(self) -> int:
        check_is_fitted(self, "estimator_")
        return len(self.partition_)

    def with_partition(self, partition: Partition) -> GlobalEstimator:
        """Estimator on another partition of the fitted tree."""
        check_is_fitted(self, "estimator_")
        return GlobalEstimator(self.tree_, self.charts_, self.fits_, partition,
                               float(self.out_of_support_value))

    def save(self, path) -> None:
        """Write the fitted model as JSON."""
        check_is_fitted(self, "estimator_")
        data = self.estimator_.to_dict()
        data["params"] = self.get_params()
        with open(path, "w") as fh:
            json.dump(data, fh)


def load_model(path) -> GlobalEstimator:
    """Read a model written by :meth:`GMRARegressor.save`."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise DatasetIOError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"{path} is not a JSON model: {exc}") from exc
    try:
        return GlobalEstimator.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetIOError(f"{path} is not a valid model: {exc}") from exc
