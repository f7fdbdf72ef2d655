"""Small pipeline builders shared by the test modules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gmra_regression import (SyntheticSpec, build_cover_tree, compute_charts, derive_cells,
                             fit_all, generate, split)


@dataclass
class Pipeline:
    ds: object
    halves: object
    tree: object
    charts: object
    fits: object

    @property
    def X_reg(self):
        return self.ds.points[self.halves.regression_half]

    @property
    def y_reg(self):
        return self.ds.labels[self.halves.regression_half]

    @property
    def X_test(self):
        return self.ds.points[self.halves.test]

    @property
    def f_test(self):
        return self.ds.clean_labels[self.halves.test]


def make_spec(manifold, function, n, sigma=0.0, seed=0, **kw):
    return SyntheticSpec(manifold, function, n, sigma, seed, **kw)


def build(ds, d, order=1, test_fraction=0.2, seed=0, M=None):
    halves = split(ds, test_fraction, seed)
    ct = build_cover_tree(ds.points[halves.tree_half], seed)
    Xr = ds.points[halves.regression_half]
    tree = derive_cells(ct, Xr, d)
    charts = compute_charts(tree, Xr, d)
    fits = fit_all(tree, charts, Xr, ds.labels[halves.regression_half], order, M)
    return Pipeline(ds, halves, tree, charts, fits)


def build_from_spec(manifold, function, n, d, sigma=0.0, seed=0, order=1, test_fraction=0.2,
                    **kw):
    ds = generate(make_spec(manifold, function, n, sigma, seed, **kw))
    return build(ds, d, order, test_fraction, seed)


def random_parent_tree(rng, n_nodes):
    """Random rooted tree as a parent array with parent index < child index."""
    parent = np.full(n_nodes, -1, dtype=np.int64)
    for i in range(1, n_nodes):
        parent[i] = rng.integers(0, i)
    return parent
