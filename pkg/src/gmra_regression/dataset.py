"""Synthetic manifold datasets, train/test splitting and CSV persistence.

Points are sampled exactly on a low-dimensional manifold embedded in R^D;
noise is only ever added to the labels.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DatasetIOError, MalformedFileError, ParameterError

MANIFOLDS = ("sphere", "swissroll", "affine", "circle")
FUNCTIONS = ("constant", "linear_coords", "smooth_sine", "holder", "piecewise_indicator")


@dataclass
class Dataset:
    """Labeled point cloud.

    ``clean_labels`` holds the noiseless function values when the data are
    synthetic; it is what test-set errors are measured against.
    """

    points: np.ndarray
    labels: np.ndarray
    intrinsic_dim_hint: int | None = None
    noise_sigma: float = 0.0
    clean_labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.points.ndim != 2:
            raise ParameterError("points must be a 2-d array")
        n, D = self.points.shape
        if n < 1 or D < 1:
            raise ParameterError("a dataset needs at least one point and one coordinate")
        if self.labels.shape != (n,):
            raise ParameterError(
                f"labels has shape {self.labels.shape}, expected ({n},)")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.labels))):
            raise ParameterError("dataset entries must be finite")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be nonnegative")
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=float)
            if self.clean_labels.shape != (n,):
                raise ParameterError("clean_labels must match labels in length")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        clean = None if self.clean_labels is None else self.clean_labels[idx]
        return Dataset(self.points[idx], self.labels[idx], self.intrinsic_dim_hint,
                       self.noise_sigma, clean)


@dataclass(frozen=True)
class SplitIndices:
    tree_half: np.ndarray
    regression_half: np.ndarray
    test: np.ndarray


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic dataset.

    ``manifold`` and ``function`` are dicts with a ``kind`` key plus the
    parameters of that kind, e.g. ``{"kind": "sphere", "d": 2, "D": 10}`` and
    ``{"kind": "smooth_sine", "freq": 1.0}``. ``embedding_seed`` pins the random
    isometric embedding separately from ``seed`` (which drives the intrinsic
    sample and the noise); by default it is derived from ``seed``.
    """

    manifold: dict
    function: dict
    n_samples: int
    noise_sigma: float = 0.0
    seed: int = 0
    embedding_seed: int | None = None
    rotate: bool = True

    def __post_init__(self):
        self.manifold = dict(self.manifold)
        self.function = dict(self.function)

    @property
    def intrinsic_dim(self) -> int:
        return _manifold_dims(self.manifold)[0]

    @property
    def ambient_dim(self) -> int:
        return _manifold_dims(self.manifold)[1]

    def validate(self):
        d, D = _manifold_dims(self.manifold)
        if d < 1 or d >= D:
            raise ParameterError(f"need 1 <= d < D, got d={d}, D={D}")
        if self.manifold["kind"] == "sphere" and d + 1 > D:
            raise ParameterError("a d-sphere needs D >= d + 1")
        if self.function.get("kind") not in FUNCTIONS:
            raise ParameterError(f"unknown function kind {self.function.get('kind')!r}")
        if self.noise_sigma < 0 or not math.isfinite(self.noise_sigma):
            raise ParameterError("noise_sigma must be a nonnegative finite number")
        if int(self.n_samples) < 1:
            raise ParameterError("n_samples must be positive")
        if self.function["kind"] == "holder" and float(self.function.get("alpha", 0.5)) <= 0:
            raise ParameterError("holder exponent must be positive")

    def to_dict(self) -> dict:
        out = {
            "manifold": dict(self.manifold),
            "function": dict(self.function),
            "n": int(self.n_samples),
            "sigma": float(self.noise_sigma),
            "seed": int(self.seed),
        }
        if self.embedding_seed is not None:
            out["embedding_seed"] = int(self.embedding_seed)
        if not self.rotate:
            out["rotate"] = False
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "SyntheticSpec":
        try:
            return cls(
                manifold=cfg["manifold"],
                function=cfg["function"],
                n_samples=int(cfg["n"]),
                noise_sigma=float(cfg.get("sigma", 0.0)),
                seed=int(cfg.get("seed", 0)),
                embedding_seed=cfg.get("embedding_seed"),
                rotate=bool(cfg.get("rotate", True)),
            )
        except KeyError as exc:
            raise ParameterError(f"synthetic spec is missing key {exc.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _manifold_dims(manifold: dict) -> tuple[int, int]:
    kind = manifold.get("kind")
    if kind not in MANIFOLDS:
        raise ParameterError(f"unknown manifold kind {kind!r}")
    D = int(manifold["D"])
    if kind == "circle":
        return 1, D
    if kind == "swissroll":
        return 2, D
    return int(manifold["d"]), D


def random_orthonormal(D: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """D x d matrix with orthonormal columns, Haar distributed."""
    g = rng.standard_normal((D, d))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


# Each sampler returns (ambient points before embedding, intrinsic coordinates).
# Coordinates live in [0, 1] for chart-type manifolds and on the unit sphere
# for spheres; functions are evaluated on them.

def _sample_affine(d, D, n, rng):
    u = rng.random((n, d))
    return u, u


def _sample_sphere(d, D, n, rng):
    z = rng.standard_normal((n, d + 1))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z, z


def _sample_swissroll(n, rng):
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    h = rng.random(n)
    # roll radius t, width comparable to the roll so no direction dominates
    pts = np.column_stack([t * np.cos(t), 10.0 * h, t * np.sin(t)]) / 10.0
    coords = np.column_stack([(t - 1.5 * np.pi) / (3.0 * np.pi), h])
    return pts, coords


def _coord_center(kind: str) -> float:
    return 0.0 if kind in ("sphere", "circle") else 0.5


def evaluate_function(function: dict, coords: np.ndarray, manifold_kind: str) -> np.ndarray:
    """Evaluate a benchmark function on intrinsic coordinates."""
    kind = function["kind"]
    c1 = coords[:, 0]
    center = _coord_center(manifold_kind)
    if kind == "constant":
        return np.full(coords.shape[0], float(function.get("c", 1.0)))
    if kind == "linear_coords":
        w = np.asarray(function.get("w", np.ones(coords.shape[1])), dtype=float)
        if w.shape != (coords.shape[1],):
            raise ParameterError(
                f"linear_coords needs {coords.shape[1]} weights, got {w.shape}")
        return coords @ w + float(function.get("b", 0.0))
    if kind == "smooth_sine":
        return np.sin(2.0 * np.pi * float(function.get("freq", 1.0)) * c1)
    if kind == "holder":
        return np.abs(c1 - center) ** float(function.get("alpha", 0.5))
    if kind == "piecewise_indicator":
        a = float(function.get("a", 1.0))
        b = float(function.get("b", 0.0))
        return np.where(c1 - center > 0, a, b)
    raise ParameterError(f"unknown function kind {kind!r}")


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw a labeled sample on the manifold described by ``spec``.

    The intrinsic sample and the label noise come from ``seed``; the random
    isometric embedding comes from ``embedding_seed``. Two specs that differ
    only in ``D`` therefore share intrinsic points, labels and noise.
    """
    spec.validate()
    kind = spec.manifold["kind"]
    d, D = _manifold_dims(spec.manifold)
    n = int(spec.n_samples)
    sample_ss, noise_ss = np.random.SeedSequence(int(spec.seed)).spawn(2)
    emb_seed = spec.embedding_seed if spec.embedding_seed is not None else spec.seed
    emb_rng = np.random.default_rng(np.random.SeedSequence([int(emb_seed), D, 7919]))
    rng = np.random.default_rng(sample_ss)

    if kind == "affine":
        local, coords = _sample_affine(d, D, n, rng)
    elif kind in ("sphere", "circle"):
        local, coords = _sample_sphere(d, D, n, rng)
    else:
        local, coords = _sample_swissroll(n, rng)

    m = local.shape[1]
    if kind == "affine" or spec.rotate:
        basis = random_orthonormal(D, m, emb_rng)
    else:
        basis = np.eye(D, m)
    points = local @ basis.T

    clean = evaluate_function(spec.function, coords, kind)
    sigma = float(spec.noise_sigma)
    noise = np.random.default_rng(noise_ss).standard_normal(n) * sigma if sigma > 0 else 0.0
    return Dataset(points, clean + noise, intrinsic_dim_hint=d, noise_sigma=sigma,
                   clean_labels=clean)


def split(ds: Dataset | int, test_fraction: float = 0.0, seed=None) -> SplitIndices:
    """Split sample indices into tree half, regression half and test set.

    The test set takes ``round(test_fraction * n)`` indices; the remainder is
    halved uniformly at random (the tree half gets the extra point when odd).
    """
    n = ds if isinstance(ds, (int, np.integer)) else ds.n
    if not 0.0 <= test_fraction < 1.0:
        raise ParameterError("test_fraction must lie in [0, 1)")
    if n < 4:
        raise ParameterError(f"need at least 4 samples to split, got {n}")
    n_test = int(round(test_fraction * n))
    rest = n - n_test
    if rest < 2:
        raise ParameterError("test_fraction leaves fewer than 2 points for the halves")
    perm = np.random.default_rng(seed).permutation(n)
    n_tree = (rest + 1) // 2
    return SplitIndices(
        tree_half=np.sort(perm[:n_tree]),
        regression_half=np.sort(perm[n_tree:rest]),
        test=np.sort(perm[rest:]),
    )


def save_csv(ds: Dataset, path) -> None:
    """Write ``x1..xD,y`` CSV with round-trip exact float formatting."""
    header = [f"x{i + 1}" for i in range(ds.ambient_dim)] + ["y"]
    table = np.column_stack([ds.points, ds.labels])
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            np.savetxt(fh, table, delimiter=",", fmt="%.17g")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def _read_table(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise MalformedFileError(f"{path} is empty", row=1)
    return rows[0], rows[1:]


def _parse_rows(rows, width, path):
    out = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MalformedFileError(
                f"{path}: expected {width} fields, found {len(row)}", row=r + 2)
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise MalformedFileError(
                    f"{path}: cannot parse {cell!r} as a number", row=r + 2, column=c + 1) from None
            if not math.isfinite(v):
                raise MalformedFileError(
                    f"{path}: non-finite value {cell!r}", row=r + 2, column=c + 1)
            out[r, c] = v
    return out


def load_csv(path) -> Dataset:
    """Read a dataset written by :func:`save_csv` (header ``x1..xD,y``)."""
    header, rows = _read_table(path)
    header = [h.strip() for h in header]
    if len(header) < 2 or header[-1] != "y":
        raise MalformedFileError(f"{path}: header must be x1..xD,y", row=1)
    for c, h in enumerate(header[:-1]):
        if h != f"x{c + 1}":
            raise MalformedFileError(f"{path}: unexpected header field {h!r}", row=1, column=c + 1)
    if not rows:
        raise MalformedFileError(f"{path}: no data rows", row=2)
    table = _parse_rows(rows, len(header), path)
    return Dataset(table[:, :-1], table[:, -1])


def load_points_csv(path) -> np.ndarray:
    """Read a CSV of query points; a trailing ``y`` column is ignored."""
    header, rows = _read_table(path)
    header = [h.strip() for h in header]
    width = len(header)
    if not rows:
        raise MalformedFileError(f"{path}: no data rows", row=2)
    table = _parse_rows(rows, width, path)
    if header[-1] == "y":
        table = table[:, :-1]
    return table


def save_predictions_csv(pred: np.ndarray, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write("y_pred\n")
            np.savetxt(fh, np.asarray(pred, dtype=float).reshape(-1, 1), fmt="%.17g")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


save = save_csv
load = load_csv
