"""Datasets, synthetic manifold generators and CSV I/O."""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, ParseError


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered N x d sample set with optional integer labels."""

    points: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidArgumentError(f"points must be a non-empty N x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("points contain non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (pts.shape[0],):
                raise InvalidArgumentError(
                    f"label count {labels.size} does not match point count {pts.shape[0]}")
            labels = labels.astype(np.int64)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def median_nn_distance(self) -> float:
        if self.n < 2:
            return 0.0
        dist, _ = self.tree.query(self.points, k=2)
        return float(np.median(dist[:, 1]))

    @cached_property
    def diameter(self) -> float:
        """Maximum pairwise Euclidean distance."""
        return max_pairwise_distance(self.points)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.points[idx], labels, dict(self.meta))


def max_pairwise_distance(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    cand = pts
    if 2 <= pts.shape[1] <= 3 and len(pts) > 64:
        from scipy.spatial import ConvexHull, QhullError

        try:
            cand = pts[ConvexHull(pts).vertices]
        except QhullError:
            cand = pts
    best = 0.0
    for start in range(0, len(cand), 1024):
        block = cand[start:start + 1024]
        d2 = ((block[:, None, :] - cand[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def _check_count(n, minimum=1):
    if int(n) != n or n < minimum:
        raise InvalidArgumentError(f"n must be an integer >= {minimum}, got {n}")
    return int(n)


# Archimedean spiral r = a*t over roughly three quarters of a turn. The pitch is
# set so the backbone is SPIRAL_LENGTH units long.
SPIRAL_T0 = math.pi
SPIRAL_T1 = 2.5 * math.pi
SPIRAL_LENGTH = 30.0
SPIRAL_STD = (0.05, 0.5)


def _unit_arc(t):
    # arc length of r = t from 0 to t
    return 0.5 * (t * np.sqrt(1.0 + t * t) + np.arcsinh(t))


SPIRAL_A = SPIRAL_LENGTH / float(_unit_arc(SPIRAL_T1) - _unit_arc(SPIRAL_T0))


def spiral_backbone(s):
    """Point and outward unit normal of the spiral backbone at arc length ``s``."""
    s = np.asarray(s, dtype=float)
    grid = np.linspace(SPIRAL_T0, SPIRAL_T1, 4097)
    arc = SPIRAL_A * (_unit_arc(grid) - _unit_arc(SPIRAL_T0))
    t = np.interp(s, arc, grid)
    # refine the interpolated parameter with two Newton steps on the arc length
    for _ in range(2):
        ds = SPIRAL_A * np.sqrt(1.0 + t * t)
        t = t - (SPIRAL_A * (_unit_arc(t) - _unit_arc(SPIRAL_T0)) - s) / ds
    r = SPIRAL_A * t
    point = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
    tangent = np.stack([np.cos(t) - t * np.sin(t), np.sin(t) + t * np.cos(t)], axis=-1)
    tangent /= np.linalg.norm(tangent, axis=-1, keepdims=True)
    normal = np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1)
    # orient away from the spiral centre
    flip = np.sum(normal * point, axis=-1) < 0
    normal[flip] *= -1
    return point, normal


def gen_noisy_spiral(n: int, seed: int) -> Dataset:
    """2-d spiral with a transverse spread that widens along the arc.

    The first half of the arc carries Laplacian transverse noise and the second
    half uniform noise; in both the standard deviation grows linearly with arc
    length from ``SPIRAL_STD[0]`` to ``SPIRAL_STD[1]``.  ``meta`` records the arc
    coordinate and transverse offset of every sample.
    """
    n = _check_count(n)
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, SPIRAL_LENGTH, n)
    lo, hi = SPIRAL_STD
    std = lo + (hi - lo) * s / SPIRAL_LENGTH
    laplace = s < 0.5 * SPIRAL_LENGTH
    v = np.empty(n)
    v[laplace] = rng.laplace(0.0, std[laplace] / math.sqrt(2.0))
    half = std[~laplace] * math.sqrt(3.0)
    v[~laplace] = rng.uniform(-half, half)
    point, normal = spiral_backbone(s)
    pts = point + v[:, None] * normal
    return Dataset(pts, meta={"kind": "spiral", "seed": seed, "arc": s, "offset": v})


SWISS_T = (1.5 * math.pi, 4.5 * math.pi)
SWISS_H = (0.0, 21.0)


def swiss_roll_surface(t, h):
    t = np.asarray(t, dtype=float)
    return np.stack([t * np.cos(t), np.broadcast_to(h, t.shape), t * np.sin(t)], axis=-1)


def gen_swiss_roll(n: int, noise_sigma: float, seed: int) -> Dataset:
    """Points (t cos t, h, t sin t) plus isotropic Gaussian noise."""
    n = _check_count(n)
    if not noise_sigma >= 0:
        raise InvalidArgumentError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(*SWISS_T, n)
    h = rng.uniform(*SWISS_H, n)
    pts = swiss_roll_surface(t, h)
    pts = pts + rng.normal(0.0, 1.0, pts.shape) * noise_sigma
    return Dataset(pts, meta={"kind": "swissroll", "seed": seed, "t": t, "h": h, "sigma": noise_sigma})


def gen_helix(n: int, noise_sigma: float, seed: int) -> Dataset:
    """Noisy 1-d curve in 3-d: a helix of radius 5 and pitch 4 over 1.5 turns."""
    n = _check_count(n)
    if not noise_sigma >= 0:
        raise InvalidArgumentError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 3.0 * math.pi, n)
    pts = np.stack([5.0 * np.cos(t), 5.0 * np.sin(t), 4.0 * t / (2 * math.pi)], axis=-1)
    pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    return Dataset(pts, meta={"kind": "helix", "seed": seed, "t": t, "sigma": noise_sigma})


def _rot(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def two_cluster_layout(alpha1, alpha2, theta1, std_ratios, spacing=4.0):
    """Centers and axis matrices (columns = principal axes) for the two clusters.

    Angles are in degrees.  Cluster 1 sits at the origin with its first axis
    rotated ``alpha1`` from the x axis; cluster 2 sits ``spacing`` units away
    along a backbone bent by ``theta1`` and is rotated a further ``alpha2``.
    """
    a1, a2, th = (math.radians(v) for v in (alpha1, alpha2, theta1))
    c1 = np.zeros(2)
    c2 = spacing * np.array([math.cos(th), math.sin(th)])
    axes = (_rot(a1), _rot(th + a2))
    stds = tuple(np.array([1.0, float(r)]) for r in std_ratios)
    return (c1, c2), axes, stds


def gen_two_cluster(alpha1: float, alpha2: float, theta1: float, std_ratios, n: int,
                    seed: int) -> Dataset:
    """Two Gaussian clusters on a bent backbone (angles in degrees).

    Each cluster has unit standard deviation along its first principal axis and
    ``std_ratios[i]`` along the second.  Labels give the cluster index.
    """
    n = _check_count(n, minimum=2)
    ratios = tuple(float(r) for r in std_ratios)
    if len(ratios) != 2 or min(ratios) <= 0:
        raise InvalidArgumentError("std_ratios must be a pair of positive reals")
    centers, axes, stds = two_cluster_layout(alpha1, alpha2, theta1, ratios)
    rng = np.random.default_rng(seed)
    counts = (n // 2, n - n // 2)
    blocks = []
    for c, ax, sd, m in zip(centers, axes, stds, counts):
        z = rng.normal(0.0, 1.0, (m, 2)) * sd
        blocks.append(c + z @ ax.T)
    labels = np.repeat([0, 1], counts)
    return Dataset(np.vstack(blocks), labels,
                   meta={"kind": "twocluster", "seed": seed, "centers": centers, "axes": axes,
                         "stds": stds})


def save_csv(dataset: Dataset, path, precision: int | None = None, header: str | None = None):
    """Write one point per row; labels, if present, go in a trailing column.

    ``precision=None`` writes the shortest repr that round-trips exactly.
    The file is written to a temporary sibling and renamed into place.
    """
    fmt = repr if precision is None else (lambda v: f"{v:.{precision}g}")
    lines = []
    if header:
        lines.append("# " + header)
    pts = dataset.points
    for i in range(dataset.n):
        fields = [fmt(float(v)) for v in pts[i]]
        if dataset.labels is not None:
            fields.append(str(int(dataset.labels[i])))
        lines.append(",".join(fields))
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_text_atomic(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_matrix(path, allow_nan: bool = False) -> np.ndarray:
    """Parse a comma-separated numeric file into an N x m array.

    ``allow_nan=True`` accepts NaN fields, which the commands write for failed samples.
    Infinities are always rejected.
    """
    with open(path, "r") as fh:
        text = fh.read()
    rows = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ParseError(f"expected {width} fields, found {len(fields)}", row=lineno)
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", row=lineno) from None
        if not all(math.isfinite(v) or (allow_nan and math.isnan(v)) for v in values):
            raise ParseError("non-finite value", row=lineno)
        rows.append(values)
    if not rows:
        raise ParseError(f"{os.fspath(path)}: no data rows")
    return np.array(rows)


def load_csv(path, labels: bool = False) -> Dataset:
    """Read a comma-separated point file; ``labels=True`` treats the last column as labels."""
    arr = read_matrix(path)
    if labels:
        if arr.shape[1] < 2:
            raise ParseError("label column requested but rows have a single field")
        lab = arr[:, -1]
        if not np.all(lab == np.round(lab)):
            raise ParseError("label column contains non-integer values")
        return Dataset(arr[:, :-1], lab.astype(np.int64))
    return Dataset(arr)
