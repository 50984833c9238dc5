"""Density along a curve and the density-weighted arc length it induces.

The integrand p(u)**gamma is tabulated on a node grid (curve vertices plus a
uniform refinement fine enough to resolve the projected sample spread) and
integrated exactly as a piecewise-linear function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .curve import PrincipalCurve, project_points
from .data import Dataset
from .errors import InvalidArgumentError, OutOfRangeError

NODES_PER_SPREAD = 64
MAX_NODES = 20000
GLOBAL_K_FRAC = 0.05
# slab membership shifts as a launch point moves; a wider window keeps the
# resulting density (and so the transform) from jittering
SLAB_K_FRAC = 0.15


@dataclass(frozen=True)
class MetricConfig:
    """gamma: PDF exponent. density_k: neighbours for the 1-d density estimate
    (``None``: max(10, ceil(0.05 * m)) for m projected samples, or
    ceil(0.15 * m) for the local sample slabs used by secondary curves)."""

    gamma: float = 0.0
    density_k: int | None = None

    def __post_init__(self):
        if not self.gamma >= 0:
            raise InvalidArgumentError(f"gamma must be >= 0, got {self.gamma}")
        if self.density_k is not None and self.density_k < 1:
            raise InvalidArgumentError("density_k must be >= 1")

    def neighbors(self, m: int, local: bool = False) -> int:
        if self.density_k is not None:
            return int(self.density_k)
        return max(10, math.ceil((SLAB_K_FRAC if local else GLOBAL_K_FRAC) * m))


def _node_grid(u_vertices, coords):
    lo, hi = np.percentile(coords, [5.0, 95.0])
    spread = hi - lo
    seg = np.diff(u_vertices)
    h = float(seg.max())
    if spread > 0:
        h = min(h, spread / NODES_PER_SPREAD)
    total = u_vertices[-1] - u_vertices[0]
    h = max(h, total / MAX_NODES)
    pieces = np.maximum(1, np.ceil(seg / h - 1e-9).astype(int))
    nodes = [u_vertices[:1]]
    for a, b, m in zip(u_vertices[:-1], u_vertices[1:], pieces):
        nodes.append(a + (b - a) * np.arange(1, m + 1) / m)
        nodes[-1][-1] = b
    return np.concatenate(nodes)


def knn_density_1d(coords, nodes, k: int) -> np.ndarray:
    """Symmetric 1-d k-NN estimate k / (2 m r_k) at each node."""
    m = len(coords)
    dist, _ = cKDTree(np.asarray(coords, float)[:, None]).query(
        np.asarray(nodes, float)[:, None], k=[k])
    r = dist[:, 0]
    with np.errstate(divide="ignore"):
        p = k / (2.0 * m * r)
    finite = np.isfinite(p)
    if not finite.all():
        p[~finite] = p[finite].max() if finite.any() else 1.0
    return p


def attach_density(curve: PrincipalCurve, dataset: Dataset, cfg: MetricConfig,
                   samples=None) -> PrincipalCurve:
    """Estimate the marginal density of projected coordinates along ``curve``.

    ``samples`` selects the rows of ``dataset`` to project (default all).
    Nodes beyond the outermost projected coordinate reuse the estimate at that
    coordinate.  Returns a new curve carrying the density table.
    """
    pts = dataset.points if samples is None else dataset.points[np.asarray(samples)]
    m = len(pts)
    if m == 0:
        raise InvalidArgumentError("no samples to estimate the density from")
    k = cfg.neighbors(m, local=samples is not None)
    if m < k:
        raise InvalidArgumentError(f"{m} projected samples is fewer than density_k={k}")
    if curve.n_vertices < 2:
        raise InvalidArgumentError("density needs a curve with at least 2 vertices")
    coords, _ = project_points(curve, pts)
    nodes = _node_grid(curve.u, coords)
    lo, hi = float(coords.min()), float(coords.max())
    query = np.clip(nodes, lo, hi)
    p = knn_density_1d(coords, query, k)
    return replace(curve, density_u=nodes, density=p, density_samples=m, density_k=k,
                   _cumulative={})


def _table(curve: PrincipalCurve, gamma: float):
    if curve.density is None:
        raise InvalidArgumentError("curve has no density attached")
    hit = curve._cumulative.get(gamma)
    if hit is None:
        g = curve.density ** gamma if gamma != 0 else np.ones_like(curve.density)
        h = np.diff(curve.density_u)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (g[:-1] + g[1:]) * h)])
        hit = (g, cum)
        curve._cumulative[gamma] = hit
    return hit


def _check_range(curve, u):
    lo, hi = curve.density_u[0], curve.density_u[-1]
    if not lo <= u <= hi:
        raise OutOfRangeError(f"coordinate {u!r} outside the curve range [{lo!r}, {hi!r}]",
                              attainable=(float(lo), float(hi)))


def _primitive(curve, g, cum, u):
    nodes = curve.density_u
    j = int(np.searchsorted(nodes, u, side="right")) - 1
    j = min(max(j, 0), len(nodes) - 2)
    s = u - nodes[j]
    if s == 0.0:
        return cum[j]
    h = nodes[j + 1] - nodes[j]
    return cum[j] + g[j] * s + 0.5 * (g[j + 1] - g[j]) * s * s / h


def density_at(curve: PrincipalCurve, u: float) -> float:
    return float(np.interp(u, curve.density_u, curve.density))


def metric_length(curve: PrincipalCurve, u_from: float, u_to: float, cfg: MetricConfig) -> float:
    """Signed integral of p(u)**gamma from u_from to u_to."""
    _check_range(curve, u_from)
    _check_range(curve, u_to)
    if u_from == u_to:
        return 0.0
    g, cum = _table(curve, cfg.gamma)
    return float(_primitive(curve, g, cum, u_to) - _primitive(curve, g, cum, u_from))


def total_metric_length(curve: PrincipalCurve, cfg: MetricConfig) -> float:
    _, cum = _table(curve, cfg.gamma)
    return float(cum[-1])


def inverse_metric_length(curve: PrincipalCurve, u_from: float, r: float,
                          cfg: MetricConfig) -> float:
    """The coordinate u with metric_length(u_from, u) == r."""
    _check_range(curve, u_from)
    if r == 0:
        return u_from
    g, cum = _table(curve, cfg.gamma)
    start = _primitive(curve, g, cum, u_from)
    target = start + r
    if not cum[0] <= target <= cum[-1]:
        raise OutOfRangeError(
            f"metric length {r!r} from u={u_from!r} exceeds the curve; attainable "
            f"[{cum[0] - start!r}, {cum[-1] - start!r}]",
            attainable=(float(cum[0] - start), float(cum[-1] - start)))
    nodes = curve.density_u
    j = int(np.searchsorted(cum, target, side="right")) - 1
    j = min(max(j, 0), len(nodes) - 2)
    c = target - cum[j]
    if c <= 0:
        return float(nodes[j])
    h = nodes[j + 1] - nodes[j]
    a = 0.5 * (g[j + 1] - g[j]) / h
    # a s^2 + g_j s - c = 0, stable root for g_j > 0
    disc = g[j] * g[j] + 4.0 * a * c
    s = 2.0 * c / (g[j] + math.sqrt(max(disc, 0.0)))
    return float(min(nodes[j] + s, nodes[j + 1]))
