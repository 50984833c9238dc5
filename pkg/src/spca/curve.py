"""Bottom-up principal curves from local PCA, projection onto them, and
rigidity-parameter selection by projection error."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, write_text_atomic
from .errors import DegenerateGeometryError, FitFailure, InvalidArgumentError
from .geometry import (align_basis, knn, local_mean_ahead, local_pca, tapered_mean_ahead,
                       taper_weights, transport_basis, weighted_pca_basis)

STOP_CROSSING = "crossing"
STOP_OUTSIDE = "outside"
STOP_MAX_VERTICES = "max_vertices"
STOP_DEGENERATE = "degenerate"


@dataclass(frozen=True)
class PcParams:
    """Rigidity parameters for drawing one curve.

    ``None`` for d_out, cross_tol or max_vertices means "derive from the data":
    the larger of tau and 3x the median nearest-neighbour distance, tau/2 and
    10*sqrt(N) respectively.
    ``max_vertices`` caps each growth direction separately.
    ``smooth`` uses distance-tapered neighbourhoods and keeps directions
    within tied eigenspaces (see :func:`spca.geometry.transport_basis`), so
    the curve moves continuously with its launch point, at some cost in
    fidelity on small neighbourhoods; the default follows the plain
    eigenvectors and an untapered mean ahead.
    """

    k_frac: float = 0.1
    tau: float = 1.0
    q: float = 10.0
    d_out: float | None = None
    cross_tol: float | None = None
    max_vertices: int | None = None
    smooth: bool = False

    def __post_init__(self):
        if not 0 < self.k_frac <= 1:
            raise InvalidArgumentError(f"k_frac must be in (0, 1], got {self.k_frac}")
        if not self.tau > 0:
            raise InvalidArgumentError(f"tau must be positive, got {self.tau}")
        if not self.q > 0:
            raise InvalidArgumentError(f"q must be positive, got {self.q}")
        if self.d_out is not None and not self.d_out > 0:
            raise InvalidArgumentError(f"d_out must be positive, got {self.d_out}")
        if self.cross_tol is not None and not self.cross_tol >= 0:
            raise InvalidArgumentError(f"cross_tol must be >= 0, got {self.cross_tol}")
        if self.max_vertices is not None and self.max_vertices < 1:
            raise InvalidArgumentError("max_vertices must be >= 1")

    def neighbors(self, n: int) -> int:
        k = min(n, math.ceil(self.k_frac * n - 1e-9))
        if k < 2:
            raise InvalidArgumentError(
                f"k_frac={self.k_frac} gives a neighbourhood of {k} samples out of {n}; need >= 2")
        return k

    def resolve(self, dataset: Dataset) -> "PcParams":
        d_out = self.d_out
        if d_out is None:
            d_out = max(3.0 * dataset.median_nn_distance, self.tau)
        return replace(
            self,
            d_out=d_out,
            cross_tol=self.tau / 2 if self.cross_tol is None else self.cross_tol,
            max_vertices=(max(1, math.ceil(10 * math.sqrt(dataset.n)))
                          if self.max_vertices is None else self.max_vertices),
        )

    def to_dict(self) -> dict:
        return {
            "k_frac": self.k_frac,
            "tau": self.tau,
            "q": "inf" if math.isinf(self.q) else self.q,
            "d_out": self.d_out,
            "cross_tol": self.cross_tol,
            "max_vertices": self.max_vertices,
            "smooth": self.smooth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcParams":
        d = dict(d)
        d["q"] = float(d["q"])
        return cls(**d)


@dataclass(eq=False)
class PrincipalCurve:
    """A polyline with a local basis at every vertex.

    ``u`` is the signed arc-length coordinate of each vertex: 0 at the launch
    point, negative on the side grown along the negated direction.  Density
    fields are empty until :func:`spca.metric.attach_density` fills them.
    """

    vertices: np.ndarray
    bases: np.ndarray
    eigenvalues: np.ndarray
    axis_index: int
    u: np.ndarray
    origin_index: int
    stop_reasons: tuple
    density_u: np.ndarray | None = None
    density: np.ndarray | None = None
    density_samples: int = 0
    density_k: int = 0
    _cumulative: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def cum_len(self) -> np.ndarray:
        return self.u - self.u[0]

    @property
    def length(self) -> float:
        return float(self.u[-1] - self.u[0])

    @property
    def origin(self) -> np.ndarray:
        return self.vertices[self.origin_index]

    @property
    def vertex_density(self) -> np.ndarray | None:
        if self.density is None:
            return None
        return np.interp(self.u, self.density_u, self.density)

    def point_at(self, u: float) -> np.ndarray:
        """Point on the polyline at arc coordinate ``u`` (clamped to the ends)."""
        us = self.u
        if u <= us[0]:
            return self.vertices[0].copy()
        if u >= us[-1]:
            return self.vertices[-1].copy()
        j = int(np.searchsorted(us, u, side="right")) - 1
        if us[j] == u:
            return self.vertices[j].copy()
        t = (u - us[j]) / (us[j + 1] - us[j])
        a, b = self.vertices[j], self.vertices[j + 1]
        return a + t * (b - a)

    def nearest_vertex(self, u: float) -> int:
        return int(np.argmin(np.abs(self.u - u)))

    def basis_at(self, u: float) -> np.ndarray:
        return self.bases[self.nearest_vertex(u)]


def _segment_projection(vertices, x):
    a = vertices[:-1]
    ab = vertices[1:] - a
    l2 = (ab * ab).sum(axis=1)
    l2 = np.where(l2 > 0, l2, 1.0)
    t = np.clip(((x - a) * ab).sum(axis=1) / l2, 0.0, 1.0)
    foot = a + t[:, None] * ab
    d2 = ((x - foot) ** 2).sum(axis=1)
    return t, foot, d2


def project_orthogonal(curve: PrincipalCurve, x):
    """Closest point on the polyline; returns (u, residual) with residual = x - point."""
    x = np.asarray(x, dtype=float)
    if curve.n_vertices < 2:
        raise InvalidArgumentError("projection needs a curve with at least 2 vertices")
    t, foot, d2 = _segment_projection(curve.vertices, x)
    j = int(np.argmin(d2))
    u, p = _foot(curve, t, foot, j)
    return u, x - p


def _foot(curve, t, foot, j):
    if t[j] <= 0.0:
        return float(curve.u[j]), curve.vertices[j]
    if t[j] >= 1.0:
        return float(curve.u[j + 1]), curve.vertices[j + 1]
    return float(curve.u[j] + t[j] * (curve.u[j + 1] - curve.u[j])), foot[j]


def projection_candidates(curve: PrincipalCurve, x, limit: int) -> list:
    """Coordinates of the local minima of the distance from ``x`` to the curve.

    Sorted by distance (ties to the smaller coordinate), so the first entry is
    the orthogonal projection.  At most ``limit`` are returned.
    """
    x = np.asarray(x, dtype=float)
    if curve.n_vertices < 2:
        raise InvalidArgumentError("projection needs a curve with at least 2 vertices")
    t, foot, d2 = _segment_projection(curve.vertices, x)
    left = np.concatenate([[np.inf], d2[:-1]])
    right = np.concatenate([d2[1:], [np.inf]])
    minima = np.flatnonzero((d2 < left) & (d2 <= right))
    minima = minima[np.lexsort((minima, d2[minima]))][:limit]
    return [_foot(curve, t, foot, int(j))[0] for j in minima]


def project_points(curve: PrincipalCurve, points, chunk: int = 4096):
    """Vectorised projection of many points: returns (u, squared distance)."""
    pts = np.asarray(points, dtype=float)
    verts = curve.vertices
    a = verts[:-1]
    ab = verts[1:] - a
    l2 = (ab * ab).sum(axis=1)
    l2 = np.where(l2 > 0, l2, 1.0)
    du = np.diff(curve.u)
    us = np.empty(len(pts))
    dist2 = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        block = pts[s:s + chunk]
        rel = block[:, None, :] - a[None, :, :]
        t = np.clip((rel * ab[None]).sum(-1) / l2, 0.0, 1.0)
        diff = rel - t[..., None] * ab[None]
        d2 = (diff * diff).sum(-1)
        j = np.argmin(d2, axis=1)
        rows = np.arange(len(block))
        tj = t[rows, j]
        us[s:s + chunk] = np.where(tj >= 1.0, curve.u[j + 1], curve.u[j] + tj * du[j])
        dist2[s:s + chunk] = d2[rows, j]
    return us, dist2


def polyline_distance(vertices, x) -> float:
    if len(vertices) == 1:
        return float(np.linalg.norm(np.asarray(x) - vertices[0]))
    _, _, d2 = _segment_projection(vertices, np.asarray(x, dtype=float))
    return float(math.sqrt(d2.min()))


def projection_error(curve: PrincipalCurve, dataset: Dataset) -> float:
    """Mean squared distance from the samples to their projections on the curve."""
    if dataset.n == 0:
        raise InvalidArgumentError("empty dataset")
    _, d2 = project_points(curve, dataset.points)
    return float(d2.mean())


class _SegmentSet:
    """All segments of several polylines, for one-shot distance queries."""

    def __init__(self, polylines):
        a, b = [], []
        for v in polylines:
            v = np.asarray(v, dtype=float)
            if len(v) == 1:
                a.append(v)
                b.append(v)
            else:
                a.append(v[:-1])
                b.append(v[1:])
        self.a = np.concatenate(a)
        self.ab = np.concatenate(b) - self.a
        l2 = (self.ab * self.ab).sum(axis=1)
        self.l2 = np.where(l2 > 0, l2, 1.0)

    def distance(self, x) -> float:
        rel = x - self.a
        t = np.clip((rel * self.ab).sum(axis=1) / self.l2, 0.0, 1.0)
        diff = rel - t[:, None] * self.ab
        return math.sqrt(float((diff * diff).sum(axis=1).min()))


class _Vertex:
    """Neighbourhood data of one vertex, computed once and shared by the local
    PCA and the mean ahead."""

    __slots__ = ("nbhd", "disp", "w")

    def __init__(self, dataset, nbhd, smooth):
        self.nbhd = nbhd
        self.disp = dataset.points[nbhd.indices] - nbhd.center
        self.w = taper_weights(np.sqrt((self.disp * self.disp).sum(axis=1))) if smooth else None

    def frame(self, dataset, reference, smooth):
        if smooth:
            if len(self.nbhd) < 2:
                raise InvalidArgumentError("local PCA needs at least 2 neighbours")
            basis = weighted_pca_basis(self.disp, self.w)
            return basis if reference is None else transport_basis(basis, reference)
        basis = local_pca(dataset, self.nbhd)
        return basis if reference is None else align_basis(basis, reference)

    def mean_ahead(self, dataset, v, smooth):
        if smooth:
            return tapered_mean_ahead(self.disp, self.w, v)
        return local_mean_ahead(dataset, self.nbhd, v)


def _aligned_frame(dataset, nbhd, reference, smooth):
    return _Vertex(dataset, nbhd, smooth).frame(dataset, reference, smooth)


def _grow(dataset, start, start_vertex, start_basis, axis, sign, p, k, priors):
    x = start
    here = start_vertex
    basis = start_basis
    pts, bases, evals = [], [], []
    reason = STOP_MAX_VERTICES
    for _ in range(p.max_vertices):
        v = sign * basis.vectors[:, axis]
        if math.isinf(p.q):
            step = v
        else:
            step = v + here.mean_ahead(dataset, v, p.smooth) / p.q
        norm = math.sqrt(float(step @ step))
        if norm == 0.0:
            reason = STOP_DEGENERATE
            break
        x_new = x + p.tau * (step / norm)
        nxt = _Vertex(dataset, knn(dataset, x_new, k), p.smooth)
        new_basis = nxt.frame(dataset, basis.vectors, p.smooth)
        if new_basis.degenerate:
            new_basis = basis
        pts.append(x_new)
        bases.append(new_basis.vectors)
        evals.append(new_basis.eigenvalues)
        gap = nxt.disp[0]
        nearest = math.sqrt(float(gap @ gap))
        if priors is not None and priors.distance(x_new) < p.cross_tol:
            reason = STOP_CROSSING
            break
        if nearest > p.d_out:
            reason = STOP_OUTSIDE
            break
        x, here, basis = x_new, nxt, new_basis
    return pts, bases, evals, reason


def draw_pc(dataset: Dataset, origin, ref_basis, axis_index: int, params: PcParams,
            prior_curves=(), bidirectional: bool = True,
            launch_limit: float | None = None) -> PrincipalCurve:
    """Draw one principal curve from ``origin`` following basis column ``axis_index``.

    At every vertex: k-neighbourhood, local PCA aligned to the previous basis,
    the followed eigenvector bent towards the local mean ahead by 1/q, and a
    step of length tau.  Growth stops when a new vertex comes within cross_tol
    of a prior curve, when its nearest sample is farther than d_out, or after
    max_vertices steps; the stopping vertex is kept.  ``launch_limit``
    (default d_out) bounds the distance from ``origin`` to the nearest sample.
    """
    origin = np.array(origin, dtype=float).reshape(-1)
    d = dataset.dim
    if origin.shape != (d,):
        raise InvalidArgumentError(f"origin must have {d} coordinates")
    if not 0 <= axis_index < d:
        raise InvalidArgumentError(f"axis_index must be in [0, {d}), got {axis_index}")
    p = params.resolve(dataset)
    k = p.neighbors(dataset.n)
    nbhd = knn(dataset, origin, k)
    nearest = float(np.linalg.norm(dataset.points[nbhd.indices[0]] - origin))
    limit = p.d_out if launch_limit is None else launch_limit
    if nearest > limit:
        raise InvalidArgumentError(
            f"origin is {nearest:.4g} from the nearest sample, beyond {limit:.4g}")
    start = _Vertex(dataset, nbhd, p.smooth)
    basis = start.frame(dataset, ref_basis, p.smooth)
    if basis.degenerate:
        raise DegenerateGeometryError("local PCA at the curve origin is degenerate")
    priors = _SegmentSet([c.vertices for c in prior_curves]) if len(prior_curves) else None
    fwd = _grow(dataset, origin, start, basis, axis_index, 1.0, p, k, priors)
    if bidirectional:
        bwd = _grow(dataset, origin, start, basis, axis_index, -1.0, p, k, priors)
    else:
        bwd = ([], [], [], None)
    verts = [*bwd[0][::-1], origin, *fwd[0]]
    bases = [*bwd[1][::-1], basis.vectors, *fwd[1]]
    evals = [*bwd[2][::-1], basis.eigenvalues, *fwd[2]]
    verts = np.array(verts)
    nb = len(bwd[0])
    steps = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    u = np.zeros(len(verts))
    u[nb + 1:] = np.cumsum(steps[nb:])
    if nb:
        u[:nb] = -np.cumsum(steps[:nb][::-1])[::-1]
    return PrincipalCurve(
        vertices=verts,
        bases=np.array(bases),
        eigenvalues=np.array(evals),
        axis_index=axis_index,
        u=u,
        origin_index=nb,
        stop_reasons=(bwd[3], fwd[3]),
    )


def mean_origin(dataset: Dataset, d_out: float) -> np.ndarray:
    """Sample mean, snapped to the nearest sample when it lies off the manifold."""
    mean = dataset.points.mean(axis=0)
    dist, idx = dataset.tree.query(mean)
    if dist > d_out:
        return dataset.points[idx].copy()
    return mean


def data_scale(dataset: Dataset) -> float:
    """Unit for the default step-size grid: the dataset diameter over 15."""
    return dataset.diameter / 15.0


def default_grid(scale: float = 1.0, **fixed) -> list[PcParams]:
    grid = []
    for k_frac in (0.01, 0.1, 0.3):
        for tau in (0.02 * scale, 1.0 * scale, 3.0 * scale):
            for q in (2.0, 10.0, math.inf):
                grid.append(PcParams(k_frac=k_frac, tau=tau, q=q, **fixed))
    return grid


def fit_pc_params(dataset: Dataset, grid, origin=None):
    """Draw a first curve for every grid cell and keep the one with least projection error.

    Returns (best_params, {params: error}); failed cells map to ``nan``.
    """
    grid = list(grid)
    if not grid:
        raise InvalidArgumentError("empty parameter grid")
    surface = {}
    failures = {}
    best, best_err = None, math.inf
    for cell in grid:
        try:
            p = cell.resolve(dataset)
            o = mean_origin(dataset, p.d_out) if origin is None else np.asarray(origin, float)
            basis = local_pca(dataset, knn(dataset, o, p.neighbors(dataset.n)))
            curve = draw_pc(dataset, o, basis.vectors, 0, cell)
            if curve.n_vertices < 2:
                raise DegenerateGeometryError("curve has a single vertex")
            err = projection_error(curve, dataset)
        except (InvalidArgumentError, DegenerateGeometryError) as exc:
            failures[cell] = str(exc)
            surface[cell] = math.nan
            continue
        surface[cell] = err
        if err < best_err:
            best, best_err = cell, err
    if best is None:
        raise FitFailure("no grid cell produced a curve", failures)
    return best, surface


def surface_to_csv(surface: dict, path):
    lines = ["# k_frac,tau,q,error"]
    for cell, err in surface.items():
        lines.append(f"{cell.k_frac!r},{cell.tau!r},{cell.q!r},{err!r}")
    write_text_atomic(path, "\n".join(lines) + "\n")
