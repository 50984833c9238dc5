"""The sequential principal curves transform.

A point is described by signed, density-weighted lengths along a chain of
curves: the first principal curve through the origin, then a secondary curve
launched from the point reached on the previous one, and so on for every
dimension.  The forward transform starts from orthogonal projections and
refines the lengths until the end of the chain lands on the input point; the
inverse simply walks the chain.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .curve import (PcParams, PrincipalCurve, draw_pc, mean_origin, project_orthogonal, project_points,
                    projection_candidates)
from .data import Dataset, write_text_atomic
from .errors import (DegenerateGeometryError, FitFailure, InvalidArgumentError, InversionFailure,
                     OutOfRangeError, TransformFailure)
from .geometry import knn, local_frame, local_pca
from .metric import (MetricConfig, attach_density, density_at, inverse_metric_length,
                     metric_length, total_metric_length)

FORMAT_NAME = "spca-model"
FORMAT_VERSION = 1
ENTROPY_BINS = 64
SUPPORT_FACTOR = 3.0
MAX_ALPHA = 1.0
ALPHA_GROWTH = 10.0
MAX_STARTS = 3
# secondary-curve densities come from the samples nearest the curve
SLAB_FRAC = 0.25
MIN_SLAB = 100


@dataclass(eq=False)
class SpcaModel:
    """Everything needed to transform and invert: fitted once, then read-only.

    ``scaling`` and the components of every response are in visiting order,
    i.e. component i belongs to input-basis axis ``dim_order[i]``.
    """

    training: Dataset
    origin: np.ndarray
    origin_basis: np.ndarray
    dim_order: tuple
    scaling: np.ndarray
    cfg: MetricConfig
    pc_params: PcParams
    first_pc: PrincipalCurve
    slab_size: int
    diameter: float
    entropies: np.ndarray
    total_bits: float
    origin_mode: str = "mean"
    smooth_secondary: bool = True

    @property
    def dim(self) -> int:
        return self.training.dim

    @property
    def gamma(self) -> float:
        return self.cfg.gamma

    def tolerance(self, tol_frac: float) -> float:
        return tol_frac * self.diameter

    @property
    def secondary_params(self) -> PcParams:
        return _secondary(self.pc_params, self.smooth_secondary)


def _secondary(params: PcParams, smooth: bool) -> PcParams:
    return replace(params, smooth=True) if smooth else params


@dataclass
class Response:
    r: np.ndarray
    converged: bool
    iterations: int
    final_residual: float
    history: list = field(default_factory=list)


@dataclass
class Path:
    r: np.ndarray
    us: list
    points: list
    curves: list

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


def histogram_entropy(values, bins: int = ENTROPY_BINS) -> float:
    """Differential entropy estimate in bits from an equal-width histogram."""
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return -math.inf
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    prob = counts[counts > 0] / counts.sum()
    return float(-(prob * np.log2(prob)).sum() + math.log2(edges[1] - edges[0]))


def nearest_samples(curve: PrincipalCurve, dataset: Dataset, m: int) -> np.ndarray:
    """Indices of the m samples closest to the curve (ties to the smaller index),
    ordered by index."""
    n = dataset.n
    if m >= n:
        return np.arange(n)
    tree = dataset.tree
    # the m nearest samples of every vertex bound the m-th curve distance from
    # above; every sample within that bound lies within bound + half a segment
    # of some vertex
    _, idx = tree.query(curve.vertices, k=m)
    cand = np.unique(idx)
    _, d2 = project_points(curve, dataset.points[cand])
    bound = math.sqrt(float(np.partition(d2, m - 1)[m - 1]))
    half = 0.5 * float(np.diff(curve.u).max()) if curve.n_vertices > 1 else 0.0
    balls = tree.query_ball_point(curve.vertices, r=(bound + half) * (1 + 1e-9) + 1e-300)
    cand = np.unique(np.concatenate([np.asarray(b, dtype=np.int64) for b in balls]))
    _, d2 = project_points(curve, dataset.points[cand])
    return np.sort(cand[np.lexsort((cand, d2))[:m]])


def _slab_size(params: PcParams, n: int, requested=None) -> int:
    if requested is not None:
        return int(min(n, requested))
    return int(min(n, max(params.neighbors(n), MIN_SLAB, math.ceil(SLAB_FRAC * n))))


def _origin_curve(dataset, origin, basis, axis, params):
    try:
        c = draw_pc(dataset, origin, basis.vectors, axis, params)
    except DegenerateGeometryError as exc:
        raise FitFailure(f"cannot draw the origin curve along axis {axis}: {exc}") from exc
    if c.n_vertices < 2:
        raise FitFailure(f"origin curve along axis {axis} has a single vertex")
    return c


def fit(dataset: Dataset, cfg: MetricConfig = MetricConfig(), pc_params: PcParams = PcParams(),
        origin_mode: str = "mean", total_bits: float | None = None,
        slab_size: int | None = None, smooth_secondary: bool = True) -> SpcaModel:
    """Choose the origin, draw one curve per local axis there, order and scale them.

    The first curve is drawn with ``pc_params`` as given.  With
    ``smooth_secondary`` the curves after it are drawn in smooth mode (see
    :class:`PcParams`), which keeps the transform continuous as their launch
    points move.

    Axes are visited in decreasing marginal entropy of the samples projected on
    their origin curve.  The scale of axis i is n_i / L_i, with n_i = 2**b_i bins
    from entropy-based bit allocation of ``total_bits`` (default 4 per
    dimension) and L_i the total metric length of the origin curve.
    """
    if origin_mode not in ("mean", "densest"):
        raise InvalidArgumentError(f"origin_mode must be 'mean' or 'densest', got {origin_mode!r}")
    p = pc_params.resolve(dataset)
    n, d = dataset.n, dataset.dim
    k = p.neighbors(n)
    if origin_mode == "mean":
        origin = mean_origin(dataset, p.d_out)
    else:
        dist, _ = dataset.tree.query(dataset.points, k=k)
        rk = dist[:, -1] if dist.ndim == 2 else dist
        origin = dataset.points[int(np.argmin(rk))].copy()
    basis = local_pca(dataset, knn(dataset, origin, k))
    if basis.degenerate:
        raise FitFailure("local PCA at the origin is degenerate")
    m = _slab_size(p, n, slab_size)
    curves, entropies = [], []
    for axis in range(d):
        c = _origin_curve(dataset, origin, basis, axis, p)
        coords, _ = project_points(c, dataset.points[nearest_samples(c, dataset, m)])
        curves.append(c)
        entropies.append(histogram_entropy(coords))
    entropies = np.array(entropies)
    dim_order = tuple(int(a) for a in np.argsort(-entropies, kind="stable"))
    first = attach_density(curves[dim_order[0]], dataset, cfg)
    lengths = [total_metric_length(first, cfg)]
    sp = _secondary(p, smooth_secondary)
    for axis in dim_order[1:]:
        c = curves[axis] if sp == p else _origin_curve(dataset, origin, basis, axis, sp)
        c = attach_density(c, dataset, cfg, nearest_samples(c, dataset, m))
        lengths.append(total_metric_length(c, cfg))
    total_bits = 4.0 * d if total_bits is None else float(total_bits)
    h = entropies[list(dim_order)]
    h = np.where(np.isfinite(h), h, np.nanmin(np.where(np.isfinite(h), h, np.nan)))
    bins = 2.0 ** (total_bits / d + h - h.mean())
    scaling = bins / np.array(lengths)
    return SpcaModel(
        training=dataset,
        origin=origin,
        origin_basis=basis.vectors,
        dim_order=dim_order,
        scaling=scaling,
        cfg=cfg,
        pc_params=p,
        first_pc=first,
        slab_size=m,
        diameter=dataset.diameter,
        entropies=entropies,
        total_bits=total_bits,
        origin_mode=origin_mode,
        smooth_secondary=smooth_secondary,
    )


def _draw_level(model: SpcaModel, level: int, launch, parent: PrincipalCurve, u_parent, priors):
    try:
        curve = draw_pc(model.training, launch, parent.basis_at(u_parent),
                        model.dim_order[level], model.secondary_params, priors,
                        launch_limit=SUPPORT_FACTOR * model.pc_params.d_out)
    except (InvalidArgumentError, DegenerateGeometryError) as exc:
        raise TransformFailure(f"cannot draw the curve for dimension {level}: {exc}",
                               dimension=level) from exc
    if curve.n_vertices < 2:
        raise TransformFailure(f"curve for dimension {level} has a single vertex", dimension=level)
    slab = nearest_samples(curve, model.training, model.slab_size)
    return attach_density(curve, model.training, model.cfg, slab)


def _walk(model: SpcaModel, r=None, target=None, upto=None, first_u=None) -> Path:
    """Follow the curve chain.

    With ``target`` the length on each curve comes from the orthogonal
    projection of the target (on the first curve, from ``first_u`` if given);
    otherwise from ``r``.  Either way the point on
    each curve is recovered from its length, so walking the returned ``r``
    reproduces the same path bit for bit.
    """
    d = model.dim if upto is None else upto
    C = model.scaling
    rs = np.zeros(model.dim) if r is None else np.array(r, dtype=float)
    us, points, curves = [], [], []
    curve = model.first_pc
    for i in range(d):
        if i > 0:
            curve = _draw_level(model, i, points[-1], curves[-1], us[-1], curves)
        if target is not None:
            if i == 0 and first_u is not None:
                u_proj = first_u
            else:
                u_proj, _ = project_orthogonal(curve, target)
            rs[i] = C[i] * metric_length(curve, 0.0, u_proj, model.cfg)
        try:
            u = inverse_metric_length(curve, 0.0, rs[i] / C[i], model.cfg)
        except OutOfRangeError as exc:
            lo, hi = exc.attainable
            raise InversionFailure(
                f"response {rs[i]!r} for dimension {i} is outside the attainable range "
                f"[{C[i] * lo!r}, {C[i] * hi!r}]", dimension=i,
                attainable=(C[i] * lo, C[i] * hi)) from exc
        us.append(u)
        points.append(curve.point_at(u))
        curves.append(curve)
    return Path(rs, us, points, curves)


def _correction(model: SpcaModel, x, path: Path) -> np.ndarray:
    # C * D * (local basis)^T * (x - end), components in visiting order
    last = path.curves[-1]
    k = model.pc_params.neighbors(model.training.n)
    frame = local_frame(model.training, path.end, k, last.basis_at(path.us[-1]),
                        smooth=model.secondary_params.smooth).vectors
    grad = frame[:, list(model.dim_order)].T @ (x - path.end)
    dens = np.array([density_at(c, u) for c, u in zip(path.curves, path.us)])
    metric = dens ** model.gamma if model.gamma != 0 else np.ones_like(dens)
    return model.scaling * metric * grad


def _check_support(model: SpcaModel, x):
    dist, _ = model.training.tree.query(x)
    limit = SUPPORT_FACTOR * model.pc_params.d_out
    if dist > limit:
        raise TransformFailure(
            f"point is {dist:.4g} from the training samples, beyond {limit:.4g}")


def _initial_path(model: SpcaModel, x):
    # every local minimum of the distance to the first curve can start a chain
    # of orthogonal projections.  On a folded manifold the global minimum may
    # sit on the wrong fold, which shows as a chain ending more than d_out
    # from x; only then are the other minima tried, and the closest end wins.
    best, best_res, error = None, math.inf, None
    for u in projection_candidates(model.first_pc, x, MAX_STARTS):
        if best is not None and best_res <= model.pc_params.d_out:
            break
        try:
            path = _walk(model, target=x, first_u=u)
        except (InversionFailure, TransformFailure) as exc:
            error = error or exc
            continue
        res = float(np.linalg.norm(path.end - x))
        if res < best_res:
            best, best_res = path, res
    if best is None:
        if isinstance(error, InversionFailure):
            raise TransformFailure(str(error), dimension=error.dimension) from error
        raise error
    return best, best_res


def _try_step(model, x, r):
    try:
        cand = _walk(model, r)
    except (InversionFailure, TransformFailure):
        return None, math.inf
    return cand, float(np.linalg.norm(cand.end - x))


def transform(model: SpcaModel, x, tol_frac: float = 0.001, alpha: float = 0.01,
              max_iter: int = 50, adaptive: bool = True) -> Response:
    """Curvilinear coordinates of ``x``.

    The orthogonal projections give the starting lengths; each iteration
    moves them by ``alpha`` times the residual expressed in the local frame at
    the end of the chain and scaled by C and the metric.  With ``adaptive``
    the step factor grows tenfold after an improving step (up to 1); a failed step
    is rejected, the full step is probed instead, and if that fails too the
    factor halves; otherwise every step is taken and the
    factor halves after two consecutive increases.  The best lengths found are
    returned; ``converged`` tells whether they reach ``tol_frac`` times the
    training diameter.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (model.dim,):
        raise InvalidArgumentError(f"expected a {model.dim}-vector")
    _check_support(model, x)
    tol = model.tolerance(tol_frac)
    path, res = _initial_path(model, x)
    history = [res]
    best = (res, path.r.copy())
    a = alpha
    increases = 0
    it = 0
    while res > tol and it < max_iter:
        it += 1
        step = _correction(model, x, path)
        cand, cand_res = _try_step(model, x, path.r + a * step)
        if adaptive and cand_res >= res and a < MAX_ALPHA:
            # small steps can drown in the jitter of redrawn curves: probe the full step
            full, full_res = _try_step(model, x, path.r + MAX_ALPHA * step)
            if full_res < res:
                cand, cand_res, a = full, full_res, MAX_ALPHA / 2.0
        if cand is None:
            a *= 0.5
        elif adaptive:
            if cand_res < res:
                path, res = cand, cand_res
                a = min(ALPHA_GROWTH * a, MAX_ALPHA)
            else:
                a *= 0.5
        else:
            increases = increases + 1 if cand_res > res else 0
            path, res = cand, cand_res
            if increases >= 2:
                a *= 0.5
                increases = 0
        history.append(res)
        if res < best[0]:
            best = (res, path.r.copy())
    res, r = best
    r = r + 0.0  # normalise -0.0
    return Response(r=r, converged=res <= tol, iterations=it, final_residual=res, history=history)


def transform_many(model: SpcaModel, points, **kwargs) -> list:
    return [transform(model, x, **kwargs) for x in np.asarray(points, dtype=float)]


def inverse(model: SpcaModel, r) -> np.ndarray:
    """Walk the chain by the given lengths and return the point reached."""
    if isinstance(r, Response):
        r = r.r
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.shape != (model.dim,):
        raise InvalidArgumentError(f"expected a {model.dim}-vector of responses")
    try:
        return _walk(model, r).end
    except TransformFailure as exc:
        raise InversionFailure(str(exc), dimension=exc.dimension) from exc


def metric_diagonal(model: SpcaModel, r) -> np.ndarray:
    """Line-element weights p̂_i(u_i)**gamma on each curve of the chain reached by ``r``."""
    if isinstance(r, Response):
        r = r.r
    path = _walk(model, np.asarray(r, dtype=float).reshape(-1))
    dens = np.array([density_at(c, u) for c, u in zip(path.curves, path.us)])
    return dens ** model.gamma


def reduce(model: SpcaModel, x, d_keep: int, **kwargs):
    """Keep the first ``d_keep`` responses; return them and the back-projection."""
    if int(d_keep) != d_keep or not 1 <= d_keep <= model.dim:
        raise InvalidArgumentError(f"d_keep must be in [1, {model.dim}]")
    resp = transform(model, x, **kwargs)
    kept = resp.r[:d_keep].copy()
    full = np.zeros(model.dim)
    full[:d_keep] = kept
    return kept, inverse(model, full)


def model_to_dict(model: SpcaModel) -> dict:
    train = model.training
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "gamma": model.cfg.gamma,
        "density_k": model.cfg.density_k,
        "pc_params": model.pc_params.to_dict(),
        "slab_size": model.slab_size,
        "origin_mode": model.origin_mode,
        "smooth_secondary": model.smooth_secondary,
        "origin": model.origin.tolist(),
        "origin_basis": model.origin_basis.tolist(),
        "dim_order": list(model.dim_order),
        "scaling": model.scaling.tolist(),
        "entropies": model.entropies.tolist(),
        "total_bits": model.total_bits,
        "diameter": model.diameter,
        "training": {
            "points": train.points.tolist(),
            "labels": None if train.labels is None else train.labels.tolist(),
        },
    }


def model_from_dict(doc: dict) -> SpcaModel:
    if doc.get("format") != FORMAT_NAME:
        raise InvalidArgumentError("not an SPCA model document")
    if doc.get("version") != FORMAT_VERSION:
        raise InvalidArgumentError(f"unsupported model version {doc.get('version')!r}")
    train = Dataset(np.array(doc["training"]["points"], dtype=float), doc["training"]["labels"])
    cfg = MetricConfig(gamma=float(doc["gamma"]), density_k=doc["density_k"])
    params = PcParams.from_dict(doc["pc_params"])
    origin = np.array(doc["origin"], dtype=float)
    basis = np.array(doc["origin_basis"], dtype=float)
    dim_order = tuple(int(a) for a in doc["dim_order"])
    curve = draw_pc(train, origin, basis, dim_order[0], params)
    return SpcaModel(
        training=train,
        origin=origin,
        origin_basis=basis,
        dim_order=dim_order,
        scaling=np.array(doc["scaling"], dtype=float),
        cfg=cfg,
        pc_params=params,
        first_pc=attach_density(curve, train, cfg),
        slab_size=int(doc["slab_size"]),
        diameter=float(doc["diameter"]),
        entropies=np.array(doc["entropies"], dtype=float),
        total_bits=float(doc["total_bits"]),
        origin_mode=doc.get("origin_mode", "mean"),
        smooth_secondary=bool(doc.get("smooth_secondary", True)),
    )


def save_model(model: SpcaModel, path):
    write_text_atomic(path, json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> SpcaModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
