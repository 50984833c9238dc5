"""Exact neighbourhood queries and local PCA primitives."""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .data import Dataset
from .errors import InvalidArgumentError


TIE_Z = 3.0
AHEAD_RAMP = 0.2


@dataclass(frozen=True)
class Neighborhood:
    indices: np.ndarray
    center: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class LocalBasis:
    """Columns of ``vectors`` are the local principal directions."""

    vectors: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool = False
    n_samples: int = 0

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]


def knn(dataset: Dataset, query, k: int) -> Neighborhood:
    """Indices of the k samples nearest to ``query``, ties going to the smaller index.

    The returned indices are ordered by (distance, index).
    """
    n = dataset.n
    if int(k) != k or not 1 <= k <= n:
        raise InvalidArgumentError(f"k must be in [1, {n}], got {k}")
    k = int(k)
    q = np.asarray(query, dtype=float).reshape(-1)
    pts = dataset.points
    if k == n:
        cand = np.arange(n)
    else:
        dist, idx = dataset.tree.query(q, k=k + 1)
        cand = idx
        if dist[k] <= dist[k - 1] * (1 + 1e-12):
            # a tie straddles the boundary: collect everything at that radius
            cand = np.asarray(dataset.tree.query_ball_point(q, dist[k - 1] * (1 + 1e-9) + 1e-300))
    d2 = ((pts[cand] - q) ** 2).sum(axis=1)
    order = np.lexsort((cand, d2))
    return Neighborhood(cand[order[:k]], q)


def _sign_convention(vectors):
    # largest-magnitude coordinate of each column made positive
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def local_pca(dataset: Dataset, nbhd: Neighborhood) -> LocalBasis:
    """Eigendecomposition of the neighbourhood covariance, eigenvalues descending."""
    if len(nbhd) < 2:
        raise InvalidArgumentError("local PCA needs at least 2 neighbours")
    return pca_basis(dataset.points[nbhd.indices])


def pca_basis(pts: np.ndarray) -> LocalBasis:
    d = pts.shape[1]
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / (len(pts) - 1)
    scale = float(np.abs(pts).max()) or 1.0
    if np.trace(cov) <= (1e-12 * scale) ** 2:
        return LocalBasis(np.eye(d), np.zeros(d), degenerate=True, n_samples=len(pts))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    return LocalBasis(_sign_convention(evecs[:, order]), evals, n_samples=len(pts))


def eigen_clusters(eigenvalues, n_samples: int) -> list:
    """Groups of consecutive (descending) eigenvalues not separated beyond sampling error.

    Neighbours i, i+1 are tied when their gap is below TIE_Z * sqrt(2 / n) * lambda_i,
    the scale of the estimation noise of a sample-covariance eigenvalue.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if n_samples < 2:
        return [[i] for i in range(len(lam))]
    rel = TIE_Z * math.sqrt(2.0 / n_samples)
    groups = [[0]]
    for i in range(1, len(lam)):
        prev = lam[i - 1]
        if prev > 0 and prev - lam[i] < rel * prev:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def align_basis(candidate: LocalBasis, reference) -> LocalBasis:
    """Permute and sign-flip candidate columns to match the reference columns.

    Pairs are assigned greedily by decreasing |dot|; each output column j then
    has a non-negative dot product with reference column j.
    """
    ref = np.asarray(reference, dtype=float)
    vec = candidate.vectors
    perm = _greedy_assignment(ref, vec)
    out = vec[:, perm]
    return LocalBasis(out * _signs(ref, out), candidate.eigenvalues[perm], candidate.degenerate,
                      candidate.n_samples)


def _greedy_assignment(ref, vec):
    d = vec.shape[1]
    score = np.abs(ref.T @ vec)
    perm = np.full(d, -1)
    used = np.zeros(d, dtype=bool)
    left = d
    # row-major order among equal scores, as repeated argmax would pick
    for flat in np.argsort(-score, axis=None, kind="stable"):
        j, i = divmod(int(flat), d)
        if perm[j] < 0 and not used[i]:
            perm[j] = i
            used[i] = True
            left -= 1
            if left == 0:
                break
    return perm


def _signs(ref, out):
    signs = np.sign(np.einsum("ij,ij->j", ref, out))
    signs[signs == 0] = 1.0
    return signs


def transport_basis(candidate: LocalBasis, reference) -> LocalBasis:
    """Like :func:`align_basis`, but columns whose eigenvalues are tied (see
    :func:`eigen_clusters`) are replaced by the rotation of their eigenspace
    closest to the matching reference columns.

    Within a tied eigenspace the individual eigenvectors are arbitrary, so
    following them makes a curve wander; this keeps the previous directions
    as far as the eigenspace allows.
    """
    ref = np.asarray(reference, dtype=float)
    vec = candidate.vectors
    perm = _greedy_assignment(ref, vec)
    out = vec[:, perm].copy()
    lam = candidate.eigenvalues[perm].copy()
    if not candidate.degenerate:
        where = np.argsort(perm)  # candidate column -> output position
        for group in eigen_clusters(candidate.eigenvalues, candidate.n_samples):
            if len(group) < 2:
                continue
            cols = where[group]
            q = vec[:, group]
            u, _, vt = np.linalg.svd(q.T @ ref[:, cols])
            w = u @ vt
            out[:, cols] = q @ w
            lam[cols] = np.einsum("ij,i,ij->j", w, candidate.eigenvalues[group], w)
    return LocalBasis(out * _signs(ref, out), lam, candidate.degenerate, candidate.n_samples)


def taper_weights(dist) -> np.ndarray:
    """Biweight taper (1 - (r/R)^2)^2 with R the largest distance.

    The farthest neighbour gets weight 0, so a sample entering or leaving the
    neighbourhood as its centre moves changes nothing abruptly.
    """
    r = np.asarray(dist, dtype=float)
    reach = float(r.max())
    if reach == 0.0:
        return np.ones(len(r))
    w = (1.0 - (r / reach) ** 2) ** 2
    if not w.sum() > 0:
        return np.ones(len(r))
    return w


def neighborhood_weights(dataset: Dataset, nbhd: Neighborhood) -> np.ndarray:
    return taper_weights(np.linalg.norm(dataset.points[nbhd.indices] - nbhd.center, axis=1))


def weighted_pca_basis(pts: np.ndarray, w: np.ndarray) -> LocalBasis:
    """Weighted covariance eigendecomposition; n_samples is the effective count."""
    w = np.asarray(w, dtype=float)
    d = pts.shape[1]
    total = float(w.sum())
    n_eff = int(round(total * total / float(w @ w)))
    centered = pts - (w @ pts) / total
    cov = (centered.T * w) @ centered / total
    scale = float(np.abs(pts).max()) or 1.0
    if cov.trace() <= (1e-12 * scale) ** 2:
        return LocalBasis(np.eye(d), np.zeros(d), degenerate=True, n_samples=n_eff)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[::-1], 0.0, None)
    return LocalBasis(_sign_convention(evecs[:, ::-1]), evals, n_samples=n_eff)


def smooth_local_pca(dataset: Dataset, nbhd: Neighborhood) -> LocalBasis:
    if len(nbhd) < 2:
        raise InvalidArgumentError("local PCA needs at least 2 neighbours")
    return weighted_pca_basis(dataset.points[nbhd.indices], neighborhood_weights(dataset, nbhd))


def tapered_mean_ahead(disp, w, direction) -> np.ndarray:
    """Mean of the displacements ``disp`` ahead along ``direction``, weighted by
    ``w`` and ramped in from 0 over the first AHEAD_RAMP of the largest
    displacement."""
    proj = disp @ direction
    reach = math.sqrt(float((disp * disp).sum(axis=1).max()))
    if reach == 0.0:
        return np.zeros(disp.shape[1])
    wa = w * np.clip(proj / (AHEAD_RAMP * reach), 0.0, 1.0)
    total = float(wa.sum())
    if total == 0.0:
        return np.zeros(disp.shape[1])
    return (wa @ disp) / total


def smooth_mean_ahead(dataset: Dataset, nbhd: Neighborhood, direction) -> np.ndarray:
    """Tapered counterpart of :func:`local_mean_ahead`: neighbours carry their
    taper weight, ramped in over the first AHEAD_RAMP fraction of the
    neighbourhood radius in front of the centre."""
    disp = dataset.points[nbhd.indices] - nbhd.center
    w = taper_weights(np.linalg.norm(disp, axis=1))
    return tapered_mean_ahead(disp, w, np.asarray(direction, dtype=float))


def local_mean_ahead(dataset: Dataset, nbhd: Neighborhood, direction) -> np.ndarray:
    """Mean displacement from the centre of the neighbours lying ahead of it."""
    disp = dataset.points[nbhd.indices] - nbhd.center
    ahead = disp @ np.asarray(direction, dtype=float) > 0
    if not ahead.any():
        return np.zeros(dataset.dim)
    return disp[ahead].mean(axis=0)


def local_frame(dataset: Dataset, point, k: int, reference=None, smooth: bool = False) -> LocalBasis:
    """Local PCA at ``point`` from its k neighbours, optionally aligned to a reference.

    ``smooth`` selects the tapered PCA and tie-aware alignment.
    """
    nbhd = knn(dataset, point, k)
    if not smooth:
        basis = local_pca(dataset, nbhd)
        return basis if reference is None else align_basis(basis, reference)
    basis = smooth_local_pca(dataset, nbhd)
    return basis if reference is None else transport_basis(basis, reference)
