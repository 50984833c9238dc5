"""Measurements on transformed data: mutual information, quantisation
through the inverse transform, conditional histograms, nearest-neighbour
classification in response space and corresponding-pair adaptation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, write_text_atomic
from .errors import (AdaptationFailure, ClassificationFailure, InvalidArgumentError,
                     InversionFailure, TransformFailure)
from .model import SpcaModel, inverse, transform

DEFAULT_BINS = 32


def _pair(samples):
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] != 2:
        raise InvalidArgumentError(f"expected an N x 2 matrix, got shape {s.shape}")
    if not np.isfinite(s).all():
        raise InvalidArgumentError("samples must be finite")
    return s


def _entropy(counts) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def mutual_information(samples, bins: int = DEFAULT_BINS):
    """Plug-in histogram estimate of I(a; b) in bits.

    Returns (bits, degenerate); a constant column gives (0.0, True).
    """
    s = _pair(samples)
    if bins < 1:
        raise InvalidArgumentError("bins must be >= 1")
    if len(s) < 10 * bins:
        raise InvalidArgumentError(f"need at least {10 * bins} samples for {bins} bins, got {len(s)}")
    lo, hi = s.min(axis=0), s.max(axis=0)
    if (hi <= lo).any():
        return 0.0, True
    joint, _, _ = np.histogram2d(s[:, 0], s[:, 1], bins=bins, range=[(lo[0], hi[0]), (lo[1], hi[1])])
    mi = _entropy(joint.sum(axis=1)) + _entropy(joint.sum(axis=0)) - _entropy(joint.ravel())
    return max(mi, 0.0), False


def pairwise_mutual_information(samples, bins: int = DEFAULT_BINS) -> dict:
    """MI of every column pair (i, j), i < j."""
    s = np.asarray(samples, dtype=float)
    out = {}
    for i in range(s.shape[1]):
        for j in range(i + 1, s.shape[1]):
            out[(i, j)] = mutual_information(s[:, [i, j]], bins)[0]
    return out


def bit_allocate(variances, total_bits: int):
    """Split ``total_bits`` over dimensions by the log-variance rule.

    Dimensions whose share would be negative get none and the rest are
    re-balanced; fractional shares are rounded by largest remainder (ties to
    the lower index).  Returns (bits, bins) with bins = 2**bits.
    """
    v = np.asarray(variances, dtype=float).reshape(-1)
    if v.size == 0 or not (v > 0).all() or not np.isfinite(v).all():
        raise InvalidArgumentError("variances must be positive and finite")
    if int(total_bits) != total_bits or total_bits < 0:
        raise InvalidArgumentError(f"total_bits must be a non-negative integer, got {total_bits}")
    total_bits = int(total_bits)
    active = np.ones(v.size, dtype=bool)
    while True:
        logs = np.log2(v[active])
        share = np.zeros(v.size)
        share[active] = total_bits / active.sum() + 0.5 * (logs - logs.mean())
        if (share[active] >= 0).all():
            break
        active &= share > 0
    bits = np.floor(share + 1e-12).astype(int)
    left = total_bits - int(bits.sum())
    order = sorted(range(v.size), key=lambda i: (-(share[i] - bits[i]), i))
    for i in order[:left]:
        bits[i] += 1
    return bits, 2 ** bits


@dataclass(frozen=True)
class QuantizerSpec:
    bins_per_dim: tuple
    ranges: tuple

    def __post_init__(self):
        if len(self.bins_per_dim) != len(self.ranges):
            raise InvalidArgumentError("bins_per_dim and ranges differ in length")
        for n, (lo, hi) in zip(self.bins_per_dim, self.ranges):
            if int(n) != n or n < 1:
                raise InvalidArgumentError(f"bin counts must be positive integers, got {n}")
            if not lo < hi:
                raise InvalidArgumentError(f"empty quantiser range ({lo}, {hi})")

    @classmethod
    def from_responses(cls, responses, total_bits: int) -> "QuantizerSpec":
        """Bins from the response variances, ranges from their observed extent."""
        r = np.asarray(responses, dtype=float)
        _, bins = bit_allocate(r.var(axis=0), total_bits)
        ranges = []
        for lo, hi in zip(r.min(axis=0), r.max(axis=0)):
            if not hi > lo:
                pad = max(abs(lo), 1.0) * 1e-9
                lo, hi = lo - pad, hi + pad
            ranges.append((float(lo), float(hi)))
        return cls(tuple(int(b) for b in bins), tuple(ranges))

    def codes(self, responses):
        """Mid-rise bin indices and a mask of samples clamped into range."""
        r = np.asarray(responses, dtype=float)
        lo = np.array([a for a, _ in self.ranges])
        hi = np.array([b for _, b in self.ranges])
        n = np.array(self.bins_per_dim)
        clamped = ((r < lo) | (r > hi)).any(axis=1)
        idx = np.floor((np.clip(r, lo, hi) - lo) / (hi - lo) * n).astype(np.int64)
        return np.clip(idx, 0, n - 1), clamped

    def reconstruct(self, codes):
        lo = np.array([a for a, _ in self.ranges])
        hi = np.array([b for _, b in self.ranges])
        n = np.array(self.bins_per_dim)
        return lo + (np.asarray(codes) + 0.5) * (hi - lo) / n


@dataclass
class QuantizationResult:
    x_hat: np.ndarray
    rmse: float
    clamped: int
    failed: int


def quantize_roundtrip(responses, spec: QuantizerSpec, model: SpcaModel, originals=None):
    """Quantise responses, invert the quantised values, and measure the error.

    The error is taken against ``originals`` when given, otherwise against the
    inverse of the unquantised responses.  Samples whose inversion fails get
    NaN rows in ``x_hat`` and are left out of the RMSE.
    """
    r = np.asarray(responses, dtype=float)
    if r.ndim != 2 or r.shape[1] != model.dim or len(spec.bins_per_dim) != model.dim:
        raise InvalidArgumentError("responses, quantiser and model dimensions disagree")
    codes, clamped = spec.codes(r)
    uniq, where = np.unique(codes, axis=0, return_inverse=True)
    recon = np.full((len(uniq), model.dim), np.nan)
    for j, c in enumerate(spec.reconstruct(uniq)):
        try:
            recon[j] = inverse(model, c)
        except InversionFailure:
            pass
    x_hat = recon[where.reshape(-1)]
    if originals is None:
        ref = np.full_like(x_hat, np.nan)
        for i, ri in enumerate(r):
            try:
                ref[i] = inverse(model, ri)
            except InversionFailure:
                pass
    else:
        ref = np.asarray(originals, dtype=float)
    ok = np.isfinite(x_hat).all(axis=1) & np.isfinite(ref).all(axis=1)
    rmse = math.sqrt(float(((ref[ok] - x_hat[ok]) ** 2).sum(axis=1).mean() / model.dim)) if ok.any() else math.nan
    return QuantizationResult(x_hat, rmse, int(clamped.sum()), int((~ok).sum()))


@dataclass
class Histogram2D:
    """Row i is the conditional distribution of b given a in bin i."""

    bins: np.ndarray
    edges: tuple
    empty: np.ndarray

    def row_centers(self):
        e = self.edges[0]
        return 0.5 * (e[:-1] + e[1:])

    def conditional_std(self):
        """Standard deviation of b within each row (NaN for empty rows)."""
        c = 0.5 * (self.edges[1][:-1] + self.edges[1][1:])
        mean = self.bins @ c
        var = self.bins @ (c ** 2) - mean ** 2
        out = np.sqrt(np.clip(var, 0.0, None))
        out[self.empty] = np.nan
        return out


def conditional_hist(samples, bins: int = 24) -> Histogram2D:
    s = _pair(samples)
    if bins < 1:
        raise InvalidArgumentError("bins must be >= 1")
    ranges = []
    for lo, hi in zip(s.min(axis=0), s.max(axis=0)):
        ranges.append((lo, hi) if hi > lo else (lo - 0.5, lo + 0.5))
    counts, ea, eb = np.histogram2d(s[:, 0], s[:, 1], bins=bins, range=ranges)
    mass = counts.sum(axis=1)
    empty = mass == 0
    rows = np.zeros_like(counts)
    rows[~empty] = counts[~empty] / mass[~empty, None]
    return Histogram2D(rows, (ea, eb), empty)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class SpcaClassifier:
    """Training responses whitened per dimension, ready for kNN queries."""

    model: SpcaModel
    responses: np.ndarray
    labels: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    transform_kwargs: dict

    @classmethod
    def build(cls, model: SpcaModel, train: Dataset, **transform_kwargs) -> "SpcaClassifier":
        if train.labels is None:
            raise InvalidArgumentError("training set must be labelled")
        resp, keep = [], []
        for i, x in enumerate(train.points):
            try:
                resp.append(transform(model, x, **transform_kwargs).r)
                keep.append(i)
            except TransformFailure:
                continue
        if not resp:
            raise ClassificationFailure("no training sample could be transformed")
        resp = np.array(resp)
        std = resp.std(axis=0)
        std[std == 0] = 1.0
        return cls(model, resp, np.asarray(train.labels)[keep], resp.mean(axis=0), std,
                   dict(transform_kwargs))

    def whiten(self, r):
        return (np.asarray(r, dtype=float) - self.mean) / self.std

    def classify(self, query, k: int):
        try:
            r = transform(self.model, query, **self.transform_kwargs).r
        except TransformFailure as exc:
            raise ClassificationFailure(f"query could not be transformed: {exc}") from exc
        return knn_vote(self.whiten(self.responses), self.labels, self.whiten(r), k)


def knn_vote(points, labels, query, k: int):
    """Majority label of the k nearest rows; ties in distance go to the lower
    row, ties in votes to the smallest label."""
    n = len(points)
    if int(k) != k or not 1 <= k <= n:
        raise InvalidArgumentError(f"k must be in [1, {n}], got {k}")
    d2 = ((np.asarray(points) - np.asarray(query)) ** 2).sum(axis=1)
    nearest = np.lexsort((np.arange(n), d2))[:int(k)]
    values, counts = np.unique(np.asarray(labels)[nearest], return_counts=True)
    return values[np.argmax(counts)].item()


def knn_classify_spca(model: SpcaModel, train: Dataset, query, k: int, **transform_kwargs):
    """kNN label of ``query`` under Euclidean distance between whitened responses.

    Transforms the whole training set; build a :class:`SpcaClassifier` once
    when classifying many queries.
    """
    return SpcaClassifier.build(model, train, **transform_kwargs).classify(query, k)


def mahalanobis_knn(train: Dataset, query, k: int):
    """Reference classifier: kNN under the training covariance's Mahalanobis metric."""
    pts = train.points
    cov = np.cov(pts, rowvar=False)
    w = np.linalg.cholesky(np.linalg.inv(cov))
    return knn_vote(pts @ w, train.labels, np.asarray(query, dtype=float) @ w, k)


def domain_adapt(model_a: SpcaModel, model_b: SpcaModel, x_b, **transform_kwargs):
    """Carry a point of domain B to domain A through shared response coordinates.

    Returns (x_a, response_b).
    """
    if model_a.dim != model_b.dim or model_a.gamma != model_b.gamma:
        raise InvalidArgumentError("both models need the same dimension and gamma")
    try:
        resp = transform(model_b, x_b, **transform_kwargs)
    except TransformFailure as exc:
        raise AdaptationFailure(f"transform in domain B failed: {exc}", stage="transform") from exc
    try:
        return inverse(model_a, resp.r), resp
    except InversionFailure as exc:
        raise AdaptationFailure(f"inverse in domain A failed: {exc}", stage="inverse") from exc


def write_report(path, metric: str, value, config: dict):
    """JSON report with sorted keys so identical runs give identical files."""
    doc = {"metric": metric, "value": value, "config": config}
    write_text_atomic(path, json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


def histogram_to_csv(hist: Histogram2D, path):
    lines = ["# a_lo,a_hi,empty," + ",".join(f"b{j}" for j in range(hist.bins.shape[1]))]
    ea = hist.edges[0]
    for i, row in enumerate(hist.bins):
        cells = [repr(float(ea[i])), repr(float(ea[i + 1])), str(int(hist.empty[i]))]
        cells += [repr(float(v)) for v in row]
        lines.append(",".join(cells))
    write_text_atomic(path, "\n".join(lines) + "\n")
