"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 input/output error, 4 numerical
failure (including any sample that could not be processed).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import evaluation as ev
from .curve import PcParams, data_scale, default_grid, fit_pc_params, surface_to_csv
from .data import (gen_helix, gen_noisy_spiral, gen_swiss_roll, gen_two_cluster,
                   load_csv, read_matrix, save_csv, write_text_atomic)
from .errors import InversionFailure, ParseError, SpcaError, TransformFailure
from .metric import MetricConfig
from .model import fit, inverse, load_model, save_model, transform

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class _UsageError(Exception):
    pass


def _q(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("q must be positive (use 'inf' for a rigid curve)")
    return v


def _pair_arg(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


def _add_pc_flags(p):
    p.add_argument("--k-frac", type=float, default=0.1, help="neighbourhood size as a fraction of N")
    p.add_argument("--tau", type=float, default=1.0, help="curve step length")
    p.add_argument("--q", type=_q, default=10.0, help="stiffness (inf: ignore the local mean)")
    p.add_argument("--d-out", type=float, default=None, help="off-manifold stopping distance")
    p.add_argument("--cross-tol", type=float, default=None, help="curve crossing distance")
    p.add_argument("--max-vertices", type=int, default=None, help="vertex cap per growth direction")
    p.add_argument("--smooth", action="store_true", help="tapered neighbourhoods for every curve")


def _add_iter_flags(p):
    p.add_argument("--tol-frac", type=float, default=0.001)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--max-iter", type=int, default=50)


def _pc_params(args) -> PcParams:
    return PcParams(k_frac=args.k_frac, tau=args.tau, q=args.q, d_out=args.d_out,
                    cross_tol=args.cross_tol, max_vertices=args.max_vertices, smooth=args.smooth)


def _iter_kwargs(args) -> dict:
    return {"tol_frac": args.tol_frac, "alpha": args.alpha, "max_iter": args.max_iter}


def _write_matrix(rows, path, header=None):
    lines = ["# " + header] if header else []
    for row in rows:
        lines.append(",".join(repr(float(v)) for v in row))
    write_text_atomic(path, "\n".join(lines) + "\n")


def _write_json(doc, path):
    write_text_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _transform_all(model, points, kwargs):
    """Responses (NaN rows for failures) and per-sample status records."""
    out = np.full((len(points), model.dim), np.nan)
    status = []
    for i, x in enumerate(points):
        try:
            resp = transform(model, x, **kwargs)
        except TransformFailure as exc:
            status.append({"row": i, "error": str(exc)})
            continue
        out[i] = resp.r
        status.append({"row": i, "converged": bool(resp.converged), "iterations": resp.iterations,
                       "residual": resp.final_residual})
    return out, status


def cmd_gen(args):
    if args.kind == "spiral":
        ds = gen_noisy_spiral(args.n, args.seed)
    elif args.kind == "swissroll":
        ds = gen_swiss_roll(args.n, args.sigma, args.seed)
    elif args.kind == "helix":
        ds = gen_helix(args.n, args.sigma, args.seed)
    else:
        ds = gen_two_cluster(args.alpha1, args.alpha2, args.theta1, args.std_ratios, args.n, args.seed)
    save_csv(ds, args.out)
    print(f"N={ds.n} d={ds.dim} seed={args.seed}")
    return EXIT_OK


def cmd_fit(args):
    ds = load_csv(args.data, labels=args.labels)
    cfg = MetricConfig(gamma=args.gamma, density_k=args.density_k)
    model = fit(ds, cfg, _pc_params(args), origin_mode=args.origin_mode,
                total_bits=args.total_bits, slab_size=args.slab_size,
                smooth_secondary=not args.plain_secondary)
    save_model(model, args.out)
    print(f"dim_order={list(model.dim_order)} scaling={[float(v) for v in model.scaling]}")
    return EXIT_OK


def cmd_fit_params(args):
    ds = load_csv(args.data)
    scale = data_scale(ds) if args.scale is None else args.scale
    best, surface = fit_pc_params(ds, default_grid(scale))
    surface_to_csv(surface, args.out)
    doc = {"best": best.to_dict(), "error": surface[best], "scale": scale}
    if args.best_out:
        _write_json(doc, args.best_out)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_transform(args):
    model = load_model(args.model)
    ds = load_csv(args.data)
    resp, status = _transform_all(model, ds.points, _iter_kwargs(args))
    _write_matrix(resp, args.out)
    failed = sum("error" in s for s in status)
    converged = sum(bool(s.get("converged")) for s in status)
    report = {"n": ds.n, "converged": converged, "failed": failed, "samples": status,
              "config": _iter_kwargs(args)}
    if args.report:
        _write_json(report, args.report)
    print(f"converged {converged}/{ds.n}, failed {failed}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_invert(args):
    model = load_model(args.model)
    resp = read_matrix(args.responses, allow_nan=True)
    if resp.shape[1] != model.dim:
        raise _UsageError(f"responses have {resp.shape[1]} columns, the model has {model.dim}")
    out = np.full((len(resp), model.dim), np.nan)
    failed = 0
    for i, r in enumerate(resp):
        if np.isnan(r).any():
            failed += 1
            print(f"row {i}: missing response", file=sys.stderr)
            continue
        try:
            out[i] = inverse(model, r)
        except InversionFailure as exc:
            failed += 1
            print(f"row {i}: {exc}", file=sys.stderr)
    _write_matrix(out, args.out)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_reduce(args):
    model = load_model(args.model)
    if not 1 <= args.d_keep <= model.dim:
        raise _UsageError(f"--d-keep must be in [1, {model.dim}]")
    ds = load_csv(args.data)
    resp, status = _transform_all(model, ds.points, _iter_kwargs(args))
    kept = resp[:, :args.d_keep]
    back = np.full_like(resp, np.nan)
    failed = sum("error" in s for s in status)
    for i, row in enumerate(kept):
        if not np.isfinite(row).all():
            continue
        full = np.zeros(model.dim)
        full[:args.d_keep] = row
        try:
            back[i] = inverse(model, full)
        except InversionFailure:
            failed += 1
    _write_matrix(kept, args.out_prefix + "_reduced.csv")
    _write_matrix(back, args.out_prefix + "_backprojection.csv")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_code(args):
    model = load_model(args.model)
    ds = load_csv(args.data)
    resp, status = _transform_all(model, ds.points, _iter_kwargs(args))
    ok = np.isfinite(resp).all(axis=1)
    spec = ev.QuantizerSpec.from_responses(resp[ok], args.total_bits)
    result = ev.quantize_roundtrip(resp[ok], spec, model, originals=ds.points[ok])
    failed = int((~ok).sum()) + result.failed
    doc = {"total_bits": args.total_bits, "bins_per_dim": list(spec.bins_per_dim),
           "ranges": [list(r) for r in spec.ranges], "rmse": result.rmse,
           "clamped": result.clamped, "failed": failed, "n": ds.n, "gamma": model.gamma}
    _write_json(doc, args.out)
    print(f"rmse={result.rmse!r} bins={list(spec.bins_per_dim)}")
    return EXIT_NUMERIC if failed else EXIT_OK


def _parse_pairs(text, d):
    if text is None:
        return [(i, j) for i in range(d) for j in range(i + 1, d)]
    pairs = []
    for item in text.split(","):
        try:
            i, j = (int(v) for v in item.split(":"))
        except ValueError:
            raise _UsageError(f"bad pair {item!r}; expected i:j") from None
        if not (0 <= i < d and 0 <= j < d and i != j):
            raise _UsageError(f"pair {item!r} out of range for {d} columns")
        pairs.append((i, j))
    return pairs


def cmd_eval_mi(args):
    data = read_matrix(args.data, allow_nan=True)
    complete = ~np.isnan(data).any(axis=1)
    points = data[complete]
    results = []
    for i, j in _parse_pairs(args.pairs, data.shape[1]):
        bits, degenerate = ev.mutual_information(points[:, [i, j]], args.bins)
        results.append({"pair": [i, j], "bits": bits, "degenerate": degenerate})
    config = {"bins": args.bins, "data": args.data, "rows_dropped": int((~complete).sum())}
    ev.write_report(args.out, "mutual_information", results, config)
    print(json.dumps(results))
    return EXIT_OK


def cmd_adapt(args):
    model_a = load_model(args.model_a)
    model_b = load_model(args.model_b)
    ds = load_csv(args.data_b, labels=args.labels)
    out = np.full((ds.n, model_a.dim), np.nan)
    failed = 0
    for i, x in enumerate(ds.points):
        try:
            out[i], _ = ev.domain_adapt(model_a, model_b, x, **_iter_kwargs(args))
        except SpcaError as exc:
            failed += 1
            print(f"row {i}: {exc}", file=sys.stderr)
    _write_matrix(out, args.out)
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spca", description="Sequential principal curves analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("kind", choices=["spiral", "swissroll", "helix", "twocluster"])
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.3, help="noise level (swissroll, helix)")
    p.add_argument("--alpha1", type=float, default=10.0)
    p.add_argument("--alpha2", type=float, default=20.0)
    p.add_argument("--theta1", type=float, default=30.0)
    p.add_argument("--std-ratios", type=_pair_arg, default=(0.83, 1.5))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit a model and save it as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", action="store_true", help="last CSV column holds labels")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--density-k", type=int, default=None)
    p.add_argument("--origin-mode", choices=["mean", "densest"], default="mean")
    p.add_argument("--total-bits", type=float, default=None)
    p.add_argument("--slab-size", type=int, default=None)
    p.add_argument("--plain-secondary", action="store_true",
                   help="draw secondary curves without tapered neighbourhoods")
    p.add_argument("--seed", type=int, default=0, help="accepted for pipeline symmetry; fitting is deterministic")
    _add_pc_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fit-params", help="projection error over the rigidity grid")
    p.add_argument("--data", required=True)
    p.add_argument("--scale", type=float, default=None, help="step unit (default: diameter/15)")
    p.add_argument("--out", required=True, help="error surface CSV")
    p.add_argument("--best-out", default=None, help="JSON with the best cell")
    p.set_defaults(func=cmd_fit_params)

    p = sub.add_parser("transform", help="responses for every row of a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="convergence report JSON")
    _add_iter_flags(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("invert", help="points for every row of a response CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("reduce", help="keep the leading responses and back-project")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--d-keep", type=int, required=True)
    p.add_argument("--out-prefix", required=True)
    _add_iter_flags(p)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("code", help="quantise responses at a bit budget and report the error")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--total-bits", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_iter_flags(p)
    p.set_defaults(func=cmd_code)

    p = sub.add_parser("eval-mi", help="pairwise mutual information of CSV columns")
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", default=None, help="e.g. 0:1,0:2 (default: all pairs)")
    p.add_argument("--bins", type=int, default=ev.DEFAULT_BINS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_mi)

    p = sub.add_parser("adapt", help="map domain-B points into domain A")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--data-b", required=True)
    p.add_argument("--labels", action="store_true", help="last column of --data-b holds labels (ignored)")
    p.add_argument("--out", required=True)
    _add_iter_flags(p)
    p.set_defaults(func=cmd_adapt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.error(str(exc))
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # InvalidArgumentError and friends: bad parameter values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpcaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
