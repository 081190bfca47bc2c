"""Batch front end: ``sostensor <subcommand> ...``.

Exit codes: 0 success or YES, 1 usage/IO/validation error, 3 certified NO,
4 UNDECIDED, 5 extraction stall.  Results go to stdout as JSON unless
``--out`` is given.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
from pathlib import Path

from . import io as tio
from .certificate import ComponentFormRequired, certify, default_threshold
from .concentration import decoupling_experiment, scaling_experiment
from .decomposition import ExtractionConfig, ExtractionStall, decompose
from .instances import NoiseSpec, add_noise, orthonormal_components, sample_components
from .moment_sdp import ProblemTooLarge, build_certification_problem, certify_via_sdp, solve
from .spectral import SpectralNonConvergence
from .tensor import ENSEMBLES, DensificationError, InvariantViolation, from_components

EXIT_OK, EXIT_ERROR, EXIT_NO, EXIT_UNDECIDED, EXIT_STALL = 0, 1, 3, 4, 5

log = logging.getLogger("sostensor")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _grid(text: str) -> list:
    cells = []
    for item in text.split(","):
        try:
            n, m = item.lower().split("x")
            cells.append((int(n), int(m)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"grid cells look like NxM, got {item!r}") from None
    return cells


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="worker threads, 0 = auto")
    common.add_argument("--config", type=Path, help="JSON file of option defaults")
    common.add_argument("--out", type=Path, help="write the result here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="sostensor", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="sample a component-form tensor file")
    g.add_argument("-n", type=int, required=True)
    g.add_argument("-m", type=int)
    g.add_argument("--ensemble", choices=ENSEMBLES, default="rademacher-normalized")
    g.add_argument("--orthonormal", action="store_true", help="orthonormal components (m <= n)")
    g.add_argument("--noise", type=float, default=0.0, help="unfolding norm of added noise")
    g.add_argument("--noise-seed", type=int)

    c = sub.add_parser("certify", parents=[common], help="upper-bound the injective norm")
    c.add_argument("tensor", type=Path)
    c.add_argument("--mode", choices=("components", "sdp"), default="components")
    c.add_argument("--threshold", type=float, help="default 1 + 1/ln n")
    c.add_argument("--tol", type=float)
    c.add_argument("--method", choices=("power", "lanczos"), default="power")
    c.add_argument("--degree", type=int, default=4)
    c.add_argument("--max-iter", type=int, default=50000)

    d = sub.add_parser("decompose", parents=[common], help="recover components")
    d.add_argument("tensor", type=Path)
    d.add_argument("-m", type=int, help="component count (default: from the file)")
    d.add_argument("--truth", type=Path, help="ground-truth tensor file for matching")
    d.add_argument("--csv", type=Path, help="per-component distance table")
    d.add_argument("--accept-threshold", type=float, default=ExtractionConfig.accept_threshold)
    d.add_argument("--deflation-threshold-sq", type=float, default=ExtractionConfig.deflation_threshold_sq)
    d.add_argument("--restarts", type=int, default=ExtractionConfig.restarts_per_component)
    d.add_argument("--ascent-steps", type=int, default=ExtractionConfig.ascent_steps)
    d.add_argument("--start-mode", choices=("sphere", "slices"), default="sphere")
    d.add_argument("--sweeps", type=int, default=100)
    d.add_argument("--refine-tol", type=float, default=1e-12)

    s = sub.add_parser("scaling", parents=[common], help="spectral scaling regressions")
    s.add_argument("--grid", type=_grid, default=_grid("100x50,100x100,100x200,100x400"),
                   help="comma-separated NxM cells")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--csv", type=Path, help="per-trial rows")
    s.add_argument("--format", choices=("json", "csv"), default="json")

    k = sub.add_parser("decouple", parents=[common], help="coupled vs decoupled sign sums")
    k.add_argument("-n", type=int, default=50)
    k.add_argument("-m", type=int, default=100)
    k.add_argument("--trials", type=int, default=200)
    k.add_argument("--tol", type=float, default=1e-6)

    q = sub.add_parser("sdp-solve", parents=[common], help="solve the moment relaxation")
    q.add_argument("tensor", type=Path)
    q.add_argument("--degree", type=int, default=4)
    q.add_argument("--tol", type=float, default=1e-7)
    q.add_argument("--max-iter", type=int, default=50000)
    q.add_argument("--moments", type=Path, help="write the pseudo-expectation here")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    known = vars(args)
    sub_parser = parser._subparsers._group_actions[0].choices[args.command]
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config") or dest not in known:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if dest == "grid" and isinstance(value, str):
            try:
                value = _grid(value)
            except argparse.ArgumentTypeError as exc:
                raise UsageError(str(exc)) from None
        defaults[dest] = value
    sub_parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _emit(payload, out: Path | None) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _cmd_generate(args) -> int:
    if args.orthonormal:
        comp = orthonormal_components(args.n, args.m, seed=args.seed)
    else:
        if args.m is None:
            raise UsageError("generate: -m is required unless --orthonormal")
        comp = sample_components(args.n, args.m, args.ensemble, args.seed)
    tensor = from_components(comp)
    if args.noise:
        noise_seed = args.seed if args.noise_seed is None else args.noise_seed
        tensor = add_noise(tensor, NoiseSpec(args.noise, seed=noise_seed))
    text = tio.dumps(tensor)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return EXIT_OK


def _cmd_certify(args) -> int:
    tensor = tio.load(args.tensor)
    threshold = args.threshold
    if args.mode == "components":
        if tensor.components is None:
            raise ComponentFormRequired()
        report = certify(tensor, threshold=threshold, tol=1e-9 if args.tol is None else args.tol,
                         seed=args.seed, method=args.method, threads=args.threads)
        _emit({"mode": "components", **report.to_dict()}, args.out)
        return EXIT_OK if report.verdict == "YES" else EXIT_NO
    verdict = certify_via_sdp(tensor, threshold=threshold, degree=args.degree,
                              tol=1e-7 if args.tol is None else args.tol, max_iter=args.max_iter)
    _emit({"mode": "sdp", "verdict": verdict.verdict, "threshold": verdict.threshold,
           "degree": args.degree, "warning": verdict.warning, **vars(verdict.report)}, args.out)
    return {"YES": EXIT_OK, "NO": EXIT_NO}.get(verdict.verdict, EXIT_UNDECIDED)


def _distance_csv(path: Path, result) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["truth_index", "found_index", "distance", "extracted_distance"])
    for i, (j, dist) in enumerate(zip(result.matching, result.distances)):
        w.writerow([i, int(j), repr(float(dist)), repr(float(result.extracted_distances[i]))])
    path.write_text(buf.getvalue())


def _cmd_decompose(args) -> int:
    tensor, header = tio.load_with_header(args.tensor)
    m = args.m if args.m is not None else header.get("m")
    if m is None:
        raise UsageError("decompose: -m is required for dense tensor files")
    truth = None
    if args.truth is not None:
        truth_tensor = tio.load(args.truth)
        if truth_tensor.components is None:
            raise UsageError("--truth must be a component-form tensor file")
        truth = truth_tensor.components
        if truth.m != m or truth.n != tensor.n:
            raise UsageError(f"truth has shape {truth.m}x{truth.n}, expected {m}x{tensor.n}")
    if args.csv is not None and truth is None:
        raise UsageError("--csv needs --truth")
    config = ExtractionConfig(
        accept_threshold=args.accept_threshold, deflation_threshold_sq=args.deflation_threshold_sq,
        restarts_per_component=args.restarts, ascent_steps=args.ascent_steps, seed=args.seed,
        start_mode=args.start_mode)
    try:
        result = decompose(tensor, m, config, sweeps=args.sweeps, refine_tol=args.refine_tol, truth=truth)
    except ExtractionStall as stall:
        _emit({"status": "stall", "stall_index": stall.index, "partial": stall.partial.tolist(),
               "telemetry": [vars(t) for t in stall.telemetry]}, args.out)
        print(f"sostensor: {stall}", file=sys.stderr)
        return EXIT_STALL
    _emit({"status": "ok", **result.to_dict()}, args.out)
    if args.csv is not None:
        _distance_csv(args.csv, result)
    return EXIT_OK


def _cmd_scaling(args) -> int:
    run = scaling_experiment(args.grid, trials=args.trials, seed=args.seed, tol=args.tol,
                             threads=args.threads)
    if args.csv is not None:
        args.csv.write_text(run.to_csv())
    _emit(run.to_csv() if args.format == "csv" else run.summary(), args.out)
    return EXIT_OK


def _cmd_decouple(args) -> int:
    summary = decoupling_experiment(args.n, args.m, trials=args.trials, seed=args.seed,
                                    tol=args.tol, threads=args.threads)
    _emit({
        "n": args.n, "m": args.m, "trials": args.trials, "seed": args.seed,
        "ratios": {str(q): r for q, r in summary.ratios.items()},
        "samples": [{"norm_coupled": s.norm_coupled, "norm_decoupled": s.norm_decoupled}
                    for s in summary.samples],
    }, args.out)
    return EXIT_OK


def _cmd_sdp_solve(args) -> int:
    tensor = tio.load(args.tensor)
    problem = build_certification_problem(tensor, args.degree)
    pe, report = solve(problem, tol=args.tol, max_iter=args.max_iter)
    if args.moments is not None:
        args.moments.write_text(pe.to_json())
    _emit({"n": tensor.n, "degree": args.degree, **vars(report), "residuals": vars(pe.residuals),
           "default_threshold": default_threshold(tensor.n) if tensor.n >= 2 else None}, args.out)
    return EXIT_OK if report.status == "converged" else EXIT_UNDECIDED


COMMANDS = {
    "generate": _cmd_generate, "certify": _cmd_certify, "decompose": _cmd_decompose,
    "scaling": _cmd_scaling, "decouple": _cmd_decouple, "sdp-solve": _cmd_sdp_solve,
}


def run(argv: list | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads == 0:
        args.threads = os.cpu_count() or 1
    try:
        return COMMANDS[args.command](args)
    except tio.TensorFileError as exc:
        print(f"sostensor: malformed tensor file: {exc}", file=sys.stderr)
    except InvariantViolation as exc:
        print(f"sostensor: invariant violation: {exc}", file=sys.stderr)
    except SpectralNonConvergence as exc:
        print(f"sostensor: undecided: {exc}", file=sys.stderr)
        return EXIT_UNDECIDED
    except (UsageError, ComponentFormRequired, ProblemTooLarge, DensificationError,
            ValueError, OSError) as exc:
        print(f"sostensor: {exc}", file=sys.stderr)
    return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
