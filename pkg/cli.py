"""Command-line dispatch: specfun / ops / bound / solve / stability.

Every subcommand writes comma-separated rows (17 significant digits, ``\\n``
line endings, header first) to ``--out`` or stdout.  With ``--out`` a
``<out>.manifest.json`` records the command, the config hash, the seed and
the tool version, so identical manifests mean byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

import config
from errors import GridError, HilferKitError, ValidationError
from expressions import parse_expression
from fracops import FracOrder, PsiFunction, SampledFunction, frac_integral_grid, hilfer_derivative_grid, uniform_grid
from gronwall import load_instance, sweep_dominance, verify_dominance
from model import PhiData, load_problem, perturbed, validate
from solver import METHODS, picard_solve
from specfun import gamma_fn, mittag_leffler, wright_m, wright_moment
from stability import certify_uhr

logger = logging.getLogger(__name__)

_EPS = float(np.finfo(float).eps)

# named residual profiles accepted by --perturb phi=...
PROFILES = {"1": "1", "t": "t", "exp": "exp(t)"}

SPECFUN_ARGS = {
    "gamma": ("x",),
    "mlf": ("alpha", "beta", "z"),
    "wright": ("alpha", "theta"),
    "moment": ("alpha", "dbar"),
}


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_hash: str
    seed: int
    tool_version: str
    outputs: tuple

    def to_json(self) -> str:
        data = asdict(self)
        data["outputs"] = list(self.outputs)
        return json.dumps(data, sort_keys=True, indent=2) + "\n"


class UsageError(HilferKitError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _csv_text(header, rows, footer=()) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in list(rows) + list(footer):
        writer.writerow([_fmt(v) for v in row])
    return buffer.getvalue()


def _config_hash(path) -> str:
    data = Path(path).read_bytes() if path else b""
    return hashlib.sha256(data).hexdigest()


def _emit(args, header, rows, footer=(), seed=None) -> None:
    text = _csv_text(header, rows, footer)
    if not args.out:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    out.write_text(text, encoding="utf-8", newline="")
    manifest = RunManifest(
        args.command_line,
        _config_hash(getattr(args, "config", None)),
        config.VALIDATION_SEED if seed is None else int(seed),
        config.TOOL_VERSION,
        (out.name,),
    )
    Path(f"{out}.manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    print(f"Wrote {out} and its manifest", file=sys.stderr)


def _parse_floats(text: str) -> list:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"--args expects comma-separated numbers, got {text!r}") from exc


def cmd_specfun(args) -> int:
    names = SPECFUN_ARGS[args.fn]
    values = _parse_floats(args.args)
    if len(values) != len(names):
        raise UsageError(f"{args.fn} takes {len(names)} argument(s) ({', '.join(names)}), got {len(values)}")
    if args.fn == "gamma":
        value = gamma_fn(values[0])
        err = 2.0 * _EPS * abs(value)
    elif args.fn == "mlf":
        result = mittag_leffler(*values)
        value, err = result.value, result.est_abs_error
    elif args.fn == "wright":
        result = wright_m(*values)
        value, err = result.value, result.est_abs_error
    else:
        value = wright_moment(*values)
        err = 4.0 * _EPS * abs(value)
    _emit(args, ["fn", *names, "value", "est_err"], [[args.fn, *values, value, err]])
    return 0


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}", ["config-schema"]) from exc


def cmd_ops(args) -> int:
    data = _load_json(args.config)
    try:
        op = data["op"]
        if op not in ("integral", "hilfer"):
            raise ValidationError(f"unknown op {op!r} (expected 'integral' or 'hilfer')", ["config-schema"])
        psi = PsiFunction.from_name(data.get("psi", "identity"))
        nodes = uniform_grid(float(data.get("a", 0.0)), float(data.get("b", 1.0)), int(data.get("grid", args.grid)))
        fn = parse_expression(str(data["f"]), ("t",))
        sample = SampledFunction.from_callable(fn, nodes, float(data.get("weight", 0.0)))
        if op == "integral":
            alpha = float(data["alpha"])
        else:
            order = FracOrder(float(data["alpha"]), float(data["beta"]), data.get("convention", "standard"))
            scheme = data.get("scheme", "central")
    except ValidationError:
        raise
    except KeyError as exc:
        raise ValidationError(f"ops config is missing {exc}", ["config-schema"]) from exc
    except (TypeError, ValueError, GridError) as exc:
        raise ValidationError(f"bad ops config: {exc}", ["config-schema"]) from exc
    if op == "integral":
        values = frac_integral_grid(psi, alpha, sample)
    else:
        values = hilfer_derivative_grid(order, sample, psi, scheme)
    _emit(args, ["t", "value"], zip(nodes, values))
    return 0


def cmd_bound(args) -> int:
    if args.action == "verify" and not args.config:
        if args.seed is None:
            raise UsageError("bound verify needs --seed")
        reports = sweep_dominance(args.instances, args.seed, args.grid)
        rows = [[r.nodes[r.worst], r.u_tilde[r.worst], r.bound[r.worst], r.margin[r.worst]] for r in reports]
        dominated = all(r.dominated for r in reports)
        _emit(args, ["t", "u_tilde", "bound", "margin"], rows, seed=args.seed)
        print(f"{len(reports)} instances, worst margin {max(r.max_margin for r in reports):.3e}", file=sys.stderr)
        return 0 if dominated else 4

    if not args.config:
        raise UsageError("bound needs --config (or 'bound verify --seed N')")
    seed = 0 if args.seed is None else args.seed
    inst = load_instance(args.config)
    report = verify_dominance(inst, args.grid, seed)
    if args.t is not None:
        u_tilde = float(np.interp(args.t, report.nodes, report.u_tilde))
        bound = float(np.interp(args.t, report.nodes, report.bound))
        rows = [[args.t, u_tilde, bound, u_tilde - bound]]
    else:
        rows = zip(report.nodes, report.u_tilde, report.bound, report.margin)
    _emit(args, ["t", "u_tilde", "bound", "margin"], rows, seed=seed)
    return 0 if report.dominated else 4


def _validated_problem(path):
    spec = load_problem(path)
    report = validate(spec)
    if not report.ok:
        print(report.summary(), file=sys.stderr)
        raise ValidationError(
            "problem config failed validation: " + "; ".join(f"{c.name}: {c.detail}" for c in report.failures),
            sorted({c.name for c in report.failures}),
        )
    return spec


def _trajectory_rows(trajectory):
    for seg in trajectory.segments:
        label = f"{seg.kind}{seg.index}"
        weighted = seg.weighted if seg.weighted.ndim > 1 else seg.weighted[:, None]
        values = seg.unweighted()
        values = values if values.ndim > 1 else values[:, None]
        for t, w, v in zip(seg.nodes, weighted, values):
            yield [label, t, *w, *v]


def cmd_solve(args) -> int:
    spec = _validated_problem(args.config)
    report = picard_solve(spec, args.grid, args.tol, args.max_iter, args.method, grading=args.grading, check=False)
    d = report.trajectory.dim
    if d == 1:
        header = ["segment", "t", "weighted_value", "value"]
    else:
        header = ["segment", "t"] + [f"weighted_value_{k}" for k in range(1, d + 1)] + [f"value_{k}" for k in range(1, d + 1)]
    _emit(args, header, _trajectory_rows(report.trajectory))
    print(
        f"Picard: {report.iterations} iterations, last update {report.residual_history[-1]:.3e}, "
        f"Lambda={report.lambda_value:.4g}",
        file=sys.stderr,
    )
    if not report.converged:
        print(f"[ERROR] no convergence after {report.iterations} iterations", file=sys.stderr)
        return 3
    return 0


def _parse_perturb(text: str) -> dict:
    options = {}
    for part in text.split(","):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise UsageError(f"--perturb entries are key=value, got {part!r}")
        options[key.strip()] = value.strip()
    if "eps" not in options:
        raise UsageError("--perturb needs eps=<value>")
    unknown = set(options) - {"eps", "phi", "impulse", "tol", "c"}
    if unknown:
        raise UsageError(f"unknown --perturb keys: {', '.join(sorted(unknown))}")
    return options


def cmd_stability(args) -> int:
    options = _parse_perturb(args.perturb)
    try:
        eps = float(options["eps"])
        shift = float(options.get("impulse", 0.0))
        tolerance = float(options.get("tol", abs(shift)))
        c_varphi = float(options["c"]) if "c" in options else None
    except ValueError as exc:
        raise UsageError(f"bad --perturb value: {exc}") from exc
    profile = PROFILES.get(options.get("phi", "1"), options.get("phi", "1"))

    spec = _validated_problem(args.config)
    phidata = PhiData.from_expression(profile, tolerance, spec.mesh.T, scale=eps, c_varphi=c_varphi)
    solve = {"grading": args.grading, "check": False}
    base = picard_solve(spec, args.grid, args.tol, args.max_iter, **solve)
    candidate = picard_solve(perturbed(spec, eps, parse_expression(profile, ("t",)), shift), args.grid, args.tol, args.max_iter, **solve)
    if not (base.converged and candidate.converged):
        print("[ERROR] Picard iteration did not converge", file=sys.stderr)
        return 3

    cert = certify_uhr(spec, base.trajectory, candidate.trajectory, phidata)
    margin = cert.bound_values - cert.observed
    rows = zip(cert.times, cert.observed, cert.bound_values, margin)
    _emit(args, ["t", "observed_delta", "bound", "margin"], rows, footer=[["C", cert.C, "verdict", cert.verdict]])
    print(f"C={cert.C:.6g} verdict={'true' if cert.verdict else 'false'} slack={cert.slack:.3e}", file=sys.stderr)
    return 0 if cert.verdict else 4


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hilfer-kit", description="Impulsive Hilfer fractional toolkit")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = commands.add_parser("specfun", help="Evaluate a special function")
    p.add_argument("action", choices=["eval"])
    p.add_argument("--fn", required=True, choices=sorted(SPECFUN_ARGS))
    p.add_argument("--args", required=True, help="Comma-separated arguments; use --args=-1,... for a leading minus")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(handler=cmd_specfun)

    p = commands.add_parser("ops", help="Fractional integral / Hilfer derivative of an expression")
    p.add_argument("--config", required=True, help="JSON ops config")
    p.add_argument("--grid", type=int, default=512, help="Cells when the config gives none (default: 512)")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(handler=cmd_ops)

    p = commands.add_parser("bound", help="Gronwall bound against the extremal trajectory")
    p.add_argument("action", nargs="?", choices=["verify"])
    p.add_argument("--config", help="JSON Gronwall instance")
    p.add_argument("--t", type=float, help="Report a single time instead of every node")
    p.add_argument("--seed", type=int, help="RNG seed (required for the random sweep)")
    p.add_argument("--instances", type=int, default=100, help="Random instances for the sweep (default: 100)")
    p.add_argument("--grid", type=int, default=2048, help="Oracle grid cells (default: 2048)")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(handler=cmd_bound)

    for name, handler, help_text in (
        ("solve", cmd_solve, "Picard solve of a problem config"),
        ("stability", cmd_stability, "Ulam-Hyers-Rassias certificate for a constructed perturbation"),
    ):
        p = commands.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON problem config")
        p.add_argument("--grid", type=int, default=512, help="Cells per window (default: 512)")
        p.add_argument("--tol", type=float, default=1e-10, help="Picard tolerance in the delta-norm (default: 1e-10)")
        p.add_argument("--max-iter", type=int, default=200, help="Picard iteration cap (default: 200)")
        p.add_argument("--grading", type=float, default=1.0, help="Evolution-grid grading exponent, 1 = uniform (default: 1)")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.set_defaults(handler=handler)
    commands.choices["solve"].add_argument("--method", choices=METHODS, default="closed_form_ml")
    commands.choices["stability"].add_argument("--perturb", required=True, help="eps=<x>,phi=1|t|exp|<expr>[,impulse=<x>][,tol=<x>][,c=<x>]")
    return parser


def run(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=config.LOG_LEVEL, format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.command_line = " ".join(argv)
        return args.handler(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        for name in exc.violations:
            print(f"violated: {name}", file=sys.stderr)
        return exc.exit_code
    except HilferKitError as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return exc.exit_code
    except OverflowError as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return 1
