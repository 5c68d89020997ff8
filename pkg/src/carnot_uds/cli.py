"""Command-line experiment runner.

Every subcommand writes a CSV (stdout, or ``--out``) and, with ``--out``, a
``<out>.json`` sidecar holding the resolved configuration, its hash and a
summary.  Exit status: 0 success, 1 usage error, 2 certificate violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._controlopt import THREADS_ENV, Budget
from .algebra import GroupStructure, HorizontalVector, build_quotient, dilate, horizontal_isometry, load_structure
from .diff import PerturbationParams, default_shell, delta_max, deviation_check, perturbed_line, random_curve_pair
from .distance import cc_bracket, distance_differential, koranyi, synthesize_curve
from .engel import cube_root_scan
from .errors import CarnotError
from .uds import HorizontalSegment, stage_cover, stage_ratio, tube_cover, verify_membership

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def _zeta_values(text: str, points: int) -> list[float]:
    """``a..b`` (log-spaced, decreasing) or a comma list."""
    if ".." in text:
        a, b = (float(v) for v in text.split(".."))
        lo, hi = sorted((a, b))
        return np.geomspace(hi, lo, points).tolist()
    return sorted(_floats(text), reverse=True)


def _structure(args) -> GroupStructure:
    if getattr(args, "structure", None):
        return load_structure(args.structure)
    return GroupStructure.free_group(args.rank)


def _budget(args) -> Budget:
    doc = json.loads(args.budget) if getattr(args, "budget", None) else {}
    doc.setdefault("seed", args.seed)
    if getattr(args, "threads", None) is not None:
        doc["threads"] = args.threads
    return Budget.from_dict(doc)


class Output:
    """Collects CSV rows and the JSON summary for one run."""

    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        self.rows: list[list] = []
        self.summary: dict = {}

    def add(self, *values):
        self.rows.append([_fmt(v) for v in values])

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return v


def _config_of(args) -> dict:
    skip = {"func", "out", "config", "threads"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(args, out: Output, stdout) -> None:
    cfg = _config_of(args)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    meta = {
        "command": args.command,
        "config": cfg,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "version": __version__,
        "summary": out.summary,
    }
    text = out.csv_text()
    if args.out:
        path = Path(args.out)
        path.write_text(text)
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    else:
        stdout.write(text)


# --- subcommands ---------------------------------------------------------------


def cmd_dist(args, out: Output) -> bool:
    G = _structure(args)
    y = G.point(_floats(args.to))
    x = G.point(_floats(args.from_)) if args.from_ else G.identity()
    b = cc_bracket(x, y, _budget(args))
    end_err = float(np.abs(b.witness.endpoint.coords - y.coords).max())
    scale = max(1.0, float(np.abs(y.coords).max()))
    ok = b.lower <= b.upper and end_err <= 1e-9 * scale and b.upper >= np.linalg.norm((x.inverse() * y).horizontal)
    out.add(b.lower, b.upper, b.lower_method, b.upper_method, b.segments, int(b.converged), end_err)
    out.summary = {**b.to_dict(), "endpoint_error": end_err}
    out.summary["line"] = f"dist lower={b.lower:.9g} upper={b.upper:.9g} segments={b.segments}"
    return ok


def _random_aligned(G: GroupStructure, rng) -> "GroupPoint":  # noqa: F821
    y = G.random_point(rng, 1.0)
    h = np.zeros(G.rank)
    h[0] = rng.uniform(0.1, 2.0)
    return G.point(horizontal=h, vertical=y.vertical)


def cmd_synth(args, out: Output) -> bool:
    G = _structure(args)
    if not G.free:
        raise UsageError("synth needs a free group (use --rank)")
    rng = np.random.default_rng(args.seed)
    targets = []
    if args.to:
        y = G.point(_floats(args.to))
        F = horizontal_isometry(y)
        fy = F.apply(y)
        h = np.zeros(G.rank)
        h[0] = np.linalg.norm(y.horizontal)
        targets.append(G.point(horizontal=h, vertical=fy.vertical))
    else:
        targets = [_random_aligned(G, rng) for _ in range(args.count)]
    bad = 0
    for i, y in enumerate(targets):
        c = synthesize_curve(y).certificate()
        bad += not c["ok"]
        out.add(i, c["endpoint_error"], c["lipschitz"], c["lip_bound"], c["max_deviation"], c["deviation_bound"], int(c["ok"]))
    out.summary = {"targets": len(targets), "violations": bad, "line": f"synth targets={len(targets)} violations={bad}"}
    return bad == 0


def cmd_diff_scan(args, out: Output) -> bool:
    G = _structure(args)
    u = G.point(_floats(args.at)) if args.at else G.point(horizontal=np.eye(G.rank)[0])
    steps = _floats(args.steps)
    shell = default_shell(G, args.shell, seed=args.seed)
    budget = _budget(args)
    du = cc_bracket(G.identity(), u, budget)
    if du.width > 1e-12 * max(1.0, du.upper):
        raise UsageError("--at must be a horizontal point (d(u) is only known exactly there)")
    d0 = du.upper
    Ph = np.array([xi.horizontal for xi in shell])
    L = np.array([distance_differential(u, xi) for xi in shell])
    Q = np.zeros((len(steps), len(shell)))
    violations = 0
    for a, t in enumerate(steps):
        for b_, xi in enumerate(shell):
            br = cc_bracket(G.identity(), u * dilate(t, xi), budget)
            Q[a, b_] = (br.midpoint - d0) / t
            # d(uz) >= d(u) + L(z) holds for every z, so the upper bound must respect it
            if br.upper < d0 + t * L[b_] - 1e-9:
                violations += 1
    V, *_ = np.linalg.lstsq(Ph, Q[-1], rcond=None)
    for a, t in enumerate(steps):
        out.add(t, float(np.abs(Q[a] - L).max()), float(np.abs(Q[a] - Ph @ V).max()))
    out.summary = {
        "candidate": V.tolist(),
        "expected": (u.horizontal / np.linalg.norm(u.horizontal)).tolist(),
        "violations": violations,
        "line": f"diff-scan candidate={np.round(V, 6).tolist()} violations={violations}",
    }
    return violations == 0


def cmd_engel_scan(args, out: Output) -> bool:
    zetas = _zeta_values(args.zeta, args.points)
    budget = _budget(args).to_dict()
    budget["segments"] = args.segments
    budget["max_segments"] = max(args.max_segments, args.segments)
    scan = cube_root_scan(zetas, budget)
    for z, lo, up, D in zip(scan.zeta, scan.lower, scan.upper, scan.D):
        out.add(float(z), float(lo), float(up), float(D), scan.slope_all)
    ok = bool(np.all(scan.lower <= scan.upper) and np.all(scan.x2_quotients == 1.0))
    out.summary = {**scan.to_dict(), "line": f"engel-scan slope={scan.slope_all:.4f} unflagged={scan.unflagged} x2_quotient_exact={bool(np.all(scan.x2_quotients == 1.0))}"}
    return ok


def cmd_uds_cover(args, out: Output) -> bool:
    G = _structure(args)
    if args.lines_file:
        docs = json.loads(Path(args.lines_file).read_text())
        lines = [HorizontalSegment.from_dict(d, G) for d in docs]
    else:
        lines = [HorizontalSegment(G.identity(), HorizontalVector(np.eye(G.rank)[0]), 1.0)]
    ok = True
    sums = [stage_cover(lines, i, args.r_exp) for i in range(args.stage + 1)]
    ratio = stage_ratio(args.r_exp)
    for i, s in enumerate(sums):
        decay = sums[i] / sums[i - 1] if i else None
        if decay is not None and decay != ratio and not math.isclose(float(decay), float(ratio), rel_tol=1e-12):
            ok = False
        out.add(i, str(s), float(s), "" if decay is None else str(decay))
    summary = {"premeasure_k": str(tube_cover(lines[0], args.k).premeasure(args.r_exp)), "stage_ratio": str(ratio)}
    if args.samples:
        rep = verify_membership(tube_cover(lines[0], args.k), args.samples, args.seed, _budget(args))
        summary["membership"] = rep.to_dict()
        ok = ok and rep.violations == 0
    summary["line"] = f"uds-cover stages={len(sums)} stage_ratio={ratio} premeasure(k={args.k})={summary['premeasure_k']}"
    out.summary = summary
    return ok


def cmd_selftest(args, out: Output) -> bool:
    r = args.rank
    G = GroupStructure.free_group(r)
    rng = np.random.default_rng(args.seed)
    n = args.samples
    results = {}

    def record(name, ok, worst):
        results[name] = bool(ok)
        out.add(name, int(bool(ok)), float(worst))

    X = [G.random_point(rng) for _ in range(3 * n)]
    worst = 0.0
    for x, y, z in zip(X[0::3], X[1::3], X[2::3]):
        a, b = ((x * y) * z).coords, (x * (y * z)).coords
        worst = max(worst, float(np.abs(a - b).max() / max(1.0, np.abs(a).max())))
    record("associativity", worst <= 1e-9, worst)

    worst = 0.0
    for x, y in zip(X[0::2], X[1::2]):
        lam = rng.uniform(0.1, 3.0)
        a, b = dilate(lam, x * y).coords, (dilate(lam, x) * dilate(lam, y)).coords
        worst = max(worst, float(np.abs(a - b).max() / max(1.0, np.abs(a).max())))
    record("dilation_homomorphism", worst <= 1e-9, worst)

    worst = 0.0
    for x, y in zip(X[0::2], X[1::2]):
        F = horizontal_isometry(x)
        worst = max(worst, float(np.abs(F.apply(x * y).coords - (F.apply(x) * F.apply(y)).coords).max()))
    record("isometry_homomorphism", worst <= 1e-9, worst)

    bad = 0
    for _ in range(n):
        bad += not synthesize_curve(_random_aligned(G, rng)).certificate()["ok"]
    record("synthesis_certificate", bad == 0, bad)

    P = G.num_pairs
    bad = 0
    for _ in range(max(1, n // 10)):
        eta = rng.uniform(0.1, 2.0)
        d = rng.uniform(0.1, 0.99) * delta_max(eta, P)
        rr = rng.uniform(0.01, 0.99) * d
        u = G.random_point(rng)
        u = dilate(rng.uniform(0.0, 1.0) / koranyi(u), u)
        a = rng.normal(size=r)
        c = perturbed_line(G.random_point(rng), u, HorizontalVector(a / np.linalg.norm(a)), PerturbationParams(eta, d, rr, P)).certificate()
        bad += not (c["ok_1"] and c["ok_2"] and c["ok_3"] and c["ok_4"])
    record("perturbed_line", bad == 0, bad)

    worst = 0.0
    for _ in range(max(1, n // 10)):
        A = rng.uniform(0.01, 1.0)
        g, h, c = random_curve_pair(G, 2.0, A, rng)
        worst = max(worst, deviation_check(g, h, 2.0, A, c).worst_ratio)
    record("deviation", worst <= 1.0, worst)

    if r >= 3:
        C = rng.normal(size=(1, P))
        Fq = build_quotient(GroupStructure(r, C))
        worst = 0.0
        for x, y in zip(X[0::2], X[1::2]):
            worst = max(worst, float(np.abs(Fq.apply(x * y).coords - (Fq.apply(x) * Fq.apply(y)).coords).max()))
        record("quotient_homomorphism", worst <= 1e-9, worst)

    b = cc_bracket(G.identity(), G.point(horizontal=np.eye(r)[0] * 0.7), _budget(args))
    record("horizontal_line_distance", abs(b.upper - 0.7) <= 1e-12 and abs(b.lower - 0.7) <= 1e-12, b.upper - b.lower)

    failed = [k for k, v in results.items() if not v]
    out.summary = {"checks": results, "line": f"selftest rank={r} seed={args.seed} passed={len(results) - len(failed)}/{len(results)}"}
    return not failed


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carnot-uds", description="Step-2 Carnot group experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, group=True):
        if group:
            p.add_argument("--rank", type=int, default=2)
            p.add_argument("--structure", help="structure constants JSON file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--budget", help='optimizer budget JSON, e.g. {"starts": 16, "segments": 8}')
        p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
        p.add_argument("--out", help="CSV path; a .json sidecar is written next to it")
        p.add_argument("--config", help="JSON file of default option values")

    p = sub.add_parser("dist", help="bracket the CC distance")
    common(p)
    p.add_argument("--to", required=True, help="target coordinates, comma separated")
    p.add_argument("--from", dest="from_", default=None, help="source coordinates (default identity)")
    p.set_defaults(func=cmd_dist, columns=["lower", "upper", "lower_method", "upper_method", "segments", "converged", "endpoint_error"])

    p = sub.add_parser("synth", help="explicit curve synthesis with certificate")
    common(p)
    p.add_argument("--to", default=None, help="target coordinates (aligned by an isometry first)")
    p.add_argument("--count", type=int, default=100, help="random targets when --to is absent")
    p.set_defaults(func=cmd_synth, columns=["target", "endpoint_error", "lipschitz", "lip_bound", "max_deviation", "deviation_bound", "ok"])

    p = sub.add_parser("diff-scan", help="Pansu difference quotients of the distance")
    common(p)
    p.add_argument("--at", default=None, help="horizontal base point (default exp(X_1))")
    p.add_argument("--steps", default="0.1,0.05,0.025,0.0125")
    p.add_argument("--shell", type=int, default=64)
    p.set_defaults(func=cmd_diff_scan, columns=["t", "residual_vs_differential", "residual_vs_fit"])

    p = sub.add_parser("engel-scan", help="cube-root growth along the abnormal direction")
    common(p, group=False)
    p.add_argument("--zeta", default="1e-4..1e-2", help="range a..b (log spaced) or comma list")
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--segments", type=int, default=24)
    p.add_argument("--max-segments", type=int, default=96)
    p.set_defaults(func=cmd_engel_scan, columns=["zeta", "lower", "upper", "D", "fitted_slope"])

    p = sub.add_parser("uds-cover", help="tube covers and stage premeasure sums")
    common(p)
    p.add_argument("--lines-file", default=None, help="JSON list of {start, direction, length}")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--r-exp", type=float, default=2.0)
    p.add_argument("--stage", type=int, default=4, help="last stage index")
    p.add_argument("--samples", type=int, default=0, help="tube samples for ball membership")
    p.set_defaults(func=cmd_uds_cover, columns=["stage", "sum_exact", "sum", "ratio_to_previous"])

    p = sub.add_parser("selftest", help="quick property suite")
    common(p)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_selftest, columns=["check", "ok", "worst"])
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    if "--config" not in argv:
        return
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise UsageError("--config needs a path")
    cfg = json.loads(Path(argv[i + 1]).read_text())
    cmd = next((a for a in argv if not a.startswith("-")), None)
    for action in parser._subparsers._group_actions:  # only the subcommand action lives here
        if cmd in action.choices:
            action.choices[cmd].set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})


def main(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required (dist, synth, diff-scan, engel-scan, uds-cover, selftest)")
        out = Output(args.columns)
        del args.columns
        ok = args.func(args, out)
    except UsageError as exc:
        stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except (CarnotError, ValueError, OSError, json.JSONDecodeError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    _emit(args, out, stdout)
    line = out.summary.get("line", args.command) + "\n"
    (stdout if args.out else stderr).write(line)
    if not ok:
        stderr.write("certificate violation:\n" + json.dumps(out.summary, indent=2, default=str) + "\n")
        return EXIT_VIOLATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
