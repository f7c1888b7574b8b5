"""Command line interface: ``deeplinear {run,gen-data,svm,check,plot}``.

Exit codes: 0 success, 1 runtime or assumption failure, 2 usage or
configuration error. Data files never contain timestamps; metadata lines
start with ``#``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, DeepLinearError, SeparabilityError
from .experiments import (
    SCENARIO_KEYS,
    ScenarioError,
    gen_separable_blobs,
    gen_two_circles,
    load_dataset,
    load_scenario,
    load_trajectory,
    run_scenario,
    save_dataset,
)
from .geometry import MarginCertificate, spread_alpha, svm_solve, verify_certificate

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"deeplinear: {msg}", file=sys.stderr)


# ----------------------------------------------------------------------- run


def _parse_set(pairs: list[str]) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise UsageError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_run(args) -> int:
    path = Path(args.scenario)
    if not path.is_file():
        raise UsageError(f"scenario file not found: {path}")
    overrides = _parse_set(args.set or [])
    flag_map = {
        "seed": "init.seed",
        "depth": "model.depth",
        "loss": "model.loss",
        "mode": "mode",
        "max_steps": "stop.max_steps",
        "risk_floor": "stop.risk_floor",
        "out": "out",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr)
        if val is not None:
            overrides[key] = str(val)
    try:
        scenario = load_scenario(path).with_overrides(overrides)
    except ScenarioError as exc:
        raise UsageError(str(exc)) from None
    result = run_scenario(scenario)
    for k, v in result.summary().items():
        print(f"{k} = {v}")
    print(f"trajectory = {result.trajectory_path}")
    return EXIT_OK


# ------------------------------------------------------------------ gen-data


def cmd_gen_data(args) -> int:
    if args.generator == "blobs":
        data, _ = gen_separable_blobs(args.n, args.d, args.margin, args.seed, spanning=not args.any_support)
    else:
        data = gen_two_circles(args.n, args.separation, args.seed, args.radius)
    save_dataset(args.output, data)
    print(f"wrote {data.n} points in R^{data.d} to {args.output}")
    return EXIT_OK


# ----------------------------------------------------------------- svm/check


def _cert_to_json(cert: MarginCertificate) -> dict:
    return {
        "u_bar": [float(v) for v in cert.u_bar],
        "gamma": float(cert.gamma),
        "support": list(cert.support),
        "duals": [float(v) for v in cert.duals],
        "spread": None if cert.spread is None else float(cert.spread),
    }


def _cert_from_json(obj: dict) -> MarginCertificate:
    try:
        return MarginCertificate(
            np.asarray(obj["u_bar"], dtype=float),
            float(obj["gamma"]),
            tuple(int(i) for i in obj["support"]),
            np.asarray(obj["duals"], dtype=float),
            obj.get("spread"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed certificate: {exc}") from None


def _load_data(path: str):
    if not Path(path).is_file():
        raise UsageError(f"dataset file not found: {path}")
    return load_dataset(path)


def cmd_svm(args) -> int:
    data = _load_data(args.dataset)
    cert = svm_solve(data)
    check = verify_certificate(data, cert)
    if not check:
        _err(f"certificate failed verification: {check}")
        return EXIT_RUNTIME
    if args.spread:
        cert = cert.with_spread(spread_alpha(data, cert))
    print("u_bar = " + " ".join(f"{v:.12g}" for v in cert.u_bar))
    print(f"gamma = {cert.gamma:.12g}")
    print("support = " + " ".join(str(i) for i in cert.support))
    print("alpha = " + " ".join(f"{v:.12g}" for v in cert.duals))
    if cert.spread is not None:
        print(f"spread = {cert.spread:.12g}")
    out = Path(args.output) if args.output else Path(args.dataset).with_suffix(".cert.json")
    out.write_text(json.dumps(_cert_to_json(cert), indent=2) + "\n")
    print(f"certificate = {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    data = _load_data(args.dataset)
    path = Path(args.certificate)
    if not path.is_file():
        raise UsageError(f"certificate file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    cert = _cert_from_json(obj)
    if cert.u_bar.shape != (data.d,):
        _err(f"certificate has dimension {cert.u_bar.size}, dataset has {data.d}")
        return EXIT_RUNTIME
    check = verify_certificate(data, cert, tol=args.tol)
    for name in ("primal", "slackness", "stationarity", "unit"):
        print(f"{name} = {getattr(check, name):.3e}")
    print("PASS" if check else "FAIL")
    return EXIT_OK if check else EXIT_RUNTIME


# ---------------------------------------------------------------------- plot

_W, _H = 640, 480
_PANEL = ((60, 20, 560, 190), (60, 260, 560, 190))  # x, y, width, height
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _axis_range(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    return lo, hi


def _series(xs, ys, x_rng, y_rng, panel, color) -> list[str]:
    px, py, pw, ph = panel
    out, pts = [], []
    segs = []
    for x, y in zip(xs, ys):
        if not (math.isfinite(x) and math.isfinite(y)):
            if pts:
                segs.append(pts)
            pts = []
            continue
        sx = px + (x - x_rng[0]) / (x_rng[1] - x_rng[0]) * pw
        sy = py + ph - (y - y_rng[0]) / (y_rng[1] - y_rng[0]) * ph
        pts.append((sx, sy))
    if pts:
        segs.append(pts)
    for seg in segs:
        if len(seg) == 1:
            sx, sy = seg[0]
            out.append(f'<circle cx="{_f(sx)}" cy="{_f(sy)}" r="3" fill="{color}"/>')
        else:
            coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in seg)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
    return out


def _frame(panel, x_rng, y_rng, title: str, y_fmt) -> list[str]:
    px, py, pw, ph = panel
    out = [
        f'<rect x="{px}" y="{py}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
        f'<text x="{px + pw / 2:.1f}" y="{py - 6}" text-anchor="middle" font-size="12">{title}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = y_rng[0] + frac * (y_rng[1] - y_rng[0])
        yy = py + ph - frac * ph
        out.append(f'<text x="{px - 4}" y="{_f(yy + 4)}" text-anchor="end" font-size="10">{y_fmt(yv)}</text>')
        xv = x_rng[0] + frac * (x_rng[1] - x_rng[0])
        xx = px + frac * pw
        out.append(f'<text x="{_f(xx)}" y="{py + ph + 14}" text-anchor="middle" font-size="10">{xv:.6g}</text>')
    return out


def render_svg(table) -> str:
    """Risk (log scale) and per-layer alignment ratios against the step index."""
    steps = table.column("step")
    risk = table.column("risk")
    log_risk = np.where(risk > 0, np.log10(np.where(risk > 0, risk, 1.0)), np.nan)
    x_rng = _axis_range(float(steps.min()), float(steps.max()))
    finite = log_risk[np.isfinite(log_risk)]
    r_rng = _axis_range(float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    ratio_cols = [c for c in table.columns if c.startswith("ratio_")]
    ratios = [table.column(c) for c in ratio_cols]
    vals = np.concatenate([r[np.isfinite(r)] for r in ratios]) if ratios else np.array([])
    a_lo = float(vals.min()) if vals.size else 0.0
    a_rng = _axis_range(min(a_lo, 1.0), 1.0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="#fff"/>',
    ]
    parts += _frame(_PANEL[0], x_rng, r_rng, "risk (log scale)", lambda v: f"{10.0**v:.3g}")
    parts += _series(steps, log_risk, x_rng, r_rng, _PANEL[0], "#000")
    parts += _frame(_PANEL[1], x_rng, a_rng, "||W_k||_2 / ||W_k||_F", lambda v: f"{v:.3f}")
    for i, (name, col) in enumerate(zip(ratio_cols, ratios)):
        color = _COLORS[i % len(_COLORS)]
        parts += _series(steps, col, x_rng, a_rng, _PANEL[1], color)
        lx = _PANEL[1][0] + 10 + 70 * i
        parts.append(f'<text x="{lx}" y="{_H - 10}" font-size="10" fill="{color}">{name}</text>')
    parts.append(f'<text x="{_W / 2:.1f}" y="{_H - 24}" text-anchor="middle" font-size="11">step</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    path = Path(args.trajectory)
    if not path.is_file():
        raise UsageError(f"trajectory file not found: {path}")
    table = load_trajectory(path)
    if table.rows.shape[0] == 0:
        _err(f"{path}: trajectory has no rows")
        return EXIT_RUNTIME
    out = Path(args.output) if args.output else path.with_suffix(".svg")
    out.write_text(render_svg(table))
    print(f"plot = {out}")
    return EXIT_OK


# -------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _err(message)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deeplinear", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario file and write its trajectory")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, help="initialization seed (init.seed)")
    run.add_argument("--depth", type=int)
    run.add_argument("--loss", choices=("exp", "log"))
    run.add_argument("--mode", choices=("flow", "gd"))
    run.add_argument("--stop.max-steps", dest="max_steps", type=int)
    run.add_argument("--stop.risk-floor", dest="risk_floor", type=float)
    run.add_argument("--out", help="output directory")
    run.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override any scenario key; known keys: " + ", ".join(SCENARIO_KEYS),
    )
    run.set_defaults(func=cmd_run)

    gen = sub.add_parser("gen-data", help="write a synthetic separable dataset")
    gen.add_argument("generator", choices=("blobs", "circles"))
    gen.add_argument("output")
    gen.add_argument("--n", type=int, default=20)
    gen.add_argument("--d", type=int, default=3)
    gen.add_argument("--margin", type=float, default=0.2)
    gen.add_argument("--separation", type=float, default=1.0)
    gen.add_argument("--radius", type=float, default=0.25)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument(
        "--any-support",
        action="store_true",
        help="blobs: keep the first draw even if its support vectors do not span R^d",
    )
    gen.set_defaults(func=cmd_gen_data)

    svm = sub.add_parser("svm", help="solve and certify the hard-margin SVM of a dataset")
    svm.add_argument("dataset")
    svm.add_argument("--output", help="certificate path (default: the dataset path with suffix .cert.json)")
    svm.add_argument("--spread", action="store_true", help="also compute the spread constant")
    svm.set_defaults(func=cmd_svm)

    chk = sub.add_parser("check", help="verify a certificate against a dataset")
    chk.add_argument("dataset")
    chk.add_argument("certificate")
    chk.add_argument("--tol", type=float, default=1e-6)
    chk.set_defaults(func=cmd_check)

    plot = sub.add_parser("plot", help="render a trajectory CSV as SVG")
    plot.add_argument("trajectory")
    plot.add_argument("output", nargs="?")
    plot.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ScenarioError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _err(f"file not found: {exc.filename}")
        return EXIT_USAGE
    except SeparabilityError as exc:
        _err(f"non-separable: {exc}")
        return EXIT_RUNTIME
    except (DatasetFormatError, DeepLinearError, ValueError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
