"""Synthetic datasets, scenario files and trajectory persistence.

A scenario is a flat ``key = value`` text file (see :data:`SCENARIO_KEYS`).
``run_scenario`` generates or loads the data, certifies its max-margin
direction, runs gradient flow or descent and streams one CSV row per
snapshot, so a failed run still leaves its partial trajectory on disk.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import AlignmentReport, alignment_report, compute_D
from .dynamics import Trajectory, TrajectoryRecord, flow_run, gd_run
from .errors import DatasetFormatError, DeepLinearError
from .geometry import MarginCertificate, svm_solve
from .model import (
    Dataset,
    NetworkParams,
    get_loss,
    init_balanced,
    init_random,
    init_zero_first_layer,
    orient_init,
)

__all__ = [
    "SCENARIO_KEYS",
    "Scenario",
    "ScenarioError",
    "ScenarioResult",
    "builtin_scenarios",
    "gen_separable_blobs",
    "gen_trap",
    "gen_two_circles",
    "load_dataset",
    "load_scenario",
    "load_trajectory",
    "make_dataset",
    "make_init",
    "run_scenario",
    "save_dataset",
    "trajectory_header",
]


class ScenarioError(DeepLinearError, ValueError):
    """A scenario file or override is malformed."""


# ---------------------------------------------------------------- generators


def gen_separable_blobs(
    n: int,
    d: int,
    margin: float,
    seed: int,
    max_tries: int = 1000,
    spanning: bool = True,
):
    """Two Gaussian blobs separated along a hidden unit direction.

    Labels alternate in a shuffled order; each point is drawn around
    ``y (1 + margin)/2 * u`` and kept only if it lies in the unit ball and
    has margin at least ``margin`` along the hidden direction ``u``.

    Sampled data has at most ``d`` support vectors almost surely, but often
    fewer. With ``spanning=True`` whole data sets are redrawn (from the same
    stream) until the support vectors span ``R^d``, which the directional
    convergence results need; the result then has exactly ``d`` of them.

    Returns
    -------
    (Dataset, numpy.ndarray)
        The data and the hidden direction.
    """
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must lie in (0, 1), got {margin}")
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    center = 0.5 * (1.0 + margin)
    std = 0.5 / math.sqrt(d)
    for _ in range(max_tries):
        labels = rng.permutation(np.where(np.arange(n) % 2 == 0, 1.0, -1.0))
        x = np.empty((n, d))
        for i, y in enumerate(labels):
            for _ in range(max_tries):
                p = y * center * u + std * rng.standard_normal(d)
                if np.linalg.norm(p) <= 1.0 and y * (p @ u) >= margin:
                    x[i] = p
                    break
            else:
                raise ValueError(f"could not place point {i} with margin {margin} in {max_tries} tries")
        data = Dataset(x, labels)
        if not spanning:
            return data, u
        support = svm_solve(data).support
        if np.linalg.matrix_rank(data.z[list(support)], tol=1e-9) == d:
            return data, u
    raise ValueError(
        f"no data set with spanning support vectors in {max_tries} tries; "
        "use spanning=False to accept fewer than d support vectors"
    )


def gen_two_circles(
    n: int,
    separation: float,
    seed: int,
    radius: float = 0.25,
    jitter: float = 0.02,
    symmetric: bool = False,
) -> Dataset:
    """Two circles in the plane centered at ``+-(separation/2) e_1``.

    With ``symmetric=True`` the angles are evenly spaced, mirrored about
    the center line and not jittered, so the max-margin direction is
    exactly ``e_1``.
    """
    if separation <= 0:
        raise ValueError("separation must be positive")
    half = separation / 2.0
    if half - radius * (1 + jitter) <= 0:
        raise ValueError("circles overlap the origin; increase separation or shrink radius")
    scale = min(1.0, 1.0 / (half + radius * (1 + jitter)))
    n_pos = (n + 1) // 2
    n_neg = n - n_pos
    rng = np.random.default_rng(seed)
    pts, ys = [], []
    for sign, count in ((1.0, n_pos), (-1.0, n_neg)):
        if symmetric:
            ang = np.pi * (2 * np.arange(count) + 1) / count
            rad = np.full(count, radius)
        else:
            ang = rng.uniform(0.0, 2 * np.pi, count)
            rad = radius * (1.0 + jitter * rng.uniform(-1.0, 1.0, count))
        c = np.array([sign * half, 0.0])
        pts.append(c + rad[:, None] * np.column_stack([np.cos(ang), np.sin(ang)]))
        ys.append(np.full(count, sign))
    x = np.vstack(pts) * scale
    return Dataset(x, np.concatenate(ys))


def gen_trap() -> Dataset:
    """The single point ``x = 1, y = 1`` used by the ``w_1 = -w_2`` trap."""
    return Dataset(np.ones((1, 1)), np.ones(1))


# ------------------------------------------------------------------ datasets


def save_dataset(path, data: Dataset) -> None:
    """Write ``y,x1,...,xd`` rows with round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x{j + 1}" for j in range(data.d)])
        for y, row in zip(data.y, data.x):
            w.writerow([repr(int(y))] + [repr(float(v)) for v in row])


def load_dataset(path) -> Dataset:
    """Parse a dataset CSV; every error names the offending line."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and not r[0].startswith("#")]
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    _, header = rows[0]
    if header[0].strip() != "y" or len(header) < 2:
        raise DatasetFormatError(f"{path}:{rows[0][0]}: header must be y,x1,...,xd")
    d = len(header) - 1
    xs, ys = [], []
    for line, r in rows[1:]:
        if len(r) != d + 1:
            raise DatasetFormatError(f"{path}:{line}: expected {d + 1} fields, got {len(r)}")
        try:
            vals = [float(v) for v in r]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{line}: {exc}") from None
        if vals[0] not in (-1.0, 1.0):
            raise DatasetFormatError(f"{path}:{line}: label {r[0]!r} not in {{-1, +1}}")
        x = np.array(vals[1:])
        if not np.all(np.isfinite(x)):
            raise DatasetFormatError(f"{path}:{line}: non-finite feature")
        if np.linalg.norm(x) > 1.0 + 1e-12:
            raise DatasetFormatError(f"{path}:{line}: ||x|| = {np.linalg.norm(x):.6g} exceeds 1")
        ys.append(vals[0])
        xs.append(x)
    if not xs:
        raise DatasetFormatError(f"{path}: no data rows")
    try:
        return Dataset(np.array(xs), np.array(ys))
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None


# ----------------------------------------------------------------- scenarios

# key -> (type, default); hyphens in keys are read as underscores
SCENARIO_KEYS: dict[str, tuple[type, object]] = {
    "name": (str, "run"),
    "data.generator": (str, "blobs"),  # blobs | circles | trap | file
    "data.path": (str, ""),
    "data.n": (int, 20),
    "data.d": (int, 3),
    "data.margin": (float, 0.2),
    "data.separation": (float, 1.0),
    "data.radius": (float, 0.25),
    "data.symmetric": (bool, False),
    "data.seed": (int, 0),
    "model.depth": (int, 3),
    "model.width": (int, 0),  # 0 means the input dimension
    "model.loss": (str, "log"),
    "init.kind": (str, "random"),  # random | balanced | zero_first | trap
    "init.scale": (float, 0.1),
    "init.seed": (int, 0),
    "mode": (str, "gd"),  # gd | flow
    "stop.max_steps": (int, 1_000_000),
    "stop.risk_floor": (float, 1e-3),
    "stop.t_end": (float, 1e5),
    "flow.tol": (float, 1e-8),
    "gd.fixed_eta": (float, 0.0),
    "negative_test": (bool, False),
    "out": (str, "runs"),
}

_GENERATORS = ("blobs", "circles", "trap", "file")
_INITS = ("random", "balanced", "zero_first", "trap")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


@dataclass(frozen=True)
class Scenario:
    """Validated scenario settings, keyed as in the scenario file."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {k: default for k, (_, default) in SCENARIO_KEYS.items()}
        for k, v in self.values.items():
            k = _normalize_key(k)
            if k not in SCENARIO_KEYS:
                raise ScenarioError(f"unknown scenario key {k!r}")
            typ = SCENARIO_KEYS[k][0]
            try:
                if isinstance(v, str):
                    v = _parse_bool(v) if typ is bool else typ(v.strip())
                else:
                    v = typ(v)
            except ValueError as exc:
                raise ScenarioError(f"bad value for {k}: {exc}") from None
            full[k] = v
        object.__setattr__(self, "values", full)
        self._validate()

    def __getitem__(self, key: str):
        return self.values[_normalize_key(key)]

    def replace(self, **overrides) -> "Scenario":
        """Copy with keys overridden; dots may be written as ``__``."""
        return self.with_overrides({k.replace("__", "."): v for k, v in overrides.items()})

    def with_overrides(self, pairs: dict) -> "Scenario":
        merged = dict(self.values)
        for k, v in pairs.items():
            k = _normalize_key(k)
            if k not in SCENARIO_KEYS:
                raise ScenarioError(f"unknown scenario key {k!r}")
            merged[k] = v
        return Scenario(merged)

    def _validate(self) -> None:
        v = self.values
        if v["data.generator"] not in _GENERATORS:
            raise ScenarioError(f"unknown generator {v['data.generator']!r}; choose from {_GENERATORS}")
        if v["data.generator"] == "file" and not v["data.path"]:
            raise ScenarioError("generator 'file' needs data.path")
        if v["init.kind"] not in _INITS:
            raise ScenarioError(f"unknown init kind {v['init.kind']!r}; choose from {_INITS}")
        if v["mode"] not in ("gd", "flow"):
            raise ScenarioError(f"mode must be gd or flow, got {v['mode']!r}")
        if v["model.loss"] not in ("exp", "log"):
            raise ScenarioError(f"loss must be exp or log, got {v['model.loss']!r}")
        if v["model.depth"] < 1:
            raise ScenarioError("model.depth must be at least 1")
        if v["model.width"] < 0:
            raise ScenarioError("model.width must be non-negative")
        if v["init.kind"] == "trap" and v["model.depth"] != 2:
            raise ScenarioError("the trap initialization needs model.depth = 2")
        if v["init.scale"] <= 0 or v["flow.tol"] <= 0 or v["stop.max_steps"] < 0:
            raise ScenarioError("init.scale and flow.tol must be positive, stop.max_steps non-negative")

    def to_text(self) -> str:
        return "".join(f"{k} = {_format_value(self.values[k])}\n" for k in SCENARIO_KEYS)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_scenario(path) -> Scenario:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    vals = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ScenarioError(f"{path}:{line_no}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            if _normalize_key(k) not in SCENARIO_KEYS:
                raise ScenarioError(f"{path}:{line_no}: unknown key {k!r}")
            vals[k] = v
    try:
        return Scenario(vals)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def builtin_scenarios() -> dict[str, Scenario]:
    """Reference scenarios behind the shipped ``figs/*.scenario`` files."""
    blobs = {"data.generator": "blobs", "data.n": 20, "data.d": 3, "data.margin": 0.2}
    return {
        "fig1-deep": Scenario({**blobs, "name": "fig1-deep", "model.depth": 4}),
        "fig1-shallow": Scenario({**blobs, "name": "fig1-shallow", "model.depth": 1}),
        "fig2": Scenario(
            {
                "name": "fig2",
                "data.generator": "circles",
                "data.n": 40,
                "data.separation": 1.0,
                "model.depth": 3,
                "mode": "flow",
                "stop.t_end": 1e4,
            }
        ),
        "trap": Scenario(
            {
                "name": "trap",
                "data.generator": "trap",
                "model.depth": 2,
                "model.width": 3,
                "model.loss": "exp",
                "init.kind": "trap",
                "init.scale": 0.5,
                "gd.fixed_eta": 0.01,
                "stop.max_steps": 10_000,
                "stop.risk_floor": 0.0,
                "negative_test": True,
            }
        ),
    }


def make_dataset(s: Scenario) -> Dataset:
    gen = s["data.generator"]
    if gen == "blobs":
        return gen_separable_blobs(s["data.n"], s["data.d"], s["data.margin"], s["data.seed"])[0]
    if gen == "circles":
        return gen_two_circles(
            s["data.n"], s["data.separation"], s["data.seed"], s["data.radius"], symmetric=s["data.symmetric"]
        )
    if gen == "trap":
        return gen_trap()
    return load_dataset(s["data.path"])


def scenario_dims(s: Scenario, d: int) -> tuple[int, ...]:
    width = s["model.width"] or d
    return (d,) + (width,) * (s["model.depth"] - 1) + (1,)


def make_init(s: Scenario, data: Dataset) -> NetworkParams:
    dims = scenario_dims(s, data.d)
    rng = np.random.default_rng(s["init.seed"])
    kind = s["init.kind"]
    scale = s["init.scale"]
    if kind == "trap":
        v = rng.standard_normal(dims[1])
        v *= scale / np.linalg.norm(v)
        # W_1 is a column and W_2 = -W_1^T, so the product is -||v||^2
        return NetworkParams((v.reshape(-1, 1), -v.reshape(1, -1)))
    if kind == "balanced":
        w0 = init_balanced(dims, scale, rng)
    elif kind == "zero_first":
        return init_zero_first_layer(dims, rng, scale)
    else:
        w0 = init_random(dims, rng, scale)
    return orient_init(w0, data, get_loss(s["model.loss"]))


# --------------------------------------------------------------- trajectory


def trajectory_header(depth: int) -> list[str]:
    cols = ["step", "time", "risk", "eta", "radius", "budget", "conservation_residual"]
    for k in range(1, depth + 1):
        cols += [f"fro_{k}", f"spec_{k}", f"ratio_{k}"]
    cols += [f"adj_{k}" for k in range(1, depth)]
    cols += ["cos_v1", "cos_ubar", "cos_v1_ubar", "margin_obj", "perp_mass"]
    return cols


def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def _row(rec: TrajectoryRecord, rep: AlignmentReport) -> list[str]:
    vals = [str(rec.step), _fmt(rec.time), _fmt(rec.risk), _fmt(rec.eta), _fmt(rec.radius)]
    vals += [_fmt(rec.budget), _fmt(rec.conservation_residual)]
    for f, s, r in zip(rep.fro, rep.spec, rep.ratio):
        vals += [_fmt(f), _fmt(s), _fmt(r)]
    vals += [_fmt(a) for a in rep.adjacent]
    vals += [_fmt(rep.cos_v1), _fmt(rep.cos_ubar), _fmt(rep.cos_v1_ubar), _fmt(rep.margin_obj), _fmt(rep.perp_mass)]
    return vals


@dataclass
class TrajectoryTable:
    """A trajectory CSV read back: ``#`` metadata, header and numeric rows."""

    meta: dict[str, str]
    columns: list[str]
    rows: np.ndarray  # shape (n_rows, n_columns)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


def load_trajectory(path) -> TrajectoryTable:
    """Parse a trajectory CSV written by :func:`run_scenario`.

    Raises
    ------
    DatasetFormatError
        On a missing header, a row of the wrong width or a non-numeric
        field; the message carries the file line number.
    """
    path = Path(path)
    meta: dict[str, str] = {}
    columns: list[str] | None = None
    rows = []
    with open(path, newline="") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = (x.strip() for x in body.split("=", 1))
                    meta[k] = v
                continue
            fields = next(csv.reader([line]))
            if columns is None:
                if fields[:3] != ["step", "time", "risk"]:
                    raise DatasetFormatError(f"{path}:{line_no}: not a trajectory header")
                columns = fields
                continue
            if len(fields) != len(columns):
                raise DatasetFormatError(
                    f"{path}:{line_no}: row {len(rows) + 1} has {len(fields)} fields, expected {len(columns)}"
                )
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{line_no}: row {len(rows) + 1}: {exc}") from None
    if columns is None:
        raise DatasetFormatError(f"{path}: no trajectory header")
    arr = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    return TrajectoryTable(meta, columns, arr)


@dataclass
class ScenarioResult:
    scenario: Scenario
    data: Dataset
    cert: MarginCertificate
    trajectory: Trajectory
    report: AlignmentReport
    reports: list[AlignmentReport]
    min_bound_slack: float
    D: float
    trajectory_path: Path | None = None
    summary_path: Path | None = None

    def summary(self) -> dict:
        rep = self.report
        fin = self.trajectory.final
        out = {
            "name": self.scenario["name"],
            "mode": self.trajectory.mode,
            "status": self.trajectory.status,
            "steps": self.trajectory.steps,
            "time": fin.time,
            "risk0": self.trajectory.risk0,
            "risk": fin.risk,
            "gamma": self.cert.gamma,
            "D": self.D,
            "min_ratio": rep.min_ratio(),
            "min_adjacent": rep.min_adjacent(),
            "cos_v1": rep.cos_v1,
            "cos_ubar": rep.cos_ubar,
            "cos_v1_ubar": rep.cos_v1_ubar,
            "margin_obj": rep.margin_obj,
            "perp_mass": rep.perp_mass,
            "min_bound_slack": self.min_bound_slack,
        }
        if self.trajectory.mode == "flow":
            out["max_conservation"] = self.trajectory.max_conservation
        else:
            out["max_drift"] = self.trajectory.max_drift
            out["max_risk_increase"] = self.trajectory.max_risk_increase
        return out


def run_scenario(s: Scenario, out_dir: str | os.PathLike | None = None, *, write: bool = True) -> ScenarioResult:
    """Run ``s`` and stream its trajectory to ``<out>/<name>.csv``.

    The CSV starts with ``#`` metadata lines (the scenario itself) and is
    flushed after every row; on failure a ``# status = failed`` line is
    appended and the error propagates.
    """
    data = make_dataset(s)
    cert = svm_solve(data)
    loss = get_loss(s["model.loss"])
    w0 = make_init(s, data)
    D = compute_D(w0)
    mode = s["mode"]
    diag_mode = "flow" if mode == "flow" else "descent"
    reports: list[AlignmentReport] = []
    slack = [math.inf]
    risk0 = [math.nan]

    traj_path = summary_path = None
    fh = writer = None
    if write:
        out = Path(out_dir if out_dir is not None else s["out"])
        out.mkdir(parents=True, exist_ok=True)
        traj_path = out / f"{s['name']}.csv"
        summary_path = out / f"{s['name']}.summary"
        fh = open(traj_path, "w", newline="")
        for line in s.to_text().splitlines():
            fh.write(f"# {line}\n")
        fh.write(f"# gamma = {cert.gamma!r}\n# D = {D!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trajectory_header(w0.depth))

    def on_record(rec: TrajectoryRecord) -> None:
        if math.isnan(risk0[0]):
            risk0[0] = rec.risk
        rep = alignment_report(rec.params, cert=cert, data=data, w0=w0, mode=diag_mode, risk0=risk0[0], D=D)
        reports.append(rep)
        if rep.bounds is not None:
            slack[0] = min(slack[0], rep.bounds.min_slack)
        if writer is not None:
            writer.writerow(_row(rec, rep))
            fh.flush()

    negative = s["negative_test"]
    try:
        if mode == "flow":
            traj = flow_run(
                w0,
                data,
                loss,
                s["stop.t_end"],
                s["flow.tol"],
                risk_floor=s["stop.risk_floor"],
                max_steps=s["stop.max_steps"],
                require_assumption2=not negative,
                on_record=on_record,
            )
        else:
            fixed = s["gd.fixed_eta"] or None
            traj = gd_run(
                w0,
                data,
                loss,
                s["stop.max_steps"],
                s["stop.risk_floor"],
                fixed_eta=fixed,
                require_assumption2=not negative,
                strict=not negative,
                on_record=on_record,
            )
    except Exception as exc:
        if fh is not None:
            fh.write(f"# status = failed: {type(exc).__name__}: {exc}\n")
            fh.close()
        raise
    if fh is not None:
        fh.write(f"# status = {traj.status}\n")
        fh.close()

    result = ScenarioResult(s, data, cert, traj, reports[-1], reports, slack[0], D, traj_path, summary_path)
    if summary_path is not None:
        with open(summary_path, "w") as sf:
            for k, v in result.summary().items():
                sf.write(f"{k} = {_format_value(v)}\n")
    return result
