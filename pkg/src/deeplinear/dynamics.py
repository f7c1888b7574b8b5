"""Gradient descent with the adaptive radius schedule, and gradient flow.

Gradient descent uses ``eta_t = min(1/beta(R_t), 1)`` where ``beta(R)`` is the
smoothness constant of the risk on ``B(R)`` and the integer radius ``R_t`` is
raised whenever an iterate leaves ``B(R_t - 1)``. Gradient flow is integrated
with an embedded Dormand-Prince 5(4) pair; the conserved quantities
``W_{k+1}^T W_{k+1} - W_k W_k^T`` double as an accuracy gauge.

Long descent runs go through the compiled kernel in :mod:`.kernels`, which
advances many steps at a time and tracks the per-step invariants (largest
risk increase, norm-gap drift, step budget) without returning to Python.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import kernels
from .errors import AssumptionViolation, InvariantViolation, NumericalFailure, StiffnessError
from .model import Dataset, LossSpec, NetworkParams, check_assumption2, full_gradient, risk

log = logging.getLogger(__name__)

__all__ = [
    "FlowState",
    "StepSizeState",
    "Trajectory",
    "TrajectoryRecord",
    "conservation_residual",
    "conservation_reference",
    "escape_time",
    "flow_run",
    "gd_run",
    "gd_step",
    "initial_radius",
    "smoothness_constant",
    "snapshot_schedule",
    "step_state",
]

MONOTONE_SLACK = 1e-12
BUDGET_SLACK = 1e-12
DRIFT_SLACK = 1e-9


def smoothness_constant(depth: int, r: float, beta: float, g: float) -> float:
    """``2 L^2 R^(2L-2) (beta + G)``, valid for ``R >= 1``."""
    if r < 1:
        raise ValueError(f"smoothness constant needs radius >= 1, got {r}")
    return 2.0 * depth * depth * r ** (2 * depth - 2) * (beta + g)


@dataclass(frozen=True)
class StepSizeState:
    radius: float
    eta: float
    beta_r: float


def step_state(radius: float, depth: int, loss: LossSpec) -> StepSizeState:
    if not loss.smooth:
        raise AssumptionViolation(
            f"loss {loss.kind!r} has no global smoothness constants; "
            "the descent step schedule needs both beta and G"
        )
    b = smoothness_constant(depth, radius, loss.beta, loss.g)
    return StepSizeState(radius=float(radius), eta=min(1.0 / b, 1.0), beta_r=b)


def initial_radius(w0: NetworkParams) -> float:
    """``ceil(max_k ||W_k(0)||_F) + 2``, so ``W(0)`` starts strictly inside ``B(R - 1)``."""
    return float(math.ceil(float(np.max(w0.fro_norms()))) + 2)


@dataclass
class TrajectoryRecord:
    """One snapshot along a run.

    ``time`` is the flow time, or the accumulated step sizes for descent.
    ``budget`` is ``sum_t eta_t^2 ||grad||^2`` and ``budget_linear`` the
    same sum with ``eta_t`` in place of ``eta_t^2``.
    """

    step: int
    time: float
    risk: float
    params: NetworkParams = field(repr=False)
    grad_sq: float = math.nan
    eta: float = math.nan
    radius: float = math.nan
    budget: float = 0.0
    budget_linear: float = 0.0
    conservation_residual: float = math.nan


@dataclass
class Trajectory:
    mode: str
    initial: NetworkParams
    risk0: float
    records: list[TrajectoryRecord] = field(default_factory=list)
    steps: int = 0
    status: str = "running"
    max_risk_increase: float = -math.inf
    max_drift: float = 0.0
    max_conservation: float = 0.0

    @property
    def final(self) -> TrajectoryRecord:
        return self.records[-1]

    def risks(self) -> np.ndarray:
        return np.array([r.risk for r in self.records])


def snapshot_schedule(dense_until: int = 100, ratio: float = 1.2) -> Iterator[int]:
    """Step indices to record: every step below ``dense_until``, then
    geometrically spaced by ``ratio``."""
    s = 0
    while True:
        yield s
        s = s + 1 if s < dense_until else max(s + 1, int(math.ceil(s * ratio)))


def gd_step(
    w: NetworkParams, state: StepSizeState, data: Dataset, loss: LossSpec, step: int = 0
) -> tuple[NetworkParams, StepSizeState, TrajectoryRecord]:
    """One gradient descent step with the radius schedule (numpy reference path).

    The returned record describes the *new* iterate; its ``eta`` and
    ``radius`` fields are the values used for this step.
    """
    grads, gsq = full_gradient(w, data, loss)
    if not math.isfinite(gsq):
        raise NumericalFailure("non-finite gradient", {"params": w, "step": step})
    if gsq == 0.0:
        new = w
    else:
        new = NetworkParams(tuple(a - state.eta * b for a, b in zip(w.layers, grads.layers)))
    top = float(np.max(new.fro_norms()))
    radius = state.radius
    while top > radius - 1.0:
        radius += 1.0
    new_state = state if radius == state.radius else step_state(radius, w.depth, loss)
    r_new = risk(new, data, loss)
    if not math.isfinite(r_new):
        raise NumericalFailure("non-finite risk after step", {"params": w, "step": step})
    rec = TrajectoryRecord(
        step=step + 1,
        time=math.nan,  # caller owns the clock
        risk=r_new,
        params=new,
        grad_sq=gsq,
        eta=state.eta,
        radius=state.radius,
        budget=state.eta**2 * gsq,
        budget_linear=state.eta * gsq,
    )
    return new, new_state, rec


def gd_run(
    w0: NetworkParams,
    data: Dataset,
    loss: LossSpec,
    max_steps: int = 100_000,
    risk_floor: float = 1e-3,
    *,
    schedule: Iterator[int] | None = None,
    fixed_eta: float | None = None,
    require_assumption2: bool = True,
    strict: bool = True,
    on_record: Callable[[TrajectoryRecord], None] | None = None,
) -> Trajectory:
    """Gradient descent until ``risk <= risk_floor`` or ``max_steps``.

    Every step is checked inside the kernel for risk monotonicity and the
    norm-gap drift bound; the step budget ``sum eta ||grad||^2 <= 2 R(W(0))``
    is checked at every snapshot. With ``strict`` any violation raises
    :class:`InvariantViolation`.

    ``fixed_eta`` bypasses the radius schedule with a constant step; it is
    meant for negative experiments (e.g. losses without global smoothness
    constants) and disables the invariant checks.
    """
    if require_assumption2:
        chk = check_assumption2(w0, data, loss)
        if not chk:
            raise AssumptionViolation(f"initialization rejected: {chk.reason}")
    if fixed_eta is None:
        state = step_state(initial_radius(w0), w0.depth, loss)
        beta, g = loss.beta, loss.g
    else:
        if fixed_eta <= 0:
            raise ValueError("fixed_eta must be positive")
        state = StepSizeState(radius=math.inf, eta=fixed_eta, beta_r=math.nan)
        beta, g = 0.0, 0.0
        strict = False
    if loss.code < 0:
        raise ValueError("the descent kernels support the exp and log losses only")

    dims = w0.dims
    theta = w0.flat().copy()
    sq0 = w0.fro_norms() ** 2
    z = np.ascontiguousarray(data.z)
    r0 = risk(w0, data, loss)
    traj = Trajectory(mode="gd", initial=w0, risk0=r0)
    sched = schedule if schedule is not None else snapshot_schedule()
    next(sched)  # step 0 is recorded below

    _, gsq0 = full_gradient(w0, data, loss)
    first = TrajectoryRecord(0, 0.0, r0, w0, gsq0, state.eta, state.radius)
    traj.records.append(first)
    if on_record:
        on_record(first)

    step = 0
    t = 0.0
    sum1 = sum2 = 0.0
    radius = state.radius
    cur_risk = r0
    while True:
        target = min(next(sched), max_steps)
        todo = target - step
        out = kernels.gd_advance(
            theta, dims, z, loss.code, beta, g, radius, todo, risk_floor, sq0,
            fixed_eta if fixed_eta is not None else 0.0,
        )
        n_done, cur_risk, gsq, radius, eta, s1, s2, inc, drift, status, s0 = out
        step += n_done
        t += s0
        sum1 += s1
        sum2 += s2
        traj.max_risk_increase = max(traj.max_risk_increase, inc)
        traj.max_drift = max(traj.max_drift, drift)
        if status == kernels.STATUS_NONFINITE:
            traj.status = "nonfinite"
            raise NumericalFailure(
                f"non-finite risk or gradient at step {step}",
                {"step": step, "params": NetworkParams.from_flat(theta.copy(), dims), "radius": radius},
            )
        w = NetworkParams.from_flat(theta.copy(), dims)
        rec = TrajectoryRecord(
            step=step,
            time=t,
            risk=cur_risk,
            params=w,
            grad_sq=gsq,
            eta=eta,
            radius=radius,
            budget=sum2,
            budget_linear=sum1,
        )
        if n_done:
            traj.records.append(rec)
            if on_record:
                on_record(rec)
        if strict:
            _check_gd_invariants(traj, sum1, sum2, r0, step)
        if status == kernels.STATUS_FLOOR:
            traj.status = "risk_floor"
            break
        if status == kernels.STATUS_CRITICAL:
            traj.status = "critical_point"
            break
        if step >= max_steps:
            traj.status = "max_steps"
            break
    traj.steps = step
    log.debug("gd_run finished: %s after %d steps, risk %.3e", traj.status, step, cur_risk)
    return traj


def _check_gd_invariants(traj: Trajectory, sum1: float, sum2: float, r0: float, step: int) -> None:
    if traj.max_risk_increase > MONOTONE_SLACK:
        raise InvariantViolation(
            f"risk increased by {traj.max_risk_increase:.3e} (step <= {step})"
        )
    if not (sum2 <= sum1 + BUDGET_SLACK and sum1 <= 2.0 * r0 + BUDGET_SLACK):
        raise InvariantViolation(
            f"step budget violated at step {step}: sum eta^2 g^2 = {sum2:.6g}, "
            f"sum eta g^2 = {sum1:.6g}, 2 R(W0) = {2 * r0:.6g}"
        )
    if traj.max_drift > 2.0 * r0 + DRIFT_SLACK:
        raise InvariantViolation(
            f"norm-gap drift {traj.max_drift:.6g} exceeds 2 R(W0) = {2 * r0:.6g}"
        )


def conservation_reference(w: NetworkParams) -> list[np.ndarray]:
    """``W_{k+1}^T W_{k+1} - W_k W_k^T`` for each adjacent pair."""
    return [w.layers[k + 1].T @ w.layers[k + 1] - w.layers[k] @ w.layers[k].T for k in range(w.depth - 1)]


def conservation_residual(w: NetworkParams, reference: list[np.ndarray]) -> float:
    """Largest Frobenius deviation of the conserved pair matrices from ``reference``."""
    cur = conservation_reference(w)
    if not cur:
        return 0.0
    return float(max(np.linalg.norm(c - r) for c, r in zip(cur, reference)))


@dataclass
class FlowState:
    time: float
    params: NetworkParams
    conservation_reference: list[np.ndarray] = field(repr=False)


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6] + (0.0,)
_E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


_PI_BETA = 0.04
_FAC_MAX = 10.0


class _GradientField:
    def __init__(self, data: Dataset, loss: LossSpec, dims):
        self.dims = dims
        self.z = np.ascontiguousarray(data.z)
        self.data = data
        self.loss = loss
        self.evals = 0

    def __call__(self, theta: np.ndarray, out: np.ndarray) -> float:
        self.evals += 1
        if self.loss.code >= 0:
            r = kernels.risk_grad(theta, self.dims, self.z, self.loss.code, out)
        else:
            w = NetworkParams.from_flat(theta, self.dims)
            grads, _ = full_gradient(w, self.data, self.loss)
            out[:] = grads.flat()
            r = risk(w, self.data, self.loss)
        np.negative(out, out=out)
        return r


def _initial_step(f: "_GradientField", y: np.ndarray, f0: np.ndarray, tol: float) -> float:
    # Hairer, Norsett & Wanner, Solving ODEs I, section II.4
    scale = tol + tol * np.abs(y)
    d0 = float(np.sqrt(np.mean((y / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h_try = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = np.empty_like(y)
    f(y + h_try * f0, f1)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h_try
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h_try * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h_try, h1)


def flow_run(
    w0: NetworkParams,
    data: Dataset,
    loss: LossSpec,
    t_end: float,
    tol: float = 1e-8,
    *,
    risk_floor: float = 0.0,
    max_steps: int = 10_000_000,
    h0: float | None = None,
    schedule: Iterator[int] | None = None,
    require_assumption2: bool = True,
    on_record: Callable[[TrajectoryRecord], None] | None = None,
) -> Trajectory:
    """Integrate ``dW/dt = -grad R(W)`` from 0 to ``t_end``.

    Local error control uses ``atol = rtol = tol`` in an RMS norm. The
    conservation residual is evaluated after every accepted step and its
    maximum is kept in ``Trajectory.max_conservation``.

    Raises
    ------
    StiffnessError
        If the step size underflows; the exception state carries the last
        accepted parameters and time.
    """
    if require_assumption2:
        chk = check_assumption2(w0, data, loss)
        if not chk:
            raise AssumptionViolation(f"initialization rejected: {chk.reason}")
    dims = w0.dims
    f = _GradientField(data, loss, dims)
    y = w0.flat().copy()
    ref = conservation_reference(w0)
    P = y.size
    k = np.empty((7, P))
    r_cur = f(y, k[0])
    traj = Trajectory(mode="flow", initial=w0, risk0=r_cur)
    sched = schedule if schedule is not None else snapshot_schedule()
    next(sched)
    next_snap = next(sched)

    def emit(step, t, r, theta, gsq, resid):
        rec = TrajectoryRecord(
            step=step,
            time=t,
            risk=r,
            params=NetworkParams.from_flat(theta.copy(), dims),
            grad_sq=gsq,
            conservation_residual=resid,
        )
        traj.records.append(rec)
        if on_record:
            on_record(rec)

    emit(0, 0.0, r_cur, y, float(k[0] @ k[0]), 0.0)
    if not math.isfinite(r_cur):
        raise NumericalFailure("initial risk is not finite", {"params": w0})

    t = 0.0
    h = h0 if h0 is not None else _initial_step(f, y, k[0], tol)
    h = min(h, t_end)
    step = 0
    y_new = np.empty(P)
    err_vec = np.empty(P)
    stage = np.empty(P)
    stopped = "t_end"
    err_prev = 1e-4
    rejected = False
    while t < t_end:
        if step >= max_steps:
            stopped = "max_steps"
            break
        if r_cur <= risk_floor:
            stopped = "risk_floor"
            break
        if h <= 1e-14 * max(1.0, abs(t)):
            traj.status = "stiff"
            raise StiffnessError(
                f"step size underflow at t = {t:.6g}",
                {"time": t, "params": NetworkParams.from_flat(y.copy(), dims), "step": step},
            )
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True
        for s in range(1, 7):
            np.copyto(stage, y)
            for j, a in enumerate(_A[s]):
                if a:
                    stage += (h * a) * k[j]
            if s < 6:
                f(stage, k[s])
        np.copyto(y_new, stage)  # stage 7 input is the 5th-order solution
        r_new = f(y_new, k[6])
        err_vec[:] = 0.0
        for j, e in enumerate(_E):
            if e:
                err_vec += (h * e) * k[j]
        scale = tol + tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not math.isfinite(err) or not math.isfinite(r_new):
            h *= 0.1
            continue
        if err <= 1.0:
            t = t_end if last else t + h
            y, y_new = y_new, y
            k[0], k[6] = k[6].copy(), k[0]
            r_cur = r_new
            step += 1
            w = NetworkParams.from_flat(y, dims)
            resid = conservation_residual(w, ref)
            traj.max_conservation = max(traj.max_conservation, resid)
            if step == next_snap or t >= t_end or r_cur <= risk_floor:
                emit(step, t, r_cur, y, float(k[0] @ k[0]), resid)
                while next_snap <= step:
                    next_snap = next(sched)
            # PI step control as in the reference DOPRI5 code
            err = max(err, 1e-10)
            fac = 0.9 * err ** (-(0.2 - 0.75 * _PI_BETA)) * err_prev**_PI_BETA
            h *= min(_FAC_MAX if not rejected else 1.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
            rejected = False
        else:
            h *= max(0.2, 0.9 * err ** (-0.2))
            rejected = True
    if traj.records[-1].step != step:
        emit(step, t, r_cur, y, float(k[0] @ k[0]), conservation_residual(NetworkParams.from_flat(y, dims), ref))
    traj.steps = step
    traj.status = stopped
    return traj


def escape_time(trajectory: Trajectory | list[TrajectoryRecord], r: float) -> int | None:
    """Index of the first record with ``max_k ||W_k||_F > r``, or ``None``."""
    records = trajectory.records if isinstance(trajectory, Trajectory) else trajectory
    for i, rec in enumerate(records):
        if float(np.max(rec.params.fro_norms())) > r:
            return i
    return None
