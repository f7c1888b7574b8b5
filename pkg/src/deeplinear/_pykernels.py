"""Pure-Python reference implementation of the hot training kernels.

Parameters are packed into one flat ``float64`` vector: layer ``W_k`` of
shape ``(dims[k], dims[k-1])`` occupies a contiguous row-major block,
``W_1`` first. ``_ckernels.pyx`` implements the same functions with the same
signatures; ``kernels.py`` picks one at import.
"""

from __future__ import annotations

import math

import numpy as np

LOSS_EXP = 0
LOSS_LOG = 1

STATUS_OK = 0
STATUS_FLOOR = 1
STATUS_NONFINITE = 2
STATUS_CRITICAL = 3


def _loss_terms(m: np.ndarray, loss_code: int) -> tuple[np.ndarray, np.ndarray]:
    if loss_code == LOSS_EXP:
        # overflow surfaces as a non-finite risk, which callers report
        with np.errstate(over="ignore"):
            e = np.exp(-m)
        return e, -e
    if loss_code == LOSS_LOG:
        e = np.exp(-np.abs(m))
        val = np.where(m >= 0, np.log1p(e), -m + np.log1p(e))
        der = np.where(m >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))
        return val, der
    raise ValueError(f"unknown loss code {loss_code}")


def _views(theta: np.ndarray, dims) -> list[np.ndarray]:
    out = []
    off = 0
    for k in range(1, len(dims)):
        size = dims[k] * dims[k - 1]
        out.append(theta[off : off + size].reshape(dims[k], dims[k - 1]))
        off += size
    return out


def risk_grad(theta, dims, z, loss_code, grad_out) -> float:
    """Risk at ``theta``; the full gradient is written into ``grad_out``."""
    layers = _views(theta, dims)
    grads = _views(grad_out, dims)
    L = len(layers)
    # suffix[k] = W_L ... W_{k+1} as a vector of length d_k; suffix[0] = w_prod
    suffix = [None] * (L + 1)
    suffix[L] = np.ones(1)
    for k in range(L, 0, -1):
        suffix[k - 1] = suffix[k] @ layers[k - 1]
    margins = z @ suffix[0]
    val, der = _loss_terms(margins, loss_code)
    n = z.shape[0]
    q = der @ z / n
    for k in range(1, L + 1):
        grads[k - 1][...] = np.outer(suffix[k], q)
        q = layers[k - 1] @ q
    return float(np.sum(val) / n)


def smoothness(depth: int, radius: float, beta: float, g: float) -> float:
    return 2.0 * depth * depth * radius ** (2 * depth - 2) * (beta + g)


def _layer_sq_norms(theta, dims, out) -> None:
    off = 0
    for k in range(1, len(dims)):
        size = dims[k] * dims[k - 1]
        blk = theta[off : off + size]
        out[k - 1] = float(blk @ blk)
        off += size


def gd_advance(
    theta,
    dims,
    z,
    loss_code,
    beta,
    g,
    radius,
    max_steps,
    risk_floor,
    sq0,
    fixed_eta=0.0,
):
    """Run up to ``max_steps`` descent steps in place on ``theta``.

    The step size follows ``eta = min(1/beta(R), 1)`` with the radius ``R``
    bumped by one whenever the new iterate leaves ``B(R - 1)``; a positive
    ``fixed_eta`` replaces the schedule (used only for negative tests with
    losses lacking global smoothness constants).

    Returns a tuple ``(steps, risk, gsq, radius, eta, sum_eta_g2,
    sum_eta2_g2, max_increase, max_drift, status, sum_eta)`` where ``risk`` and
    ``gsq`` belong to the final iterate and ``eta`` is the step size that the
    next step would use.
    """
    dims = [int(d) for d in dims]
    L = len(dims) - 1
    grad = np.empty_like(theta)
    sq = np.empty(L)
    cur = risk_grad(theta, dims, z, loss_code, grad)
    gsq = float(grad @ grad)
    sum0 = 0.0
    sum1 = 0.0
    sum2 = 0.0
    max_inc = -math.inf
    max_drift = 0.0
    steps = 0
    status = STATUS_OK
    if not math.isfinite(cur) or not math.isfinite(gsq):
        status = STATUS_NONFINITE
    while status == STATUS_OK:
        if cur <= risk_floor:
            status = STATUS_FLOOR
            break
        if steps >= max_steps:
            break
        if gsq == 0.0:
            status = STATUS_CRITICAL
            break
        eta = fixed_eta if fixed_eta > 0 else min(1.0 / smoothness(L, radius, beta, g), 1.0)
        theta -= eta * grad
        sum0 += eta
        sum1 += eta * gsq
        sum2 += eta * eta * gsq
        _layer_sq_norms(theta, dims, sq)
        if fixed_eta <= 0:
            top = math.sqrt(float(np.max(sq)))
            while top > radius - 1.0:
                radius += 1.0
        shift = sq - sq0
        drift = float(np.max(shift) - np.min(shift))
        if drift > max_drift:
            max_drift = drift
        new = risk_grad(theta, dims, z, loss_code, grad)
        gsq = float(grad @ grad)
        steps += 1
        if not (math.isfinite(new) and math.isfinite(gsq)):
            cur = new
            status = STATUS_NONFINITE
            break
        if new - cur > max_inc:
            max_inc = new - cur
        cur = new
    eta = fixed_eta if fixed_eta > 0 else min(1.0 / smoothness(L, radius, beta, g), 1.0)
    return steps, cur, gsq, radius, eta, sum1, sum2, max_inc, max_drift, status, sum0
