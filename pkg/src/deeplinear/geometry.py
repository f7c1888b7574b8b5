"""Max-margin geometry of a separable dataset.

``svm_solve`` returns a :class:`MarginCertificate` for the hard-margin SVM
through the origin: the direction ``u_bar`` maximizing ``min_i <u, z_i>`` over
unit vectors, the margin ``gamma``, the support set and dual weights with
``sum_i alpha_i z_i = u_bar``. Every certificate is checked by
:func:`verify_certificate` before it is returned.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .errors import AssumptionViolation, ConvergenceError, SeparabilityError
from .model import Dataset, LossSpec, grad_linear

__all__ = [
    "CertificateCheck",
    "MarginCertificate",
    "perp_gradient_inner",
    "perp_growth_sign",
    "perp_projector",
    "perp_threshold",
    "spread_alpha",
    "svm_solve",
    "verify_certificate",
]

SUPPORT_RTOL = 1e-6
SEPARABILITY_FLOOR = 1e-9
# subsets enumerated by the exact spread solver before falling back to restarts
MAX_SPREAD_SUBSETS = 50_000


@dataclass(frozen=True)
class MarginCertificate:
    u_bar: np.ndarray
    gamma: float
    support: tuple[int, ...]
    duals: np.ndarray  # one weight per index in ``support``
    spread: float | None = None

    def with_spread(self, alpha: float) -> "MarginCertificate":
        return MarginCertificate(self.u_bar, self.gamma, self.support, self.duals, alpha)


@dataclass(frozen=True)
class CertificateCheck:
    primal: float  # worst margin shortfall below gamma
    slackness: float  # worst |margin - gamma| over indices with positive dual
    stationarity: float  # ||sum alpha_i z_i - u_bar||
    unit: float  # | ||u_bar|| - 1 |
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.primal, self.slackness, self.stationarity, self.unit) <= self.tol

    def __bool__(self) -> bool:
        return self.passed


def _separability_margin(z: np.ndarray) -> float:
    # max t  s.t.  <u, z_i> >= t, |u_j| <= 1
    n, d = z.shape
    c = np.zeros(d + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-z, np.ones((n, 1))])
    bounds = [(-1.0, 1.0)] * d + [(None, 1.0)]
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), bounds=bounds, method="highs")
    if res.status != 0:
        raise ConvergenceError(f"separability LP failed: {res.message}")
    return float(res.x[-1])


def _kkt_violation(a: np.ndarray, grad: np.ndarray) -> float:
    viol = np.where(a > 0, np.abs(grad), np.maximum(grad, 0.0))
    return float(np.max(viol))


def _polish(z: np.ndarray, active: np.ndarray):
    """Exact solution of the equality-constrained QP on an active set."""
    za = z[active]
    gram = za @ za.T
    lam, *_ = np.linalg.lstsq(gram, np.ones(len(active)), rcond=None)
    w = za.T @ lam
    return w, lam


def svm_solve(data: Dataset, tol: float = 1e-10, max_sweeps: int = 100_000) -> MarginCertificate:
    """Hard-margin SVM through the origin by dual coordinate ascent.

    Solves ``max_a sum(a) - ||sum a_i z_i||^2 / 2`` over ``a >= 0`` one
    coordinate at a time. Every few sweeps the current positive set is
    treated as the active set and the equality-constrained problem is solved
    exactly; the polished point is accepted once it satisfies the KKT
    conditions to ``tol``.
    """
    z = data.z
    n = data.n
    if _separability_margin(z) <= SEPARABILITY_FLOOR:
        raise SeparabilityError("dataset is non-separable through the origin")

    sqn = np.einsum("ij,ij->i", z, z)
    a = np.zeros(n)
    w = np.zeros(data.d)
    best = None
    for sweep in range(1, max_sweeps + 1):
        for i in range(n):
            g = 1.0 - z[i] @ w
            new = max(0.0, a[i] + g / sqn[i])
            if new != a[i]:
                w += (new - a[i]) * z[i]
                a[i] = new
        if sweep % 10 and sweep != max_sweeps:
            continue
        active = np.flatnonzero(a > 0)
        if active.size:
            wp, lam = _polish(z, active)
            margins = z @ wp
            if np.min(lam) >= -tol and np.min(margins) >= 1.0 - tol:
                best = (wp, np.clip(lam, 0.0, None), active)
                break
        if _kkt_violation(a, 1.0 - z @ w) <= tol:
            best = (w.copy(), a[a > 0], np.flatnonzero(a > 0))
            break
    if best is None:
        raise ConvergenceError(f"dual coordinate ascent did not converge in {max_sweeps} sweeps")

    w, lam, active = best
    norm = float(np.linalg.norm(w))
    u_bar = w / norm
    margins = z @ u_bar
    gamma = float(np.min(margins))
    support = np.flatnonzero(margins <= gamma + SUPPORT_RTOL * gamma)
    weights = np.zeros(n)
    weights[active] = lam / norm
    cert = MarginCertificate(u_bar, gamma, tuple(int(i) for i in support), weights[support])
    check = verify_certificate(data, cert, tol=max(1e-6, tol))
    if not check:
        raise ConvergenceError(f"SVM certificate failed verification: {check}")
    if np.any(weights[np.setdiff1d(np.arange(n), support)] > tol):
        raise ConvergenceError("positive dual weight outside the support set")
    return cert


def verify_certificate(data: Dataset, cert: MarginCertificate, tol: float = 1e-6) -> CertificateCheck:
    """Independent check of primal feasibility, slackness and stationarity."""
    z = data.z
    margins = z @ cert.u_bar
    primal = float(max(0.0, cert.gamma - np.min(margins)))
    sup = np.asarray(cert.support, dtype=int)
    pos = sup[cert.duals > 0]
    slack = float(np.max(np.abs(margins[pos] - cert.gamma))) if pos.size else 0.0
    station = float(np.linalg.norm(cert.duals @ z[sup] - cert.u_bar)) if sup.size else math.inf
    unit = abs(float(np.linalg.norm(cert.u_bar)) - 1.0)
    return CertificateCheck(primal, slack, station, unit, tol)


def perp_projector(u_bar: np.ndarray) -> np.ndarray:
    """``I - u u^T``: projection onto the orthogonal complement of ``u_bar``."""
    u = np.asarray(u_bar, dtype=float)
    return np.eye(u.size) - np.outer(u, u)


def _spread_value(xi: np.ndarray, p: np.ndarray) -> float:
    return float(np.max(p @ xi))


def _spread_exact(p: np.ndarray, basis: np.ndarray) -> float:
    """Minimize ``max_i <xi, p_i>`` over unit ``xi`` in the span of ``basis``.

    The objective is a pointwise max of linear functions, so a minimizer lies
    where some subset ``A`` of them is tied; on the tie set (a great sphere)
    the common value is minimized at ``-P p_a / |P p_a|``. Enumerating all
    subsets of size up to ``dim`` therefore covers every candidate.
    """
    m = basis.shape[1]
    q = p @ basis  # coordinates of each p_i inside the complement
    best = math.inf
    idx = range(q.shape[0])
    for size in range(1, m + 1):
        for sub in itertools.combinations(idx, size):
            a0 = q[sub[0]]
            if size > 1:
                diffs = q[list(sub[1:])] - a0
                nb = null_space(diffs)
            else:
                nb = np.eye(m)
            if nb.shape[1] == 0:
                continue
            proj = nb @ (nb.T @ a0)
            cands = []
            if np.linalg.norm(proj) > 1e-14:
                cands.append(-proj / np.linalg.norm(proj))
            if nb.shape[1] == 1 or not cands:
                cands.extend([nb[:, 0], -nb[:, 0]])
            for c in cands:
                best = min(best, _spread_value(c, q))
    return best


def _spread_restarts(p: np.ndarray, basis: np.ndarray, rng: np.random.Generator, starts: int = 64) -> float:
    q = p @ basis
    m = basis.shape[1]
    best = math.inf
    for _ in range(starts):
        xi = rng.standard_normal(m)
        xi /= np.linalg.norm(xi)
        step = 0.5
        for it in range(2000):
            i = int(np.argmax(q @ xi))
            cand = xi - step * q[i]
            cand /= np.linalg.norm(cand)
            if _spread_value(cand, q) < _spread_value(xi, q):
                xi = cand
            else:
                step *= 0.7
                if step < 1e-12:
                    break
        best = min(best, _spread_value(xi, q))
    return best


def spread_alpha(data: Dataset, cert: MarginCertificate, seed: int = 0) -> float:
    """``min_{|xi|=1, xi _|_ u_bar} max_{i in S} <xi, z_i>``.

    Raises
    ------
    AssumptionViolation
        If the support vectors do not span the whole input space.
    """
    z = data.z[np.asarray(cert.support, dtype=int)]
    d = data.d
    if np.linalg.matrix_rank(z, tol=1e-9) < d:
        raise AssumptionViolation(
            f"support vectors span a {np.linalg.matrix_rank(z, tol=1e-9)}-dimensional "
            f"subspace of R^{d}; they must span the whole space"
        )
    if d == 1:
        raise AssumptionViolation("the orthogonal complement of u_bar is trivial in one dimension")
    basis = null_space(cert.u_bar.reshape(1, -1))
    p = z
    m = d - 1
    n_sub = sum(math.comb(len(z), k) for k in range(1, m + 1))
    if n_sub <= MAX_SPREAD_SUBSETS:
        alpha = _spread_exact(p, basis)
    else:
        alpha = _spread_restarts(p, basis, np.random.default_rng(seed))
    return float(alpha)


def perp_threshold(loss_kind: str, n: int, alpha: float) -> float:
    """Norm of the perpendicular component beyond which it stops growing."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if loss_kind in ("exp", "exponential"):
        return (1.0 + math.log(n)) / alpha
    if loss_kind in ("log", "logistic"):
        return 2.0 * n / (math.e * alpha)
    raise ValueError(f"no perpendicular threshold for loss {loss_kind!r}")


def perp_gradient_inner(w: np.ndarray, data: Dataset, loss: LossSpec, cert: MarginCertificate) -> float:
    """``<Pi_perp w, grad R(w)>`` for a linear predictor ``w``."""
    w = np.asarray(w, dtype=float)
    w_perp = w - (w @ cert.u_bar) * cert.u_bar
    return float(w_perp @ grad_linear(w, data, loss))


def perp_growth_sign(w: np.ndarray, data: Dataset, loss: LossSpec, cert: MarginCertificate) -> int:
    """Sign of :func:`perp_gradient_inner` (non-negative means the
    perpendicular component does not grow under gradient flow)."""
    return int(np.sign(perp_gradient_inner(w, data, loss, cert)))
