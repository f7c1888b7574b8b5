"""Dense matrix helpers and leading singular triples.

Matrices are plain 2-D ``float64`` numpy arrays. Only the two largest
singular values of any matrix are ever needed downstream, so instead of a
full SVD the top triple comes from power iteration on the Gram matrix
``M^T M`` and the second singular value from one deflation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateInputError

__all__ = [
    "SingularTriple",
    "as_matrix",
    "frobenius_norm",
    "matmul",
    "spectral_norm",
    "top_singular_triple",
]

# entries of v below this magnitude are skipped by the sign convention
_SIGN_EPS = 1e-12
_MAX_SQUARINGS = 64


@dataclass(frozen=True)
class SingularTriple:
    """Leading singular triple ``(sigma1, u, v)`` plus ``sigma2``.

    ``degenerate`` is set when ``sigma1`` and ``sigma2`` coincide within the
    requested tolerance; ``u`` and ``v`` are then an arbitrary (but
    deterministic) pair from the top singular subspace.
    """

    sigma1: float
    u: np.ndarray
    v: np.ndarray
    sigma2: float
    degenerate: bool = False
    iterations: int = 0


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def frobenius_norm(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    # scaled so tiny or huge entries neither underflow nor overflow
    s = float(np.max(np.abs(a))) if a.size else 0.0
    if s == 0.0 or not np.isfinite(s):
        return s
    b = a / s
    return s * float(np.sqrt(np.sum(b * b)))


def _dominant_eigvec(gram: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, bool, int]:
    """Unit top eigenvector of a PSD matrix.

    A few rounds of repeated squaring give a warm start that is already
    accurate even when the top two eigenvalues are close; plain power
    iteration on ``gram`` then polishes it until the eigen-residual is below
    ``tol`` times the Rayleigh quotient.
    """
    peak = float(np.max(np.abs(gram)))
    if peak == 0.0:
        e = np.zeros(gram.shape[0])
        e[0] = 1.0
        return e, True, 0
    b = gram / peak
    b /= np.linalg.norm(b)
    for _ in range(_MAX_SQUARINGS):
        b2 = b @ b
        nrm = np.linalg.norm(b2)
        if nrm == 0.0:
            break
        b2 /= nrm
        done = np.linalg.norm(b2 - b) <= 1e-15
        b = b2
        if done:
            break
    col = int(np.argmax(np.einsum("ij,ij->j", b, b)))
    v = b[:, col].copy()
    nv = np.linalg.norm(v)
    if nv == 0.0:
        v = np.zeros(gram.shape[0])
        v[0] = 1.0
    else:
        v /= nv

    lam_scale = max(float(np.trace(gram)), np.finfo(float).tiny)
    for it in range(1, max_iter + 1):
        w = gram @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * max(lam, 1e-300 * lam_scale):
            return v, True, it
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return v, True, it
        v = w / nw
    return v, False, max_iter


def _fix_sign(v: np.ndarray) -> float:
    for x in v:
        if abs(x) > _SIGN_EPS:
            return 1.0 if x > 0 else -1.0
    return 1.0


def top_singular_triple(
    m,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    degenerate_rtol: float = 1e-8,
) -> SingularTriple:
    """Leading singular triple of ``m`` and its second singular value.

    The sign is fixed so that the first non-negligible entry of ``v`` is
    positive, which makes repeated calls bitwise reproducible.

    Raises
    ------
    DegenerateInputError
        If ``m`` is the zero matrix.
    ConvergenceError
        If the residual ``||M^T u - sigma1 v||`` does not drop below
        ``tol * sigma1`` within ``max_iter`` polishing iterations.
    """
    a = as_matrix(m)
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        raise DegenerateInputError("top singular triple of the zero matrix is undefined")
    a = a / scale

    v, ok, iters = _dominant_eigvec(a.T @ a, tol, max_iter)
    v = v * _fix_sign(v)
    mv = a @ v
    sigma1 = float(np.linalg.norm(mv))
    u = mv / sigma1
    residual = float(np.linalg.norm(a.T @ u - sigma1 * v))
    if not ok and residual > tol * sigma1:
        raise ConvergenceError(
            f"power iteration stalled after {iters} iterations (residual {residual:.3e})"
        )

    deflated = a - sigma1 * np.outer(u, v)
    d_scale = float(np.max(np.abs(deflated)))
    if d_scale == 0.0:
        sigma2 = 0.0
    else:
        deflated /= d_scale
        v2, _, _ = _dominant_eigvec(deflated.T @ deflated, tol, max_iter)
        sigma2 = min(d_scale * float(np.linalg.norm(deflated @ v2)), sigma1)

    degenerate = sigma1 - sigma2 <= degenerate_rtol * sigma1
    return SingularTriple(
        sigma1=sigma1 * scale,
        u=u,
        v=v,
        sigma2=sigma2 * scale,
        degenerate=bool(degenerate),
        iterations=iters,
    )


def spectral_norm(m) -> float:
    """``||M||_2``; zero for the zero matrix."""
    a = np.asarray(m, dtype=np.float64)
    if not np.any(a):
        return 0.0
    return top_singular_triple(a).sigma1
