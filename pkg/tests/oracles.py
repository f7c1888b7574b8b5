"""Independent reference computations used only by the tests.

Each oracle takes a different route from the code under test: explicit
loops instead of numpy products, a cyclic Jacobi eigensolver instead of
power iteration, finite differences instead of analytic gradients, and
combinatorial or grid enumeration instead of iterative optimization.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def naive_matmul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def jacobi_eigh(a, tol=1e-15, max_sweeps=100):
    """Cyclic Jacobi rotations; returns eigenvalues (descending) and vectors."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * max(1.0, float(np.abs(a).max())):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(a[p, q]) < 1e-18 * abs(diff):
                    t = a[p, q] / diff
                else:
                    theta = diff / (2.0 * a[p, q])
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    vals = np.diag(a).copy()
    order = np.argsort(vals)[::-1]
    return vals[order], v[:, order]


def jacobi_singular_values(m):
    m = np.asarray(m, dtype=float)
    vals, _ = jacobi_eigh(m.T @ m)
    return np.sqrt(np.clip(vals, 0.0, None))


def jacobi_top_right_vector(m):
    m = np.asarray(m, dtype=float)
    _, vecs = jacobi_eigh(m.T @ m)
    return vecs[:, 0]


def jacobi_top_left_vector(m):
    m = np.asarray(m, dtype=float)
    _, vecs = jacobi_eigh(m @ m.T)
    return vecs[:, 0]


def jacobi_spectral_norm_sym(a):
    vals, _ = jacobi_eigh(a)
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def central_difference(f, theta, h=1e-6):
    theta = np.array(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return g


def loop_product(layers):
    """``(W_L ... W_1)^T`` with explicit loops."""
    cur = layers[0]
    for w in layers[1:]:
        cur = naive_matmul(w, cur)
    return cur.reshape(-1)


def loop_risk(layers, x, y, kind):
    wp = loop_product(layers)
    total = 0.0
    for xi, yi in zip(x, y):
        m = yi * sum(a * b for a, b in zip(wp, xi))
        total += math.exp(-m) if kind == "exp" else math.log1p(math.exp(-m))
    return total / len(y)


def svm_2d_oracle(z):
    """Max-margin direction in the plane by enumerating support sets.

    The optimum is supported on one point (direction ``z_i/|z_i|``) or two
    (the minimum-norm ``w`` with ``<w, z_i> = <w, z_j> = 1``); the best
    feasible candidate is exact.
    """
    z = np.asarray(z, dtype=float)
    cands = [zi / np.linalg.norm(zi) for zi in z]
    for i, j in itertools.combinations(range(len(z)), 2):
        a = np.array([z[i], z[j]])
        if abs(np.linalg.det(a)) < 1e-14:
            continue
        w = np.linalg.solve(a, np.ones(2))
        cands.append(w / np.linalg.norm(w))
    best_gamma, best_u = -math.inf, None
    for u in cands:
        g = float(np.min(z @ u))
        if g > best_gamma:
            best_gamma, best_u = g, u
    return best_u, best_gamma


def svm_grid_oracle(z, n_grid=200_000):
    ang = np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False)
    u = np.column_stack([np.cos(ang), np.sin(ang)])
    vals = np.min(u @ np.asarray(z).T, axis=1)
    i = int(np.argmax(vals))
    return u[i], float(vals[i])


def spread_grid_oracle(support_z, u_bar, n_grid=400_000):
    """Brute-force spread for d = 2 or 3 over a grid of the complement circle."""
    support_z = np.asarray(support_z, dtype=float)
    d = u_bar.size
    # orthonormal basis of u_bar's complement by Gram-Schmidt on e_j
    basis = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        e -= (e @ u_bar) * u_bar
        for b in basis:
            e -= (e @ b) * b
        if np.linalg.norm(e) > 1e-8:
            basis.append(e / np.linalg.norm(e))
        if len(basis) == d - 1:
            break
    if d == 2:
        xis = np.array([basis[0], -basis[0]])
        return float(np.min(np.max(xis @ support_z.T, axis=1)))

    def values(ang):
        xis = np.outer(np.cos(ang), basis[0]) + np.outer(np.sin(ang), basis[1])
        return np.max(xis @ support_z.T, axis=1)

    step = 2 * np.pi / n_grid
    ang = np.arange(n_grid) * step
    best = ang[int(np.argmin(values(ang)))]
    # second, finer grid around the coarse minimizer
    fine = best + np.linspace(-2 * step, 2 * step, n_grid // 4)
    return float(np.min(values(fine)))


def scan_escape(norm_rows, r):
    for i, row in enumerate(norm_rows):
        if max(row) > r:
            return i
    return None
