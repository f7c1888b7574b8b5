"""Alignment, margin and bound diagnostics for a network snapshot.

Singular-vector based quantities are ``nan`` ("undefined") when the layer's
top singular value is degenerate, because the top singular vectors are then
not unique.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError
from .geometry import MarginCertificate, perp_projector
from .linalg import SingularTriple, frobenius_norm, spectral_norm, top_singular_triple
from .model import Dataset, NetworkParams, product

__all__ = [
    "AlignmentReport",
    "BoundsReport",
    "adjacent_alignment",
    "alignment_ratio",
    "alignment_report",
    "balancedness_residuals",
    "compute_D",
    "direction_cosines",
    "lemma2_bounds",
    "margin_objective",
    "perp_mass",
    "rank1_distance",
    "rank1_residual",
]


def _triple(m: np.ndarray) -> SingularTriple:
    if not np.any(m):
        raise DegenerateInputError("singular vectors of a zero layer are undefined")
    return top_singular_triple(m)


def alignment_ratio(m) -> float:
    """``||M||_2 / ||M||_F``; equals 1 exactly for rank-1 matrices."""
    m = np.asarray(m, dtype=float)
    if not np.any(m):
        raise DegenerateInputError("alignment ratio of the zero matrix is undefined")
    return min(1.0, _triple(m).sigma1 / frobenius_norm(m))


def rank1_distance(m) -> float:
    """``|| M/||M||_F - u v^T ||_F`` (equals ``sqrt(2 (1 - ratio))``)."""
    m = np.asarray(m, dtype=float)
    tr = _triple(m)
    return frobenius_norm(m / frobenius_norm(m) - np.outer(tr.u, tr.v))


def rank1_residual(m) -> float:
    """``|| M - sigma1 u v^T ||_F / ||M||_F`` (equals ``sqrt(1 - ratio^2)``)."""
    m = np.asarray(m, dtype=float)
    tr = _triple(m)
    return frobenius_norm(m - tr.sigma1 * np.outer(tr.u, tr.v)) / frobenius_norm(m)


def adjacent_alignment(w: NetworkParams, k: int) -> float:
    """``|<v_{k+1}, u_k>|`` for ``1 <= k < L``; ``nan`` if either spectrum is degenerate."""
    if not 1 <= k < w.depth:
        raise IndexError(f"adjacent pair index {k} outside 1..{w.depth - 1}")
    lo = _triple(w[k])
    hi = _triple(w[k + 1])
    if lo.degenerate or hi.degenerate:
        return math.nan
    return abs(float(hi.v @ lo.u))


def balancedness_residuals(w: NetworkParams, w0: NetworkParams) -> list[float]:
    """Per adjacent pair, how far ``W_{k+1}^T W_{k+1} - W_k W_k^T`` moved from its initial value."""
    out = []
    for k in range(w.depth - 1):
        now = w.layers[k + 1].T @ w.layers[k + 1] - w.layers[k] @ w.layers[k].T
        then = w0.layers[k + 1].T @ w0.layers[k + 1] - w0.layers[k] @ w0.layers[k].T
        out.append(frobenius_norm(now - then))
    return out


def compute_D(w0: NetworkParams) -> float:
    """Initialization constant bounding how far any layer can be from rank 1."""
    sq = w0.fro_norms() ** 2
    total = float(np.max(sq) - sq[-1])
    for k in range(w0.depth - 1):
        a = w0.layers[k] @ w0.layers[k].T - w0.layers[k + 1].T @ w0.layers[k + 1]
        total += spectral_norm(a)
    return total


@dataclass(frozen=True)
class BoundsReport:
    """Signed slacks (bound minus observed); negative means violated.

    ``norm_slack[k-1]`` compares ``||W_k||_F^2 - ||W_k||_2^2`` with its bound,
    ``align_slack[k-1]`` compares ``<v_{k+1}, u_k>^2`` with its lower bound.
    """

    mode: str
    D: float
    norm_bound: float
    norm_slack: tuple[float, ...]
    align_slack: tuple[float, ...]

    @property
    def min_slack(self) -> float:
        vals = [s for s in self.norm_slack + self.align_slack if not math.isnan(s)]
        return min(vals) if vals else math.inf


def lemma2_bounds(
    w: NetworkParams,
    w0: NetworkParams,
    mode: str,
    risk0: float = 0.0,
    D: float | None = None,
) -> BoundsReport:
    """Check the rank-1 and adjacent-alignment bounds along a trajectory.

    For gradient flow the constants are ``D``; for gradient descent
    (``mode="descent"``) they widen to ``D + 2 R(W(0))`` for the norm gap and
    ``D + 3 R(W(0))`` for the alignment bound.
    """
    if mode in ("flow",):
        c_norm, c_align = 0.0, 0.0
    elif mode in ("descent", "gd"):
        c_norm, c_align = 2.0 * risk0, 3.0 * risk0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if D is None:
        D = compute_D(w0)
    triples = [_triple(m) if np.any(m) else None for m in w.layers]
    spec0 = [spectral_norm(m) for m in w0.layers]
    norm_slack = []
    for m, tr in zip(w.layers, triples):
        # ||W||_F^2 - ||W||_2^2 as the rank-1 residual, avoiding cancellation
        gap = frobenius_norm(m - tr.sigma1 * np.outer(tr.u, tr.v)) ** 2 if tr else 0.0
        norm_slack.append(D + c_norm - gap)
    align_slack = []
    for k in range(w.depth - 1):
        lo, hi = triples[k], triples[k + 1]
        if lo is None or hi is None:
            align_slack.append(math.nan)
            continue
        lower = 1.0 - (D + c_align + spec0[k + 1] ** 2 + spec0[k] ** 2) / hi.sigma1**2
        align_slack.append(float(hi.v @ lo.u) ** 2 - lower)
    return BoundsReport(mode, D, D + c_norm, tuple(norm_slack), tuple(align_slack))


def _nonzero_layers(w: NetworkParams) -> np.ndarray:
    norms = w.fro_norms()
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"layer {int(np.argmin(norms)) + 1} is zero")
    return norms


def margin_objective(w: NetworkParams, data: Dataset) -> float:
    """``min_i y_i (W_L/||W_L||_F ... W_1/||W_1||_F) x_i``; never exceeds the max margin."""
    norms = _nonzero_layers(w)
    return float(np.min(data.z @ product(w)) / np.prod(norms))


def direction_cosines(w: NetworkParams, cert: MarginCertificate) -> tuple[float, float, float]:
    """``(|<w_hat, v_1>|, <w_hat, u_bar>, |<v_1, u_bar>|)`` with ``w_hat = w_prod/||w_prod||``.

    The middle entry keeps its sign: the limit direction is ``+u_bar``.
    """
    wp = product(w)
    nrm = float(np.linalg.norm(wp))
    if nrm == 0.0:
        raise DegenerateInputError("the network computes the zero predictor")
    w_hat = wp / nrm
    tr = _triple(w.layers[0])
    cos_ubar = float(w_hat @ cert.u_bar)
    if tr.degenerate:
        return math.nan, cos_ubar, math.nan
    return abs(float(w_hat @ tr.v)), cos_ubar, abs(float(tr.v @ cert.u_bar))


def perp_mass(w1, cert: MarginCertificate) -> float:
    """``||Pi_perp W_1||_F / ||W_1||_F`` with rows projected onto ``u_bar``'s complement."""
    w1 = np.asarray(w1, dtype=float)
    nrm = frobenius_norm(w1)
    if nrm == 0.0:
        raise DegenerateInputError("first layer is zero")
    return frobenius_norm(w1 @ perp_projector(cert.u_bar)) / nrm


@dataclass
class AlignmentReport:
    fro: list[float]
    spec: list[float]
    ratio: list[float]
    adjacent: list[float]
    cos_v1: float = math.nan
    cos_ubar: float = math.nan
    cos_v1_ubar: float = math.nan
    margin_obj: float = math.nan
    perp_mass: float = math.nan
    balancedness: list[float] = field(default_factory=list)
    bounds: BoundsReport | None = None
    gd_drift: float = math.nan

    def min_ratio(self) -> float:
        vals = [r for r in self.ratio if not math.isnan(r)]
        return min(vals) if vals else math.nan

    def min_adjacent(self) -> float:
        vals = [a for a in self.adjacent if not math.isnan(a)]
        return min(vals) if vals else math.nan


def alignment_report(
    w: NetworkParams,
    *,
    cert: MarginCertificate | None = None,
    data: Dataset | None = None,
    w0: NetworkParams | None = None,
    mode: str | None = None,
    risk0: float | None = None,
    D: float | None = None,
) -> AlignmentReport:
    """Every metric that the inputs allow, for one snapshot.

    Zero layers (e.g. ``W_1 = 0`` at initialization) leave their entries and
    anything depending on them as ``nan``.
    """
    triples = [top_singular_triple(m) if np.any(m) else None for m in w.layers]
    fro = [float(x) for x in w.fro_norms()]
    spec = [tr.sigma1 if tr else 0.0 for tr in triples]
    ratio = [min(1.0, s / f) if f > 0 else math.nan for s, f in zip(spec, fro)]
    adjacent = []
    for k in range(w.depth - 1):
        lo, hi = triples[k], triples[k + 1]
        if lo is None or hi is None or lo.degenerate or hi.degenerate:
            adjacent.append(math.nan)
        else:
            adjacent.append(abs(float(hi.v @ lo.u)))
    rep = AlignmentReport(fro=fro, spec=spec, ratio=ratio, adjacent=adjacent)

    wp = product(w)
    wn = float(np.linalg.norm(wp))
    if cert is not None and wn > 0:
        rep.cos_v1, rep.cos_ubar, rep.cos_v1_ubar = direction_cosines(w, cert)
    if cert is not None and fro[0] > 0:
        rep.perp_mass = perp_mass(w.layers[0], cert)
    if data is not None and all(f > 0 for f in fro):
        rep.margin_obj = margin_objective(w, data)
    if w0 is not None:
        rep.balancedness = balancedness_residuals(w, w0)
        if mode is not None:
            rep.bounds = lemma2_bounds(w, w0, mode, risk0 or 0.0, D)
            if mode in ("descent", "gd"):
                shift = w.fro_norms() ** 2 - w0.fro_norms() ** 2
                rep.gd_drift = float(np.max(shift) - np.min(shift))
    return rep
