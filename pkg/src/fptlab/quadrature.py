"""
Semi-infinite quadrature, the tau -> s limit of v(t, a) and the closed-form
first-passage density / distribution built from it.

v(t, a) = int_0^inf G(t, a; s, b) db is degenerate as written (the factor
phi_b(0) vanishes for b > 0), so it is evaluated as the limit of

    V(eps) = int_0^inf G(t, a; s - eps, b) db,   eps -> 0.

For small eps, V(eps) = g(0) / sqrt(2 pi eps) + g'(0) / 2 + O(sqrt(eps)) with
g(b) = H(t, a; s, b) / phi_a(s - t). The limit exists only when g(0) = 0; the
diagnostics record which regime a given boundary lands in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .boundary import Boundary
from .kernels import (
    BoundaryIntegrals,
    DomainError,
    EvalPoint,
    QuadratureFailure,
    girsanov_prefactor,
    green_G,
    level_density,
)
from .results import DensityCurve

__all__ = [
    "QuadratureSpec",
    "LimitDiagnostics",
    "NonconvergentLimit",
    "QuadratureBudgetExceeded",
    "adaptive_gauss_legendre",
    "integrate_semi_infinite",
    "v_of",
    "eps_values",
    "fpt_density",
    "fpt_cdf",
]

_GL_X, _GL_W = leggauss(15)
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    max_panels: int = 2**20
    truncation_sigmas: float = 12.0
    eps0: float = 1e-2
    eps_ratio: float = 0.5
    eps_terms: int = 10

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be > 0")
        if not (self.eps0 > 0 and 0 < self.eps_ratio < 1 and self.eps_terms >= 5):
            raise ValueError("eps schedule must be strictly decreasing with at least 5 terms")
        if self.max_panels < 1 or not self.truncation_sigmas > 0:
            raise ValueError("max_panels and truncation_sigmas must be positive")

    @property
    def eps_schedule(self) -> np.ndarray:
        return self.eps0 * self.eps_ratio ** np.arange(self.eps_terms)


class QuadratureBudgetExceeded(QuadratureFailure):
    def __init__(self, value: float, error: float, panels: int):
        super().__init__(f"panel budget exhausted after {panels} panels (estimate {value:.6g} +- {error:.2g})")
        self.value = value
        self.error = error
        self.panels = panels


def _panel_values(g, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre 15 on each [a_i, b_i]; returns (integral, integral of |g|)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    y = np.asarray(g(x.ravel()), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(y)):
        bad = x[~np.isfinite(y)][0]
        raise QuadratureFailure(f"non-finite integrand sample at {bad!r}")
    return half * (y @ _GL_W), half * (np.abs(y) @ _GL_W)


def adaptive_gauss_legendre(
    g,
    lo: float,
    hi: float,
    abs_tol: float = 1e-10,
    max_panels: int = 2**20,
    n_init: int = 8,
) -> tuple[float, float, int]:
    """Adaptive 15-point Gauss-Legendre with bisection on the error estimate.

    ``g`` must accept a 1-d array. Panels are refined breadth-first so that each
    pass is a single vectorized call. A panel is accepted when the two halves
    agree with the whole to within its share of ``abs_tol`` (or to rounding
    level). Returns (value, error estimate, panels used).
    """
    if hi <= lo:
        return 0.0, 0.0, 0
    span = hi - lo
    edges = np.linspace(lo, hi, n_init + 1)
    a, b = edges[:-1], edges[1:]
    whole, _ = _panel_values(g, a, b)
    total, err_total, used = 0.0, 0.0, n_init
    while a.size:
        m = 0.5 * (a + b)
        left, left_abs = _panel_values(g, a, m)
        right, right_abs = _panel_values(g, m, b)
        refined = left + right
        err = np.abs(refined - whole)
        tol = np.maximum(abs_tol * (b - a) / span, 64.0 * _EPS * (left_abs + right_abs))
        ok = err <= tol
        # summing accepted panels in interval order keeps results bit-reproducible
        total += float(np.sum(refined[ok]))
        err_total += float(np.sum(err[ok]))
        keep = ~ok
        if not np.any(keep):
            break
        used += int(keep.sum())
        if used > max_panels:
            pending = float(np.sum(refined[keep]))
            raise QuadratureBudgetExceeded(total + pending, err_total + float(np.sum(err[keep])), used)
        a = np.concatenate([a[keep], m[keep]])
        b = np.concatenate([m[keep], b[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        order = np.argsort(a, kind="stable")
        a, b, whole = a[order], b[order], whole[order]
    return total, err_total, used


def integrate_semi_infinite(g, spec: QuadratureSpec = QuadratureSpec(), center: float = 0.0, width: float = 1.0) -> float:
    """int_0^inf g(b) db, truncated at B = max(center, 0) + k * width.

    ``center`` and ``width`` describe the dominant Gaussian factor of ``g``;
    k is ``spec.truncation_sigmas``.
    """
    if not width > 0:
        raise DomainError("width must be > 0")
    upper = max(center, 0.0) + spec.truncation_sigmas * width
    value, _, _ = adaptive_gauss_legendre(g, 0.0, upper, spec.abs_tol, spec.max_panels)
    return value


# ---------------------------------------------------------------------------
# v(t, a) as an eps-limit
# ---------------------------------------------------------------------------


@dataclass
class LimitDiagnostics:
    eps: np.ndarray
    values: np.ndarray
    coefficients: dict[str, float]
    verdict: str
    extrapolated: float | None
    noise: float
    singular_coefficient: float = field(default=math.nan)

    def table(self) -> list[tuple[float, float]]:
        return list(zip(self.eps.tolist(), self.values.tolist()))


class NonconvergentLimit(ArithmeticError):
    """V(eps) grows or oscillates as eps -> 0; carries the diagnostics."""

    def __init__(self, diagnostics: LimitDiagnostics):
        super().__init__(
            f"nonconvergent-limit ({diagnostics.verdict}): "
            f"V(eps={diagnostics.eps[-1]:.3g}) = {diagnostics.values[-1]:.6g}"
        )
        self.diagnostics = diagnostics


def _gaussian_envelope(p: EvalPoint, bd: Boundary) -> tuple[float, float]:
    """Center and width of the b-Gaussian formed by phi_b(s - tau) and H's factors."""
    ints = BoundaryIntegrals.of(bd)
    d = p.tau - p.t
    i1 = ints.int_fp(p.t, p.tau)
    slope = float(bd.fp(p.tau))
    precision = 1.0 / (p.s - p.tau) + 1.0 / d
    centers = [((c / d) - slope) / precision for c in (p.a + i1, -p.a + i1)]
    return max(centers), 1.0 / math.sqrt(precision)


def _limit_verdict(values: np.ndarray, noise: float) -> str:
    d = np.abs(np.diff(values))[-4:]
    settled = d <= noise
    if np.all(settled):
        return "converged"
    if all(settled[i] or d[i] < d[i - 1] for i in range(1, len(d))):
        return "converged"
    if all(d[i] > d[i - 1] for i in range(1, len(d))) and not settled[-1]:
        return "diverging"
    return "oscillating"


def eps_values(t: float, a: float, s: float, bd: Boundary, spec: QuadratureSpec) -> tuple[np.ndarray, np.ndarray]:
    """(eps, V(eps)) over the schedule. eps is scaled by min(1, s - t)."""
    eps = spec.eps_schedule * min(1.0, s - t)
    values = np.empty_like(eps)
    for i, e in enumerate(eps):
        p = EvalPoint(t, a, s - e, 0.0, s)
        center, width = _gaussian_envelope(p, bd)
        values[i] = integrate_semi_infinite(lambda b, p=p: green_G(p.replace(b=b), bd), spec, center, width)
    return eps, values


def v_of(t: float, a: float, s: float, bd: Boundary, spec: QuadratureSpec = QuadratureSpec()) -> tuple[float, LimitDiagnostics]:
    """v(t, a) = lim_{eps -> 0} int_0^inf G(t, a; s - eps, b) db.

    Fits V(eps) = v + c1 sqrt(eps) + c2 eps and returns the extrapolated v with
    the diagnostics. Raises :class:`NonconvergentLimit` when the differences of
    V do not shrink over the last four terms.
    """
    if not (0 <= t < s) or not a > 0:
        raise DomainError(f"v_of needs 0 <= t < s and a > 0 (t={t}, s={s}, a={a})")
    eps, values = eps_values(t, a, s, bd, spec)
    root = np.sqrt(eps)
    design = np.column_stack([np.ones_like(eps), root, eps])
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    # same data with a 1/sqrt(eps) column; only reported, never used for v
    singular, *_ = np.linalg.lstsq(np.column_stack([1.0 / root, design]), values, rcond=None)
    noise = max(100.0 * spec.abs_tol, 1e-11 * float(np.max(np.abs(values))))
    verdict = _limit_verdict(values, noise)
    diag = LimitDiagnostics(
        eps=eps,
        values=values,
        coefficients={"v": float(coef[0]), "c1": float(coef[1]), "c2": float(coef[2])},
        verdict=verdict,
        extrapolated=float(coef[0]) if verdict == "converged" else None,
        noise=noise,
        singular_coefficient=float(singular[0]),
    )
    if verdict != "converged":
        raise NonconvergentLimit(diag)
    return float(coef[0]), diag


# ---------------------------------------------------------------------------
# Closed-form density and distribution
# ---------------------------------------------------------------------------


def _density_point(s: float, bd: Boundary, spec: QuadratureSpec, v_override: float | None):
    a = bd.initial_level
    if v_override is not None:
        v, verdict, diag = float(v_override), "override", None
    else:
        try:
            v, diag = v_of(0.0, a, s, bd, spec)
            verdict = "converged"
        except NonconvergentLimit as exc:
            v, diag, verdict = math.nan, exc.diagnostics, exc.diagnostics.verdict
    return v * level_density(a, s) * girsanov_prefactor(bd, s), verdict, diag


def fpt_density(
    s_grid,
    bd: Boundary,
    spec: QuadratureSpec = QuadratureSpec(),
    v_override: float | None = None,
) -> DensityCurve:
    """phi_T(s) = v(0, a) phi_a(s) exp(-1/2 int_0^s f'^2 - f'(0) a) on a grid.

    Points whose limit does not converge carry NaN and their verdict; the rest
    of the curve is still computed. ``v_override`` replaces the limit by a
    known value of the bridge expectation (e.g. 1 when f'' == 0).
    """
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if np.any(s_grid <= 0):
        raise DomainError("all horizons must be > 0")
    values, verdicts, diags = [], [], []
    for s in s_grid:
        value, verdict, diag = _density_point(float(s), bd, spec, v_override)
        values.append(value)
        verdicts.append(verdict)
        diags.append(diag)
    return DensityCurve(
        s=s_grid,
        value=np.array(values),
        stderr=np.zeros(len(s_grid)),
        verdict=verdicts,
        route="closed_form",
        extra={"diagnostics": diags},
    )


def fpt_cdf(
    t_max: float,
    bd: Boundary,
    spec: QuadratureSpec = QuadratureSpec(),
    v_override: float | None = None,
) -> float:
    """P(T < t_max) = int_0^t_max phi_T(s) ds, same panel scheme as the b-integrals."""
    if not t_max > 0:
        raise DomainError("t_max must be > 0")

    def density(s_arr):
        out = np.empty_like(s_arr)
        for i, s in enumerate(s_arr):
            value, verdict, diag = _density_point(float(s), bd, spec, v_override)
            if verdict in ("diverging", "oscillating"):
                raise NonconvergentLimit(diag)
            out[i] = value
        return out

    value, _, _ = adaptive_gauss_legendre(density, 0.0, t_max, spec.abs_tol, spec.max_panels, n_init=4)
    return value
