"""
Checks that tie the closed form to its PDEs, to its terminal delta, to the
gauge chain it was built from, and to the two Monte Carlo oracles.

Residuals use central differences with h = k. A residual that is a pure
truncation error falls by 4 per halving; a kernel that does not solve the
equation shows a plateau instead. Neither outcome is assumed in advance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boundary import Boundary
from .kernels import (
    BoundaryIntegrals,
    DomainError,
    EvalPoint,
    green_G,
    heat_image_kernel,
    image_term,
    kernel_H,
    level_density,
)
from .montecarlo import McParams, direct_hitting_density, girsanov_density_curve
from .quadrature import QuadratureSpec, adaptive_gauss_legendre, fpt_density

__all__ = [
    "DEFAULT_STEPS",
    "ResidualReport",
    "residual_backward_schrodinger",
    "residual_forward_schrodinger",
    "residual_bessel_cauchy",
    "residual_report",
    "image_defect",
    "delta_limit_error",
    "chain_reconstruction_check",
    "negative_mass",
    "CrossRouteRow",
    "cross_route_report",
]

DEFAULT_STEPS = (1e-2, 5e-3, 2.5e-3)
RATIO_BAND = (3.5, 4.5)
PLATEAU_BAND = (0.7, 1.5)


# ---------------------------------------------------------------------------
# Finite-difference residuals
# ---------------------------------------------------------------------------


def _finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise ArithmeticError("non-finite kernel sample in residual stencil")


def _signed_backward(term, p: EvalPoint, bd: Boundary, h: float, k: float) -> float:
    u0 = term(p, bd)
    up, um = term(p.replace(a=p.a + h), bd), term(p.replace(a=p.a - h), bd)
    tp, tm = term(p.replace(t=p.t + k), bd), term(p.replace(t=p.t - k), bd)
    _finite(u0, up, um, tp, tm)
    u_t = (tp - tm) / (2.0 * k)
    u_aa = (up - 2.0 * u0 + um) / (h * h)
    return float(-u_t - 0.5 * u_aa + p.a * float(bd.fpp(p.t)) * u0)


def _signed_forward(term, p: EvalPoint, bd: Boundary, h: float, k: float) -> float:
    u0 = term(p, bd)
    up, um = term(p.replace(b=p.b + h), bd), term(p.replace(b=p.b - h), bd)
    tp, tm = term(p.replace(tau=p.tau + k), bd), term(p.replace(tau=p.tau - k), bd)
    _finite(u0, up, um, tp, tm)
    u_t = (tp - tm) / (2.0 * k)
    u_bb = (up - 2.0 * u0 + um) / (h * h)
    return float(u_t - 0.5 * u_bb + p.b * float(bd.fpp(p.tau)) * u0)


def _signed_bessel(term, p: EvalPoint, bd: Boundary, h: float, k: float) -> float:
    u0 = term(p, bd)
    up, um = term(p.replace(a=p.a + h), bd), term(p.replace(a=p.a - h), bd)
    tp, tm = term(p.replace(t=p.t + k), bd), term(p.replace(t=p.t - k), bd)
    _finite(u0, up, um, tp, tm)
    v_t = (tp - tm) / (2.0 * k)
    v_a = (up - um) / (2.0 * h)
    v_aa = (up - 2.0 * u0 + um) / (h * h)
    drift = 1.0 / p.a - p.a / (p.s - p.t)
    return float(-v_t + float(bd.fpp(p.t)) * p.a * u0 - 0.5 * v_aa - drift * v_a)


def _check_backward_interior(p: EvalPoint, h: float, k: float):
    if not (p.t - k >= 0 and p.t + k < p.tau and p.a - h > 0):
        raise DomainError("stencil leaves the domain: need t - k >= 0, t + k < tau, a - h > 0")


def _check_forward_interior(p: EvalPoint, h: float, k: float):
    if not (p.tau - k > p.t and p.b - h > 0):
        raise DomainError("stencil leaves the domain: need tau - k > t, b - h > 0")
    if not p.tau + k < p.s:
        raise DomainError("stencil leaves the domain: need tau + k < s")


def residual_backward_schrodinger(term, p: EvalPoint, bd: Boundary, h: float, k: float) -> float:
    """|(-d_t - 1/2 d_aa + a f''(t)) term| at p, (tau, b) frozen."""
    _check_backward_interior(p, h, k)
    return abs(_signed_backward(term, p, bd, h, k))


def residual_forward_schrodinger(term, p: EvalPoint, bd: Boundary, h: float, k: float) -> float:
    """|(d_tau - 1/2 d_bb + b f''(tau)) term| at p, (t, a) frozen."""
    _check_forward_interior(p, h, k)
    return abs(_signed_forward(term, p, bd, h, k))


def residual_bessel_cauchy(p: EvalPoint, bd: Boundary, s: float, h: float, k: float, term=green_G) -> float:
    """|(-d_t + f''(t) a - 1/2 d_aa - (1/a - a/(s - t)) d_a) G| at p, (tau, b) frozen."""
    p = p.replace(s=s)
    _check_backward_interior(p, h, k)
    if not p.tau < s:
        raise DomainError("need tau < s")
    return abs(_signed_bessel(term, p, bd, h, k))


_SIGNED = {
    "backward": (_signed_backward, _check_backward_interior),
    "forward": (_signed_forward, _check_forward_interior),
    "bessel": (_signed_bessel, _check_backward_interior),
}


@dataclass
class ResidualReport:
    operator: str
    term: str
    point: EvalPoint
    h: np.ndarray
    k: np.ndarray
    values: np.ndarray
    order: float
    ratios: np.ndarray
    verdict: str
    limit: float
    boundary: str = ""

    @property
    def residuals(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def passed(self) -> bool:
        return self.verdict == "converged"


def _fit_order(hs: np.ndarray, res: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        y = np.log(res)
    if not np.all(np.isfinite(y)):
        return math.nan
    slope, _ = np.polyfit(np.log(hs), y, 1)
    return float(slope)


def _verdict(ratios: np.ndarray) -> str:
    if np.all((ratios >= RATIO_BAND[0]) & (ratios <= RATIO_BAND[1])):
        return "converged"
    if np.all((ratios >= PLATEAU_BAND[0]) & (ratios <= PLATEAU_BAND[1])):
        return "plateau"
    return "indeterminate"


def residual_report(
    operator: str,
    term,
    p: EvalPoint,
    bd: Boundary,
    steps=DEFAULT_STEPS,
    s: float | None = None,
) -> ResidualReport:
    """Residual of ``term`` under ``operator`` ("backward", "forward", "bessel") over h = k in ``steps``.

    ``order`` is the least-squares slope of log|R| against log h; ``limit`` is
    the Richardson value (4 R(h/2) - R(h)) / 3 of the signed residual at the two
    finest steps, i.e. the plateau height when there is one.
    """
    if operator not in _SIGNED:
        raise ValueError(f"unknown operator {operator!r}")
    steps = np.asarray(sorted(steps, reverse=True), dtype=float)
    if steps.size < 3:
        raise ValueError("need at least three step sizes")
    if operator == "bessel":
        if s is None:
            raise ValueError("the bessel operator needs s")
        p = p.replace(s=s)
    signed, check = _SIGNED[operator]
    check(p, float(steps[0]), float(steps[0]))
    values = np.array([signed(term, p, bd, float(h), float(h)) for h in steps])
    res = np.abs(values)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = res[:-1] / res[1:]
    order = _fit_order(steps, res)
    return ResidualReport(
        operator=operator,
        term=getattr(term, "__name__", str(term)),
        point=p,
        h=steps,
        k=steps.copy(),
        values=values,
        order=order,
        ratios=ratios,
        verdict=_verdict(ratios),
        limit=float((4.0 * values[-1] - values[-2]) / 3.0),
        boundary=str(bd),
    )


def image_defect(p: EvalPoint, bd: Boundary) -> float:
    """(-d_t - 1/2 d_aa + a f''(t)) I for the image term I of H.

    Equals 2 f'(t)^2 I - 2 f'(t) I_a = 2 f'(t) (b + a - int_t^tau f') I / (tau - t),
    so the full H = direct - image has backward residual -image_defect.
    """
    i1 = BoundaryIntegrals.of(bd).int_fp(p.t, p.tau)
    w = p.b + p.a - i1
    return float(2.0 * float(bd.fp(p.t)) * w / (p.tau - p.t) * image_term(p, bd))


# ---------------------------------------------------------------------------
# Terminal delta property
# ---------------------------------------------------------------------------


def delta_limit_error(
    bd: Boundary,
    a: float,
    tau: float,
    bump,
    eps_list=(1e-2, 1e-3, 1e-4),
    kernel: str = "G",
    s: float | None = None,
    spec: QuadratureSpec = QuadratureSpec(),
) -> np.ndarray:
    """|int_0^inf K(tau - eps, a; tau, b) bump(b) db - bump(a)| for each eps.

    K is green_G (horizon ``s``, default tau + 1) or kernel_H. The integral
    covers the direct Gaussian's +-k sigma window; the image Gaussian sits at
    -a + int f' and is included whenever that window reaches it.
    """
    if not (a > 0 and tau > 0):
        raise DomainError("need a > 0 and tau > 0")
    if kernel not in ("G", "H"):
        raise ValueError("kernel must be 'G' or 'H'")
    if s is None:
        s = tau + 1.0
    if kernel == "G" and not s > tau:
        raise DomainError("need s > tau")
    ints = BoundaryIntegrals.of(bd)
    target = float(bump(a))
    errs = []
    for eps in eps_list:
        t = tau - eps
        if not (0 <= t < tau):
            raise DomainError(f"eps={eps} puts t outside [0, tau)")
        p = EvalPoint(t, a, tau, 0.0, s)
        center = a + ints.int_fp(t, tau)
        sig = math.sqrt(eps)
        lo = max(0.0, center - spec.truncation_sigmas * sig)
        hi = center + spec.truncation_sigmas * sig
        kern = green_G if kernel == "G" else kernel_H

        def g(b, p=p):
            return kern(p.replace(b=b), bd) * bump(b)

        value, _, _ = adaptive_gauss_legendre(g, lo, hi, spec.abs_tol, spec.max_panels)
        errs.append(abs(value - target))
    return np.array(errs)


# ---------------------------------------------------------------------------
# Gauge chain
# ---------------------------------------------------------------------------


def _backward_gauge(t: float, a: float, s: float, c: float) -> float:
    # A(t) exp(B(t) a^2) with A = c (s - t)^{3/2}, B = 1/(2 (s - t)); then / a
    return c * (s - t) ** 1.5 * math.exp(a * a / (2.0 * (s - t))) / a


def _forward_gauge(tau: float, b: float, s: float, c: float) -> float:
    # A(tau) exp(B(tau) b^2) with A = c (s - tau)^{-3/2}, B = -1/(2 (s - tau)); then * b
    return b * c * (s - tau) ** -1.5 * math.exp(-b * b / (2.0 * (s - tau)))


def chain_reconstruction_check(
    p: EvalPoint,
    bd: Boundary,
    s: float,
    c_back: float = 1.0,
    c_fwd: float = 1.0,
) -> float:
    """Relative deviation between green_G and its rebuild from the gauge chain.

    Rebuild: heat image kernel in y = a, z = b - int_t^tau f' (the boundary
    offset that keeps the image line fixed), times the gauge
    exp(1/2 int f'^2 - f'(tau) b + f'(t) a), times the backward and forward
    level gauges. The chain is normalized by its value on the diagonal
    (tau, b) = (t, a), which removes the free constants.
    """
    p = p.replace(s=s)
    if not (0 <= p.t < p.tau < s and p.a > 0 and p.b > 0):
        raise DomainError("need 0 <= t < tau < s and a, b > 0")
    if not (c_back > 0 and c_fwd > 0):
        raise ValueError("gauge constants must be > 0")
    ints = BoundaryIntegrals.of(bd)
    i1 = ints.int_fp(p.t, p.tau)
    i2 = ints.int_fp2(p.t, p.tau)
    heat = heat_image_kernel(p.t, p.a, p.tau, p.b - i1)
    girsanov = math.exp(0.5 * i2 - float(bd.fp(p.tau)) * p.b + float(bd.fp(p.t)) * p.a)
    gauge = _backward_gauge(p.t, p.a, s, c_back) * _forward_gauge(p.tau, p.b, s, c_fwd)
    norm = _backward_gauge(p.t, p.a, s, c_back) * _forward_gauge(p.t, p.a, s, c_fwd)
    rebuilt = heat * girsanov * gauge / norm
    direct = green_G(p, bd)
    if direct == 0.0:
        return 0.0 if rebuilt == 0.0 else math.inf
    return abs(rebuilt - direct) / abs(direct)


# ---------------------------------------------------------------------------
# Cross-route comparison
# ---------------------------------------------------------------------------


def negative_mass(bd: Boundary, s: float, tau: float | None = None, spec: QuadratureSpec = QuadratureSpec()) -> float:
    """int_0^inf min(G(0, a; tau, b), 0) db, tau = s/2 by default.

    G < 0 exactly for b < int_0^tau f', so this is an integral over [0, int f'].
    """
    if tau is None:
        tau = 0.5 * s
    i1 = BoundaryIntegrals.of(bd).int_fp(0.0, tau)
    if i1 <= 0.0:
        return 0.0
    p = EvalPoint(0.0, bd.initial_level, tau, 0.0, s)
    value, _, _ = adaptive_gauss_legendre(lambda b: green_G(p.replace(b=b), bd), 0.0, i1, spec.abs_tol, spec.max_panels)
    return min(value, 0.0)


def _z(x: float, se_x: float, y: float, se_y: float) -> float:
    if not (math.isfinite(x) and math.isfinite(y)):
        return math.nan
    se = math.hypot(se_x, se_y)
    diff = x - y
    if se == 0.0:
        # both deterministic: agreement means equal to rounding
        return 0.0 if abs(diff) <= 1e-12 * max(abs(x), abs(y)) else math.copysign(math.inf, diff)
    return diff / se


def _pair_verdict(z: float, z_max: float) -> str:
    if math.isnan(z):
        return "n/a"
    return "agree" if abs(z) <= z_max else "disagree"


@dataclass
class CrossRouteRow:
    s: float
    phi_closed: float
    verdict: str
    singular_coefficient: float
    phi_girsanov: float
    stderr_girsanov: float
    phi_direct: float
    stderr_direct: float
    z_closed_girsanov: float
    z_closed_direct: float
    z_girsanov_direct: float
    verdict_closed_girsanov: str
    verdict_closed_direct: str
    verdict_girsanov_direct: str
    negative_mass: float
    extra: dict = field(default_factory=dict)


def cross_route_report(
    bd: Boundary,
    s_grid,
    spec: QuadratureSpec = QuadratureSpec(),
    mc: McParams = McParams(),
    z_max: float = 3.0,
) -> list[CrossRouteRow]:
    """Closed form (with its limit verdict), Girsanov MC and direct MC per s.

    Pairs involving a nonconvergent closed-form point get z = NaN and verdict
    "n/a"; everything else is compared by combined standard errors.
    """
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    closed = fpt_density(s_grid, bd, spec)
    gir = girsanov_density_curve(bd, s_grid, mc.n_paths, mc.steps, mc.seed)
    dire = direct_hitting_density(bd, s_grid, mc.n_paths, mc.steps, mc.seed, bins=mc.bins)
    rows = []
    for i, s in enumerate(s_grid):
        diag = closed.extra["diagnostics"][i]
        pc, pg, pd = float(closed.value[i]), float(gir.value[i]), float(dire.value[i])
        sg, sd = float(gir.stderr[i]), float(dire.stderr[i])
        zcg, zcd, zgd = _z(pc, 0.0, pg, sg), _z(pc, 0.0, pd, sd), _z(pg, sg, pd, sd)
        rows.append(
            CrossRouteRow(
                s=float(s),
                phi_closed=pc,
                verdict=closed.verdict[i],
                singular_coefficient=float(diag.singular_coefficient) if diag is not None else math.nan,
                phi_girsanov=pg,
                stderr_girsanov=sg,
                phi_direct=pd,
                stderr_direct=sd,
                z_closed_girsanov=zcg,
                z_closed_direct=zcd,
                z_girsanov_direct=zgd,
                verdict_closed_girsanov=_pair_verdict(zcg, z_max),
                verdict_closed_direct=_pair_verdict(zcd, z_max),
                verdict_girsanov_direct=_pair_verdict(zgd, z_max),
                negative_mass=negative_mass(bd, float(s), spec=spec),
                extra={"level_density": level_density(bd.initial_level, float(s))},
            )
        )
    return rows
