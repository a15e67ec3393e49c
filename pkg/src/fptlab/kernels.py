"""
Closed-form kernels for the first-passage problem of Brownian motion against a
convex moving boundary f.

Every kernel that can over- or underflow is assembled in log space. The image
bracket exp(A_d) - exp(A_i) is written as exp(A_d) * (1 - exp(-X)) with
X = A_d - A_i = 2 a (b - int f') / (tau - t), which makes its sign exact:
H(t, a; tau, b) has the sign of b - int_t^tau f'(u) du and vanishes exactly on
that line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boundary import Boundary

__all__ = [
    "DomainError",
    "QuadratureFailure",
    "EvalPoint",
    "BoundaryIntegrals",
    "adaptive_simpson",
    "level_density",
    "log_level_density",
    "heat_image_kernel",
    "kernel_H",
    "image_term",
    "schrodinger_direct_term",
    "green_G",
    "girsanov_prefactor",
    "forward_fundamental_solution",
]

LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    pass


class QuadratureFailure(ArithmeticError):
    pass


@dataclass(frozen=True)
class EvalPoint:
    """Backward point (t, a), forward point (tau, b) and horizon s.

    ``b`` may be a numpy array; every kernel broadcasts over it.
    """

    t: float
    a: float
    tau: float
    b: float
    s: float = math.inf

    def replace(self, **kw) -> "EvalPoint":
        d = dict(t=self.t, a=self.a, tau=self.tau, b=self.b, s=self.s)
        d.update(kw)
        return EvalPoint(**d)


# ---------------------------------------------------------------------------
# Boundary integrals
# ---------------------------------------------------------------------------


def adaptive_simpson(g, lo: float, hi: float, tol: float = 1e-12, max_depth: int = 60) -> tuple[float, float]:
    """Adaptive Simpson with Richardson correction; returns (value, error estimate)."""
    if hi == lo:
        return 0.0, 0.0
    sign = 1.0
    if hi < lo:
        lo, hi, sign = hi, lo, -1.0

    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb = float(g(lo)), float(g(hi))
    fm = float(g(0.5 * (lo + hi)))
    whole = simpson(fa, fm, fb, hi - lo)
    total, err = 0.0, 0.0
    # explicit stack keeps the recursion depth out of Python's frame limit
    stack = [(lo, hi, fa, fm, fb, whole, tol, 0)]
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = float(g(lm)), float(g(rm))
        left = simpson(fa, flm, fm, m - a)
        right = simpson(fm, frm, fb, b - m)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps or depth >= max_depth or (b - a) < 1e-14 * max(1.0, abs(b)):
            if depth >= max_depth and abs(delta) > 15.0 * eps:
                raise QuadratureFailure(f"adaptive Simpson did not reach tol {tol:g} on [{lo}, {hi}]")
            total += left + right + delta / 15.0
            err += abs(delta) / 15.0
            continue
        stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
        stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
    if not math.isfinite(total):
        raise QuadratureFailure(f"non-finite boundary integral on [{lo}, {hi}]")
    return sign * total, err


class BoundaryIntegrals:
    """Memoized int_t^tau f'(u) du and int_t^tau f'(u)^2 du for one boundary.

    The cache is a plain dict; concurrent readers are safe under the GIL and a
    racing writer only recomputes an identical value.
    """

    def __init__(self, bd: Boundary, tol: float = 1e-12):
        self.bd = bd
        self.tol = tol
        self._fp: dict[tuple[float, float], tuple[float, float]] = {}
        self._fp2: dict[tuple[float, float], tuple[float, float]] = {}

    @classmethod
    def of(cls, bd: Boundary) -> "BoundaryIntegrals":
        integrals = bd.cache.get("integrals")
        if integrals is None:
            integrals = bd.cache.setdefault("integrals", cls(bd))
        return integrals

    def int_fp(self, t: float, tau: float) -> float:
        key = (float(t), float(tau))
        hit = self._fp.get(key)
        if hit is None:
            hit = self._fp[key] = adaptive_simpson(self.bd.fp, key[0], key[1], self.tol)
        return hit[0]

    def int_fp2(self, t: float, tau: float) -> float:
        key = (float(t), float(tau))
        hit = self._fp2.get(key)
        if hit is None:
            fp = self.bd.fp
            hit = self._fp2[key] = adaptive_simpson(lambda u: fp(u) ** 2, key[0], key[1], self.tol)
        return hit[0]

    def error(self, t: float, tau: float) -> tuple[float, float]:
        """Simpson error estimates for (int_fp, int_fp2) at a cached pair."""
        key = (float(t), float(tau))
        self.int_fp(*key)
        self.int_fp2(*key)
        return self._fp[key][1], self._fp2[key][1]


# ---------------------------------------------------------------------------
# Fixed-level density and heat image kernel
# ---------------------------------------------------------------------------


def log_level_density(a, t):
    """log of a / sqrt(2 pi t^3) exp(-a^2 / 2t); -inf at t = 0."""
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(a < 0) or np.any(t < 0):
        raise DomainError("level_density needs a >= 0 and t >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a) - 0.5 * LOG_2PI - 1.5 * np.log(t) - a * a / (2.0 * t)
    out = np.where(t == 0.0, -np.inf, out)
    return out[()] if out.ndim == 0 else out


def level_density(a, t):
    """Density of the first time standard Brownian motion reaches level a > 0.

    The value at t = 0 is the continuous extension 0.
    """
    if np.any(np.asarray(a) <= 0):
        raise DomainError("level_density needs a > 0")
    out = np.exp(log_level_density(a, t))
    return float(out) if np.ndim(out) == 0 else out


def _log_abs_one_minus_exp_neg(x):
    """log|1 - exp(-x)| and its sign, stable for all x."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        mag = np.log(-np.expm1(-np.abs(x))) + np.maximum(-x, 0.0)
    return mag, np.sign(x)


def heat_image_kernel(t, y, tau, z):
    """Absorbed heat kernel on the half line:
    (exp(-(z-y)^2 / 2d) - exp(-(z+y)^2 / 2d)) / sqrt(2 pi d), d = tau - t."""
    d = tau - t
    if not d > 0:
        raise DomainError("heat_image_kernel needs t < tau")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    mag, sign = _log_abs_one_minus_exp_neg(2.0 * y * z / d)
    out = sign * np.exp(-0.5 * (LOG_2PI + math.log(d)) - (z - y) ** 2 / (2.0 * d) + mag)
    out = np.where(sign == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# H, its two terms, and G
# ---------------------------------------------------------------------------


def _check_point(p: EvalPoint, need_s: bool = False):
    if not (p.t >= 0 and p.t < p.tau):
        raise DomainError(f"need 0 <= t < tau, got t={p.t}, tau={p.tau}")
    if not p.a > 0:
        raise DomainError(f"need a > 0, got a={p.a}")
    if need_s and not p.tau < p.s:
        raise DomainError(f"need tau < s, got tau={p.tau}, s={p.s}")


def _h_parts(p: EvalPoint, bd: Boundary):
    """(log prefactor incl. gauge, direct exponent, X) for H at p."""
    ints = BoundaryIntegrals.of(bd)
    d = p.tau - p.t
    i1 = ints.int_fp(p.t, p.tau)
    i2 = ints.int_fp2(p.t, p.tau)
    b = np.asarray(p.b, dtype=float)
    gauge = 0.5 * i2 - float(bd.fp(p.tau)) * b + float(bd.fp(p.t)) * p.a
    log_pref = -0.5 * (LOG_2PI + math.log(d)) + gauge
    direct = -((b - p.a - i1) ** 2) / (2.0 * d)
    x = 2.0 * p.a * (b - i1) / d
    return log_pref, direct, x


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def log_abs_kernel_H(p: EvalPoint, bd: Boundary):
    """(log|H|, sign H) at p; broadcasts over p.b."""
    _check_point(p)
    log_pref, direct, x = _h_parts(p, bd)
    mag, sign = _log_abs_one_minus_exp_neg(x)
    return log_pref + direct + mag, sign


def kernel_H(p: EvalPoint, bd: Boundary):
    """Gauged two-Gaussian image kernel H(t, a; tau, b).

    Not clamped: H < 0 wherever b < int_t^tau f'.
    """
    logabs, sign = log_abs_kernel_H(p, bd)
    return _out(np.where(sign == 0, 0.0, sign * np.exp(logabs)))


def schrodinger_direct_term(p: EvalPoint, bd: Boundary):
    """The direct Gaussian of H (center a + int f') with the full gauge factor."""
    _check_point(p)
    log_pref, direct, _ = _h_parts(p, bd)
    return _out(np.exp(log_pref + direct))


def image_term(p: EvalPoint, bd: Boundary):
    """The reflected Gaussian of H (center -a + int f') with the full gauge factor."""
    _check_point(p)
    log_pref, direct, x = _h_parts(p, bd)
    return _out(np.exp(log_pref + direct - x))


def log_abs_green_G(p: EvalPoint, bd: Boundary):
    _check_point(p, need_s=True)
    logabs, sign = log_abs_kernel_H(p, bd)
    b = np.asarray(p.b, dtype=float)
    ratio = log_level_density(b, p.s - p.tau) - log_level_density(p.a, p.s - p.t)
    return logabs + ratio, sign


def green_G(p: EvalPoint, bd: Boundary):
    """G = phi_b(s - tau) / phi_a(s - t) * H, for 0 <= t < tau < s."""
    logabs, sign = log_abs_green_G(p, bd)
    with np.errstate(invalid="ignore"):
        out = np.where((sign == 0) | np.isneginf(logabs), 0.0, sign * np.exp(logabs))
    return _out(out)


def girsanov_prefactor(bd: Boundary, s: float) -> float:
    """exp(-1/2 int_0^s f'(u)^2 du - f'(0) a)."""
    if not s > 0:
        raise DomainError("girsanov_prefactor needs s > 0")
    i2 = BoundaryIntegrals.of(bd).int_fp2(0.0, s)
    return math.exp(-0.5 * i2 - float(bd.fp(0.0)) * bd.initial_level)


def forward_fundamental_solution(p: EvalPoint, bd: Boundary):
    """psi(tau, b) = exp(-(b - f(tau))^2 / 2 tau + 1/2 int_0^tau f'^2 - f'(tau) b) / sqrt(2 pi tau).

    A forward solution of d_tau psi = 1/2 psi_bb - b f''(tau) psi; only
    (tau, b) of ``p`` are used.
    """
    tau = p.tau
    if not tau > 0:
        raise DomainError("forward_fundamental_solution needs tau > 0")
    b = np.asarray(p.b, dtype=float)
    i2 = BoundaryIntegrals.of(bd).int_fp2(0.0, tau)
    expo = (
        -0.5 * (LOG_2PI + math.log(tau))
        - (b - float(bd.f(tau))) ** 2 / (2.0 * tau)
        + 0.5 * i2
        - float(bd.fp(tau)) * b
    )
    return _out(np.exp(expo))
