from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
import sympy as sp

import mp_oracles as mo
from fptlab.boundary import CORPUS, corpus_boundary
from fptlab.kernels import (
    DomainError,
    EvalPoint,
    forward_fundamental_solution,
    green_G,
    kernel_H,
    level_density,
    schrodinger_direct_term,
)
from fptlab.montecarlo import McParams
from fptlab.validation import (
    chain_reconstruction_check,
    cross_route_report,
    delta_limit_error,
    image_defect,
    negative_mass,
    residual_backward_schrodinger,
    residual_bessel_cauchy,
    residual_forward_schrodinger,
    residual_report,
)

NAMES = sorted(CORPUS)
BUMP = staticmethod(lambda b: np.exp(-((b - 1.0) ** 2) / (2 * 0.09)))


def interior_points(seed, n=5):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        t = rng.uniform(0.05, 0.4)
        tau = rng.uniform(t + 0.15, 0.85)
        out.append(EvalPoint(float(t), float(rng.uniform(0.4, 2.0)), float(tau), float(rng.uniform(0.4, 2.0)), 1.0))
    return out


# ---------------------------------------------------------------------------
# symbolic identities behind the residual expectations
# ---------------------------------------------------------------------------


def _symbolic_terms():
    t, tau, a, b = sp.symbols("t tau a b", real=True)
    f = sp.Function("f")
    K = sp.Function("K")  # K' = f'^2
    fp = lambda x: sp.diff(f(x), x)
    d = tau - t
    i1 = f(tau) - f(t)
    i2 = K(tau) - K(t)
    pref = sp.exp(i2 / 2 - fp(tau) * b + fp(t) * a) / sp.sqrt(2 * sp.pi * d)
    D = pref * sp.exp(-((b - a - i1) ** 2) / (2 * d))
    I = pref * sp.exp(-((b + a - i1) ** 2) / (2 * d))

    def close(expr):
        expr = expr.subs({sp.Derivative(K(t), t): fp(t) ** 2, sp.Derivative(K(tau), tau): fp(tau) ** 2})
        return sp.simplify(sp.expand(expr))

    return t, tau, a, b, f, D, I, close


def test_direct_term_solves_both_equations_symbolically():
    t, tau, a, b, f, D, _, close = _symbolic_terms()
    backward = (-sp.diff(D, t) - sp.diff(D, a, 2) / 2 + a * sp.diff(f(t), t, 2) * D) / D
    forward = (sp.diff(D, tau) - sp.diff(D, b, 2) / 2 + b * sp.diff(f(tau), tau, 2) * D) / D
    assert close(backward) == 0
    assert close(forward) == 0


def test_image_term_backward_defect_symbolically():
    t, tau, a, b, f, _, I, close = _symbolic_terms()
    fpt = sp.diff(f(t), t)
    defect = -sp.diff(I, t) - sp.diff(I, a, 2) / 2 + a * sp.diff(f(t), t, 2) * I
    assert close((defect - (2 * fpt**2 * I - 2 * fpt * sp.diff(I, a))) / I) == 0
    # the image term does solve the forward equation
    forward = sp.diff(I, tau) - sp.diff(I, b, 2) / 2 + b * sp.diff(f(tau), tau, 2) * I
    assert close(forward / I) == 0


def test_image_defect_against_high_precision_derivatives():
    bd = corpus_boundary("linear")
    mbd = mo.MP_CORPUS["linear"]
    p = EvalPoint(0.3, 1.0, 0.8, 1.2)
    it = mp.diff(lambda x: mo.image_term(mbd, x, p.a, p.tau, p.b), mp.mpf(p.t))
    iaa = mp.diff(lambda x: mo.image_term(mbd, p.t, x, p.tau, p.b), mp.mpf(p.a), 2)
    expected = -it - iaa / 2  # f'' = 0
    assert image_defect(p, bd) == pytest.approx(float(expected), rel=1e-12)


# ---------------------------------------------------------------------------
# residual reports
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", NAMES)
def test_direct_term_backward_order_two(name):
    bd = corpus_boundary(name)
    for p in interior_points(1) + [EvalPoint(0.3, 1.0, 0.8, 1.2)]:
        rep = residual_report("backward", schrodinger_direct_term, p, bd)
        assert rep.verdict == "converged", (p, rep.ratios)
        assert rep.order == pytest.approx(2.0, abs=0.1)
        # Richardson removes the h^2 term; what is left is far below the raw residual
        assert abs(rep.limit) < 0.01 * abs(rep.values[-1])


@pytest.mark.parametrize("name", NAMES)
def test_forward_solutions_order_two(name):
    bd = corpus_boundary(name)
    for p in interior_points(2):
        assert residual_report("forward", forward_fundamental_solution, p, bd).verdict == "converged"
        assert residual_report("forward", schrodinger_direct_term, p, bd).verdict == "converged"


def test_full_H_passes_when_boundary_is_flat():
    bd = corpus_boundary("const")
    for p in interior_points(3):
        assert residual_report("backward", kernel_H, p, bd).verdict == "converged"
        assert residual_report("forward", kernel_H, p, bd).verdict == "converged"


@pytest.mark.parametrize("name", ["linear", "quad_quarter", "quad_half", "cosh"])
def test_full_H_backward_plateau_is_image_defect(name):
    bd = corpus_boundary(name)
    for p in interior_points(4, n=3) + [EvalPoint(0.3, 1.0, 0.8, 1.2)]:
        rep = residual_report("backward", kernel_H, p, bd)
        defect = image_defect(p, bd)
        # the plateau shows once the defect dominates the h^2 truncation at the coarsest step
        if abs(defect) > 10 * abs(rep.values[0] + defect):
            assert rep.verdict == "plateau"
        else:
            assert rep.verdict in ("plateau", "indeterminate")
        assert rep.limit == pytest.approx(-image_defect(p, bd), rel=1e-5, abs=1e-8)


def test_bessel_operator_on_G():
    p = EvalPoint(0.2, 1.0, 0.6, 0.9)
    flat = residual_report("bessel", green_G, p, corpus_boundary("const"), s=1.0)
    assert flat.verdict == "converged"
    sloped = residual_report("bessel", green_G, p, corpus_boundary("linear"), s=1.0)
    assert sloped.verdict == "plateau"
    # the defect of H carried through G = phi_b(s - tau) H / phi_a(s - t)
    ratio = level_density(p.b, 1.0 - p.tau) / level_density(p.a, 1.0 - p.t)
    assert sloped.limit == pytest.approx(-ratio * image_defect(p, corpus_boundary("linear")), rel=1e-5, abs=1e-8)


def test_bessel_residual_is_linear():
    bd = corpus_boundary("quad_half")
    p = EvalPoint(0.2, 1.0, 0.6, 0.9)
    scaled = lambda q, b: 3.5 * green_G(q, b)
    r1 = residual_bessel_cauchy(p, bd, 1.0, 1e-2, 1e-2)
    r2 = residual_bessel_cauchy(p, bd, 1.0, 1e-2, 1e-2, term=scaled)
    assert r2 == pytest.approx(3.5 * r1, rel=1e-12)


def test_residual_stencil_domain():
    bd = corpus_boundary("const")
    with pytest.raises(DomainError):
        residual_backward_schrodinger(kernel_H, EvalPoint(0.0, 1.0, 0.5, 1.0), bd, 1e-2, 1e-2)
    with pytest.raises(DomainError):
        residual_forward_schrodinger(kernel_H, EvalPoint(0.3, 1.0, 0.305, 1.0), bd, 1e-2, 1e-2)
    with pytest.raises(ValueError):
        residual_report("sideways", kernel_H, EvalPoint(0.3, 1.0, 0.8, 1.0), bd)
    with pytest.raises(ValueError):
        residual_report("backward", kernel_H, EvalPoint(0.3, 1.0, 0.8, 1.0), bd, steps=(1e-2, 5e-3))


def test_residual_report_reproducible():
    bd = corpus_boundary("cosh")
    p = EvalPoint(0.3, 1.0, 0.8, 1.2)
    r1 = residual_report("backward", kernel_H, p, bd)
    r2 = residual_report("backward", kernel_H, p, bd)
    assert r1.values.tobytes() == r2.values.tobytes()


# ---------------------------------------------------------------------------
# delta property
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", NAMES)
def test_delta_errors_decrease(name):
    errs = delta_limit_error(corpus_boundary(name), 1.0, 0.5, BUMP)
    assert np.all(np.diff(errs) < 0)


def test_delta_flat_data_mass():
    errs = delta_limit_error(corpus_boundary("const"), 1.0, 0.5, lambda b: np.ones_like(b), [1e-4], kernel="H")
    assert errs[0] <= 1e-8


def test_delta_domain():
    with pytest.raises(DomainError):
        delta_limit_error(corpus_boundary("const"), 1.0, 0.5, BUMP, [1.0])
    with pytest.raises(ValueError):
        delta_limit_error(corpus_boundary("const"), 1.0, 0.5, BUMP, kernel="K")


# ---------------------------------------------------------------------------
# gauge chain
# ---------------------------------------------------------------------------


def chain_points(seed, n=20, s=1.0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        t = rng.uniform(0, 0.5 * s)
        tau = rng.uniform(t + 0.02 * s, 0.95 * s)
        yield EvalPoint(float(t), float(rng.uniform(0.1, 3)), float(tau), float(rng.uniform(0.1, 3)))


@pytest.mark.parametrize("name", NAMES)
def test_chain_reconstruction(name):
    bd = corpus_boundary(name)
    worst = max(chain_reconstruction_check(p, bd, 1.0) for p in chain_points(17))
    assert worst <= 1e-12


def test_chain_reconstruction_flat_boundary():
    bd = corpus_boundary("const")
    worst = max(chain_reconstruction_check(p, bd, 1.0) for p in chain_points(18))
    assert worst <= 1e-14


def test_chain_constants_cancel():
    bd = corpus_boundary("quad_half")
    p = EvalPoint(0.1, 1.1, 0.7, 0.8)
    base = chain_reconstruction_check(p, bd, 1.0)
    for c in (1e-3, 7.0, 1e4):
        assert chain_reconstruction_check(p, bd, 1.0, c_back=c, c_fwd=c) == pytest.approx(base, abs=1e-15)


# ---------------------------------------------------------------------------
# cross-route report
# ---------------------------------------------------------------------------


def test_negative_mass():
    assert negative_mass(corpus_boundary("const"), 1.0) == 0.0
    assert negative_mass(corpus_boundary("linear"), 1.0) < 0.0


def test_cross_route_constant_boundary():
    rows = cross_route_report(corpus_boundary("const"), [0.5, 1.0], mc=McParams(n_paths=100_000, steps=512, seed=1))
    for r in rows:
        assert r.verdict == "converged"
        assert r.phi_closed == pytest.approx(level_density(1.0, r.s), rel=1e-6)
        assert r.phi_girsanov == level_density(1.0, r.s)
        assert r.verdict_girsanov_direct == "agree"
        assert abs(r.z_closed_direct) <= 3


def test_cross_route_linear_boundary_reports_divergence():
    rows = cross_route_report(corpus_boundary("linear"), [1.0], mc=McParams(n_paths=100_000, steps=512, seed=2))
    r = rows[0]
    assert r.verdict == "diverging"
    assert math.isnan(r.phi_closed) and r.verdict_closed_girsanov == "n/a"
    assert r.phi_girsanov == pytest.approx(0.05399097, abs=5e-9)
    assert r.singular_coefficient == pytest.approx((1 - math.e**2) / math.sqrt(2 * math.pi), rel=1e-3)
    assert r.negative_mass < 0


def test_cross_route_curved_boundary_has_definite_verdicts():
    rows = cross_route_report(corpus_boundary("quad_half"), [0.5, 1.0], mc=McParams(n_paths=100_000, steps=512, seed=3))
    for r in rows:
        assert r.verdict in ("converged", "diverging", "oscillating")
        assert r.verdict_girsanov_direct in ("agree", "disagree")
        assert math.isfinite(r.z_girsanov_direct)
