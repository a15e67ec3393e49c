"""High-precision reference implementations, written from the formulas only."""

from __future__ import annotations

import mpmath as mp

mp.mp.dps = 40


def level_density(a, t):
    a, t = mp.mpf(a), mp.mpf(t)
    return a / mp.sqrt(2 * mp.pi * t**3) * mp.exp(-a * a / (2 * t))


def heat_image(t, y, tau, z):
    d = mp.mpf(tau) - mp.mpf(t)
    y, z = mp.mpf(y), mp.mpf(z)
    return (mp.exp(-(z - y) ** 2 / (2 * d)) - mp.exp(-(z + y) ** 2 / (2 * d))) / mp.sqrt(2 * mp.pi * d)


class MpBoundary:
    """f, f', f'' given as mpmath callables; integrals by mp.quad."""

    def __init__(self, f, fp, fpp):
        self.f, self.fp, self.fpp = f, fp, fpp

    def i1(self, t, tau):
        return mp.quad(self.fp, [t, tau])

    def i2(self, t, tau):
        return mp.quad(lambda u: self.fp(u) ** 2, [t, tau])


MP_CORPUS = {
    "const": MpBoundary(lambda t: mp.mpf(1), lambda t: mp.mpf(0), lambda t: mp.mpf(0)),
    "linear": MpBoundary(lambda t: 1 + t, lambda t: mp.mpf(1), lambda t: mp.mpf(0)),
    "quad_quarter": MpBoundary(lambda t: 2 + t**2 / 4, lambda t: t / 2, lambda t: mp.mpf("0.5")),
    "quad_half": MpBoundary(lambda t: 1 + t**2 / 2, lambda t: t, lambda t: mp.mpf(1)),
    "cosh": MpBoundary(mp.cosh, mp.sinh, mp.cosh),
}


def kernel_H(bd: MpBoundary, t, a, tau, b):
    t, a, tau, b = (mp.mpf(x) for x in (t, a, tau, b))
    d = tau - t
    i1, i2 = bd.i1(t, tau), bd.i2(t, tau)
    gauge = mp.exp(i2 / 2 - bd.fp(tau) * b + bd.fp(t) * a)
    return gauge / mp.sqrt(2 * mp.pi * d) * (
        mp.exp(-(b - a - i1) ** 2 / (2 * d)) - mp.exp(-(b + a - i1) ** 2 / (2 * d))
    )


def direct_term(bd: MpBoundary, t, a, tau, b):
    t, a, tau, b = (mp.mpf(x) for x in (t, a, tau, b))
    d = tau - t
    i1, i2 = bd.i1(t, tau), bd.i2(t, tau)
    gauge = mp.exp(i2 / 2 - bd.fp(tau) * b + bd.fp(t) * a)
    return gauge / mp.sqrt(2 * mp.pi * d) * mp.exp(-(b - a - i1) ** 2 / (2 * d))


def image_term(bd: MpBoundary, t, a, tau, b):
    return direct_term(bd, t, a, tau, b) - kernel_H(bd, t, a, tau, b)


def green_G(bd: MpBoundary, t, a, tau, b, s):
    return level_density(b, mp.mpf(s) - tau) / level_density(a, mp.mpf(s) - t) * kernel_H(bd, t, a, tau, b)


def forward_solution(bd: MpBoundary, tau, b):
    tau, b = mp.mpf(tau), mp.mpf(b)
    return mp.exp(-(b - bd.f(tau)) ** 2 / (2 * tau) + bd.i2(0, tau) / 2 - bd.fp(tau) * b) / mp.sqrt(2 * mp.pi * tau)


def girsanov_prefactor(bd: MpBoundary, s):
    return mp.exp(-bd.i2(0, s) / 2 - bd.fp(0) * bd.f(0))


def bachelier_levy(a, mu, s):
    a, mu, s = mp.mpf(a), mp.mpf(mu), mp.mpf(s)
    return a / mp.sqrt(2 * mp.pi * s**3) * mp.exp(-(a + mu * s) ** 2 / (2 * s))
