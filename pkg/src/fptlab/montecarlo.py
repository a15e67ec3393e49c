"""
Monte Carlo oracles for the first-passage density.

Two routes that share nothing but the boundary:

* the Girsanov route samples 3-dimensional Bessel bridges from a to 0 on
  [0, s] as moduli of (a (1 - u/s) + beta1, beta2, beta3), beta_i standard
  Brownian bridges, and averages exp(-int_0^s f''(u) X_u du);
* the direct route simulates B on a grid against f with a Brownian-bridge
  crossing correction between grid points.

Path k always uses stream k, and per-path results land in slot k of an array
that is reduced in index order, so estimates do not depend on the number of
worker threads.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numba as nb
import numpy as np

from .boundary import Boundary
from .kernels import girsanov_prefactor, level_density
from .results import DensityCurve
from .rng import DOMAIN_BRIDGE, DOMAIN_DIRECT, DOMAIN_EULER, RngStream, next_double, next_normal, seed_state

# prefer OpenMP; old TBB builds only produce a warning before being skipped
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__all__ = [
    "McEstimate",
    "McParams",
    "BridgePath",
    "configure_threads",
    "sample_bessel_bridge",
    "sample_bessel_bridges",
    "euler_bessel_bridge_marginal",
    "bessel_bridge_mean",
    "bridge_functional_estimate",
    "girsanov_density_curve",
    "simulate_hitting_times",
    "direct_hitting_density",
    "hit_fraction",
]


def configure_threads(n: int | None = None) -> int:
    """Cap numba workers at ``n`` (default: $FPT_THREADS). Results never depend on it."""
    if n is None:
        env = os.environ.get("FPT_THREADS")
        n = int(env) if env else nb.config.NUMBA_NUM_THREADS
    n = max(1, min(int(n), nb.config.NUMBA_NUM_THREADS))
    nb.set_num_threads(n)
    return n


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_paths: int
    n_steps: int
    seed: int
    wall_time: float = 0.0

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def contains(self, value: float, z: float = 3.0) -> bool:
        lo, hi = self.ci(z)
        return lo <= value <= hi


@dataclass(frozen=True)
class McParams:
    n_paths: int = 100_000
    steps: int = 1024
    seed: int = 0
    bins: int = 64

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")


@dataclass(frozen=True)
class BridgePath:
    grid: np.ndarray
    values: np.ndarray


def _mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    n = samples.shape[0]
    mean = float(np.sum(samples) / n)
    if n < 2:
        return mean, math.nan
    var = float(np.sum((samples - mean) ** 2) / (n - 1))
    return mean, math.sqrt(var / n)


# ---------------------------------------------------------------------------
# Bessel bridge sampling
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _bridge_path(seed, stream, a, s, m, out):
    st = np.empty(4, dtype=np.uint64)
    seed_state(seed, stream, DOMAIN_BRIDGE, st)
    b1 = 0.0
    b2 = 0.0
    b3 = 0.0
    root_s = math.sqrt(s)
    out[0] = a
    for i in range(m):
        rem = m - i
        coef = (rem - 1.0) / rem
        sd = math.sqrt(coef / m)
        b1 = b1 * coef + sd * next_normal(st)
        b2 = b2 * coef + sd * next_normal(st)
        b3 = b3 * coef + sd * next_normal(st)
        x1 = a * (1.0 - (i + 1.0) / m) + root_s * b1
        out[i + 1] = math.sqrt(x1 * x1 + s * (b2 * b2 + b3 * b3))
    out[m] = 0.0


@nb.njit(parallel=True, cache=True)
def _bridge_paths(seed, streams, a, s, m, out):
    for k in nb.prange(streams.shape[0]):
        _bridge_path(seed, streams[k], a, s, m, out[k])


def sample_bessel_bridge(a: float, s: float, m: int, rng: RngStream) -> BridgePath:
    """One 3-d Bessel bridge from a at 0 to 0 at s on m uniform steps.

    Each Brownian-bridge coordinate is advanced by the exact conditional rule
    beta(u + d) ~ N(beta(u) (s - u - d) / (s - u), d (s - u - d) / (s - u));
    the draws are made on [0, 1] and scaled by sqrt(s), which is the same law.
    """
    if not (a > 0 and s > 0 and m >= 2):
        raise ValueError("need a > 0, s > 0, m >= 2")
    out = np.empty(m + 1)
    _bridge_path(np.uint64(rng.seed), np.uint64(rng.stream_id), float(a), float(s), int(m), out)
    return BridgePath(np.linspace(0.0, s, m + 1), out)


def sample_bessel_bridges(a: float, s: float, m: int, seed: int, n: int, first_stream: int = 0) -> np.ndarray:
    """Array (n, m + 1) of bridges on streams first_stream, ..., first_stream + n - 1."""
    if not (a > 0 and s > 0 and m >= 2 and n >= 1):
        raise ValueError("need a > 0, s > 0, m >= 2, n >= 1")
    streams = np.arange(first_stream, first_stream + n, dtype=np.uint64)
    out = np.empty((n, m + 1))
    _bridge_paths(np.uint64(RngStream(seed).seed), streams, float(a), float(s), int(m), out)
    return out


@nb.njit(parallel=True, cache=True)
def _euler_marginal(seed, a, s, m, record, n, out):
    for k in nb.prange(n):
        st = np.empty(4, dtype=np.uint64)
        seed_state(seed, np.uint64(k), DOMAIN_EULER, st)
        dt = s / m
        sq = math.sqrt(dt)
        x = a
        for i in range(record):
            u = i * dt
            x = abs(x + (1.0 / x - x / (s - u)) * dt + sq * next_normal(st))
        if record == m:
            x = 0.0
        out[k] = x


def euler_bessel_bridge_marginal(a: float, s: float, m: int, n: int, seed: int, u: float) -> McEstimate:
    """Mean of X(u) from Euler steps of dX = dW + (1/X - X/(s - t)) dt.

    Reflection X <- |X| after each step and pinning X(s) = 0; only a
    cross-check for the exact sampler, the drift is singular at X = 0 and t = s.
    """
    record = int(round(u / s * m))
    if not (0 <= record <= m) or abs(record * s / m - u) > 1e-12 * max(1.0, s):
        raise ValueError("u must be a grid point of the Euler grid")
    t0 = time.perf_counter()
    out = np.empty(n)
    _euler_marginal(np.uint64(RngStream(seed).seed), float(a), float(s), int(m), record, int(n), out)
    mean, se = _mean_stderr(out)
    return McEstimate(mean, se, n, m, seed, time.perf_counter() - t0)


def bessel_bridge_mean(a: float, s: float, u: float) -> float:
    """E X(u) for the bridge: mean of |N(mu, v I_3)| with mu = a (1 - u/s), v = u (s - u) / s."""
    mu = a * (1.0 - u / s)
    v = u * (s - u) / s
    if v == 0.0:
        return mu
    sig = math.sqrt(v)
    lam = mu / sig
    if lam == 0.0:
        return sig * 2.0 * math.sqrt(2.0 / math.pi)
    # mean of the noncentral chi distribution with 3 degrees of freedom
    return sig * (
        math.sqrt(2.0 / math.pi) * math.exp(-0.5 * lam * lam)
        + (lam + 1.0 / lam) * math.erf(lam / math.sqrt(2.0))
    )


# ---------------------------------------------------------------------------
# Girsanov route
# ---------------------------------------------------------------------------


@nb.njit(parallel=True, cache=True)
def _bridge_functional(seed, a, s_vals, curv, m, n_rows, antithetic, out):
    """out[k, j] = exp(-trapezoid(f'' X)) on stream k for horizon s_vals[j].

    curv[j, i] = f''(i s_j / m). With ``antithetic`` the row is the average of
    the path and its mirror (all Gaussian draws negated).
    """
    n_s = s_vals.shape[0]
    for k in nb.prange(n_rows):
        st = np.empty(4, dtype=np.uint64)
        seed_state(seed, np.uint64(k), DOMAIN_BRIDGE, st)
        acc_p = np.empty(n_s)
        acc_m = np.empty(n_s)
        root_s = np.empty(n_s)
        for j in range(n_s):
            acc_p[j] = 0.5 * curv[j, 0] * a
            acc_m[j] = acc_p[j]
            root_s[j] = math.sqrt(s_vals[j])
        b1 = 0.0
        b2 = 0.0
        b3 = 0.0
        for i in range(m - 1):
            rem = m - i
            coef = (rem - 1.0) / rem
            sd = math.sqrt(coef / m)
            b1 = b1 * coef + sd * next_normal(st)
            b2 = b2 * coef + sd * next_normal(st)
            b3 = b3 * coef + sd * next_normal(st)
            drift = a * (1.0 - (i + 1.0) / m)
            perp = b2 * b2 + b3 * b3
            for j in range(n_s):
                c = curv[j, i + 1]
                x1 = drift + root_s[j] * b1
                acc_p[j] += c * math.sqrt(x1 * x1 + s_vals[j] * perp)
                if antithetic:
                    x1 = drift - root_s[j] * b1
                    acc_m[j] += c * math.sqrt(x1 * x1 + s_vals[j] * perp)
        # last step lands on X(s) = 0 and adds nothing to the trapezoid
        for j in range(n_s):
            h = s_vals[j] / m
            if antithetic:
                out[k, j] = 0.5 * (math.exp(-h * acc_p[j]) + math.exp(-h * acc_m[j]))
            else:
                out[k, j] = math.exp(-h * acc_p[j])


def _functional_samples(bd: Boundary, s_grid: np.ndarray, n_paths: int, m: int, seed: int, antithetic: bool):
    if n_paths < (2 if antithetic else 1):
        raise ValueError("n_paths too small")
    if m < 2:
        raise ValueError("m must be >= 2")
    rows = n_paths // 2 if antithetic else n_paths
    frac = np.arange(m + 1) / m
    curv = np.ascontiguousarray(
        np.array([np.broadcast_to(bd.fpp(s * frac), frac.shape) for s in s_grid], dtype=float)
    )
    out = np.empty((rows, len(s_grid)))
    _bridge_functional(
        np.uint64(RngStream(seed).seed), bd.initial_level, s_grid, curv, int(m), rows, bool(antithetic), out
    )
    return out, (2 * rows if antithetic else rows)


def bridge_functional_estimate(
    bd: Boundary,
    s: float,
    n_paths: int,
    m: int,
    seed: int,
    antithetic: bool = True,
) -> McEstimate:
    """E exp(-int_0^s f''(u) X_u du) over 3-d Bessel bridges from a to 0.

    With antithetic pairing the samples are pair averages, so the standard
    error is std(pairs) / sqrt(n_paths / 2); an odd n_paths drops one path.
    """
    if not s > 0:
        raise ValueError("s must be > 0")
    t0 = time.perf_counter()
    samples, used = _functional_samples(bd, np.array([float(s)]), n_paths, m, seed, antithetic)
    mean, se = _mean_stderr(samples[:, 0])
    return McEstimate(mean, se, used, m, seed, time.perf_counter() - t0)


def girsanov_density_curve(bd: Boundary, s_grid, n_paths: int, m: int, seed: int, antithetic: bool = True) -> DensityCurve:
    """phi_T(s) ~ E[bridge functional] * exp(-1/2 int_0^s f'^2 - f'(0) a) * phi_a(s).

    All horizons are driven by the same Gaussian draws (scaled bridges), so
    each column equals the single-horizon estimate bit for bit.
    """
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if np.any(s_grid <= 0):
        raise ValueError("all horizons must be > 0")
    t0 = time.perf_counter()
    samples, used = _functional_samples(bd, s_grid, n_paths, m, seed, antithetic)
    values, errs, means = [], [], []
    for j, s in enumerate(s_grid):
        mean, se = _mean_stderr(samples[:, j])
        factor = girsanov_prefactor(bd, float(s)) * level_density(bd.initial_level, float(s))
        means.append(mean)
        values.append(mean * factor)
        errs.append(se * factor)
    return DensityCurve(
        s=s_grid,
        value=np.array(values),
        stderr=np.array(errs),
        verdict=["mc"] * len(s_grid),
        route="girsanov_mc",
        extra={"bridge_mean": np.array(means), "n_paths": used, "steps": m, "seed": seed,
               "wall_time": time.perf_counter() - t0},
    )


# ---------------------------------------------------------------------------
# Direct route
# ---------------------------------------------------------------------------

# exp(-38) < 2^-54, below the smallest nonzero uniform; skipping the draw there
# changes no outcome
_SKIP_EXPONENT = 38.0


@nb.njit(parallel=True, cache=True)
def _hitting_times(seed, f_grid, dt, m, n, out):
    sq = math.sqrt(dt)
    for k in nb.prange(n):
        st = np.empty(4, dtype=np.uint64)
        seed_state(seed, np.uint64(k), DOMAIN_DIRECT, st)
        x = 0.0
        gap_prev = f_grid[0]
        hit = np.inf
        for i in range(m):
            x += sq * next_normal(st)
            gap = f_grid[i + 1] - x
            if gap <= 0.0:
                hit = (i + 0.5) * dt
                break
            e = 2.0 * gap_prev * gap / dt
            if e < _SKIP_EXPONENT:
                if next_double(st) < math.exp(-e):
                    hit = (i + 0.5) * dt
                    break
            gap_prev = gap
        out[k] = hit


def simulate_hitting_times(bd: Boundary, horizon: float, n_paths: int, m: int, seed: int) -> np.ndarray:
    """First crossing times of B against f on [0, horizon]; inf when not hit.

    Between grid points a crossing of the linearized boundary is declared with
    probability exp(-2 g_i g_{i+1} / dt) (gaps g = f - B) and surely when a
    gap is <= 0. The crossing is dated at the step midpoint.
    """
    if not (horizon > 0 and n_paths >= 1 and m >= 2):
        raise ValueError("need horizon > 0, n_paths >= 1, m >= 2")
    grid = np.linspace(0.0, horizon, m + 1)
    f_grid = np.ascontiguousarray(np.broadcast_to(bd.f(grid), grid.shape), dtype=float)
    out = np.empty(n_paths)
    _hitting_times(np.uint64(RngStream(seed).seed), f_grid, horizon / m, int(m), int(n_paths), out)
    return out


def hit_fraction(times: np.ndarray, t: float) -> McEstimate:
    """P(T <= t) from simulated times, binomial standard error."""
    n = times.shape[0]
    p = float(np.count_nonzero(times <= t)) / n
    return McEstimate(p, math.sqrt(p * (1.0 - p) / n), n, 0, 0)


def _bin_width(s_grid: np.ndarray, bins: int) -> float:
    span = float(s_grid.max() - s_grid.min())
    width = (span if span > 0 else float(s_grid.max())) / bins
    if len(s_grid) > 1:
        width = min(width, float(np.min(np.diff(np.sort(s_grid)))))
    return width


def direct_hitting_density(
    bd: Boundary,
    s_grid,
    n_paths: int,
    m: int,
    seed: int,
    bins: int = 64,
) -> DensityCurve:
    """Histogram density of simulated first-passage times at each grid point.

    Each grid point gets a bin centred on it, of nominal width span / bins
    (capped by the grid spacing). Crossings are dated at step midpoints, so a
    bin is snapped to whole simulation steps and divided by its snapped width;
    otherwise a bin would hold a varying number of steps. A bin narrower than
    one step widens to one step. The simulation runs to max(s_grid) plus half
    a bin so the top bin is complete.
    """
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if np.any(s_grid <= 0):
        raise ValueError("all horizons must be > 0")
    t0 = time.perf_counter()
    width = _bin_width(s_grid, bins)
    horizon = float(s_grid.max()) + 0.5 * width
    dt = horizon / m
    times = simulate_hitting_times(bd, horizon, n_paths, m, seed)
    hit = np.isfinite(times)
    cells = np.full(n_paths, -1, dtype=np.int64)
    cells[hit] = np.floor(times[hit] / dt).astype(np.int64)
    counts = np.bincount(cells[hit], minlength=m)
    values, errs, widths = [], [], []
    for s in s_grid:
        # at least one whole step, and inside the simulated range
        lo = min(m - 1, max(0, int(round((s - 0.5 * width) / dt))))
        hi = min(m, max(lo + 1, int(round((s + 0.5 * width) / dt))))
        w = (hi - lo) * dt
        p = float(counts[lo:hi].sum()) / n_paths
        values.append(p / w)
        errs.append(math.sqrt(p * (1.0 - p) / n_paths) / w)
        widths.append(w)
    return DensityCurve(
        s=s_grid,
        value=np.array(values),
        stderr=np.array(errs),
        verdict=["mc"] * len(s_grid),
        route="direct_mc",
        extra={"bin_width": width, "snapped_widths": np.array(widths), "horizon": horizon,
               "hit_fraction": float(np.mean(hit)), "n_paths": n_paths, "steps": m, "seed": seed,
               "wall_time": time.perf_counter() - t0},
    )
