"""Synthetic nonstationary streams with exact quantiles, and timestamp-derived
rate streams.

The sinusoidal streams alternate between a fast period ``tau1`` and a slow
period ``tau2`` every ``t_switch`` steps.  Their location (normal) or degrees
of freedom (chi-square) follow ``base + b * sin(2*pi*n / tau(n))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation to the standard normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549671636989496e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / _SQRT2)


def inv_norm_cdf(p: float) -> float:
    """Standard normal quantile; rational approximation plus one Halley step."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if p < _P_LOW:
        r = math.sqrt(-2.0 * math.log(p))
        z = (((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / \
            ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    elif p <= 1.0 - _P_LOW:
        r = p - 0.5
        s = r * r
        z = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r / \
            (((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0)
    else:
        r = math.sqrt(-2.0 * math.log1p(-p))
        z = -(((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / \
            ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    # refine in whichever tail keeps the residual well conditioned
    if p < 0.5:
        e = _norm_cdf(z) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(z / _SQRT2)
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * z * z)
    return z - u / (1.0 + 0.5 * z * u)


def chisq_cdf(x, df):
    return special.gammainc(np.asarray(df, dtype=float) / 2.0, np.asarray(x, dtype=float) / 2.0)


def inv_chisq_cdf(p, df):
    """Chi-square quantile for real ``df``; broadcasts over array inputs.

    Safeguarded Newton iteration on the regularized incomplete gamma
    function, started from the Wilson-Hilferty approximation and kept inside
    a bracket that shrinks every step.  Quantiles below the smallest
    representable double come back as 0.
    """
    p_arr, k = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(df, dtype=float))
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise ValueError("p must lie in (0, 1)")
    if np.any(~(k > 0.0)):
        raise ValueError("degrees of freedom must be positive")
    shape = p_arr.shape
    p_arr = np.atleast_1d(p_arr).astype(float).ravel()
    k = np.atleast_1d(k).astype(float).ravel()
    a = k / 2.0

    z = np.vectorize(inv_norm_cdf, otypes=[float])(p_arr)
    c = 2.0 / (9.0 * k)
    x = k * (1.0 - c + z * np.sqrt(c)) ** 3
    small = ~(x > 0.0)
    # lower-tail series: P(a, y) ~ y^a / Gamma(a + 1)
    x[small] = 2.0 * np.exp((np.log(p_arr[small]) + special.gammaln(a[small] + 1.0)) / a[small])

    lo = np.zeros_like(x)
    hi = np.maximum(2.0 * x, k + 10.0 * np.sqrt(2.0 * k) + 10.0)
    while True:
        short = chisq_cdf(hi, k) < p_arr
        if not short.any():
            break
        hi[short] *= 2.0
    x = np.clip(x, lo, hi)

    for _ in range(200):
        f = chisq_cdf(x, k) - p_arr
        lo = np.where(f < 0.0, x, lo)
        hi = np.where(f > 0.0, x, hi)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            logpdf = (a - 1.0) * np.log(x / 2.0) - x / 2.0 - special.gammaln(a) - math.log(2.0)
            step = f / np.exp(logpdf)
            nx = x - step
        bad = ~np.isfinite(nx) | (nx < lo) | (nx > hi)
        nx = np.where(bad, 0.5 * (lo + hi), nx)
        exact = np.abs(f) <= 1e-15 * p_arr
        # a Newton step this small leaves an error far below it; iterating
        # further only dithers in the last bits
        small = ~bad & (np.abs(nx - x) <= 1e-14 * np.abs(x))
        x = np.where(exact, x, nx)
        if (exact | small).all():
            break
    return x.reshape(shape) if shape else float(x[0])


@dataclass(frozen=True)
class NormalSineSpec:
    mu: float = 8.0
    b: float = 2.0
    sigma: float = 1.0
    tau1: int = 500
    tau2: int = 10_000
    t_switch: int = 10_000

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        _check_periods(self)

    def center(self, n):
        return self.mu + self.b * _phase(self, n)

    def sample(self, rng: np.random.Generator, n):
        return rng.normal(self.center(n), self.sigma)

    def true_quantile(self, n, q: float):
        return self.center(n) + self.sigma * inv_norm_cdf(q)


@dataclass(frozen=True)
class ChiSqSineSpec:
    nu: float = 6.0
    b: float = 2.0
    tau1: int = 500
    tau2: int = 10_000
    t_switch: int = 10_000

    def __post_init__(self):
        if not self.nu - abs(self.b) > 0:
            raise ValueError("nu - |b| must be positive so degrees of freedom stay positive")
        _check_periods(self)

    def df(self, n):
        return self.nu + self.b * _phase(self, n)

    def center(self, n):
        return self.df(n)

    def sample(self, rng: np.random.Generator, n):
        return rng.gamma(self.df(n) / 2.0, 2.0)

    def true_quantile(self, n, q: float):
        df = self.df(n)
        if np.ndim(df) == 0:
            return inv_chisq_cdf(q, df)
        # the phase repeats, so only a few thousand distinct df values occur
        uniq, inv = np.unique(df, return_inverse=True)
        return inv_chisq_cdf(q, uniq)[inv]


StreamSpec = NormalSineSpec | ChiSqSineSpec


def _check_periods(spec) -> None:
    if min(spec.tau1, spec.tau2, spec.t_switch) < 1:
        raise ValueError("tau1, tau2 and t_switch must be >= 1")


def tau(n, spec):
    """Period in force at step ``n``: tau1 on the first half of every 2T cycle."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("step index must be non-negative")
    out = np.where(n % (2 * spec.t_switch) < spec.t_switch, spec.tau1, spec.tau2)
    return out if out.ndim else int(out)


def fast_segment(n, spec):
    """True where step ``n`` lies in a tau1 segment."""
    return np.asarray(n) % (2 * spec.t_switch) < spec.t_switch


def _phase(spec, n):
    n = np.asarray(n, dtype=float)
    out = np.sin(2.0 * np.pi * n / tau(n.astype(np.int64), spec))
    return out if out.ndim else float(out)


def single_regime(spec, period: int):
    """Copy of ``spec`` that never switches away from ``period``."""
    return type(spec)(**{**spec.__dict__, "tau1": period, "tau2": period})


def true_quantile(spec, n, q: float):
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return spec.true_quantile(n, q)


class StreamState:
    """A seeded synthetic stream; ``n`` is the index of the next sample."""

    def __init__(self, spec, seed=None):
        self.spec = spec
        self.n = 0
        self.rng = np.random.default_rng(seed)

    def take(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        ns = np.arange(self.n, self.n + k, dtype=np.int64)
        xs = np.asarray(self.spec.sample(self.rng, ns), dtype=float)
        self.n += k
        return xs, ns

    def truth(self, ns, q: float):
        return np.asarray(true_quantile(self.spec, ns, q), dtype=float)


def next_sample(stream: StreamState) -> tuple[float, int]:
    xs, ns = stream.take(1)
    return float(xs[0]), int(ns[0])


class ArrayStream:
    """Replays a fixed sequence of samples; no true quantiles available."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        self.n = 0

    def __len__(self):
        return len(self.values)

    def take(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if self.n + k > len(self.values):
            raise ValueError(f"stream exhausted: {len(self.values) - self.n} samples left, {k} requested")
        ns = np.arange(self.n, self.n + k, dtype=np.int64)
        xs = self.values[self.n:self.n + k]
        self.n += k
        return xs, ns

    def truth(self, ns, q):
        return None


def read_samples(path) -> np.ndarray:
    """One number per line; blank lines and ``#`` comments are skipped."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                values.append(float(s))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {s!r}") from None
    return np.array(values, dtype=float)


read_timestamps = read_samples


def ingest_timestamps(timestamps, rng: np.random.Generator, resolution: float = 1.0) -> np.ndarray:
    """Turn coarse event timestamps into a rate stream ``1 / (T_t - T_{t-1})``.

    Each timestamp gets independent Uniform(0, resolution) jitter to undo the
    rounding, then the jittered times are re-sorted.  Zero gaps (possible only
    with ``resolution=0`` or duplicated jitter) are dropped with a warning.
    """
    ts = np.asarray(timestamps, dtype=float)
    if ts.ndim != 1:
        raise ValueError("timestamps must be one-dimensional")
    if np.any(np.diff(ts) < 0):
        raise ValueError("timestamps must be non-decreasing")
    if resolution < 0:
        raise ValueError("resolution must be non-negative")
    jittered = np.sort(ts + rng.uniform(0.0, resolution, size=ts.shape) if resolution > 0 else ts)
    gaps = np.diff(jittered)
    ties = gaps <= 0.0
    if ties.any():
        warnings.warn(f"dropped {int(ties.sum())} zero-length inter-arrival gaps", RuntimeWarning, stacklevel=2)
        gaps = gaps[~ties]
    return 1.0 / gaps


@dataclass(frozen=True)
class ArrivalProfile:
    """Piecewise-constant arrival rate (events per second) with a day/night
    cycle and an optional step change at ``event_at`` seconds."""

    base_rate: float = 0.05
    night_factor: float = 0.3
    day_start: float = 7 * 3600.0
    day_end: float = 23 * 3600.0
    event_at: float | None = None
    event_factor: float = 10.0

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        tod = t % 86400.0
        r = np.where((tod >= self.day_start) & (tod < self.day_end), self.base_rate,
                     self.base_rate * self.night_factor)
        if self.event_at is not None:
            r = np.where(t >= self.event_at, r * self.event_factor, r)
        return r

    @property
    def max_rate(self) -> float:
        return self.base_rate * max(1.0, self.night_factor) * max(1.0, self.event_factor if self.event_at is not None else 1.0)


def synthetic_timestamps(profile: ArrivalProfile, duration: float, rng: np.random.Generator,
                         resolution: float = 1.0) -> np.ndarray:
    """Inhomogeneous Poisson arrivals on ``[0, duration)`` by thinning, rounded
    down to ``resolution`` the way logged timestamps usually are.

    A stand-in for real event logs, not a model of any particular dataset.
    """
    lam_max = profile.max_rate
    out = []
    t = 0.0
    block = max(1024, int(lam_max * duration / 8) + 1)
    while t < duration:
        cand = t + np.cumsum(rng.exponential(1.0 / lam_max, size=block))
        keep = rng.random(block) * lam_max < profile.rate(cand)
        t = cand[-1]
        out.append(cand[keep & (cand < duration)])
    ts = np.concatenate(out)
    if resolution > 0:
        ts = np.floor(ts / resolution) * resolution
    return ts


def write_timestamps(path, timestamps) -> None:
    with open(Path(path), "w") as fh:
        for t in timestamps:
            fh.write(f"{t:.17g}\n")
