"""Online estimate of the tracking MSE of an incremental quantile estimator.

The MSE of an estimate is split into variance and squared bias.  Variance is
tracked with an exponentially weighted recursion on the estimate itself.
Squared bias is proxied by the squared gap between ``q`` and the smoothed
portion of samples at or below the estimate, rescaled by the squared slope of
the quantile function.  The slope is read off an auxiliary estimator run at a
nearby probability with the same step size.

Everything here is the scalar reference path.  The ensemble controllers run
the same recursions inside compiled kernels (see ``qtrack._kernels``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .estimators import EstimatorKind, EstimatorState, update

# slot order of the 8 persistent scalars of one tracked quantile
Q_MAIN, Q_AUX, MU, SIGMA2, QPORTION, H, GPRIME, LAM = range(8)
N_SLOTS = 8


def rule_of_thumb(m: int) -> float:
    """Smoothing weight that leaves the m-th newest term with weight 0.01."""
    if int(m) != m or m < 1:
        raise ValueError(f"M must be a positive integer, got {m}")
    return 1.0 - 0.01 ** (1.0 / m)


def default_q_tilde(q: float) -> float:
    return q + 0.1 if q <= 0.5 else q - 0.1


def _default_weight() -> float:
    return rule_of_thumb(1000)


@dataclass(frozen=True, slots=True)
class SmoothingParams:
    alpha: float = 0.5
    beta: float = field(default_factory=_default_weight)
    gamma: float = field(default_factory=_default_weight)
    kappa: float = field(default_factory=_default_weight)
    eta: float = field(default_factory=_default_weight)

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "kappa", "eta"):
            w = getattr(self, name)
            if not 0.0 < w <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {w}")

    @classmethod
    def from_m(cls, m: int, alpha: float = 0.5) -> "SmoothingParams":
        w = rule_of_thumb(m)
        return cls(alpha=alpha, beta=w, gamma=w, kappa=w, eta=w)

    @property
    def warm_steps(self) -> int:
        # guard against 1/w landing a hair above an integer
        return math.ceil(1.0 / min(self.beta, self.kappa, self.eta) - 1e-9)


@dataclass(frozen=True, slots=True)
class MseTracker:
    mu_hat: float
    sigma2_hat: float
    qportion_hat: float
    h_hat: float
    gprime_hat: float  # nan until the first update supplies a slope
    n_updates: int
    params: SmoothingParams

    @classmethod
    def start(cls, q_hat0: float, q: float, params: SmoothingParams | None = None,
              gprime: float = math.nan) -> "MseTracker":
        return cls(mu_hat=q_hat0, sigma2_hat=0.0, qportion_hat=q, h_hat=0.0,
                   gprime_hat=gprime, n_updates=0, params=params or SmoothingParams())


def update_mean_var(tracker: MseTracker, q_hat_new: float) -> MseTracker:
    p = tracker.params
    mu_prev = tracker.mu_hat
    mu = (1.0 - p.alpha) * mu_prev + p.alpha * q_hat_new
    s2 = (1.0 - p.beta) * tracker.sigma2_hat + p.beta * (q_hat_new - mu) * (q_hat_new - mu_prev)
    if s2 < 0.0:
        s2 = 0.0
    return replace(tracker, mu_hat=mu, sigma2_hat=s2)


def update_bias(tracker: MseTracker, x: float, q_hat_main: float, q: float) -> MseTracker:
    p = tracker.params
    below = 1.0 if x <= q_hat_main else 0.0
    qp = (1.0 - p.gamma) * tracker.qportion_hat + p.gamma * below
    dq = qp - q
    h = (1.0 - p.kappa) * tracker.h_hat + p.kappa * dq * dq
    return replace(tracker, qportion_hat=qp, h_hat=h)


def update_gprime(tracker: MseTracker, q_hat_q: float, q_hat_qtilde: float,
                  q: float, q_tilde: float) -> MseTracker:
    if q == q_tilde:
        raise ValueError("q and q_tilde must differ")
    slope = (q_hat_q - q_hat_qtilde) / (q - q_tilde)
    if math.isnan(tracker.gprime_hat):
        return replace(tracker, gprime_hat=slope)
    eta = tracker.params.eta
    return replace(tracker, gprime_hat=(1.0 - eta) * tracker.gprime_hat + eta * slope)


def mse_estimate(tracker: MseTracker) -> float:
    g = tracker.gprime_hat
    if math.isnan(g):
        return tracker.sigma2_hat
    return g * g * tracker.h_hat + tracker.sigma2_hat


def is_warm(tracker: MseTracker) -> bool:
    return tracker.n_updates >= tracker.params.warm_steps


@dataclass(frozen=True, slots=True)
class TrackedQuantile:
    main: EstimatorState
    aux: EstimatorState
    tracker: MseTracker

    def __post_init__(self):
        if self.main.lam != self.aux.lam or self.main.kind != self.aux.kind:
            raise ValueError("main and auxiliary estimators must share kind and lambda")
        if self.main.q == self.aux.q:
            raise ValueError("q and q_tilde must differ")

    @classmethod
    def start(cls, kind: EstimatorKind | str, q: float, lam: float, q_hat0: float,
              q_tilde: float | None = None, params: SmoothingParams | None = None,
              literal_frugal: bool = False) -> "TrackedQuantile":
        kind = EstimatorKind.parse(kind)
        qt = default_q_tilde(q) if q_tilde is None else q_tilde
        return cls(
            main=EstimatorState(kind, q, lam, q_hat0, literal_frugal),
            aux=EstimatorState(kind, qt, lam, q_hat0, literal_frugal),
            tracker=MseTracker.start(q_hat0, q, params),
        )

    @property
    def lam(self) -> float:
        return self.main.lam

    @property
    def estimate(self) -> float:
        return self.main.q_hat

    def mse(self) -> float:
        return mse_estimate(self.tracker)

    def as_vector(self) -> np.ndarray:
        """The 8 persistent scalars, in kernel slot order."""
        t = self.tracker
        return np.array([self.main.q_hat, self.aux.q_hat, t.mu_hat, t.sigma2_hat,
                         t.qportion_hat, t.h_hat, t.gprime_hat, self.main.lam])


def tracked_step(tq: TrackedQuantile, x: float, rng: np.random.Generator) -> TrackedQuantile:
    """Feed one sample through estimators and tracker.

    The bias indicator compares ``x`` with the estimate that existed when
    ``x`` arrived; the variance recursion sees the updated estimate.  For
    Frugal the main estimator draws its uniform before the auxiliary one.
    """
    q, qt = tq.main.q, tq.aux.q
    tracker = update_bias(tq.tracker, x, tq.main.q_hat, q)
    main = update(tq.main, x, rng)
    aux = update(tq.aux, x, rng)
    tracker = update_mean_var(tracker, main.q_hat)
    tracker = update_gprime(tracker, main.q_hat, aux.q_hat, q, qt)
    tracker = replace(tracker, n_updates=tracker.n_updates + 1)
    return TrackedQuantile(main, aux, tracker)
