"""Step-size controllers built on tracked quantiles.

``OracleState`` runs one tracked quantile per step size on a fixed grid and
reports, sample by sample, the estimate whose estimated MSE is smallest.
Selection only reads the ensemble.

``HilState`` runs three tracked quantiles at ``lam / a``, ``lam`` and
``a * lam``.  Every ``M`` samples (optionally jittered) the centre moves
toward whichever member has the smallest estimated MSE and the trio restarts
from that member's estimates.

``FixedState`` is a single tracked quantile with a constant step size.

Ensembles live in ``(L, 8)`` arrays and are advanced by the compiled kernels
in ``qtrack._kernels``; ``member(i)`` returns an immutable snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .estimators import EstimatorKind, EstimatorState, check_config
from .mse_tracking import (
    GPRIME, H, LAM, MU, N_SLOTS, Q_AUX, Q_MAIN, QPORTION, SIGMA2,
    MseTracker, SmoothingParams, TrackedQuantile, default_q_tilde,
)


def default_grid(lo: float = -7.0, hi: float = 0.0, step: float = 0.05) -> np.ndarray:
    """``exp(lo), exp(lo + step), ..., exp(hi)``; 141 values by default."""
    k = int(round((hi - lo) / step))
    return np.exp(lo + step * np.arange(k + 1))


class Block(NamedTuple):
    estimate: np.ndarray
    lam: np.ndarray
    mse_hat: np.ndarray
    index: np.ndarray


class _UniformPool:
    """Flat supply of uniforms so that consumption order does not depend on
    how a run is cut into blocks."""

    def __init__(self):
        self.left = np.empty(0)

    def take(self, rng: np.random.Generator, k: int) -> np.ndarray:
        have = len(self.left)
        if have >= k:
            out, self.left = self.left[:k], self.left[k:]
            return out
        out = np.concatenate([self.left, rng.random(k - have)]) if have else rng.random(k)
        self.left = np.empty(0)
        return out

    def give_back(self, rest: np.ndarray) -> None:
        self.left = np.concatenate([rest, self.left]) if len(self.left) else rest


_NO_UNIFORMS = np.zeros(1)


def _check_common(kind, q, q_tilde, lams, smoothing):
    kind = EstimatorKind.parse(kind)
    qt = default_q_tilde(q) if q_tilde is None else q_tilde
    if q == qt:
        raise ValueError("q and q_tilde must differ")
    for lam in lams:
        if not lam > 0:
            raise ValueError(f"step sizes must be positive, got {lam}")
        check_config(kind, q, lam)
        check_config(kind, qt, lam)
    if not isinstance(smoothing, SmoothingParams):
        raise TypeError("smoothing must be a SmoothingParams")
    return kind, qt


class _Ensemble:
    """Shared array plumbing for the three controllers."""

    def __init__(self, kind, q, q_tilde, lams, smoothing, literal_frugal, q_hat0):
        self.kind, self.q_tilde = _check_common(kind, q, q_tilde, lams, smoothing)
        self.q = q
        self.smoothing = smoothing
        self.literal_frugal = literal_frugal
        self.q_hat0 = q_hat0
        self.S = np.full((len(lams), N_SLOTS), np.nan)
        self.S[:, LAM] = lams
        self.counts = np.zeros(len(lams), dtype=np.int64)
        self.started = False
        self._pool = _UniformPool()
        self.steps = 0

    @property
    def size(self) -> int:
        return self.S.shape[0]

    @property
    def lambdas(self) -> np.ndarray:
        return self.S[:, LAM].copy()

    @property
    def warm_steps(self) -> int:
        return self.smoothing.warm_steps

    def _start(self, x0: float) -> None:
        q0 = x0 if self.q_hat0 is None else self.q_hat0
        if self.kind == EstimatorKind.DUMIQE and not q0 > 0:
            raise ValueError(f"DUMIQE needs positive data; initial estimate would be {q0}")
        reset_members(self.S, np.arange(self.size), q0, q0, self.q)
        self.counts[:] = 0
        self.started = True

    def member(self, i: int) -> TrackedQuantile:
        row = self.S[i]
        return TrackedQuantile(
            main=EstimatorState(self.kind, self.q, float(row[LAM]), float(row[Q_MAIN]), self.literal_frugal),
            aux=EstimatorState(self.kind, self.q_tilde, float(row[LAM]), float(row[Q_AUX]), self.literal_frugal),
            tracker=MseTracker(float(row[MU]), float(row[SIGMA2]), float(row[QPORTION]), float(row[H]),
                               float(row[GPRIME]), int(self.counts[i]), self.smoothing),
        )

    def set_member(self, i: int, tq: TrackedQuantile) -> None:
        self.S[i] = tq.as_vector()
        self.counts[i] = tq.tracker.n_updates

    @property
    def ensemble(self) -> list[TrackedQuantile]:
        return [self.member(i) for i in range(self.size)]

    def mse_estimates(self) -> np.ndarray:
        return np.array([K.member_mse(self.S, i) for i in range(self.size)])

    def _uniforms(self, rng, n_steps):
        if self.kind != EstimatorKind.FRUGAL:
            return _NO_UNIFORMS
        if rng is None:
            raise ValueError("Frugal estimators need a random generator")
        return self._pool.take(rng, 2 * self.size * n_steps)

    def _run(self, xs, rng, out, off, *, pinned, fallback, friction=False, current=-1,
             margin=0, grow_low=False, grow_high=False):
        U = self._uniforms(rng, len(xs))
        p = self.smoothing
        done, current, used, wants = K.select_block(
            self.S, self.counts, xs, U, self.q, self.q_tilde, int(self.kind), self.literal_frugal,
            p.alpha, p.beta, p.gamma, p.kappa, p.eta, self.warm_steps, friction, current,
            fallback, pinned, margin, grow_low, grow_high,
            out.estimate, out.lam, out.mse_hat, out.index, off)
        if U is not _NO_UNIFORMS and used < len(U):
            self._pool.give_back(U[used:])
        self.steps += done
        return done, current, wants

    def process(self, xs, rng=None) -> Block:
        """Advance over a block of samples; one output row per sample."""
        xs = np.ascontiguousarray(xs, dtype=float)
        n = len(xs)
        out = Block(np.empty(n), np.empty(n), np.empty(n), np.empty(n, dtype=np.int64))
        if n == 0:
            return out
        if not self.started:
            self._start(float(xs[0]))
        self._process(xs, rng, out)
        return out


def reset_members(S, rows, q_main, q_aux, q, gprime=math.nan):
    """Restart rows of ``S`` at the given estimates with a zero-MSE tracker."""
    S[rows, Q_MAIN] = q_main
    S[rows, Q_AUX] = q_aux
    S[rows, MU] = q_main
    S[rows, SIGMA2] = 0.0
    S[rows, QPORTION] = q
    S[rows, H] = 0.0
    S[rows, GPRIME] = gprime


# --------------------------------------------------------------------- Oracle


@dataclass(frozen=True)
class OracleConfig:
    lambda_grid: tuple = field(default_factory=lambda: tuple(default_grid()))
    q: float = 0.7
    q_tilde: float | None = None
    kind: EstimatorKind | str = EstimatorKind.DUMIQE
    friction: bool = False
    extend_grid: bool = False
    margin: int = 1
    extension_factor: float | None = None
    lambda_min_abs: float = 1e-9
    lambda_max_abs: float = 1e3
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    literal_frugal: bool = False
    q_hat0: float | None = None

    def __post_init__(self):
        grid = np.asarray(self.lambda_grid, dtype=float)
        if grid.ndim != 1 or len(grid) < 2:
            raise ValueError("the oracle needs at least two step sizes")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("lambda_grid must be strictly increasing")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.extension_factor is not None and not self.extension_factor > 1:
            raise ValueError("extension_factor must exceed 1")
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in grid))
        object.__setattr__(self, "kind", EstimatorKind.parse(self.kind))


class OracleState(_Ensemble):
    def __init__(self, config: OracleConfig | None = None):
        config = config or OracleConfig()
        super().__init__(config.kind, config.q, config.q_tilde, config.lambda_grid,
                         config.smoothing, config.literal_frugal, config.q_hat0)
        self.config = config
        self.current_index = self.median_index
        self._grow = [config.extend_grid, config.extend_grid]  # low end, high end

    @property
    def median_index(self) -> int:
        return (self.size - 1) // 2

    @property
    def current_lambda(self) -> float:
        return float(self.S[self.current_index, LAM])

    def _process(self, xs, rng, out):
        pos = 0
        margin = self.config.margin if self.config.extend_grid else 0
        while pos < len(xs):
            done, self.current_index, wants = self._run(
                xs[pos:], rng, out, pos, pinned=-1, fallback=self.median_index,
                friction=self.config.friction, current=self.current_index, margin=margin,
                grow_low=self._grow[0], grow_high=self._grow[1])
            pos += done
            if wants:
                oracle_extend(self)


def oracle_select(state: OracleState) -> int:
    """Index the oracle would report right now (reads the ensemble only)."""
    best = K.select_index(state.S, state.counts, state.warm_steps, state.config.friction,
                          state.current_index)
    return state.median_index if best < 0 else int(best)


def oracle_step(state: OracleState, x: float, rng=None) -> tuple[OracleState, float]:
    out = state.process(np.array([x], dtype=float), rng)
    return state, float(out.estimate[0])


def _grid_ratio(lams: np.ndarray, top: bool, factor: float | None) -> float:
    if factor is not None:
        return factor
    return lams[-1] / lams[-2] if top else lams[1] / lams[0]


def _extension_ok(state: OracleState, lam: float) -> bool:
    cfg = state.config
    if not cfg.lambda_min_abs <= lam <= cfg.lambda_max_abs:
        return False
    try:
        check_config(state.kind, state.q, lam)
        check_config(state.kind, state.q_tilde, lam)
    except ValueError:
        return False
    return True


def oracle_extend(state: OracleState) -> OracleState:
    """Grow the grid past whichever end the selection is crowding.

    New members copy the neighbouring boundary member's full state.  An end
    that would cross the absolute bounds (or break DUMIQE's step limit) is
    frozen for the rest of the run.
    """
    cfg = state.config
    if not cfg.extend_grid or cfg.margin <= 0:
        return state
    lams = state.S[:, LAM]
    cur = state.current_index
    if state._grow[1] and state.size - 1 - cur < cfg.margin:
        lam = lams[-1] * _grid_ratio(lams, True, cfg.extension_factor)
        if _extension_ok(state, lam):
            row = state.S[-1].copy()
            row[LAM] = lam
            state.S = np.vstack([state.S, row])
            state.counts = np.append(state.counts, state.counts[-1])
        else:
            state._grow[1] = False
    lams = state.S[:, LAM]
    if state._grow[0] and cur < cfg.margin:
        lam = lams[0] / _grid_ratio(lams, False, cfg.extension_factor)
        if _extension_ok(state, lam):
            row = state.S[0].copy()
            row[LAM] = lam
            state.S = np.vstack([row, state.S])
            state.counts = np.insert(state.counts, 0, state.counts[0])
            state.current_index += 1
        else:
            state._grow[0] = False
    return state


# ------------------------------------------------------------------------ HIL


@dataclass(frozen=True)
class HilConfig:
    a: float = 2.0
    m_base: int = 1000
    m_jitter: int = 0
    initial_lambda: float = 0.01
    q: float = 0.7
    q_tilde: float | None = None
    kind: EstimatorKind | str = EstimatorKind.DUMIQE
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    literal_frugal: bool = False
    q_hat0: float | None = None

    def __post_init__(self):
        if not self.a > 1:
            raise ValueError(f"a must exceed 1, got {self.a}")
        if self.m_base < 1:
            raise ValueError("m_base must be >= 1")
        if self.m_jitter < 0:
            raise ValueError("m_jitter must be >= 0")
        if not self.initial_lambda > 0:
            raise ValueError("initial_lambda must be positive")
        object.__setattr__(self, "kind", EstimatorKind.parse(self.kind))


LOW, MID, HIGH = 0, 1, 2


class HilState(_Ensemble):
    def __init__(self, config: HilConfig | None = None):
        config = config or HilConfig()
        a, lam = config.a, config.initial_lambda
        super().__init__(config.kind, config.q, config.q_tilde, (lam / a, lam, a * lam),
                         config.smoothing, config.literal_frugal, config.q_hat0)
        self.config = config
        self.center_lambda = lam
        self.steps_since_rebalance = 0
        self.next_rebalance_at: int | None = None
        self.rebalanced = False
        # (global step, centre lambda) after every rebalance decision
        self.history: list[tuple[int, float]] = []

    @property
    def low(self) -> TrackedQuantile:
        return self.member(LOW)

    @property
    def mid(self) -> TrackedQuantile:
        return self.member(MID)

    @property
    def high(self) -> TrackedQuantile:
        return self.member(HIGH)

    @property
    def current_lambda(self) -> float:
        return self.center_lambda

    def _draw_period(self, rng) -> int:
        cfg = self.config
        if cfg.m_jitter == 0:
            return cfg.m_base
        if rng is None:
            raise ValueError("a jittered schedule needs a random generator")
        return cfg.m_base + int(rng.integers(0, cfg.m_jitter + 1))

    def _process(self, xs, rng, out):
        pos = 0
        while pos < len(xs):
            if self.next_rebalance_at is None:
                self.next_rebalance_at = self._draw_period(rng)
            seg = min(len(xs) - pos, self.next_rebalance_at - self.steps_since_rebalance)
            done, _, _ = self._run(xs[pos:pos + seg], rng, out, pos,
                                   pinned=-1 if self.rebalanced else MID, fallback=MID)
            pos += done
            self.steps_since_rebalance += done
            if self.steps_since_rebalance >= self.next_rebalance_at:
                hil_rebalance(self)
                self.steps_since_rebalance = 0
                self.next_rebalance_at = None


def hil_step(state: HilState, x: float, rng=None) -> tuple[HilState, float]:
    out = state.process(np.array([x], dtype=float), rng)
    return state, float(out.estimate[0])


def hil_rebalance(state: HilState) -> HilState:
    """Shift the centre step size toward the member with the smallest MSE.

    Skipped while the trackers have not seen enough samples since the last
    restart.  On a shift every member restarts from the winner's two
    estimates with fresh trackers; the slope estimate carries over.
    """
    if int(state.counts.min()) < state.warm_steps:
        return state
    state.rebalanced = True
    win = int(K.select_index(state.S, state.counts, 0, False, -1))
    a = state.config.a
    if win == LOW:
        center = state.center_lambda / a
    elif win == HIGH:
        center = state.center_lambda * a
        try:
            check_config(state.kind, state.q, a * center)
            check_config(state.kind, state.q_tilde, a * center)
        except ValueError:
            win = MID  # the high member would break DUMIQE's step limit
    if win != MID:
        row = state.S[win].copy()
        reset_members(state.S, slice(None), row[Q_MAIN], row[Q_AUX], state.q, gprime=row[GPRIME])
        state.S[:, LAM] = (center / a, center, center * a)
        state.counts[:] = 0
        state.center_lambda = center
    state.history.append((state.steps, state.center_lambda))
    return state


# ---------------------------------------------------------------------- fixed


class FixedState(_Ensemble):
    def __init__(self, lam: float, q: float = 0.7, q_tilde: float | None = None,
                 kind: EstimatorKind | str = EstimatorKind.DUMIQE,
                 smoothing: SmoothingParams | None = None, literal_frugal: bool = False,
                 q_hat0: float | None = None):
        super().__init__(kind, q, q_tilde, (lam,), smoothing or SmoothingParams(),
                         literal_frugal, q_hat0)

    @property
    def current_lambda(self) -> float:
        return float(self.S[0, LAM])

    def _process(self, xs, rng, out):
        self._run(xs, rng, out, 0, pinned=0, fallback=0)
