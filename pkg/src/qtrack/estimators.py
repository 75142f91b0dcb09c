"""Incremental quantile estimators.

Both estimators share one update rule: when a sample lands at or above the
current estimate the estimate moves up by ``lam * D1``, otherwise it moves
down by ``lam * D2``.  DUMIQE uses multiplicative steps (``D1 = q * Q``,
``D2 = (1 - q) * Q``); Frugal uses random unit steps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np


class EstimatorKind(enum.IntEnum):
    DUMIQE = 0
    FRUGAL = 1

    @classmethod
    def parse(cls, value: "str | EstimatorKind") -> "EstimatorKind":
        if isinstance(value, EstimatorKind):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            try:
                return cls(int(value))
            except ValueError:
                raise ValueError(f"unknown estimator kind {value!r}") from None
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown estimator kind {value!r}; expected 'dumiqe' or 'frugal'") from None


def check_config(kind: EstimatorKind, q: float, lam: float) -> None:
    """Raise ``ValueError`` if (kind, q, lam) cannot drive a valid estimator."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if not lam >= 0.0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    if kind == EstimatorKind.DUMIQE and lam * max(q, 1.0 - q) >= 1.0:
        # a downward step of lam*(1-q)*Q >= Q would cross zero
        raise ValueError(
            f"DUMIQE needs lambda * max(q, 1-q) < 1 to stay positive; got lambda={lam}, q={q}"
        )


@dataclass(frozen=True, slots=True)
class EstimatorState:
    kind: EstimatorKind
    q: float
    lam: float
    q_hat: float
    # Frugal only: use the indicator orientation I(q < U) exactly as printed,
    # which settles at the (1 - q)-quantile.  Kept for comparison runs.
    literal_frugal: bool = False

    def __post_init__(self):
        check_config(self.kind, self.q, self.lam)
        if self.kind == EstimatorKind.DUMIQE and not self.q_hat > 0.0:
            raise ValueError(f"DUMIQE needs a positive estimate, got {self.q_hat}")


def dumique_update(state: EstimatorState, x: float) -> EstimatorState:
    q_hat = state.q_hat
    if x >= q_hat:
        q_hat = q_hat + state.lam * state.q * q_hat
    else:
        q_hat = q_hat - state.lam * (1.0 - state.q) * q_hat
    return replace(state, q_hat=q_hat)


def frugal_step(q_hat: float, q: float, lam: float, x: float, u: float, literal: bool = False) -> float:
    if literal:
        up = q < u
        down = 1.0 - q < u
    else:
        up = u <= q
        down = u <= 1.0 - q
    if x >= q_hat:
        return q_hat + lam if up else q_hat
    return q_hat - lam if down else q_hat


def frugal_update(state: EstimatorState, x: float, u: float) -> EstimatorState:
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    return replace(state, q_hat=frugal_step(state.q_hat, state.q, state.lam, x, u, state.literal_frugal))


def update(state: EstimatorState, x: float, rng: np.random.Generator) -> EstimatorState:
    """Advance ``state`` by one sample.

    Draws exactly one uniform from ``rng`` for Frugal and none for DUMIQE, so
    replaying the same generator reproduces the same trajectory.
    """
    if state.kind == EstimatorKind.DUMIQE:
        return dumique_update(state, x)
    return frugal_update(state, x, float(rng.random()))
