"""Experiment harness: observed tracking MSE, constant step-size baselines and
trace recording.

All reported MSEs skip the first 1% of steps, where every estimator is still
walking in from its initial value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .controllers import _Ensemble
from .estimators import EstimatorKind, check_config
from .mse_tracking import SmoothingParams
from .streams import StreamState, fast_segment, single_regime

CHUNK = 1 << 16
WARMUP_FRACTION = 0.01

TRACE_COLUMNS = ("n", "x", "estimate", "lambda", "mse_hat", "true_q", "sq_err")
GRID_COLUMNS = ("lambda", "mse", "n_steps", "seed")


def warmup_steps(n: int) -> int:
    return int(n * WARMUP_FRACTION)


def seed_streams(seed) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent seeds for the data stream and for the estimators' own draws."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    data, est = ss.spawn(2)
    return data, est


def observed_mse(estimates, truths) -> float:
    """Mean squared deviation of estimates from true quantiles."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {tru.shape}")
    if est.size == 0:
        raise ValueError("need at least one estimate")
    err = est - tru
    # numpy's pairwise summation keeps the rounding error at O(log N)
    return float(np.mean(err * err))


class _MeanAccumulator:
    def __init__(self):
        self.parts: list[float] = []
        self.count = 0

    def add(self, values: np.ndarray) -> None:
        if len(values):
            self.parts.append(float(np.sum(values)))
            self.count += len(values)

    @property
    def mean(self) -> float:
        return math.fsum(self.parts) / self.count if self.count else math.nan


@dataclass
class TrackingTrace:
    n: np.ndarray
    x: np.ndarray
    estimate: np.ndarray
    lam: np.ndarray
    mse_hat: np.ndarray
    true_q: np.ndarray | None
    sq_err: np.ndarray | None
    n_steps: int
    thinning: int
    observed_mse: float | None
    final_lambda: float

    def __len__(self):
        return len(self.n)


def run_tracking(stream, controller, n_steps: int, thinning: int = 1, rng=None,
                 chunk: int = CHUNK) -> TrackingTrace:
    """Feed ``n_steps`` samples of ``stream`` to ``controller`` and record every
    ``thinning``-th step.  When the stream knows its true quantiles the trace
    carries squared errors and the observed MSE over the post-warm-up steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    q = controller.q
    skip = warmup_steps(n_steps)
    cols = {c: [] for c in ("n", "x", "estimate", "lam", "mse_hat", "true_q", "sq_err")}
    acc = _MeanAccumulator()
    has_truth = True
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        xs, ns = stream.take(k)
        out = controller.process(xs, rng)
        truth = stream.truth(ns, q)
        keep = (np.arange(done, done + k) % thinning) == 0
        cols["n"].append(ns[keep])
        cols["x"].append(xs[keep])
        cols["estimate"].append(out.estimate[keep])
        cols["lam"].append(out.lam[keep])
        cols["mse_hat"].append(out.mse_hat[keep])
        if truth is None:
            has_truth = False
        else:
            err = out.estimate - truth
            sq = err * err
            acc.add(sq[max(0, skip - done):])
            cols["true_q"].append(truth[keep])
            cols["sq_err"].append(sq[keep])
        done += k
    cat = {c: np.concatenate(v) if v else None for c, v in cols.items()}
    return TrackingTrace(
        n=cat["n"], x=cat["x"], estimate=cat["estimate"], lam=cat["lam"], mse_hat=cat["mse_hat"],
        true_q=cat["true_q"] if has_truth else None, sq_err=cat["sq_err"] if has_truth else None,
        n_steps=n_steps, thinning=thinning, observed_mse=acc.mean if has_truth else None,
        final_lambda=float(controller.current_lambda),
    )


def theoretical_mix(mse_fast: float, mse_slow: float) -> float:
    """Baseline for a stream spending equal time in fast and slow dynamics."""
    if mse_fast < 0 or mse_slow < 0:
        raise ValueError("MSEs must be non-negative")
    # midpoint form stays between the inputs even for subnormals
    return mse_fast + 0.5 * (mse_slow - mse_fast)


@dataclass
class GridResult:
    lambdas: np.ndarray
    mse: np.ndarray
    n_steps: int
    seed: object
    mse_fast: np.ndarray | None = None
    mse_slow: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def argmin(self) -> int:
        return int(np.argmin(self.mse))

    @property
    def best_lambda(self) -> float:
        return float(self.lambdas[self.argmin])

    @property
    def best_mse(self) -> float:
        return float(self.mse[self.argmin])

    @property
    def mixture(self) -> float | None:
        if self.mse_fast is None or self.mse_slow is None:
            return None
        return theoretical_mix(float(self.mse_fast.min()), float(self.mse_slow.min()))


def constant_lambda_mse(spec, lambdas, n_steps: int, q: float, seed=0,
                        kind=EstimatorKind.DUMIQE, literal_frugal: bool = False,
                        q_hat0: float | None = None, chunk: int = CHUNK) -> np.ndarray:
    """Observed MSE of a plain estimator at each constant step size."""
    kind = EstimatorKind.parse(kind)
    lams = np.ascontiguousarray(lambdas, dtype=float)
    for lam in lams:
        check_config(kind, q, lam)
    data_seed, est_seed = seed_streams(seed)
    stream = StreamState(spec, data_seed)
    rng = np.random.default_rng(est_seed)
    skip = warmup_steps(n_steps)
    qh = np.empty_like(lams)
    acc = np.zeros_like(lams)
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        xs, ns = stream.take(k)
        if done == 0:
            qh[:] = xs[0] if q_hat0 is None else q_hat0
        truth = stream.truth(ns, q)
        U = rng.random(k * len(lams)) if kind == EstimatorKind.FRUGAL else K_NO_UNIFORMS
        K.plain_block(qh, lams, xs, U, truth, q, int(kind), literal_frugal, done, skip, acc)
        done += k
    return acc / (n_steps - skip)


K_NO_UNIFORMS = np.zeros(1)


def grid_search_constant_lambda(spec, grid, n_steps: int, q: float, seed=0,
                                kind=EstimatorKind.DUMIQE, mixture: bool = False,
                                literal_frugal: bool = False) -> GridResult:
    """Best constant step size on ``spec``.  With ``mixture`` also evaluates the
    pure-fast and pure-slow versions of the stream for the 50/50 baseline."""
    lams = np.asarray(grid, dtype=float)
    mse = constant_lambda_mse(spec, lams, n_steps, q, seed, kind, literal_frugal)
    res = GridResult(lambdas=lams, mse=mse, n_steps=n_steps, seed=seed)
    if mixture:
        res.mse_fast = constant_lambda_mse(single_regime(spec, spec.tau1), lams, n_steps, q, seed,
                                           kind, literal_frugal)
        res.mse_slow = constant_lambda_mse(single_regime(spec, spec.tau2), lams, n_steps, q, seed,
                                           kind, literal_frugal)
    return res


def mse_fidelity(spec, lambdas, n_steps: int, q: float, seed=0, kind=EstimatorKind.DUMIQE,
                 q_tilde: float | None = None, smoothing: SmoothingParams | None = None,
                 literal_frugal: bool = False, chunk: int = CHUNK) -> tuple[np.ndarray, np.ndarray]:
    """Run one tracked quantile per step size and return, per step size, the
    time-averaged estimated MSE and the observed MSE against the truth."""
    kind = EstimatorKind.parse(kind)
    lams = np.ascontiguousarray(lambdas, dtype=float)
    sm = smoothing or SmoothingParams()
    ens = _Ensemble(kind, q, q_tilde, lams, sm, literal_frugal, None)
    data_seed, est_seed = seed_streams(seed)
    stream = StreamState(spec, data_seed)
    rng = np.random.default_rng(est_seed)
    skip = warmup_steps(n_steps)
    acc_hat = np.zeros(len(lams))
    acc_err = np.zeros(len(lams))
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        xs, ns = stream.take(k)
        if done == 0:
            ens._start(float(xs[0]))
        truth = stream.truth(ns, q)
        U = rng.random(2 * k * len(lams)) if kind == EstimatorKind.FRUGAL else K_NO_UNIFORMS
        K.stats_block(ens.S, ens.counts, xs, U, truth, q, ens.q_tilde, int(kind), literal_frugal,
                      sm.alpha, sm.beta, sm.gamma, sm.kappa, sm.eta, done, skip, acc_hat, acc_err)
        done += k
    m = n_steps - skip
    return acc_hat / m, acc_err / m


def segment_means(trace: TrackingTrace, spec, values=None) -> tuple[float, float]:
    """Mean of ``values`` (default: selected lambda) over fast and slow segments."""
    v = trace.lam if values is None else values
    fast = fast_segment(trace.n, spec)
    return float(np.mean(v[fast])), float(np.mean(v[~fast]))


def summarize_seeds(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max()), "n": int(v.size)}


# ------------------------------------------------------------------ CSV output


def fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.17g}"


def write_trace_csv(fh, trace: TrackingTrace) -> None:
    fh.write(",".join(TRACE_COLUMNS) + "\n")
    tq = trace.true_q
    se = trace.sq_err
    for i in range(len(trace)):
        row = (
            str(int(trace.n[i])),
            fmt(float(trace.x[i])),
            fmt(float(trace.estimate[i])),
            fmt(float(trace.lam[i])),
            fmt(float(trace.mse_hat[i])),
            "" if tq is None else fmt(float(tq[i])),
            "" if se is None else fmt(float(se[i])),
        )
        fh.write(",".join(row) + "\n")


def write_grid_csv(fh, result: GridResult) -> None:
    fh.write(",".join(GRID_COLUMNS) + "\n")
    for lam, m in zip(result.lambdas, result.mse):
        fh.write(f"{fmt(float(lam))},{fmt(float(m))},{result.n_steps},{result.seed}\n")
