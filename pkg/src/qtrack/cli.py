"""Command-line entry point: ``qtrack {track,grid,synth,timestamps}``.

Defaults follow the synthetic experiments the method was evaluated on
(sine streams with tau = 500 / 10^4, T = 10^4, grid exp(-7)..exp(0) at 0.05
spacing, HIL with a = 1.5 and M = 1000 + U[0, 1000]).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import bench
from .controllers import FixedState, HilConfig, HilState, OracleConfig, OracleState
from .estimators import EstimatorKind
from .mse_tracking import SmoothingParams, default_q_tilde, rule_of_thumb
from .streams import (
    ArrayStream, ArrivalProfile, ChiSqSineSpec, NormalSineSpec, StreamState, ingest_timestamps,
    read_samples, synthetic_timestamps, write_timestamps,
)

SEED_ENV = "QTRACK_SEED"


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _add_stream_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic stream")
    g.add_argument("--stream", choices=("normal-sine", "chisq-sine"), default="normal-sine",
                   help="generator (default: normal-sine)")
    g.add_argument("--mu", type=float, default=8.0, help="normal location (default: 8)")
    g.add_argument("--sigma", type=float, default=1.0, help="normal scale (default: 1)")
    g.add_argument("--nu", type=float, default=6.0, help="chi-square base df (default: 6)")
    g.add_argument("--b", type=float, default=2.0, help="sine amplitude (default: 2)")
    g.add_argument("--tau1", type=int, default=500, help="fast period (default: 500)")
    g.add_argument("--tau2", type=int, default=10_000, help="slow period (default: 10000)")
    g.add_argument("--t-switch", type=int, default=10_000,
                   help="steps between period switches, T (default: 10000)")


def _add_estimator_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimator")
    g.add_argument("--estimator", choices=("dumiqe", "frugal"), default="dumiqe",
                   help="incremental estimator (default: dumiqe)")
    g.add_argument("--q", type=float, default=0.7, help="target probability (default: 0.7)")
    g.add_argument("--frugal-literal", action="store_true",
                   help="use the indicators I(q<U), I(1-q<U) instead of I(U<=q), I(U<=1-q) "
                        "(settles at the 1-q quantile)")


def _add_grid_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("lambda grid")
    g.add_argument("--log-lambda-min", type=float, default=-7.0, help="log of smallest lambda (default: -7)")
    g.add_argument("--log-lambda-max", type=float, default=0.0, help="log of largest lambda (default: 0)")
    g.add_argument("--grid-points", type=int, default=141,
                   help="number of grid values, evenly spaced in log lambda (default: 141, i.e. step 0.05)")


def _add_common_run_args(p: argparse.ArgumentParser, n_default: int | None) -> None:
    p.add_argument("--n", type=int, default=n_default,
                   help=f"number of samples (default: {n_default if n_default else 'all input'})")
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--out", default="-", help="output CSV path, '-' for stdout (default: -)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qtrack", description="Quantile tracking with MSE-guided step sizes.")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="track a quantile and write a per-step trace")
    _add_stream_args(t)
    src = t.add_argument_group("file input")
    src.add_argument("--input", help="read samples or timestamps from this file instead of a generator")
    src.add_argument("--transform", choices=("none", "rate"), default="none",
                     help="'rate' turns timestamps into 1/(T_t - T_{t-1}) (default: none)")
    src.add_argument("--resolution", type=float, default=1.0,
                     help="timestamp resolution in seconds for jitter (default: 1)")
    _add_estimator_args(t)
    t.add_argument("--q-tilde", type=float, default=None,
                   help="auxiliary probability (default: q+0.1 if q<=0.5 else q-0.1)")
    c = t.add_argument_group("controller")
    c.add_argument("--controller", choices=("oracle", "hil", "fixed"), default="oracle",
                   help="step-size controller (default: oracle)")
    c.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="fixed lambda, or HIL starting lambda (default: 1 for frugal, 0.05 for dumiqe)")
    _add_grid_args(t)
    c.add_argument("--friction", action="store_true", help="oracle moves at most one grid step per sample")
    c.add_argument("--extend-grid", action="store_true", help="oracle grows the grid at its ends")
    c.add_argument("--margin", type=int, default=1, help="grid-extension trigger distance (default: 1)")
    c.add_argument("--extension-factor", type=float, default=None,
                   help="ratio for new grid values (default: the grid's own spacing)")
    c.add_argument("--a", type=float, default=1.5, help="HIL ratio (default: 1.5)")
    c.add_argument("--m", type=int, default=1000, help="HIL base rebalance period M (default: 1000)")
    c.add_argument("--m-jitter", type=int, default=1000,
                   help="HIL adds a uniform integer in [0, m-jitter] to M (default: 1000)")
    s = t.add_argument_group("smoothing")
    s.add_argument("--alpha", type=float, default=0.5, help="mean weight (default: 0.5)")
    s.add_argument("--smoothing-m", type=int, default=1000,
                   help="rule-of-thumb horizon: beta=gamma=kappa=eta=1-0.01^(1/M) (default: 1000)")
    for name in ("beta", "gamma", "kappa", "eta"):
        s.add_argument(f"--{name}", type=float, default=None, help=f"override {name}")
    _add_common_run_args(t, None)
    t.add_argument("--thinning", type=int, default=1, help="write every k-th step (default: 1)")

    g = sub.add_parser("grid", help="observed MSE of constant-lambda estimators over a grid")
    _add_stream_args(g)
    _add_estimator_args(g)
    _add_grid_args(g)
    g.add_argument("--mixture", action="store_true",
                   help="also report the 50/50 fast/slow single-regime baseline")
    _add_common_run_args(g, 1_000_000)

    y = sub.add_parser("synth", help="export a synthetic stream with its true quantile")
    _add_stream_args(y)
    y.add_argument("--q", type=float, default=0.7, help="probability for true_q (default: 0.7)")
    _add_common_run_args(y, 1_000_000)

    ts = sub.add_parser("timestamps", help="synthetic event timestamps (Poisson, day/night cycle, rate step)")
    ts.add_argument("--duration", type=float, default=3 * 86400.0, help="seconds (default: 3 days)")
    ts.add_argument("--base-rate", type=float, default=0.05, help="daytime events/second (default: 0.05)")
    ts.add_argument("--night-factor", type=float, default=0.3, help="night rate multiplier (default: 0.3)")
    ts.add_argument("--event-at", type=float, default=None, help="time of a rate step in seconds")
    ts.add_argument("--event-factor", type=float, default=10.0, help="rate multiplier after the step (default: 10)")
    ts.add_argument("--resolution", type=float, default=1.0, help="round down to this many seconds (default: 1)")
    ts.add_argument("--seed", type=int, default=None, help=f"RNG seed (default: ${SEED_ENV} or 0)")
    ts.add_argument("--out", default="-", help="output path, '-' for stdout (default: -)")
    return ap


def _spec(args):
    try:
        if args.stream == "normal-sine":
            return NormalSineSpec(mu=args.mu, b=args.b, sigma=args.sigma, tau1=args.tau1,
                                  tau2=args.tau2, t_switch=args.t_switch)
        return ChiSqSineSpec(nu=args.nu, b=args.b, tau1=args.tau1, tau2=args.tau2, t_switch=args.t_switch)
    except ValueError as e:
        raise UsageError(f"invalid stream: {e}") from None


def _grid(args) -> np.ndarray:
    if args.grid_points < 1:
        raise UsageError("--grid-points must be >= 1")
    if args.log_lambda_max < args.log_lambda_min:
        raise UsageError("--log-lambda-max must be >= --log-lambda-min")
    if args.grid_points == 1:
        return np.array([np.exp(args.log_lambda_min)])
    step = (args.log_lambda_max - args.log_lambda_min) / (args.grid_points - 1)
    return np.exp(args.log_lambda_min + step * np.arange(args.grid_points))


def _smoothing(args) -> SmoothingParams:
    w = rule_of_thumb(args.smoothing_m)
    vals = {n: (getattr(args, n) if getattr(args, n) is not None else w) for n in ("beta", "gamma", "kappa", "eta")}
    return SmoothingParams(alpha=args.alpha, **vals)


def _check_q(args) -> None:
    if not 0 < args.q < 1:
        raise UsageError(f"--q must lie in (0, 1), got {args.q}")


def _controller(args):
    kind = EstimatorKind.parse(args.estimator)
    qt = args.q_tilde if args.q_tilde is not None else default_q_tilde(args.q)
    sm = _smoothing(args)
    lam = args.lam if args.lam is not None else (1.0 if kind == EstimatorKind.FRUGAL else 0.05)
    if args.controller == "oracle":
        cfg = OracleConfig(lambda_grid=tuple(_grid(args)), q=args.q, q_tilde=qt, kind=kind,
                           friction=args.friction, extend_grid=args.extend_grid, margin=args.margin,
                           extension_factor=args.extension_factor, smoothing=sm,
                           literal_frugal=args.frugal_literal)
        return OracleState(cfg)
    if args.controller == "hil":
        cfg = HilConfig(a=args.a, m_base=args.m, m_jitter=args.m_jitter, initial_lambda=lam, q=args.q,
                        q_tilde=qt, kind=kind, smoothing=sm, literal_frugal=args.frugal_literal)
        return HilState(cfg)
    return FixedState(lam, q=args.q, q_tilde=qt, kind=kind, smoothing=sm, literal_frugal=args.frugal_literal)


@contextmanager
def _open_out(path):
    if path == "-":
        yield sys.stdout
        sys.stdout.flush()
        return
    with open(path, "w", newline="") as fh:
        yield fh
        fh.flush()
        os.fsync(fh.fileno())


def _seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def cmd_track(args) -> int:
    _check_q(args)
    seed = _seed(args)
    data_seed, est_seed = bench.seed_streams(seed)
    try:
        controller = _controller(args)
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None
    if args.input:
        try:
            raw = read_samples(args.input)
        except OSError as e:
            raise UsageError(f"cannot read {args.input}: {e.strerror}") from None
        except ValueError as e:
            raise UsageError(str(e)) from None
        if args.transform == "rate":
            try:
                raw = ingest_timestamps(raw, np.random.default_rng(data_seed), args.resolution)
            except ValueError as e:
                raise UsageError(f"{args.input}: {e}") from None
        stream = ArrayStream(raw)
        n = len(stream) if args.n is None else args.n
        if n > len(stream):
            raise UsageError(f"--n {n} exceeds the {len(stream)} samples available")
    else:
        if args.transform != "none":
            raise UsageError("--transform applies to --input only")
        stream = StreamState(_spec(args), data_seed)
        n = 1_000_000 if args.n is None else args.n
    if n < 1:
        raise UsageError("--n must be >= 1")
    if args.thinning < 1:
        raise UsageError("--thinning must be >= 1")
    t0 = time.perf_counter()
    try:
        trace = bench.run_tracking(stream, controller, n, args.thinning, np.random.default_rng(est_seed))
    except ValueError as e:
        raise UsageError(str(e)) from None
    elapsed = time.perf_counter() - t0
    with _open_out(args.out) as fh:
        bench.write_trace_csv(fh, trace)
    mse = "n/a" if trace.observed_mse is None else f"{trace.observed_mse:.6g}"
    print(f"steps={n} observed_mse={mse} final_lambda={trace.final_lambda:.6g} "
          f"runtime={elapsed:.3f}s rate={n / max(elapsed, 1e-9):.0f}/s", file=sys.stderr)
    return 0


def cmd_grid(args) -> int:
    _check_q(args)
    if args.n is None or args.n < 1:
        raise UsageError("--n must be >= 1")
    seed = _seed(args)
    spec = _spec(args)
    try:
        res = bench.grid_search_constant_lambda(spec, _grid(args), args.n, args.q, seed,
                                                kind=args.estimator, mixture=args.mixture,
                                                literal_frugal=args.frugal_literal)
    except ValueError as e:
        raise UsageError(str(e)) from None
    with _open_out(args.out) as fh:
        bench.write_grid_csv(fh, res)
    print(f"argmin_lambda={res.best_lambda:.6g} mse={res.best_mse:.6g}", file=sys.stderr)
    if args.mixture:
        print(f"mixture_baseline={res.mixture:.6g} fast_min={res.mse_fast.min():.6g} "
              f"slow_min={res.mse_slow.min():.6g}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    _check_q(args)
    if args.n is None or args.n < 1:
        raise UsageError("--n must be >= 1")
    data_seed, _ = bench.seed_streams(_seed(args))
    stream = StreamState(_spec(args), data_seed)
    with _open_out(args.out) as fh:
        fh.write("n,x,true_q\n")
        done = 0
        while done < args.n:
            xs, ns = stream.take(min(bench.CHUNK, args.n - done))
            tq = stream.truth(ns, args.q)
            for i in range(len(xs)):
                fh.write(f"{int(ns[i])},{bench.fmt(float(xs[i]))},{bench.fmt(float(tq[i]))}\n")
            done += len(xs)
    return 0


def cmd_timestamps(args) -> int:
    try:
        profile = ArrivalProfile(base_rate=args.base_rate, night_factor=args.night_factor,
                                 event_at=args.event_at, event_factor=args.event_factor)
        ts = synthetic_timestamps(profile, args.duration, np.random.default_rng(_seed(args)), args.resolution)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.out == "-":
        for t in ts:
            sys.stdout.write(f"{t:.17g}\n")
        sys.stdout.flush()
    else:
        write_timestamps(args.out, ts)
    print(f"events={len(ts)}", file=sys.stderr)
    return 0


COMMANDS = {"track": cmd_track, "grid": cmd_grid, "synth": cmd_synth, "timestamps": cmd_timestamps}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"qtrack {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
