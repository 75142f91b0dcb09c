import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bisect_inv_chisq, bisect_inv_norm, chisq_cdf_mp, norm_cdf
from qtrack.streams import (
    ArrayStream, ArrivalProfile, ChiSqSineSpec, NormalSineSpec, StreamState, chisq_cdf,
    fast_segment, ingest_timestamps, inv_chisq_cdf, inv_norm_cdf, next_sample, read_samples,
    single_regime, synthetic_timestamps, tau, true_quantile, write_timestamps,
)

# frozen from the bisection oracles in tests/oracles.py
Z_07 = 0.5244005127080404
CHISQ6_MEDIAN = 5.348120627447121
CHISQ6_Q90 = 10.64464067566842


class TestInvNorm:
    def test_median(self):
        assert inv_norm_cdf(0.5) == 0.0

    def test_q07(self):
        assert bisect_inv_norm(0.7) == pytest.approx(Z_07, abs=1e-14)
        assert inv_norm_cdf(0.7) == pytest.approx(Z_07, abs=1e-9)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(1e-12, 1 - 1e-12))
    def test_cdf_residual(self, p):
        assert abs(norm_cdf(inv_norm_cdf(p)) - p) <= 1e-9

    @settings(max_examples=300, deadline=None)
    @given(st.floats(1e-6, 0.5))
    def test_symmetry(self, p):
        # below ~1e-6 the rounding of 1 - p itself exceeds the tolerance
        assert inv_norm_cdf(1 - p) == pytest.approx(-inv_norm_cdf(p), abs=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, math.nan])
    def test_rejects(self, p):
        with pytest.raises(ValueError):
            inv_norm_cdf(p)


class TestInvChisq:
    def test_exponential_case(self):
        assert inv_chisq_cdf(0.5, 2) == pytest.approx(2 * math.log(2), abs=1e-12)

    @pytest.mark.parametrize("p", [0.01, 0.3, 0.9, 0.999])
    def test_exponential_closed_form(self, p):
        assert inv_chisq_cdf(p, 2.0) == pytest.approx(-2 * math.log1p(-p), rel=1e-12)

    def test_df6_values(self):
        assert bisect_inv_chisq(0.5, 6) == pytest.approx(CHISQ6_MEDIAN, rel=1e-14)
        assert bisect_inv_chisq(0.9, 6) == pytest.approx(CHISQ6_Q90, rel=1e-14)
        assert inv_chisq_cdf(0.5, 6) == pytest.approx(CHISQ6_MEDIAN, abs=1e-9)
        assert inv_chisq_cdf(0.9, 6) == pytest.approx(CHISQ6_Q90, abs=1e-9)

    def test_small_p_goes_to_zero(self):
        vals = [inv_chisq_cdf(p, 6) for p in (1e-2, 1e-4, 1e-8, 1e-12)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-2

    @pytest.mark.parametrize("df", [0.1, 0.5, 1, 2.5, 4, 6, 8, 30, 200, 1000])
    @pytest.mark.parametrize("p", [1e-9, 1e-4, 0.01, 0.3, 0.5, 0.7, 0.99, 1 - 1e-6])
    def test_against_oracle(self, p, df):
        x = inv_chisq_cdf(p, df)
        assert abs(chisq_cdf_mp(x, df) - p) <= 1e-8

    @settings(max_examples=200, deadline=None)
    @given(p=st.floats(1e-6, 1 - 1e-6), df=st.floats(0.2, 100))
    def test_cdf_residual(self, p, df):
        assert abs(chisq_cdf(inv_chisq_cdf(p, df), df) - p) <= 1e-8

    def test_vectorized(self):
        df = np.array([[2.0, 4.0], [6.0, 8.0]])
        out = inv_chisq_cdf(0.7, df)
        assert out.shape == (2, 2)
        for i in range(2):
            for j in range(2):
                assert out[i, j] == pytest.approx(inv_chisq_cdf(0.7, df[i, j]), rel=1e-14)

    @pytest.mark.parametrize("p,df", [(0.0, 2), (1.0, 2), (0.5, 0.0), (0.5, -1)])
    def test_rejects(self, p, df):
        with pytest.raises(ValueError):
            inv_chisq_cdf(p, df)


class TestTau:
    spec = NormalSineSpec()

    def test_values(self):
        assert tau(0, self.spec) == 500
        assert tau(9_999, self.spec) == 500
        assert tau(10_000, self.spec) == 10_000
        assert tau(20_000, self.spec) == 500

    @given(st.integers(0, 10**9))
    def test_periodic(self, n):
        assert tau(n, self.spec) == tau(n + 20_000, self.spec)

    def test_equal_proportion(self):
        t = tau(np.arange(40_000), self.spec)
        assert set(np.unique(t)) == {500, 10_000}
        assert np.sum(t == 500) == np.sum(t == 10_000)

    def test_fast_segment(self):
        n = np.arange(40_000)
        assert np.array_equal(fast_segment(n, self.spec), tau(n, self.spec) == 500)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            tau(-1, self.spec)


class TestSpecs:
    def test_defaults(self):
        s = NormalSineSpec()
        assert (s.mu, s.b, s.sigma, s.tau1, s.tau2, s.t_switch) == (8.0, 2.0, 1.0, 500, 10_000, 10_000)
        assert ChiSqSineSpec().nu == 6.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            NormalSineSpec(sigma=0)
        with pytest.raises(ValueError):
            ChiSqSineSpec(nu=2, b=2)
        with pytest.raises(ValueError):
            NormalSineSpec(tau1=0)

    def test_true_quantile_normal(self):
        s = NormalSineSpec()
        assert true_quantile(s, 0, 0.5) == pytest.approx(8.0)
        assert true_quantile(s, 0, 0.7) == pytest.approx(8 + Z_07, abs=1e-9)
        # quarter period of the fast sine
        assert true_quantile(s, 125, 0.5) == pytest.approx(10.0)

    def test_true_quantile_chisq(self):
        s = ChiSqSineSpec()
        assert true_quantile(s, 0, 0.5) == pytest.approx(CHISQ6_MEDIAN, abs=1e-9)
        ns = np.arange(0, 30_000, 37)
        got = true_quantile(s, ns, 0.9)
        want = [inv_chisq_cdf(0.9, d) for d in s.df(ns)]
        assert np.allclose(got, want, rtol=1e-13)

    def test_rejects_q(self):
        with pytest.raises(ValueError):
            true_quantile(NormalSineSpec(), 0, 1.0)

    def test_phase_not_continuous_across_switch(self):
        s = NormalSineSpec()
        # literal evaluation: the phase restarts from n / tau2 at the switch
        assert s.center(10_000) == pytest.approx(8 + 2 * math.sin(2 * math.pi * 10_000 / 10_000))
        assert s.center(9_999) == pytest.approx(8 + 2 * math.sin(2 * math.pi * 9_999 / 500))

    def test_single_regime(self):
        s = single_regime(NormalSineSpec(), 500)
        assert np.all(tau(np.arange(50_000), s) == 500)


class TestSampling:
    def test_normal_moments_at_zero_phase(self):
        s = NormalSineSpec()
        n = np.zeros(200_000, dtype=np.int64)
        x = s.sample(np.random.default_rng(0), n)
        assert x.mean() == pytest.approx(8.0, abs=0.01)
        assert x.std() == pytest.approx(1.0, abs=0.01)

    def test_chisq_mean_at_zero_phase(self):
        s = ChiSqSineSpec()
        x = s.sample(np.random.default_rng(0), np.zeros(200_000, dtype=np.int64))
        assert x.mean() == pytest.approx(6.0, abs=0.03)

    @pytest.mark.parametrize("spec", [NormalSineSpec(), ChiSqSineSpec()], ids=["normal", "chisq"])
    @pytest.mark.parametrize("q", [0.5, 0.7, 0.9])
    @pytest.mark.parametrize("n", [0, 125, 10_375])
    def test_coverage(self, spec, q, n):
        ns = np.full(1_000_000, n, dtype=np.int64)
        x = spec.sample(np.random.default_rng(17), ns)
        assert np.mean(x <= true_quantile(spec, n, q)) == pytest.approx(q, abs=0.005)

    def test_stream_determinism(self):
        a = StreamState(ChiSqSineSpec(), 5).take(1000)
        b = StreamState(ChiSqSineSpec(), 5).take(1000)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_chunking_does_not_matter(self):
        a = StreamState(NormalSineSpec(), 3)
        b = StreamState(NormalSineSpec(), 3)
        xa = np.concatenate([a.take(10)[0], a.take(990)[0]])
        xb = b.take(1000)[0]
        assert np.array_equal(xa, xb)

    def test_next_sample(self):
        s = StreamState(NormalSineSpec(), 0)
        _, n0 = next_sample(s)
        _, n1 = next_sample(s)
        assert (n0, n1) == (0, 1)


class TestArrayStream:
    def test_replay(self):
        s = ArrayStream([1.0, 2.0, 3.0])
        xs, ns = s.take(2)
        assert list(xs) == [1.0, 2.0] and list(ns) == [0, 1]
        assert s.truth(ns, 0.5) is None
        with pytest.raises(ValueError):
            s.take(2)


class TestTimestamps:
    def test_half_second_gaps(self):
        r = ingest_timestamps([0.0, 0.5, 1.0], np.random.default_rng(0), resolution=0.0)
        assert list(r) == [2.0, 2.0]

    def test_constant_gap(self):
        r = ingest_timestamps(np.arange(0, 50, 2.5), np.random.default_rng(0), resolution=0.0)
        assert np.allclose(r, 0.4)

    def test_burst_scales_rate(self):
        ts = np.concatenate([np.arange(0, 100, 10.0), 100 + np.arange(1, 11, 1.0)])
        r = ingest_timestamps(ts, np.random.default_rng(0), resolution=0.0)
        assert r[-1] / r[0] == pytest.approx(10.0)

    def test_jitter_keeps_rates_positive(self):
        ts = np.repeat(np.arange(100.0), 3)
        r = ingest_timestamps(ts, np.random.default_rng(1), resolution=1.0)
        assert len(r) == len(ts) - 1
        assert np.all(r > 0)

    def test_ties_dropped_with_warning(self):
        with pytest.warns(RuntimeWarning, match="dropped 1"):
            r = ingest_timestamps([0.0, 1.0, 1.0, 2.0], np.random.default_rng(0), resolution=0.0)
        assert list(r) == [1.0, 1.0]

    def test_rejects_decreasing(self):
        with pytest.raises(ValueError):
            ingest_timestamps([0.0, 2.0, 1.0], np.random.default_rng(0))

    def test_jitter_deterministic(self):
        ts = np.arange(200.0)
        a = ingest_timestamps(ts, np.random.default_rng(4))
        b = ingest_timestamps(ts, np.random.default_rng(4))
        assert np.array_equal(a, b)

    def test_read_and_write(self, tmp_path):
        p = tmp_path / "ts.txt"
        p.write_text("# header\n1\n\n2.5\n  3 \n")
        assert list(read_samples(p)) == [1.0, 2.5, 3.0]
        write_timestamps(tmp_path / "out.txt", [1.0, 2.25])
        assert list(read_samples(tmp_path / "out.txt")) == [1.0, 2.25]

    def test_read_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("1\nabc\n")
        with pytest.raises(ValueError, match=":2:"):
            read_samples(p)

    def test_profile_rates(self):
        prof = ArrivalProfile(base_rate=1.0, night_factor=0.3, event_at=86400 + 8 * 3600, event_factor=10)
        assert prof.rate(3600.0) == pytest.approx(0.3)
        assert prof.rate(12 * 3600.0) == pytest.approx(1.0)
        assert prof.rate(86400 + 12 * 3600.0) == pytest.approx(10.0)

    def test_synthetic_counts_follow_profile(self):
        prof = ArrivalProfile(base_rate=0.2, night_factor=0.25, event_at=2 * 86400 + 8 * 3600)
        ts = synthetic_timestamps(prof, 3 * 86400.0, np.random.default_rng(0))
        assert np.all(np.diff(ts) >= 0)
        assert np.all(ts == np.floor(ts))
        day1 = np.sum((ts >= 12 * 3600) & (ts < 20 * 3600))
        day3 = np.sum((ts >= 2 * 86400 + 12 * 3600) & (ts < 2 * 86400 + 20 * 3600))
        night1 = np.sum((ts >= 86400) & (ts < 86400 + 6 * 3600))
        assert day1 == pytest.approx(0.2 * 8 * 3600, rel=0.05)
        assert day3 == pytest.approx(2.0 * 8 * 3600, rel=0.05)
        assert night1 == pytest.approx(0.05 * 6 * 3600, rel=0.1)
