"""Tests for the imbalance signal-decay and spread/continuation analyses."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobmdp.events import L1Event, OrderType
from lobmdp.fixtures import build_fixture_model
from lobmdp.imbalance import (
    ANCHORS,
    HORIZONS,
    LogisticModel,
    PerfectSeparationError,
    PredictorSample,
    accuracy_matrix,
    accuracy_to_csv,
    continuation_table,
    durations_to_csv,
    fit_logistic,
    sample_predictors,
    spread_stats,
)
from lobmdp.lobsim import simulate, simulate_events


def _ev(ts, bid, ask, bv=5, av=5, etype=OrderType.LB):
    return L1Event(ts, etype, 1, bid, ask, bv, av)


class TestSpreadStats:
    def test_transitions_and_durations(self):
        evs = [
            _ev(0, 100, 101),   # regime 1
            _ev(10, 100, 102),  # -> 2 after 10ns
            _ev(25, 100, 101),  # -> 1 after 15ns
            _ev(30, 100, 104),  # -> 3 (spread >= 3)
            _ev(40, 100, 101),  # -> 1
        ]
        s = spread_stats(evs)
        assert s.p_1to2 == pytest.approx(0.5)  # 1 -> {2, 3} once each
        assert s.p_2to1 == pytest.approx(1.0)
        assert s.transitions[2] == [1.0, 0.0, 0.0]
        assert s.durations[1] == [10, 5]
        assert s.durations[2] == [15]
        assert s.durations[3] == [10]

    def test_never_left_regime_is_none(self):
        s = spread_stats([_ev(0, 100, 101), _ev(1, 100, 101)])
        assert s.p_1to2 is None and s.transitions[0] is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            spread_stats([])


class TestContinuationTable:
    def test_hand_counts(self):
        counts, pct = continuation_table([1, 1, -1, -1, 1])
        # pairs: (+,+), (+,-), (-,-), (-,+)
        assert counts.tolist() == [[1, 1], [1, 1]]
        assert pct.tolist() == [[50.0, 50.0], [50.0, 50.0]]

    def test_rows_sum_to_100_exactly(self):
        rng = np.random.default_rng(0)
        dirs = rng.choice([-1, 1], size=1001).tolist()
        _, pct = continuation_table(dirs)
        assert pct[0].sum() == 100.0
        assert pct[1].sum() == 100.0

    def test_multiple_sequences_do_not_straddle(self):
        counts_a, _ = continuation_table([[1, 1], [-1, -1]])
        assert counts_a.sum() == 2  # no (+1,-1) pair across the break
        assert counts_a[0, 0] == 1 and counts_a[1, 1] == 1

    def test_bad_values(self):
        with pytest.raises(ValueError):
            continuation_table([1, 0, -1])
        with pytest.raises(ValueError):
            continuation_table([1])

    def test_matches_theta_on_simulated_paths(self):
        m = build_fixture_model(k=4, theta=0.75)
        seqs = [simulate(m, 60, seed=3, path_index=i).mid_changes for i in range(30)]
        _, pct = continuation_table(seqs)
        assert pct[0, 0] == pytest.approx(75.0, abs=3.0)
        assert pct[1, 1] == pytest.approx(75.0, abs=3.0)


class TestPredictorSample:
    def test_validation(self):
        PredictorSample("BEFORE", 0.5, 1, 1)
        with pytest.raises(ValueError):
            PredictorSample("NOPE", 0.5, 1, 1)
        with pytest.raises(ValueError):
            PredictorSample("BEFORE", 1.5, 1, 1)
        with pytest.raises(ValueError):
            PredictorSample("BEFORE", 0.5, 0, 1)


class TestSamplePredictors:
    def test_sample_counts_per_window(self):
        m = build_fixture_model(k=4)
        path = simulate(m, 8, seed=1, path_index=0)
        samples = sample_predictors(path)
        # window j (0-based, first included) with horizon h needs j+h < 8:
        # sum over j=0..7 of min(3, 7-j) anchors-triples
        expected_pairs = sum(min(3, 7 - j) for j in range(8))
        assert len(samples) == 3 * expected_pairs
        by_anchor = {a: sum(s.anchor == a for s in samples) for a in ANCHORS}
        assert len(set(by_anchor.values())) == 1

    def test_event_stream_skips_first_window(self):
        m = build_fixture_model(k=4)
        evs = simulate_events(m, n_changes=8, seed=1, path_index=0)
        samples = sample_predictors(evs)
        # changes visible in the stream (a move on the very first row is not)
        mid2 = [e.bid_px + e.ask_px for e in evs]
        n = sum(b != a for a, b in zip(mid2[:-1], mid2[1:]))
        expected_pairs = sum(min(3, n - 1 - j) for j in range(1, n))
        assert len(samples) == 3 * expected_pairs

    def test_before_anchor_reads_pre_depletion_snapshot(self):
        m = build_fixture_model(k=4)
        path = simulate(m, 3, seed=2, path_index=5)
        samples = sample_predictors(path)
        before_h1 = [s for s in samples if s.anchor == "BEFORE" and s.horizon == 1]
        states = [path.initial] + [s for _, s in path.steps]
        pos = [j + 1 for j, (ev, _) in enumerate(path.steps) if ev.direction is not None]
        st = states[pos[0] - 1]
        want = (st.v_bid - st.v_ask) / (st.v_bid + st.v_ask)
        assert before_h1[0].x == pytest.approx(want)
        assert before_h1[0].y == path.mid_changes[1]

    def test_deterministic_in_seed(self):
        m = build_fixture_model(k=4)
        path = simulate(m, 10, seed=4, path_index=1)
        assert sample_predictors(path, seed=7) == sample_predictors(path, seed=7)


class TestFitLogistic:
    def test_recovers_known_alpha(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, size=40000)
        alpha_true = 1.7
        y = np.where(rng.random(40000) < 1 / (1 + np.exp(-alpha_true * x)), 1, -1)
        fit = fit_logistic((x, y))
        assert fit.alpha == pytest.approx(alpha_true, abs=0.1)

    def test_zero_alpha_for_pure_noise(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, size=20000)
        y = rng.choice([-1, 1], size=20000)
        fit = fit_logistic((x, y))
        assert abs(fit.alpha) < 0.05

    def test_single_class_raises(self):
        with pytest.raises(PerfectSeparationError):
            fit_logistic((np.array([0.1, -0.2]), np.array([1, 1])))

    def test_separated_signs_raise(self):
        x = np.array([0.5, -0.5, 0.25, -0.75])
        y = np.array([1, -1, 1, -1])  # x*y > 0 everywhere
        with pytest.raises(PerfectSeparationError):
            fit_logistic((x, y))

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            fit_logistic((np.array([]), np.array([])))
        with pytest.raises(ValueError):
            fit_logistic((np.zeros(4), np.array([1, -1, 1, -1])))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=-4, max_value=4), st.integers(0, 2**31 - 1))
    def test_sign_property(self, alpha_true, seed):
        # the fitted slope has the sign of the generating slope (or is tiny)
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, size=4000)
        y = np.where(rng.random(4000) < 1 / (1 + np.exp(-alpha_true * x)), 1, -1)
        try:
            fit = fit_logistic((x, y))
        except PerfectSeparationError:
            return
        if abs(alpha_true) > 0.3:
            assert np.sign(fit.alpha) == np.sign(alpha_true)

    def test_predict_threshold(self):
        m = LogisticModel(alpha=2.0)
        assert m.predict(np.array([0.3, -0.3, 0.0])).tolist() == [1, -1, 1]
        assert LogisticModel(alpha=-2.0).predict(np.array([0.3])).tolist() == [-1]


@pytest.fixture(scope="module")
def paths():
    # short paths: only the first window of a path carries direction
    # information, so few moves per path keeps the signal undiluted
    m = build_fixture_model(k=3, theta=0.81)
    return [simulate(m, 4, seed=10, path_index=i) for i in range(2000)]


class TestAccuracyMatrix:
    def test_shape_and_range(self, paths):
        acc, models = accuracy_matrix(paths)
        assert acc.shape == (3, 3)
        assert np.all((acc >= 0.0) & (acc <= 1.0))
        assert set(models) == {(a, h) for a in ANCHORS for h in HORIZONS}

    def test_bad_split(self, paths):
        with pytest.raises(ValueError):
            accuracy_matrix(paths, split=0.0)

    def test_before_beats_chance_at_h1(self, paths):
        acc, _ = accuracy_matrix(paths)
        assert acc[2, 0] > 0.55

    def test_csv_format(self, paths):
        acc, _ = accuracy_matrix(paths)
        lines = accuracy_to_csv(acc).strip().split("\n")
        assert lines[0] == "anchor,h1,h2,h3"
        assert [ln.split(",")[0] for ln in lines[1:]] == list(ANCHORS)


class TestDurationsCsv:
    def test_histogram_rows(self):
        text = durations_to_csv([1, 2, 2, 3, 10], n_bins=3)
        lines = text.strip().split("\n")
        assert lines[0] == "bin_edge,count"
        assert len(lines) == 4
        assert sum(int(ln.split(",")[1]) for ln in lines[1:]) == 5

    def test_empty(self):
        assert durations_to_csv([]) == "bin_edge,count\n"
