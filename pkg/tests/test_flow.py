"""Tests for flow-law estimation, serialization, the GLRT and intensities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobmdp.events import L1Event, OrderType
from lobmdp.fixtures import build_fixture_model
from lobmdp.flow import (
    GLRT_DF,
    FlowEstimator,
    FlowModel,
    estimate_flow,
    glrt,
    recover_intensities,
)
from lobmdp.lobsim import simulate_events


def _ev(ts, etype, size=1, bid=100, ask=101, bv=5, av=5):
    return L1Event(ts, etype, size, bid, ask, bv, av)


def _hand_stream():
    """Four events: three transitions, all from the balanced middle bin."""
    return [
        _ev(0, OrderType.LB, bv=5, av=5),
        _ev(1, OrderType.LB, bv=6, av=5),
        _ev(2, OrderType.MS, size=2, bv=4, av=5),
        _ev(3, OrderType.LB, bv=5, av=5),
    ]


class TestEstimateFlow:
    def test_hand_counts(self):
        m = estimate_flow(_hand_stream(), k=8)
        # transitions: (3,LB)->LB, (3,LB)->MS, (3,MS)->LB, one each
        assert m.counts[2, OrderType.LB, OrderType.LB] == 1
        assert m.counts[2, OrderType.LB, OrderType.MS] == 1
        assert m.counts[2, OrderType.MS, OrderType.LB] == 1
        assert m.counts.sum() == 3
        assert m.p[2, OrderType.LB, OrderType.LB] == 0.5
        assert m.usable[2, OrderType.LB]
        assert not m.usable[0, OrderType.MB]
        # unusable rows fall back to uniform
        assert np.allclose(m.p[0, OrderType.MB], 1 / 6)

    def test_smoothing_marks_all_rows_usable(self):
        m = estimate_flow(_hand_stream(), k=8, smoothing=0.5)
        assert m.usable.all()
        m.validate()

    def test_too_short_or_bad_args(self):
        with pytest.raises(ValueError):
            estimate_flow(_hand_stream()[:1], k=8)
        with pytest.raises(ValueError):
            estimate_flow(_hand_stream(), k=8, smoothing=-1)
        with pytest.raises(ValueError):
            estimate_flow(_hand_stream(), k=3)  # volumes exceed cap

    def test_mo_size_law_truncates_and_pools(self):
        evs = [
            _ev(0, OrderType.LB, bv=3, av=3),
            _ev(1, OrderType.MS, size=2, bv=1, av=3),
            _ev(2, OrderType.LB, bv=2, av=3),
        ]
        m = estimate_flow(evs, k=4)
        # observed: one MS of size 2 against a bid queue of 3
        assert m.mo_size_bid[3, 2] == 1.0
        # unobserved row 2 borrows the pooled law truncated to 1..2
        assert m.mo_size_bid[2, 2] == 1.0
        # row 1 truncates pooled mass to size 1
        assert m.mo_size_bid[1, 1] == 1.0
        m.validate()

    def test_theta_and_refill(self):
        # mid moves: up, up, down  ->  one continuation out of two
        evs = [
            _ev(0, OrderType.LB, bid=100, ask=101, bv=2, av=2),
            _ev(1, OrderType.MB, bid=101, ask=102, bv=3, av=4),
            _ev(2, OrderType.MB, bid=102, ask=103, bv=3, av=4),
            _ev(3, OrderType.MS, bid=101, ask=102, bv=5, av=1),
        ]
        m = estimate_flow(evs, k=8)
        assert m.n_changes == 3
        assert m.n_continuations == 1
        assert m.theta == pytest.approx(0.5)
        # refill law from the post-change snapshots (3,3,5 bid / 4,4,1 ask)
        assert m.refill_bid[3] == pytest.approx(2 / 3)
        assert m.refill_bid[5] == pytest.approx(1 / 3)
        assert m.refill_ask[4] == pytest.approx(2 / 3)
        assert m.refill_ask[1] == pytest.approx(1 / 3)
        assert m.refill_bid[0] == 0.0

    def test_no_changes_defaults_theta_half(self):
        m = estimate_flow(_hand_stream(), k=8)
        assert m.theta == 0.5
        assert m.n_changes == 0


class TestFlowModelSerialization:
    def test_round_trip(self):
        m = build_fixture_model(k=4)
        m2 = FlowModel.from_json(m.to_json())
        for name in ("p", "counts", "usable", "mo_size_bid", "mo_size_ask",
                     "refill_bid", "refill_ask"):
            assert np.array_equal(getattr(m, name), getattr(m2, name)), name
        assert m2.theta == m.theta
        assert m2.k == m.k
        m2.validate()

    def test_bad_schema_version(self):
        import json

        payload = json.loads(build_fixture_model(k=3).to_json())
        payload["schema_version"] = 99
        with pytest.raises(Exception):
            FlowModel.from_json(json.dumps(payload))

    def test_validate_rejects_corruption(self):
        m = build_fixture_model(k=3)
        m.refill_bid = m.refill_bid.copy()
        m.refill_bid[0] = 0.1
        with pytest.raises(ValueError):
            m.validate()

    def test_mirror_is_involution_and_valid(self):
        m = build_fixture_model(k=4)
        mm = m.mirror()
        mm.validate()
        back = mm.mirror()
        assert np.allclose(back.p, m.p)
        assert np.array_equal(back.counts, m.counts)
        assert np.allclose(back.refill_bid, m.refill_bid)

    def test_fixture_is_mirror_symmetric(self):
        m = build_fixture_model(k=4)
        mm = m.mirror()
        assert np.allclose(mm.p, m.p)
        assert np.allclose(mm.refill_bid, m.refill_bid)
        assert np.allclose(mm.mo_size_bid, m.mo_size_bid)


class TestGlrt:
    def test_zero_statistic_when_rows_identical(self):
        # every conditional row identical within each bin -> statistic 0
        m = build_fixture_model(k=4)
        m.counts = np.tile(
            np.array([[10, 20, 30, 10, 20, 10]]), (5, 6, 1)
        ).astype(np.int64)
        res = glrt(m)
        assert res.statistic == pytest.approx(0.0, abs=1e-9)
        assert res.df == GLRT_DF == 125
        assert res.pvalue == pytest.approx(1.0)

    def test_empty_cells_contribute_nothing(self):
        m = build_fixture_model(k=4)
        m.counts = np.zeros((5, 6, 6), dtype=np.int64)
        m.counts[0, 0, 0] = 7  # a single observed cell
        res = glrt(m)
        assert res.statistic == pytest.approx(0.0, abs=1e-12)

    def test_detects_type_dependence(self):
        m = build_fixture_model(k=4)
        counts = np.zeros((5, 6, 6), dtype=np.int64)
        counts[:, 0, :] = 100  # type 0 rows uniform
        counts[:, 1, 1] = 600  # type 1 rows degenerate
        m.counts = counts
        res = glrt(m)
        assert res.statistic > 200
        assert res.pvalue < 1e-4

    @settings(max_examples=10, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_statistic_invariant_under_bin_relabeling(self, seed):
        rng = np.random.default_rng(seed)
        m = build_fixture_model(k=4)
        m.counts = rng.integers(0, 50, size=(5, 6, 6)).astype(np.int64)
        perm = rng.permutation(5)
        m2 = build_fixture_model(k=4)
        m2.counts = m.counts[perm]
        assert glrt(m).statistic == pytest.approx(glrt(m2).statistic)


class TestRecoverIntensities:
    def test_rate_times_holding_is_probability(self):
        evs = simulate_events(
            build_fixture_model(k=4), n_events=4000, seed=5, path_index=0
        )
        recs = recover_intensities(evs)
        assert recs  # at least one state seen
        for rec in recs.values():
            lam = np.array(rec.rates)
            probs = np.array(rec.probs)
            assert np.allclose(lam * rec.holding, probs, atol=1e-12)
            assert probs.sum() == pytest.approx(1.0)

    def test_too_short(self):
        with pytest.raises(ValueError):
            recover_intensities([_ev(0, OrderType.LB)])


class TestFlowEstimator:
    def test_sklearn_contract(self):
        from sklearn.base import clone

        est = FlowEstimator(k=4, smoothing=0.1)
        cloned = clone(est)
        assert cloned.get_params() == {"k": 4, "smoothing": 0.1}

    def test_fit_predict_score(self):
        evs = simulate_events(
            build_fixture_model(k=4), n_events=3000, seed=9, path_index=0
        )
        est = FlowEstimator(k=4).fit(evs)
        proba = est.predict_proba([(3, int(OrderType.LB)), (1, int(OrderType.MB))])
        assert proba.shape == (2, 6)
        assert np.allclose(proba.sum(axis=1), 1.0)
        assert est.score(evs) > -np.log(6) - 0.5  # better than uniform-ish

    def test_unfitted_raises(self):
        with pytest.raises(RuntimeError):
            FlowEstimator().predict_proba([(3, 2)])
