"""Tests for the event-level book simulator."""

import numpy as np
import pytest

from lobmdp.events import BookState, OrderType
from lobmdp.fixtures import build_fixture_model
from lobmdp.lobsim import (
    SimEvent,
    UniformStream,
    depletion_refill,
    simulate,
    simulate_events,
    step,
)


@pytest.fixture(scope="module")
def model():
    return build_fixture_model(k=4)


class TestUniformStream:
    def test_reproducible_and_path_keyed(self):
        a = [UniformStream(7, 1).random() for _ in range(5)]
        b = [UniformStream(7, 1).random() for _ in range(5)]
        c = [UniformStream(7, 2).random() for _ in range(5)]
        assert a == b
        assert a != c
        assert all(0.0 <= u < 1.0 for u in a)


class TestSimEvent:
    def test_depletion_fields_must_pair(self):
        with pytest.raises(ValueError):
            SimEvent(OrderType.MB, 1, depleted="ask", direction=None)
        SimEvent(OrderType.MB, 1, depleted="ask", direction=1)  # ok


class TestDepletionRefill:
    def test_first_move_sign_is_side_implied(self, model):
        rng = UniformStream(0, 0)
        d_up, st_up = depletion_refill("ask", None, model, rng, OrderType.MB)
        d_dn, st_dn = depletion_refill("bid", None, model, rng, OrderType.MS)
        assert d_up == 1 and d_dn == -1
        assert st_up.v_bid >= 1 and st_up.v_ask >= 1
        assert st_up.last is OrderType.MB

    def test_persistence_frequency_matches_theta(self):
        m = build_fixture_model(k=4, theta=0.7)
        rng = UniformStream(3, 0)
        same = sum(
            depletion_refill("ask", 1, m, rng, OrderType.MB)[0] == 1
            for _ in range(20000)
        )
        assert same / 20000 == pytest.approx(0.7, abs=0.02)

    def test_refill_never_zero(self, model):
        rng = UniformStream(11, 0)
        for _ in range(2000):
            _, st = depletion_refill("bid", 1, model, rng, OrderType.MS)
            assert 1 <= st.v_bid <= model.k
            assert 1 <= st.v_ask <= model.k


class TestStep:
    def test_bookkeeping_identities(self, model):
        rng = UniformStream(1, 0)
        state = BookState(2, 2, OrderType.LB)
        for _ in range(5000):
            prev_state = state
            ev, state = step(state, model, rng, prev_direction=1)
            if ev.direction is None:
                # non-depleting events move the touched queue by +/- size
                if ev.etype is OrderType.LB:
                    assert state.v_bid == min(prev_state.v_bid + 1, model.k)
                elif ev.etype is OrderType.LS:
                    assert state.v_ask == min(prev_state.v_ask + 1, model.k)
                elif ev.etype is OrderType.CB:
                    assert state.v_bid == prev_state.v_bid - 1
                elif ev.etype is OrderType.CS:
                    assert state.v_ask == prev_state.v_ask - 1
                elif ev.etype is OrderType.MB:
                    assert state.v_ask == prev_state.v_ask - ev.size
                else:
                    assert state.v_bid == prev_state.v_bid - ev.size
                assert state.last is ev.etype
            else:
                assert state.v_bid >= 1 and state.v_ask >= 1
            assert 0 <= state.v_bid <= model.k
            assert 0 <= state.v_ask <= model.k

    def test_renormalization_blocks_impossible_events(self, model):
        rng = UniformStream(2, 0)
        diag = {}
        # empty bid: MS and CB can never be drawn
        for _ in range(3000):
            ev, _ = step(BookState(0, 3, OrderType.LS), model, rng, 1, diag)
            assert ev.etype not in (OrderType.MS, OrderType.CB)
        assert diag["renormalized"] == 3000

    def test_empty_book_rejected(self, model):
        with pytest.raises(ValueError):
            step(BookState(0, 0, OrderType.LB), model, UniformStream(0, 0))

    def test_mo_size_never_exceeds_queue(self, model):
        rng = UniformStream(4, 0)
        for _ in range(5000):
            st = BookState(3, 2, OrderType.MB)
            ev, _ = step(st, model, rng, 1)
            if ev.etype is OrderType.MB:
                assert 1 <= ev.size <= st.v_ask
            elif ev.etype is OrderType.MS:
                assert 1 <= ev.size <= st.v_bid
            else:
                assert ev.size == 1


class TestSimulate:
    def test_deterministic_and_counts_changes(self, model):
        p1 = simulate(model, 20, seed=5, path_index=3)
        p2 = simulate(model, 20, seed=5, path_index=3)
        assert p1.mid_changes == p2.mid_changes
        assert [s[0].etype for s in p1.steps] == [s[0].etype for s in p2.steps]
        assert len(p1.mid_changes) == 20
        assert sum(s[0].direction is not None for s in p1.steps) == 20
        assert all(c in (-1, 1) for c in p1.mid_changes)

    def test_first_change_sign_matches_depleted_side(self, model):
        for pi in range(20):
            path = simulate(model, 1, seed=8, path_index=pi)
            ev = next(s[0] for s in path.steps if s[0].direction is not None)
            assert ev.direction == (1 if ev.depleted == "ask" else -1)

    def test_bad_args(self, model):
        with pytest.raises(ValueError):
            simulate(model, 0)

    def test_mirror_statistics(self):
        # the fixture is buy/sell symmetric, so long-run imbalance statistics
        # are too: the mean signed imbalance over many changes is near zero
        # and up-moves occur about half the time
        m = build_fixture_model(k=4)
        ups, imb = 0, []
        for pi in range(40):
            path = simulate(m, 25, seed=13, path_index=pi)
            ups += sum(c == 1 for c in path.mid_changes)
            imb.extend(
                (s[1].v_bid - s[1].v_ask) / (s[1].v_bid + s[1].v_ask)
                for s in path.steps
                if s[1].v_bid + s[1].v_ask > 0
            )
        assert ups / 1000 == pytest.approx(0.5, abs=0.06)
        assert abs(np.mean(imb)) < 0.05


class TestSimulateEvents:
    def test_exactly_one_length_argument(self, model):
        with pytest.raises(ValueError):
            simulate_events(model, n_events=10, n_changes=5)
        with pytest.raises(ValueError):
            simulate_events(model)

    def test_stream_is_canonical(self, model):
        evs = simulate_events(model, n_events=500, seed=6, path_index=1)
        assert len(evs) == 500
        ts = [e.ts_ns for e in evs]
        assert ts == sorted(ts)
        assert all(e.ask_px - e.bid_px == 1 for e in evs)
        assert all(0 <= e.bid_vol <= model.k for e in evs)

    def test_prices_walk_with_depletions(self, model):
        evs = simulate_events(model, n_changes=30, seed=6, path_index=2)
        mid2 = [e.bid_px + e.ask_px for e in evs]
        jumps = [b - a for a, b in zip(mid2[:-1], mid2[1:]) if b != a]
        # each mid move is exactly one tick (two half-ticks)
        assert all(abs(j) == 2 for j in jumps)
        assert len(jumps) + (1 if evs[0].bid_px != 1000 else 0) == 30

    def test_matches_simulate_on_same_key(self, model):
        path = simulate(model, 10, seed=21, path_index=4)
        evs = simulate_events(model, n_changes=10, seed=21, path_index=4)
        assert [s[0].etype for s in path.steps] == [e.etype for e in evs]
        assert [s[1].v_bid for s in path.steps] == [e.bid_vol for e in evs]
