import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from dosim.agents import Alarm
from dosim.errors import InvalidMessageError
from dosim.flows import FlowKey
from dosim.kinds import Proto
from dosim.trust import (FlowStatus, Label, Mode, ReputationMessage, TrustModel,
                         aggregate_feedback, brute_force_nearest)

KEY = FlowKey("A", "V", Proto.UDP)


def model(**kw):
    return TrustModel(**kw)


class TestNearest:
    def test_empty(self):
        assert model().nearest((0, 0, 0, 0)) is None

    def test_argmin(self):
        m = model()
        m.observe((0.9, 0, 0, 0), KEY, 0)
        m.observe((0.2, 0, 0, 5), KEY, 0)
        m.observe((0.2, 0, 0, 0), KEY, 0)
        cid, d = m.nearest((0, 0, 0, 0))
        assert m.get(cid).centroid[0] == 0.2 and d == pytest.approx(0.2)


class TestObserve:
    def test_creates_cluster(self):
        m = model()
        cid = m.observe((1, 2, 3, 4), KEY, 0.0)
        c = m.get(cid)
        assert c.trust == 0.5 and c.centroid == (1, 2, 3, 4) and c.weight == 1

    def test_attach_moves_centroid(self):
        m = model()
        m.observe((0, 0, 1, 0), KEY, 0.0)
        cid = m.observe((0.4, 0, 1, 0), KEY, 1.0)
        c = m.get(cid)
        assert len(m) == 1
        assert c.centroid == pytest.approx((0.05 * 0.4, 0, 1, 0))
        assert c.weight == 2 and c.last_seen == 1.0

    def test_far_vector_opens_new_cluster(self):
        m = model()
        m.observe((0, 0, 1, 0), KEY, 0.0)
        m.observe((0.6, 0, 1, 0), KEY, 0.0)
        assert len(m) == 2


class TestFeedback:
    def flow(self, dst="V", closed=None):
        return FlowStatus(FlowKey("A", dst, Proto.UDP), 0, 0.0, closed_at=closed)

    def test_clean_close_is_benign_evidence(self):
        obs = aggregate_feedback([], [self.flow(closed=3.0)], 4.0)
        assert [o.o for o in obs] == [1.0]

    def test_single_alarm(self):
        obs = aggregate_feedback([Alarm("V", 3.0, 0.6)], [self.flow()], 4.0)
        assert obs[0].o == pytest.approx(1 - 0.6)

    def test_alarms_sum_and_clamp(self):
        alarms = [Alarm("V", 3.0, 0.7), Alarm("V", 3.5, 0.5)]
        assert aggregate_feedback(alarms, [self.flow()], 4.0)[0].o == 0.0

    def test_stale_alarm_ignored(self):
        assert aggregate_feedback([Alarm("V", 1.0, 0.6)], [self.flow()], 7.0) == []


class TestTrust:
    def test_smoothing(self):
        m = model()
        cid = m.observe((0, 0, 0, 0), KEY, 0)
        assert m.update_trust(cid, 1.0) == pytest.approx(0.9 * 0.5 + 0.1 * 1.0)

    def test_fixed_point(self):
        m = model()
        cid = m.observe((0, 0, 0, 0), KEY, 0)
        assert m.update_trust(cid, 0.5) == 0.5

    def test_full_replacement(self):
        m = model(alpha=1.0)
        cid = m.observe((0, 0, 0, 0), KEY, 0)
        assert m.update_trust(cid, 0.13) == 0.13

    def test_unknown_cluster(self):
        with pytest.raises(KeyError):
            model().update_trust(3, 1.0)
        with pytest.raises(KeyError):
            model().classify(3)

    @pytest.mark.parametrize("trust, label", [(0.2, Label.MALICIOUS), (0.3, Label.UNKNOWN),
                                              (0.7, Label.UNKNOWN), (0.8, Label.BENIGN)])
    def test_classify(self, trust, label):
        m = model()
        cid = m.observe((0, 0, 0, 0), KEY, 0)
        m.get(cid).trust = trust
        assert m.classify(cid) is label

    @pytest.mark.parametrize("kw", [dict(tau=0), dict(eta=1.0), dict(alpha=0),
                                    dict(theta_mal=0.7, theta_ben=0.7)])
    def test_parameter_ranges(self, kw):
        with pytest.raises(ValueError):
            model(**kw)


class TestReputation:
    def test_weighted_merge(self):
        m = model()
        cid = m.observe((0, 0, 0, 0), KEY, 0)
        c = m.get(cid)
        c.trust, c.weight = 0.6, 30
        assert m.merge_reputation(ReputationMessage("D", (0.1, 0, 0, 0), 0.2, 10)) == cid
        assert c.trust == pytest.approx((0.6 * 30 + 0.2 * 10) / 40) and c.weight == 40

    def test_shadow_cluster(self):
        m = model()
        cid = m.merge_reputation(ReputationMessage("D", (5, 5, 5, 5), 0.1, 7, at=2.0))
        c = m.get(cid)
        assert c.shadow and c.trust == 0.1 and c.weight == 7 and not c.member_flows

    def test_local_observation_clears_shadow(self):
        m = model()
        cid = m.merge_reputation(ReputationMessage("D", (5, 5, 5, 5), 0.1, 7))
        assert m.observe((5, 5, 5, 5.1), KEY, 1.0) == cid
        assert not m.get(cid).shadow

    @pytest.mark.parametrize("msg", [ReputationMessage("D", (0, 0, 0, 0), 0.5, 0),
                                     ReputationMessage("D", (0, 0, 0, 0), 1.5, 3),
                                     ReputationMessage("D", (0, 0, 0, 0), mode=Mode.QUERY)])
    def test_invalid_messages(self, msg):
        with pytest.raises(InvalidMessageError):
            model().merge_reputation(msg)

    def test_query(self):
        m = model()
        assert m.answer_query((0, 0, 0, 0)) is None
        a = m.observe((0, 0, 0, 0), KEY, 0)
        b = m.observe((0.8, 0, 0, 0), KEY, 0)
        m.get(a).trust, m.get(b).trust = 0.2, 0.9
        assert m.answer_query((0, 0, 0, 0)) == (0.2, 1)
        assert m.answer_query((0.5, 0, 0, 0)) == (0.9, 1)
        assert brute_force_nearest(m.clusters, (0.5, 0, 0, 0))[0] == b

    def test_wire_roundtrip(self):
        msg = ReputationMessage("D", (0.1, 0.2, 0.3, 0.4), 0.25, 12, Mode.REPLY, 3.5)
        rec = msg.to_record()
        assert len(rec) == 9
        assert ReputationMessage.from_record(rec) == msg
        with pytest.raises(InvalidMessageError):
            ReputationMessage.from_record(rec[:5])


def test_merges_commute_on_disjoint_targets():
    def build(order):
        m = model()
        m.observe((0, 0, 0, 0), KEY, 0)
        m.observe((3, 0, 0, 0), KEY, 0)
        for msg in order:
            m.merge_reputation(msg)
        return [(c.trust, c.weight) for c in m.clusters]
    x = ReputationMessage("D", (0.1, 0, 0, 0), 0.1, 4)
    y = ReputationMessage("D", (3.1, 0, 0, 0), 0.9, 2)
    assert build([x, y]) == build([y, x])


vec = st.tuples(*[st.floats(-3, 3, allow_nan=False)] * 4)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.one_of(
    st.tuples(st.just("obs"), vec),
    st.tuples(st.just("upd"), st.floats(0, 1)),
    st.tuples(st.just("rep"), vec, st.floats(0, 1), st.integers(1, 50))), max_size=40))
def test_random_sequences_keep_model_invariants(ops):
    m = model()
    weights = {}
    for op in ops:
        if op[0] == "obs":
            v = op[1]
            hit = m.nearest(v)
            cid = m.observe(v, KEY, 0)
            if hit and hit[1] <= m.tau and hit[1] > 0:
                assert math.dist(m.get(cid).centroid, v) < hit[1]
        elif op[0] == "upd" and len(m):
            m.update_trust(len(m) - 1, op[1])
        elif op[0] == "rep":
            m.merge_reputation(ReputationMessage("D", op[1], op[2], op[3]))
        for c in m.clusters:
            assert 0.0 <= c.trust <= 1.0
            assert c.weight >= weights.get(c.id, 1)
            weights[c.id] = c.weight
            assert not (m.classify(c.id) is Label.MALICIOUS and c.trust > m.theta_ben)
    assert len({c.id for c in m.clusters}) == len(m)


def test_nearest_matches_linear_scan_with_ties():
    rng = random.Random(11)
    m = model(tau=0.01)
    for _ in range(30):
        m.observe(tuple(rng.choice([0.0, 1.0]) for _ in range(4)), KEY, 0)
    for _ in range(200):
        v = tuple(rng.choice([0.0, 0.5, 1.0]) for _ in range(4))
        assert m.nearest(v) == pytest.approx(brute_force_nearest(m.clusters, v))
