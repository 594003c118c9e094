import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from dosim.attacks import (PROTO, TAXONOMY, AimdEvent, AimdSender, AttackType, Burst,
                           Direction, GeneratorState, Method, Scheme, aimd_step, emit, first_emission,
                           reflect,
                           shrew_schedule, taxonomy_of)
from dosim.kinds import AttackKind, Proto
from dosim.signatures import MAX_IP_SIZE


def run_gen(gen, t0=None):
    """Drive a generator to exhaustion; returns (time, packet) pairs."""
    out, t = [], first_emission(gen) if t0 is None else t0
    while t is not None:
        pkts, t = emit(gen, t)
        out.extend((p.created_at, p) for p in pkts)
    return out


class TestTaxonomy:
    def test_flood(self):
        assert taxonomy_of(AttackKind.UdpFlood) == (AttackType.DISTRIBUTED, Direction.NETWORK,
                                                    Scheme.DIRECT, Method.CONSUMPTION)

    def test_reflector_and_hidden(self):
        assert taxonomy_of(AttackKind.Smurf).scheme is Scheme.REFLECTOR
        assert taxonomy_of(AttackKind.Shrew).scheme is Scheme.HIDDEN

    def test_total(self):
        assert set(TAXONOMY) == set(AttackKind)
        assert all(len(t) == 4 and all(t) for t in TAXONOMY.values())

    def test_fraggle_is_udp_smurf(self):
        assert TAXONOMY[AttackKind.Fraggle] == TAXONOMY[AttackKind.Smurf]
        assert (PROTO[AttackKind.Smurf], PROTO[AttackKind.Fraggle]) == (Proto.ICMP, Proto.UDP)


class TestFlood:
    def test_per_bot_spacing(self):
        bots = [f"B{i}" for i in range(10)]
        gen = GeneratorState(AttackKind.UdpFlood, bots, "V", 0.0, 1.0, rate=1000)
        by_bot = {}
        for t, p in run_gen(gen):
            by_bot.setdefault(p.src, []).append(t)
        for times in by_bot.values():
            gaps = [b - a for a, b in zip(times, times[1:])]
            assert gaps == pytest.approx([len(bots) / 1000] * len(gaps))
        assert gen.emitted == 1000

    def test_after_stop(self):
        gen = GeneratorState(AttackKind.UdpFlood, ["B"], "V", 0.0, 1.0, rate=10)
        assert emit(gen, 1.0) == ([], None)

    def test_single_bot(self):
        gen = GeneratorState(AttackKind.IcmpFlood, ["B"], "V", 2.0, 3.0, rate=10)
        pkts = run_gen(gen)
        assert len(pkts) == 10 and all(p.proto is Proto.ICMP for _, p in pkts)

    def test_needs_rate(self):
        with pytest.raises(ValueError):
            GeneratorState(AttackKind.UdpFlood, ["B"], "V", 0.0, 1.0)


class TestReflector:
    def test_trigger_fans_out(self):
        refl = [f"X{i}" for i in range(5)]
        gen = GeneratorState(AttackKind.Smurf, ["B"], "V", 0.0, 1.0, rate=1, reflectors=refl)
        pkts, _ = emit(gen, 0.0)
        assert sorted(p.dst for p in pkts) == refl
        replies = [reflect(p, p.dst, 0.1) for p in pkts]
        assert {r.dst for r in replies} == {"V"}
        assert sorted(r.flow_key.src for r in replies) == refl
        assert all(r.attack_tag is AttackKind.Smurf for r in replies)

    def test_reflectors_iff_reflector_scheme(self):
        with pytest.raises(ValueError):
            GeneratorState(AttackKind.Smurf, ["B"], "V", 0.0, 1.0, rate=1)
        with pytest.raises(ValueError):
            GeneratorState(AttackKind.UdpFlood, ["B"], "V", 0.0, 1.0, rate=1, reflectors=["X"])


class TestBurst:
    def test_average_rate(self):
        assert Burst(1.0, 0.1, 1000).average_rate == pytest.approx(1000 * 0.1 / 1.0)

    @pytest.mark.parametrize("offset, rate", [(0.05, 1000), (0.5, 0)])
    def test_square_wave(self, offset, rate):
        assert shrew_schedule(Burst(1.0, 0.1, 1000), 3.0, 3.0 + offset) == rate

    def test_length_below_period(self):
        with pytest.raises(ValueError):
            Burst(1.0, 1.0, 10)

    def test_packets_land_inside_bursts(self):
        b = Burst(1.0, 0.1, 1000)
        gen = GeneratorState(AttackKind.Shrew, ["B1", "B2"], "V", 2.0, 6.0, burst=b)
        for t, _ in run_gen(gen):
            assert shrew_schedule(b, 2.0, t) == 1000


@settings(max_examples=300, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(0.05, 0.95), st.integers(5, 1500), st.integers(1, 6),
       st.floats(0, 5))
def test_shrew_count_identity(period, frac, burst_rate, n, start):
    b = Burst(period, period * frac, burst_rate)
    gen = GeneratorState(AttackKind.Shrew, ["B"], "V", start, start + n * period, burst=b)
    assert abs(len(run_gen(gen)) - n * burst_rate * b.length) <= 1


class TestExploits:
    def test_pod_is_oversized(self):
        gen = GeneratorState(AttackKind.PingOfDeath, ["B"], "V", 1.0, 2.0)
        (t, p), = run_gen(gen)
        assert p.size > MAX_IP_SIZE and t == 1.0

    def test_land_has_src_equal_dst(self):
        gen = GeneratorState(AttackKind.Land, ["B"], "V", 1.0, 2.0)
        (_, p), = run_gen(gen)
        assert p.flow_key.src == p.flow_key.dst == "V"

    def test_repeat(self):
        gen = GeneratorState(AttackKind.Land, ["B"], "V", 0.0, 1.0, repeat=0.25)
        assert len(run_gen(gen)) == 4


class TestAimd:
    def sender(self, **kw):
        kw.setdefault("rate", 100.0)
        return AimdSender("A", "B", min_rate=1, max_rate=200, **kw)

    def test_halving(self):
        assert aimd_step(self.sender(), AimdEvent.DROP, 1.0) == 50

    def test_ack_clamped(self):
        s = self.sender(rate=200.0)
        assert aimd_step(s, AimdEvent.ACK_INTERVAL, 1.0) == 200

    def test_window_loss(self):
        s = self.sender()
        assert aimd_step(s, AimdEvent.WINDOW_LOSS, 3.0) == s.min_rate
        assert s.paused_until == 3.0 + s.rto
        assert s.paused(3.99) and not s.paused(4.0)

    def test_window_loss_classification(self):
        s = self.sender()
        for i in range(5):
            s.record_send(1.0 + i * 0.02, i)
        assert s.classify_drop(4, 1.08) is AimdEvent.DROP
        for i in range(4):
            last = s.classify_drop(i, 1.0 + i * 0.02)
        assert last is AimdEvent.WINDOW_LOSS


def test_aimd_bounds_random_sequences():
    rng = random.Random(3)
    events = list(AimdEvent)
    for _ in range(2000):
        lo = rng.uniform(0.5, 20)
        s = AimdSender("A", "B", rng.uniform(0, 300), lo, lo + rng.uniform(0, 200),
                       additive_step=rng.uniform(0, 50))
        for k in range(20):
            aimd_step(s, rng.choice(events), float(k))
            assert s.min_rate <= s.rate <= s.max_rate
