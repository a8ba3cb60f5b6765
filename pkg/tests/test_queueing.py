"""Queue semantics against a slot-by-slot reference implementation."""

import numpy as np
import pytest

from v2vmatch import queueing
from oracles import queue_reference


def make_cfg(**kw):
    base = dict(packet_bits=1e6, arrival_rate_pps=500.0, buffer_packets=1,
                deadline_s=2e-3, slot_s=2e-3)
    base.update(kw)
    return queueing.QueueConfig(**base)


def replay(slots, cfg):
    """Drive the implementation over (served_bits, arrivals) slot pairs."""
    q = queueing.QueueState()
    records = []
    for k, (served, n_arr) in enumerate(slots):
        now = (k + 1) * cfg.slot_s
        records.extend(queueing.advance(q, served, now, n_arr, cfg))
    return records, q


class TestConfig:
    def test_defaults_valid(self):
        cfg = queueing.QueueConfig()
        assert cfg.packet_bits == 1e6
        assert cfg.buffer_packets == 1

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            make_cfg(packet_bits=0)
        with pytest.raises(ValueError):
            make_cfg(buffer_packets=0)
        with pytest.raises(ValueError):
            make_cfg(deadline_s=0)
        with pytest.raises(ValueError):
            make_cfg(arrival_rate_pps=-1)


class TestArrivals:
    def test_zero_rate_always_zero(self):
        rng = np.random.default_rng(0)
        assert all(queueing.arrivals(0.0, 2e-3, rng) == 0 for _ in range(100))

    def test_mean_matches_rate(self):
        rng = np.random.default_rng(7)
        n = 200_000
        counts = [queueing.arrivals(500.0, 2e-3, rng) for _ in range(n)]
        assert abs(np.mean(counts) - 1.0) < 0.01

    def test_seeded_stream_reproducible(self):
        a = [queueing.arrivals(500.0, 2e-3, np.random.default_rng(42))
             for _ in range(1)]
        b = [queueing.arrivals(500.0, 2e-3, np.random.default_rng(42))
             for _ in range(1)]
        assert a == b


class TestAdvance:
    def test_full_service_delivers_with_interpolated_delay(self):
        cfg = make_cfg()
        # packet arrives at the end of slot 0, served fully in slot 1
        records, q = replay([(0.0, 1), (2e6, 0)], cfg)
        assert [r.outcome for r in records] == [queueing.DELIVERED]
        # half the slot capacity finishes the packet halfway through the slot
        assert records[0].delay_s == pytest.approx(1e-3, abs=1e-15)
        assert len(q) == 0

    def test_starvation_becomes_deadline_drop(self):
        cfg = make_cfg()
        records, q = replay([(0.0, 1), (0.0, 0), (0.0, 0)], cfg)
        outcomes = [r.outcome for r in records]
        assert outcomes == [queueing.DROPPED_DEADLINE]
        assert len(q) == 0

    def test_overflow_on_full_buffer(self):
        cfg = make_cfg()
        records, q = replay([(0.0, 2)], cfg)
        assert [r.outcome for r in records] == [queueing.DROPPED_OVERFLOW]
        assert len(q) == 1

    def test_late_completion_is_deadline_drop(self):
        cfg = make_cfg(deadline_s=2e-3)
        # barely too little capacity in the first slot; finishes late in slot 2
        records, _ = replay([(0.0, 1), (0.9e6, 0), (1e6, 0)], cfg)
        assert [r.outcome for r in records] == [queueing.DROPPED_DEADLINE]

    def test_negative_inputs_rejected(self):
        cfg = make_cfg()
        with pytest.raises(ValueError):
            queueing.advance(queueing.QueueState(), -1.0, 2e-3, 0, cfg)
        with pytest.raises(ValueError):
            queueing.advance(queueing.QueueState(), 0.0, 2e-3, -1, cfg)

    def test_fifo_order_of_completions(self):
        cfg = make_cfg(buffer_packets=3, deadline_s=50e-3)
        records, _ = replay([(0.0, 2), (1.5e6, 0), (1e6, 0)], cfg)
        delivered = [r for r in records if r.outcome == queueing.DELIVERED]
        assert len(delivered) == 2
        assert delivered[0].delay_s < delivered[1].delay_s


class TestOracleEquivalence:
    """Dual-route check: implementation vs the independent slot replay."""

    def check(self, slots, cfg):
        got, gq = replay(slots, cfg)
        want, wq = queue_reference(slots, cfg.packet_bits, cfg.buffer_packets,
                                   cfg.deadline_s, cfg.slot_s)
        assert len(got) == len(want)
        for rec, (outcome, delay) in zip(got, want):
            assert rec.outcome == outcome
            if outcome == queueing.DELIVERED:
                assert rec.delay_s == pytest.approx(delay, abs=1e-12)
            else:
                assert rec.delay_s is None
        assert len(gq) == len(wq)
        for pkt, (at, bits) in zip(gq.packets, wq):
            assert pkt.arrival_time == pytest.approx(at, abs=1e-12)
            assert pkt.bits_remaining == pytest.approx(bits, abs=1e-9)

    def test_random_sequences_agree(self):
        rng = np.random.default_rng(2024)
        for trial in range(2000):
            cfg = make_cfg(
                buffer_packets=int(rng.integers(1, 4)),
                deadline_s=float(rng.choice([1e-3, 2e-3, 5e-3])))
            n = int(rng.integers(1, 25))
            slots = []
            for _ in range(n):
                if rng.random() < 0.25:
                    served = 0.0
                else:
                    served = float(rng.uniform(0.0, 3.0) * cfg.packet_bits)
                slots.append((served, int(rng.poisson(1.0))))
            self.check(slots, cfg)

    def test_conservation_over_random_sequences(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            cfg = make_cfg(buffer_packets=int(rng.integers(1, 3)))
            slots = [(float(rng.uniform(0, 2.5e6)), int(rng.poisson(1.0)))
                     for _ in range(30)]
            records, q = replay(slots, cfg)
            arrived = sum(a for _, a in slots)
            assert arrived == len(records) + len(q)

    def test_delivered_delays_within_deadline(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            cfg = make_cfg()
            slots = [(float(rng.uniform(0, 2e6)), int(rng.poisson(1.0)))
                     for _ in range(20)]
            records, _ = replay(slots, cfg)
            for r in records:
                if r.outcome == queueing.DELIVERED:
                    assert 0.0 < r.delay_s <= cfg.deadline_s


class TestDropProbability:
    def test_all_delivered(self):
        recs = [queueing.DeliveryRecord(queueing.DELIVERED, 1e-4)] * 3
        assert queueing.drop_probability(recs) == 0.0

    def test_all_dropped(self):
        recs = [queueing.DeliveryRecord(queueing.DROPPED_DEADLINE)] * 4
        assert queueing.drop_probability(recs) == 1.0

    def test_ratio(self):
        recs = ([queueing.DeliveryRecord(queueing.DELIVERED, 1e-4)] * 3
                + [queueing.DeliveryRecord(queueing.DROPPED_DEADLINE)])
        assert queueing.drop_probability(recs) == 0.25

    def test_overflow_exclusion_switch(self):
        recs = ([queueing.DeliveryRecord(queueing.DELIVERED, 1e-4)] * 2
                + [queueing.DeliveryRecord(queueing.DROPPED_OVERFLOW)] * 2)
        assert queueing.drop_probability(recs, count_overflow=True) == 0.5
        assert queueing.drop_probability(recs, count_overflow=False) == 0.0

    def test_empty_records(self):
        assert queueing.drop_probability([]) == 0.0
