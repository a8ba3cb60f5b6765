"""Per-link packet queues with hard deadlines and a finite buffer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DELIVERED = "delivered"
DROPPED_DEADLINE = "dropped_deadline"
DROPPED_OVERFLOW = "dropped_overflow"


@dataclass(frozen=True)
class QueueConfig:
    packet_bits: float = 1e6
    arrival_rate_pps: float = 500.0
    buffer_packets: int = 1
    deadline_s: float = 2e-3
    slot_s: float = 2e-3

    def __post_init__(self) -> None:
        if self.packet_bits <= 0 or self.slot_s <= 0:
            raise ValueError("packet size and slot duration must be positive")
        if self.buffer_packets < 1:
            raise ValueError("buffer must hold at least one packet")
        if self.deadline_s <= 0 or self.arrival_rate_pps < 0:
            raise ValueError("deadline must be positive and arrival rate non-negative")


@dataclass
class Packet:
    arrival_time: float
    bits_remaining: float


@dataclass
class DeliveryRecord:
    """Outcome of one packet: delivered with its delay, or dropped with a reason."""

    outcome: str
    delay_s: float | None = None
    tx_id: str = ""
    rx_id: str = ""
    epoch: int = -1


@dataclass
class QueueState:
    """FIFO buffer of one active link."""

    packets: list[Packet] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.packets)


def arrivals(rate_pps: float, slot_s: float, rng: np.random.Generator) -> int:
    """Poisson packet count for one slot."""
    return int(rng.poisson(rate_pps * slot_s))


def advance(queue: QueueState, served_bits: float, now: float, new_arrivals: int,
            cfg: QueueConfig) -> list[DeliveryRecord]:
    """Advance one slot ending at `now` and report finished packets.

    The slot's service capacity drains the queue in FIFO order. Completion
    instants are interpolated linearly within the slot by the share of
    capacity consumed, which fixes each delivered delay. A packet whose age
    passes the deadline before it completes is a deadline drop, checked on
    completion and at the slot boundary. Arrivals land at `now` and overflow
    once the buffer is full.
    """
    if served_bits < 0:
        raise ValueError("served bits must be non-negative")
    if new_arrivals < 0:
        raise ValueError("arrival count must be non-negative")
    records: list[DeliveryRecord] = []
    slot_start = now - cfg.slot_s

    capacity = served_bits
    consumed = 0.0
    while queue.packets and capacity > 0.0:
        head = queue.packets[0]
        if head.bits_remaining > capacity:
            head.bits_remaining -= capacity
            capacity = 0.0
            break
        capacity -= head.bits_remaining
        consumed += head.bits_remaining
        completion = slot_start + cfg.slot_s * (consumed / served_bits)
        delay = completion - head.arrival_time
        queue.packets.pop(0)
        if delay <= cfg.deadline_s:
            records.append(DeliveryRecord(DELIVERED, delay))
        else:
            records.append(DeliveryRecord(DROPPED_DEADLINE))

    # boundary sweep: FIFO order means expired packets form a prefix
    while queue.packets and now - queue.packets[0].arrival_time > cfg.deadline_s:
        queue.packets.pop(0)
        records.append(DeliveryRecord(DROPPED_DEADLINE))

    for _ in range(new_arrivals):
        if len(queue.packets) < cfg.buffer_packets:
            queue.packets.append(Packet(now, cfg.packet_bits))
        else:
            records.append(DeliveryRecord(DROPPED_OVERFLOW))
    return records


def drop_probability(records: list[DeliveryRecord], count_overflow: bool = True) -> float:
    """Share of finished packets that were dropped; 0 when nothing finished.

    Overflow drops can be excluded to isolate deadline misses; excluded
    records then do not enter the denominator either.
    """
    drops = 0
    total = 0
    for rec in records:
        if rec.outcome == DROPPED_OVERFLOW and not count_overflow:
            continue
        total += 1
        if rec.outcome != DELIVERED:
            drops += 1
    return drops / total if total else 0.0
