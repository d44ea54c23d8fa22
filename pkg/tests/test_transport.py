"""Simulated link determinism/statistics and real UDP endpoint behavior."""

import random

import pytest

from blockfer.engine import ReceiverPhase, SenderPhase, TransferParameters
from blockfer.transport import (
    LinkModel,
    MtuError,
    SimClock,
    SimulatedLink,
    TransportError,
    UdpEndpoint,
    run_loopback_transfer,
    run_simulated_transfer,
)
from blockfer.wire import Data, ErrorCode, block_count_for, encode_packet


# --- clock ---------------------------------------------------------------


def test_clock_orders_by_time_then_insertion():
    clock = SimClock()
    clock.push(5.0, "late")
    clock.push(2.0, "first")
    clock.push(2.0, "second")
    assert len(clock) == 3
    assert clock.peek_time() == 2.0
    assert clock.pop() == (2.0, "first")
    assert clock.pop() == (2.0, "second")
    assert clock.now == 2.0
    assert clock.pop() == (5.0, "late")
    assert clock.now == 5.0
    assert clock.peek_time() is None


def test_clock_rejects_scheduling_in_the_past():
    clock = SimClock()
    clock.push(10.0, "x")
    clock.pop()
    with pytest.raises(ValueError):
        clock.push(9.9, "y")


def test_clock_tie_key_orders_before_insertion_sequence():
    clock = SimClock()
    clock.push(1.0, "b", tie=7)
    clock.push(1.0, "a", tie=3)
    assert clock.pop() == (1.0, "a")
    assert clock.pop() == (1.0, "b")


# --- link model draws ----------------------------------------------------


def make_link(clock=None, **kwargs):
    return SimulatedLink(LinkModel(**kwargs), clock if clock is not None else SimClock())


def test_lossless_link_delivers_once_at_base_latency():
    clock = SimClock()
    link = make_link(clock, latency_base_ms=10.0)
    times = link.send("A", "B", b"payload", now=0.0)
    assert times == [10.0]
    assert clock.pop() == (10.0, ("B", "A", b"payload"))
    assert len(clock) == 0


def test_total_loss_delivers_nothing():
    clock = SimClock()
    link = make_link(clock, loss_probability=1.0)
    for _ in range(1000):
        assert link.send("A", "B", b"x", now=0.0) == []
    assert len(clock) == 0


def test_loss_frequency_tracks_probability():
    # seeded statistical check: 100k sends, within 1% absolute
    for p, seed in ((0.117, 4), (0.5, 5), (0.02, 6)):
        link = make_link(loss_probability=p, seed=seed)
        dropped = sum(1 for _ in range(100_000) if not link.send("A", "B", b"x", 0.0))
        assert abs(dropped / 100_000 - p) <= 0.01


def test_duplicate_probability_one_delivers_twice():
    clock = SimClock()
    link = make_link(clock, latency_base_ms=5.0, duplicate_probability=1.0)
    times = link.send("A", "B", b"dup", now=1.0)
    assert len(times) == 2 and all(t == 6.0 for t in times)
    assert clock.pop()[1] == ("B", "A", b"dup")
    assert clock.pop()[1] == ("B", "A", b"dup")


def test_jitter_stays_in_band_and_never_goes_negative():
    link = make_link(latency_base_ms=50.0, latency_jitter_ms=20.0, seed=7)
    for _ in range(2000):
        [t] = link.send("A", "B", b"x", now=0.0)
        assert 30.0 <= t <= 70.0
    # jitter larger than the base clamps at zero rather than delivering early
    link = make_link(latency_base_ms=5.0, latency_jitter_ms=20.0, seed=8)
    times = [link.send("A", "B", b"x", now=0.0)[0] for _ in range(2000)]
    assert all(t >= 0.0 for t in times)
    assert any(t == 0.0 for t in times)


def test_reorder_flips_same_time_packets():
    # with reordering on, two packets scheduled for the same instant may swap
    def order(reorder, seed):
        clock = SimClock()
        link = make_link(clock, latency_base_ms=10.0, reorder_probability=reorder, seed=seed)
        link.send("A", "B", b"first", now=0.0)
        link.send("A", "B", b"second", now=0.0)
        return [clock.pop()[1][2] for _ in range(2)]

    assert any(order(1.0, seed) == [b"second", b"first"] for seed in range(40))
    assert all(order(0.0, seed) == [b"first", b"second"] for seed in range(40))


def test_identical_seeds_identical_schedules():
    def schedule(seed):
        clock = SimClock()
        link = SimulatedLink(LinkModel(
            loss_probability=0.1, latency_base_ms=20.0, latency_jitter_ms=10.0,
            reorder_probability=0.2, duplicate_probability=0.05, seed=seed), clock)
        payload_rng = random.Random(99)  # same payloads either run
        for i in range(10_000):
            link.send("A", "B", payload_rng.randbytes(8), now=float(i))
        drained = []
        while len(clock):
            drained.append(clock.pop())
        return drained

    assert schedule(12) == schedule(12)
    assert schedule(12) != schedule(13)


def test_mtu_guard_counts_header_tax():
    link = make_link()
    link.send("A", "B", bytes(1500), now=0.0)
    with pytest.raises(MtuError):
        link.send("A", "B", bytes(1501), now=0.0)
    taxed = make_link(header_tax_bytes=177)
    taxed.send("A", "B", bytes(1323), now=0.0)
    with pytest.raises(MtuError):
        taxed.send("A", "B", bytes(1324), now=0.0)


def test_link_model_validation():
    with pytest.raises(ValueError):
        LinkModel(loss_probability=1.5)
    with pytest.raises(ValueError):
        LinkModel(reorder_probability=-0.1)
    with pytest.raises(ValueError):
        LinkModel(latency_base_ms=-1.0)
    with pytest.raises(ValueError):
        LinkModel(header_tax_bytes=-1)


# --- end-to-end over the simulator ----------------------------------------


def test_simulated_transfer_lossless_exact_counts():
    params = TransferParameters(block_size=600, window_size=4, min_window=4)
    data = random.Random(0).randbytes(10_000)
    result = run_simulated_transfer(
        data, LinkModel(latency_base_ms=5.0, seed=3), params, record_trace=True)
    assert result.completed
    assert result.data == data
    block_count = block_count_for(len(data), 600)
    assert result.sender.counters.blocks_sent == block_count
    assert result.sender.counters.lost_blocks == 0
    assert result.sender.counters.window_retransmits == 0
    assert result.receiver.counters.acks_sent == block_count_for(block_count, 4) + 1
    assert result.duration_ms > 0
    assert result.trace, "expected a recorded trace"
    first = result.trace[0].split()
    assert first[0] == "0.000" and first[1] == "A->B"
    assert first[2].startswith("eb0101")  # the announcement goes first


def test_simulated_transfer_survives_loss_reorder_duplication():
    params = TransferParameters(block_size=600, window_size=8, min_window=4,
                                retransmit_interval_ms=200.0, max_attempts=8)
    data = random.Random(1).randbytes(64_000)
    for loss, seed in ((0.05, 21), (0.2, 22)):
        model = LinkModel(loss_probability=loss, latency_base_ms=20.0,
                          latency_jitter_ms=10.0, reorder_probability=0.05,
                          duplicate_probability=0.01, seed=seed)
        result = run_simulated_transfer(data, model, params)
        assert result.completed, f"loss={loss} seed={seed}"
        assert result.data == data
        assert result.sender.counters.lost_blocks > 0
        c = result.sender.counters
        assert c.blocks_sent == block_count_for(len(data), 600) \
            + c.lost_blocks + c.window_retransmit_blocks


def test_simulated_transfer_is_deterministic():
    params = TransferParameters(block_size=600, window_size=8, min_window=4,
                                retransmit_interval_ms=200.0, max_attempts=8)
    data = random.Random(2).randbytes(30_000)
    model = LinkModel(loss_probability=0.1, latency_base_ms=15.0,
                      latency_jitter_ms=5.0, reorder_probability=0.1, seed=77)
    first = run_simulated_transfer(data, model, params, record_trace=True)
    second = run_simulated_transfer(data, model, params, record_trace=True)
    assert first.trace == second.trace
    assert first.duration_ms == second.duration_ms
    other = run_simulated_transfer(
        data, LinkModel(loss_probability=0.1, latency_base_ms=15.0,
                        latency_jitter_ms=5.0, reorder_probability=0.1, seed=78),
        params, record_trace=True)
    assert other.trace != first.trace


def test_simulated_transfer_dead_link_times_out():
    params = TransferParameters(retransmit_interval_ms=200.0, max_attempts=5)
    result = run_simulated_transfer(b"x" * 100, LinkModel(loss_probability=1.0), params)
    assert not result.completed
    assert result.error is ErrorCode.TIMEOUT
    assert result.sender.phase is SenderPhase.FAILED
    # exactly max_attempts silent intervals, then failure, no receiver in sight
    assert result.duration_ms == 5 * 200.0
    assert result.sender.retry_params.window_size == 40
    assert result.receiver is None


def test_simulated_transfer_zero_size():
    result = run_simulated_transfer(b"", LinkModel(latency_base_ms=1.0, seed=5))
    assert result.completed
    assert result.data == b""
    assert result.receiver.phase is ReceiverPhase.DONE


# --- real sockets ----------------------------------------------------------


def test_udp_roundtrip_is_byte_identical():
    with UdpEndpoint() as a, UdpEndpoint() as b:
        wire = encode_packet(Data(1234, 0, b"\xaa" * 600))
        a.send(b.address, wire)
        [(sender_addr, received)] = b.poll(2.0)
        assert received == wire
        assert sender_addr == a.address


def test_udp_mtu_guard():
    with UdpEndpoint() as a, UdpEndpoint() as b:
        a.send(b.address, bytes(1500))
        with pytest.raises(MtuError):
            a.send(b.address, bytes(1501))


def test_udp_send_error_surfaces_as_transport_error():
    with UdpEndpoint() as a:
        with pytest.raises(TransportError):
            a.send(("127.0.0.1", 0), b"nope")


def test_udp_poll_idle_times_out_empty():
    with UdpEndpoint() as a:
        assert a.poll(0.05) == []


def test_loopback_transfer_small_file():
    data = random.Random(3).randbytes(200_000)
    params = TransferParameters(block_size=1200, window_size=16,
                                retransmit_interval_ms=500.0)
    result = run_loopback_transfer(data, params, seed=9)
    assert result.completed
    assert result.data == data
    assert result.sender.counters.window_retransmits == 0
    assert result.sender.phase is SenderPhase.DONE
