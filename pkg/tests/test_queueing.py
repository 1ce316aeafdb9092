"""Queue and frame bookkeeping tests, including the hand-traced frame example."""
import math

import pytest

from crsched.queueing import (FrameTracker, Packet, UserQueue, long_run_delay,
                              packet_delay)


def test_packet_delay_convention():
    # both end slots count: arrive slot 5, depart slot 9 -> delay 5
    assert packet_delay(5, 9) == 5
    assert packet_delay(7, 7) == 1


def test_serve_slot_partial_and_completion():
    q = UserQueue(packet_length=10.0)
    q.arrive(3)
    sent, done = q.serve_slot(4.0, 4)
    assert sent == 4.0 and done is None
    assert q.hol_remaining == 6.0
    sent, done = q.serve_slot(9.0, 5)
    # only the head packet's remaining work can be sent
    assert sent == 6.0
    assert done is not None and done.departure_slot == 5
    assert packet_delay(done.arrival_slot, done.departure_slot) == 3
    assert not q.backlogged and q.hol_remaining == 0.0


def test_serve_slot_zero_rate_and_empty():
    q = UserQueue(packet_length=5.0)
    assert q.serve_slot(3.0, 1) == (0.0, None)  # empty queue
    q.arrive(1)
    assert q.serve_slot(0.0, 1) == (0.0, None)  # zero-rate slot, no progress
    assert q.hol_remaining == 5.0


def test_hol_resets_for_next_packet():
    q = UserQueue(packet_length=5.0)
    q.arrive(1)
    q.arrive(1)
    sent, done = q.serve_slot(100.0, 2)
    assert sent == 5.0 and done is not None
    # second packet becomes head with full length; one departure per slot max
    assert q.hol_remaining == 5.0
    assert len(q) == 1


def test_hol_preserved_across_interruptions():
    # preemptive resume: pausing service must not reset partial work
    q = UserQueue(packet_length=10.0)
    q.arrive(1)
    q.serve_slot(3.0, 1)
    remaining_before = q.hol_remaining
    # other users get served for a while; this queue is untouched
    assert q.hol_remaining == remaining_before == 7.0
    sent, done = q.serve_slot(7.0, 9)
    assert done is not None and done.departure_slot == 9


def test_queue_length_conservation():
    q = UserQueue(packet_length=2.0)
    arrived = departed = 0
    import numpy as np
    rng = np.random.default_rng(7)
    for slot in range(200):
        if rng.random() < 0.4:
            q.arrive(slot)
            arrived += 1
        before = len(q)
        _, done = q.serve_slot(rng.uniform(0.0, 3.0), slot)
        if done is not None:
            departed += 1
        assert len(q) == before - (1 if done is not None else 0)
    assert len(q) == arrived - departed


def test_frame_hand_trace():
    # empty slots 1-3, arrival at slot 4, system drains at slot 9:
    # idle 4 (slots 1-4), busy 5 (slots 5-9), frame length 9
    t = FrameTracker(n_users=1, start_slot=1)
    t.record_arrival(0)
    t.begin_busy(4)
    assert t.idle_len == 4 and t.busy_start == 5
    t.record_departure(0, packet_delay(4, 9))
    rec = t.close_busy(9)
    assert rec.idle_len == 4
    assert rec.busy_len == 5
    assert rec.length == 9
    assert rec.delay_sums == [6]  # slots 4..9 inclusive
    assert rec.arrival_counts == [1]
    # next frame starts right after the drain slot
    assert t.frame_start == 10 and not t.busy


def test_frame_idle_has_min_length_one():
    t = FrameTracker(n_users=1, start_slot=10)
    t.record_arrival(0)
    t.begin_busy(10)  # arrival in the very first slot of the frame
    assert t.idle_len == 1
    t.record_departure(0, 2)
    rec = t.close_busy(11)
    assert rec.idle_len == 1 and rec.busy_len == 1


def test_frame_requires_all_departures():
    t = FrameTracker(n_users=2, start_slot=0)
    t.record_arrival(1)
    t.begin_busy(0)
    with pytest.raises(AssertionError):
        t.close_busy(3)  # the arrival never departed


def test_long_run_delay_two_frames():
    # (10+20) delay over (2+3) packets = 6
    t = FrameTracker(n_users=2, start_slot=0)
    t.record_arrival(0)
    t.record_arrival(0)
    t.begin_busy(0)
    t.record_departure(0, 4)
    t.record_departure(0, 6)
    t.close_busy(5)
    t.record_arrival(0)
    t.record_arrival(0)
    t.record_arrival(0)
    t.begin_busy(8)
    for d in (5, 7, 8):
        t.record_departure(0, d)
    t.close_busy(20)
    assert long_run_delay(t.completed, 0) == 6.0
    assert long_run_delay(t.completed, 1) is None  # no arrivals: absent, not zero


def test_interference_accumulates_per_frame():
    t = FrameTracker(n_users=1, start_slot=0)
    t.record_arrival(0)
    t.begin_busy(2)
    t.record_interference(1.5)
    t.record_interference(2.5)
    t.record_departure(0, 3)
    rec = t.close_busy(4)
    assert rec.interference == 4.0
    assert t.interference == 0.0  # fresh accumulator for the next frame
