"""Packet buffers, head-of-line service accounting, and frame bookkeeping.

Slot conventions used throughout the package:

* Packets arrive at the beginning of a slot and can be served within that
  same slot, except that an arrival finding the whole system empty ends
  the idle stretch and is first served in the next slot.
* A slot may send at most the head-of-line packet's remaining work; the
  leftover rate of a slot is not carried into the next packet.
* Packet delay counts both the arrival slot and the departure slot:
  arrive at slot 5, depart at slot 9 -> delay 5.
* A frame is one idle stretch (all buffers empty, ending with the slot of
  the first arrival) followed by one busy stretch (ending with the slot in
  which the system drains).  Every packet that arrives during a frame also
  departs during it, so frame delay sums are complete at the frame end.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


def packet_delay(arrival_slot: int, departure_slot: int) -> int:
    """Inclusive slot count a packet spends in the system."""
    return departure_slot - arrival_slot + 1


@dataclass(slots=True)
class Packet:
    arrival_slot: int
    departure_slot: int = -1


class UserQueue:
    """FIFO buffer for one user with preemptive-resume head-of-line work.

    Only the head packet carries partial work; serving other users in
    between leaves `hol_remaining` untouched, so an interrupted packet
    resumes where it stopped.
    """

    def __init__(self, packet_length: float):
        if packet_length <= 0.0:
            raise ValueError("packet_length must be positive")
        self.packet_length = packet_length
        self.packets: deque[Packet] = deque()
        self.hol_remaining = 0.0

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def backlogged(self) -> bool:
        return bool(self.packets)

    def arrive(self, slot: int) -> Packet:
        p = Packet(slot)
        self.packets.append(p)
        if len(self.packets) == 1:
            self.hol_remaining = self.packet_length
        return p

    def serve_slot(self, rate: float, slot: int) -> tuple[float, Packet | None]:
        """Apply one slot of service at `rate`.

        Returns (work actually sent, departed packet or None).  At most the
        head packet can complete in a slot; a zero-rate slot on a non-empty
        queue makes no progress and is not an error.
        """
        if not self.packets or rate <= 0.0:
            return 0.0, None
        sent = min(rate, self.hol_remaining)
        self.hol_remaining -= sent
        if self.hol_remaining == 0.0:
            p = self.packets.popleft()
            p.departure_slot = slot
            self.hol_remaining = self.packet_length if self.packets else 0.0
            return sent, p
        return sent, None


@dataclass
class FrameRecord:
    """Per-frame accounting needed by the virtual-queue updates."""

    index: int
    start_slot: int
    idle_len: int
    busy_len: int
    delay_sums: list[int]
    arrival_counts: list[int]
    interference: float

    @property
    def length(self) -> int:
        return self.idle_len + self.busy_len


class FrameTracker:
    """State machine carving the slot timeline into idle+busy frames.

    The caller reports arrivals, departures, and per-slot interference;
    the tracker decides where frames begin and end.  The idle stretch of a
    frame always has length >= 1 because the first arrival's slot belongs
    to it.
    """

    def __init__(self, n_users: int, start_slot: int = 0):
        self.n_users = n_users
        self.frame_index = 0
        self.frame_start = start_slot
        self.busy = False
        self.busy_start = -1
        self.idle_len = 0
        self.completed: list[FrameRecord] = []
        self._reset_accumulators()

    def _reset_accumulators(self) -> None:
        self.delay_sums = [0] * self.n_users
        self.arrival_counts = [0] * self.n_users
        self.departure_counts = [0] * self.n_users
        self.interference = 0.0

    def record_arrival(self, user: int) -> None:
        self.arrival_counts[user] += 1

    def record_departure(self, user: int, delay: int) -> None:
        assert delay >= 1
        self.delay_sums[user] += delay
        self.departure_counts[user] += 1

    def record_interference(self, energy: float) -> None:
        self.interference += energy

    def begin_busy(self, slot: int) -> None:
        """First arrival hit an empty system at `slot`; service starts next slot."""
        assert not self.busy
        self.busy = True
        self.idle_len = slot - self.frame_start + 1
        self.busy_start = slot + 1

    def close_busy(self, slot: int) -> FrameRecord:
        """System drained during `slot`; finalize the frame."""
        assert self.busy
        # every frame arrival must have departed inside the frame
        assert self.departure_counts == self.arrival_counts
        rec = FrameRecord(
            index=self.frame_index,
            start_slot=self.frame_start,
            idle_len=self.idle_len,
            busy_len=slot - self.busy_start + 1,
            delay_sums=self.delay_sums,
            arrival_counts=self.arrival_counts,
            interference=self.interference,
        )
        self.completed.append(rec)
        self.frame_index += 1
        self.frame_start = slot + 1
        self.busy = False
        self.busy_start = -1
        self.idle_len = 0
        self._reset_accumulators()
        return rec


def long_run_delay(frames: list[FrameRecord], user: int) -> float | None:
    """Frame-average delay for `user`: total delay over total arrivals.

    None when the frames carry no arrivals for the user (absent, not zero).
    """
    total = sum(f.delay_sums[user] for f in frames)
    count = sum(f.arrival_counts[user] for f in frames)
    if count == 0:
        return None
    return total / count
