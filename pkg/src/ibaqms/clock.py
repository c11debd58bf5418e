"""Wall and simulated clocks shared by the message bus and the timing harness."""

from __future__ import annotations

import time
from dataclasses import dataclass

# 2023-11-14T22:13:20Z; simulated runs start here so block timestamps are stable
SIM_EPOCH_MS = 1_700_000_000_000


class RealClock:
    simulated = False

    def __init__(self) -> None:
        self._t0 = time.perf_counter()
        self._epoch0 = time.time() * 1000.0

    def now_ms(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0

    def epoch_ms(self) -> int:
        return int(self._epoch0 + self.now_ms())

    def advance_to(self, t_ms: float) -> None:
        delay = t_ms - self.now_ms()
        if delay > 0:
            time.sleep(delay / 1000.0)

    def charge(self, ms: float) -> None:
        # real work already costs real time
        pass


class SimClock:
    simulated = True

    def __init__(self, start_epoch_ms: int = SIM_EPOCH_MS) -> None:
        self._t = 0.0
        self._epoch0 = start_epoch_ms

    def now_ms(self) -> float:
        return self._t

    def epoch_ms(self) -> int:
        return self._epoch0 + int(round(self._t))

    def advance_to(self, t_ms: float) -> None:
        if t_ms > self._t:
            self._t = t_ms

    def charge(self, ms: float) -> None:
        self._t += ms


Clock = RealClock | SimClock


@dataclass(frozen=True)
class SimCosts:
    """Fixed latencies charged to the simulated clock for purely local work.

    Messages on the bus already cost their link latency; these cover the
    steps that never touch the bus.
    """

    prerequisites_ms: float = 25.0
    certificate_ms: float = 4.0
    channel_ms: float = 6.0
    install_ms: float = 3.0
    endorse_ms: float = 1.5
    commit_ms: float = 2.0
    query_ms: float = 0.5
