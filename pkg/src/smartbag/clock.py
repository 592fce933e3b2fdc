"""Injectable time source so service loops are testable deterministically."""

from __future__ import annotations

import time


class RealClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def sleep_ms(self, ms: float) -> None:
        time.sleep(ms / 1000.0)


class VirtualClock:
    """Manual clock; sleep advances time instantly."""

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    def now_ms(self) -> int:
        return self._now

    def sleep_ms(self, ms: float) -> None:
        self._now += int(ms)

    def advance(self, ms: int) -> None:
        self._now += int(ms)
