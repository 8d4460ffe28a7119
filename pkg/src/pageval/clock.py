"""Injectable time source so pacing and rate limits are testable."""

from __future__ import annotations

import time


class SystemClock:
    """Wall and monotonic time backed by the real clock."""

    def time(self) -> float:
        return time.time()

    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


SYSTEM_CLOCK = SystemClock()
