"""Process-wide diagnostic counters for benign-but-notable events.

Losses and calibration helpers bump a named counter instead of raising
when a batch hits a degenerate-but-expected condition (for example a
batch that contains fewer than two labeled views). Tests and drivers can
inspect and reset the counters.
"""

from collections import Counter

_counters = Counter()


def increment(name: str, amount: int = 1) -> None:
    _counters[name] += amount


def count(name: str) -> int:
    return _counters[name]


def snapshot() -> dict:
    return dict(_counters)


def reset() -> None:
    _counters.clear()
