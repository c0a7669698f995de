"""Process-wide invocation counters.

Every public operation bumps a ``module.op`` key so pipelines can assert
which subsystems actually ran. Counters are cumulative per process.
"""

from __future__ import annotations

import threading
from collections import Counter

_lock = threading.Lock()
_counts: Counter = Counter()


def bump(name: str, n: int = 1) -> None:
    with _lock:
        _counts[name] += n


def value(name: str) -> int:
    with _lock:
        return _counts.get(name, 0)


def snapshot() -> dict:
    with _lock:
        return dict(_counts)


def module_totals() -> dict:
    """Counts aggregated by the prefix before the first dot."""
    totals: Counter = Counter()
    for key, n in snapshot().items():
        totals[key.split(".", 1)[0]] += n
    return dict(totals)


def reset() -> None:
    with _lock:
        _counts.clear()
