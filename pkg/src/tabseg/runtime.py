"""Process-wide execution switches.

``TABS_SEQUENTIAL=1`` pins BLAS to one thread and disables evaluation
workers, giving bitwise-reproducible runs.
"""

from __future__ import annotations

import os

from threadpoolctl import threadpool_limits

_limits = None


def sequential_mode() -> bool:
    return os.environ.get("TABS_SEQUENTIAL", "") not in ("", "0")


def configure_runtime() -> None:
    global _limits
    if sequential_mode() and _limits is None:
        _limits = threadpool_limits(limits=1)


def evaluation_workers(jobs: int) -> int:
    if sequential_mode():
        return 1
    return max(1, int(jobs))
