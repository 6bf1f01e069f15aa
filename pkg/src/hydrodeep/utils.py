"""
Miscellaneous utility functions.
"""
from __future__ import annotations

import hashlib
import os
import platform
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import timedelta
from typing import Callable, Dict, Iterator, List, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd
from pypsutil import Process

import hydrodeep

T = TypeVar("T")


@dataclass
class Stopwatch:
    """
    Monotonic wall-clock measurement around a block of code.
    """

    seconds: float = 0.0

    @property
    def elapsed(self) -> timedelta:
        """
        Measured duration as a timedelta.
        """
        return timedelta(seconds=self.seconds)


@contextmanager
def stopwatch() -> Iterator[Stopwatch]:
    """
    Measure the wall time spent inside the with-block.
    """
    watch = Stopwatch()
    start = time.perf_counter()
    try:
        yield watch
    finally:
        watch.seconds = time.perf_counter() - start


def format_seconds(seconds: float) -> str:
    """
    Format a duration as H:MM:SS.ffffff, the way a timedelta prints.
    """
    return str(timedelta(seconds=seconds))


def spawn_seeds(seed: int, count: int) -> List[int]:
    """
    Pre-split a seed into `count` independent integer seeds.

    Jobs seeded this way produce the same results whether they run serially
    or in parallel.
    """
    return [
        int(child.generate_state(1, dtype=np.uint64)[0])
        for child in np.random.SeedSequence(seed).spawn(count)
    ]


def text_hash(text: str) -> str:
    """
    SHA-256 hex digest of a text.
    """
    return hashlib.sha256(text.encode("utf8")).hexdigest()


def process_snapshot() -> Dict[str, float]:
    """
    CPU times and resident memory of the current process.
    """
    process = Process(os.getpid())
    cpu = process.cpu_times()
    memory = process.memory_info()
    return {
        "cpu_user_seconds": float(cpu.user),
        "cpu_system_seconds": float(cpu.system),
        "rss_bytes": float(memory.rss),
    }


def versions() -> Dict[str, str]:
    """
    Versions of the interpreter and numeric stack, for run manifests.
    """
    return {
        "hydrodeep": hydrodeep.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
    }


def run_parallel(jobs: Sequence[Callable[[], T]], workers: int = 1) -> List[T]:
    """
    Run independent jobs on `workers` threads and return their results in
    job order. The first exception raised by a job is re-raised once every
    worker has stopped.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    results: List[Optional[T]] = [None] * len(jobs)
    errors: List[BaseException] = []
    lock = threading.Lock()
    pending = iter(range(len(jobs)))

    def worker() -> None:
        while True:
            with lock:
                if errors:
                    return
                index = next(pending, None)
            if index is None:
                return
            try:
                result = jobs[index]()
            except Exception as exc:  # pylint: disable=broad-except
                with lock:
                    errors.append(exc)
                return
            results[index] = result

    if workers == 1:
        worker()
    else:
        threads = [threading.Thread(target=worker) for _ in range(min(workers, len(jobs)))]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
    if errors:
        raise errors[0]
    return results  # type: ignore[return-value]
