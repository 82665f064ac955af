import concurrent.futures as cf
import logging
import os
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, TypeVar

from ..config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class ParallelContext:
    """Worker budget handed to experiments; results always come back in input order."""

    workers: int = 1

    @classmethod
    def from_setting(cls, workers: Optional[int] = None) -> "ParallelContext":
        n = settings.WORKERS if workers is None else workers
        return cls(workers=n if n and n > 0 else (os.cpu_count() or 1))

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        items = list(items)
        if self.workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        logger.debug("mapping %d tasks over %d threads", len(items), self.workers)
        with cf.ThreadPoolExecutor(max_workers=min(self.workers, len(items))) as executor:
            return list(executor.map(fn, items))


SERIAL = ParallelContext(1)
