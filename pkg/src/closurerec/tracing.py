"""Read tracing for performance entries.

A :class:`AccessLog` collects which case columns had their performance
values read, tagged with the pipeline stage that was active at the time.
The nested cross-validation uses it to prove that a held-out experiment
never reached model fitting or hyperparameter selection.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterable, Iterator

_active_log: ContextVar["AccessLog | None"] = ContextVar("closurerec_access_log", default=None)
_active_stage: ContextVar[str] = ContextVar("closurerec_access_stage", default="untagged")


@dataclass
class AccessLog:
    entries: list[tuple[str, frozenset[str]]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, stage: str, case_ids: Iterable[str]) -> None:
        with self._lock:
            self.entries.append((stage, frozenset(case_ids)))

    def cases_read(self, stage_prefix: str = "") -> set[str]:
        out: set[str] = set()
        for stage, ids in self.entries:
            if stage.startswith(stage_prefix):
                out |= ids
        return out

    def extend(self, other: "AccessLog") -> None:
        with self._lock:
            self.entries.extend(other.entries)


def record_read(case_ids: Iterable[str]) -> None:
    log = _active_log.get()
    if log is not None:
        log.add(_active_stage.get(), case_ids)


@contextmanager
def tracing(log: AccessLog) -> Iterator[AccessLog]:
    token = _active_log.set(log)
    try:
        yield log
    finally:
        _active_log.reset(token)


@contextmanager
def stage(name: str) -> Iterator[None]:
    token = _active_stage.set(name)
    try:
        yield
    finally:
        _active_stage.reset(token)
