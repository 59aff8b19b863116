"""Shared parameter array with atomic additive updates and an iteration counter.

CPython exposes no hardware compare-and-exchange, so each cell emulates one:
``_compare_exchange`` holds a per-cell lock for exactly the duration of the
compare and the store, and ``fetch_add`` is the usual retry loop around it.
Each cell slot holds an immutable ``(bits, version)`` pair, so a plain load
of the slot is atomic under the interpreter and readers never lock.

``version`` counts the successful updates applied to the cell. The version
returned by an add is the 1-based position of that update in the cell's
modification order; for cell 0 this is exactly the iteration index used by
the analysis (every iteration touches cell 0 once, first).
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

_F64 = struct.Struct("<d")
_I64 = struct.Struct("<q")


def _to_bits(x: float) -> int:
    return _I64.unpack(_F64.pack(x))[0]


def _from_bits(b: int) -> float:
    return _F64.unpack(_I64.pack(b))[0]


class EpochViolation(RuntimeError):
    """A delta tagged for one epoch reached another epoch's buffer."""


class AtomicCounter:
    def __init__(self, value: int = 0):
        self._value = value
        self._lock = threading.Lock()

    def fetch_add(self, amount: int = 1) -> int:
        with self._lock:
            old = self._value
            self._value = old + amount
        return old

    def load(self) -> int:
        return self._value


class SharedModel:
    """Parameter array ``X[d]`` plus iteration counter ``C``."""

    def __init__(self, initial, epoch: int = 0):
        init = np.asarray(initial, dtype=float).reshape(-1)
        if init.size == 0:
            raise ValueError("model dimension must be at least 1")
        self.d = init.size
        self.epoch = epoch
        self._slots: list[tuple[int, int]] = [(_to_bits(float(v)), 0) for v in init]
        self._locks = [threading.Lock() for _ in range(self.d)]
        self.counter = AtomicCounter()

    def _compare_exchange(self, j: int, expected_bits: int, new_bits: int) -> tuple[bool, int]:
        with self._locks[j]:
            bits, version = self._slots[j]
            if bits != expected_bits:
                return False, version
            self._slots[j] = (new_bits, version + 1)
            return True, version + 1

    def fetch_add_versioned(self, j: int, delta: float, epoch: int | None = None) -> tuple[float, int]:
        """Atomically add ``delta`` to cell ``j``; return ``(previous, position)``."""
        if epoch is not None and epoch != self.epoch:
            raise EpochViolation(f"delta from epoch {epoch} applied to epoch {self.epoch} buffer")
        while True:
            bits, _ = self._slots[j]
            old = _from_bits(bits)
            ok, version = self._compare_exchange(j, bits, _to_bits(old + delta))
            if ok:
                return old, version

    def atomic_add(self, j: int, delta: float) -> float:
        return self.fetch_add_versioned(j, delta)[0]

    def read(self, j: int) -> float:
        return _from_bits(self._slots[j][0])

    def read_versioned(self, j: int) -> tuple[float, int]:
        bits, version = self._slots[j]
        return _from_bits(bits), version

    def read_view(self) -> np.ndarray:
        # entry by entry, in index order; the composite may be inconsistent
        return np.array([self.read(j) for j in range(self.d)])

    def read_view_versioned(self) -> tuple[np.ndarray, tuple[int, ...]]:
        pairs = [self.read_versioned(j) for j in range(self.d)]
        return np.array([p[0] for p in pairs]), tuple(p[1] for p in pairs)

    def next_iteration(self) -> int:
        return self.counter.fetch_add(1)

    def snapshot(self) -> np.ndarray:
        return self.read_view()

    def versions(self) -> tuple[int, ...]:
        return tuple(slot[1] for slot in self._slots)


@dataclass
class IterationRecord:
    """One SGD iteration as seen by the analysis.

    ``index`` is the 1-based rank of the iteration's update on cell 0.
    ``read_versions[j]`` is how many updates of cell ``j`` the view contained;
    ``positions[j]`` is where this iteration's update landed in cell ``j``'s
    modification order (cells with a zero gradient entry are skipped, except
    cell 0).  ``start``/``end`` are global event ranks of the counter claim and
    of the last update; ``first_update`` is the rank of the cell-0 update and
    ``generated`` the rank at which the gradient was computed.
    """

    index: int
    thread: int
    start: int
    end: int
    first_update: int
    view: np.ndarray
    gradient: np.ndarray
    delta: np.ndarray
    read_versions: tuple[int, ...]
    positions: dict[int, int] = field(default_factory=dict)
    epoch: int = 0
    local_step: int = 0
    generated: int = -1
