"""Kernel selection: compiled extension when available, pure Python otherwise.

Set VLTABOO_PURE_PYTHON=1 to force the fallback (used by the benchmark and by
the kernel-equivalence tests).
"""

from __future__ import annotations

import os

from .automaton import FlatAutomaton, build_flat_automaton

if os.environ.get("VLTABOO_PURE_PYTHON"):
    from . import _scan_py as _kernel

    KERNEL = "python"
else:
    try:
        from . import _scan as _kernel  # type: ignore[no-redef]

        KERNEL = "compiled"
    except ImportError:
        from . import _scan_py as _kernel  # type: ignore[no-redef]

        KERNEL = "python"


class ChunkScanner:
    """Streams newline-complete byte chunks through one automaton pass.

    Holds the per-shard counters; a sample that matches a label several times
    still increments ``samples_matched`` once (tracked via ``last_seen``).
    """

    def __init__(self, automaton: FlatAutomaton, fold: bytes, kernel: str | None = None):
        self.automaton = automaton
        self.fold = fold
        self.kernel = kernel or KERNEL
        if self.kernel == "compiled" and KERNEL != "compiled":
            raise RuntimeError("compiled kernel requested but not built")
        n = automaton.n_labels
        if self.kernel == "compiled":
            import numpy as np

            from . import _scan  # type: ignore[attr-defined]

            self._scan = _scan.scan_chunk
            self._transitions = automaton.transitions
            self._byte_class = automaton.byte_class
            self._out_start = automaton.out_start
            self._out_labels = automaton.out_labels
            self.samples_matched = np.zeros(n, dtype=np.int64)
            self.term_hits = np.zeros(n, dtype=np.int64)
            self._last_seen = np.full(n, -1, dtype=np.int64)
            self._fold_arg = np.frombuffer(fold, dtype=np.uint8)
        else:
            from . import _scan_py

            self._scan = _scan_py.scan_chunk
            self._transitions = automaton.transitions.tolist()
            self._byte_class = automaton.byte_class.tolist()
            self._out_start = automaton.out_start.tolist()
            self._out_labels = automaton.out_labels.tolist()
            self.samples_matched = [0] * n
            self.term_hits = [0] * n
            self._last_seen = [-1] * n
            self._fold_arg = fold
        self.n_samples = 0
        self.n_undecodable = 0

    def feed(self, chunk: bytes) -> None:
        """Process one chunk; the chunk must end at a line boundary (or EOF)."""
        if not chunk:
            return
        seen, bad = self._scan(
            chunk,
            self._transitions,
            self.automaton.n_classes,
            self._byte_class,
            self._out_start,
            self._out_labels,
            self._fold_arg,
            self.samples_matched,
            self.term_hits,
            self._last_seen,
            self.n_samples,
        )
        self.n_samples += seen
        self.n_undecodable += bad

    def counts(self) -> tuple[list[int], list[int]]:
        return [int(v) for v in self.samples_matched], [int(v) for v in self.term_hits]


__all__ = ["FlatAutomaton", "build_flat_automaton", "ChunkScanner", "KERNEL"]
