"""Flattened multi-pattern automaton shared by the compiled and pure kernels.

Build phases (classic three-step construction):

    1. goto trie over pattern bytes,
    2. failure links by breadth-first search (longest proper suffix that is
       also a pattern prefix),
    3. full transition table: every (state, byte class) resolves through the
       failure chain at build time, so scanning is one array lookup per byte.

Bytes are compressed into classes: only bytes occurring in some pattern get a
class of their own; every other byte shares class 0, whose transition is the
root from any state. Outputs are stored CSR-style: for each state, the label
ids of all patterns ending there, including patterns reachable through the
failure chain.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FlatAutomaton:
    n_states: int
    n_classes: int
    n_labels: int
    byte_class: np.ndarray  # int32[256], 0 = byte absent from all patterns
    transitions: np.ndarray  # int32[n_states * n_classes]
    out_start: np.ndarray  # int32[n_states + 1]
    out_labels: np.ndarray  # int32[total outputs]


def build_flat_automaton(patterns: list[tuple[bytes, int]], n_labels: int) -> FlatAutomaton:
    """Compile (pattern bytes, label id) pairs into a dense-transition automaton.

    Duplicate (pattern, label) pairs collapse to one output entry; the same
    pattern owned by several labels keeps one entry per owner, so every owner
    is credited on a match.
    """
    if not patterns:
        raise ValueError("cannot build an automaton without patterns")

    used_bytes = sorted({b for pattern, _ in patterns for b in pattern})
    byte_class = np.zeros(256, dtype=np.int32)
    for cls, b in enumerate(used_bytes, start=1):
        byte_class[b] = cls
    n_classes = len(used_bytes) + 1

    # Goto trie; children maps byte class -> state id.
    children: list[dict[int, int]] = [{}]
    own: list[set[int]] = [set()]
    for pattern, label in patterns:
        if not pattern:
            raise ValueError("empty pattern")
        state = 0
        for b in pattern:
            cls = int(byte_class[b])
            nxt = children[state].get(cls)
            if nxt is None:
                nxt = len(children)
                children[state][cls] = nxt
                children.append({})
                own.append(set())
            state = nxt
        own[state].add(label)

    n_states = len(children)
    fail = [0] * n_states
    transitions = np.zeros(n_states * n_classes, dtype=np.int32)
    outputs: list[list[int]] = [sorted(own[s]) for s in range(n_states)]

    queue: deque[int] = deque()
    for cls in range(n_classes):
        child = children[0].get(cls)
        if child is None:
            transitions[cls] = 0
        else:
            transitions[cls] = child
            fail[child] = 0
            queue.append(child)
    while queue:
        state = queue.popleft()
        fallback = fail[state]
        if outputs[fallback]:
            outputs[state] = outputs[state] + outputs[fallback]
        base = state * n_classes
        fallback_base = fallback * n_classes
        for cls in range(n_classes):
            child = children[state].get(cls)
            if child is None:
                transitions[base + cls] = transitions[fallback_base + cls]
            else:
                transitions[base + cls] = child
                fail[child] = transitions[fallback_base + cls]
                queue.append(child)

    out_start = np.zeros(n_states + 1, dtype=np.int32)
    for state in range(n_states):
        out_start[state + 1] = out_start[state] + len(outputs[state])
    out_labels = np.fromiter(
        (label for state_outputs in outputs for label in state_outputs),
        dtype=np.int32,
        count=int(out_start[-1]),
    )
    return FlatAutomaton(
        n_states=n_states,
        n_classes=n_classes,
        n_labels=n_labels,
        byte_class=byte_class,
        transitions=transitions,
        out_start=out_start,
        out_labels=out_labels,
    )
