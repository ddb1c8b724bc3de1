"""Pure-Python twin of the compiled scan kernel; same semantics, same results.

Kept for platforms without the compiled extension and as the reference side of
the kernel benchmark. Arrays are converted to plain lists once per call site
via ``prepare`` because list indexing beats ndarray scalar indexing inside a
tight Python loop.
"""

from __future__ import annotations


def prepare(arr):
    return arr.tolist()


def scan_chunk(
    data: bytes,
    transitions: list[int],
    n_classes: int,
    byte_class: list[int],
    out_start: list[int],
    out_labels: list[int],
    fold: bytes,
    samples_matched: list[int],
    term_hits: list[int],
    last_seen: list[int],
    sample_base: int,
) -> tuple[int, int]:
    """Scan complete lines; returns (samples seen, undecodable samples)."""
    sid = sample_base
    undecodable = 0
    pos = 0
    n = len(data)
    space_class = byte_class[32]
    while pos < n:
        nl = data.find(b"\n", pos)
        end = n if nl == -1 else nl
        line_end = end
        if line_end > pos and data[line_end - 1] == 13:
            line_end -= 1
        line = data[pos:line_end]
        try:
            line.decode("utf-8")
            valid = True
        except UnicodeDecodeError:
            valid = False
        if valid:
            state = transitions[space_class]
            if out_start[state + 1] != out_start[state]:
                for k in range(out_start[state], out_start[state + 1]):
                    label = out_labels[k]
                    term_hits[label] += 1
                    if last_seen[label] != sid:
                        last_seen[label] = sid
                        samples_matched[label] += 1
            for b in line:
                state = transitions[state * n_classes + byte_class[fold[b]]]
                if out_start[state + 1] != out_start[state]:
                    for k in range(out_start[state], out_start[state + 1]):
                        label = out_labels[k]
                        term_hits[label] += 1
                        if last_seen[label] != sid:
                            last_seen[label] = sid
                            samples_matched[label] += 1
            state = transitions[state * n_classes + space_class]
            if out_start[state + 1] != out_start[state]:
                for k in range(out_start[state], out_start[state + 1]):
                    label = out_labels[k]
                    term_hits[label] += 1
                    if last_seen[label] != sid:
                        last_seen[label] = sid
                        samples_matched[label] += 1
        else:
            undecodable += 1
        sid += 1
        pos = end + 1
    return sid - sample_base, undecodable
