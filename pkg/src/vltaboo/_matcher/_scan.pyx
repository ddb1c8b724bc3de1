# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-byte automaton scan over newline-delimited caption chunks."""

from libc.stdint cimport int32_t, int64_t, uint8_t


cdef inline bint _valid_utf8(const uint8_t[::1] d, Py_ssize_t start, Py_ssize_t end) noexcept nogil:
    # Strict RFC 3629: rejects overlongs, surrogates, and > U+10FFFF, matching
    # what bytes.decode("utf-8") accepts.
    cdef Py_ssize_t i = start
    cdef uint8_t b, b1
    cdef int extra
    while i < end:
        b = d[i]
        if b < 0x80:
            i += 1
            continue
        if 0xC2 <= b <= 0xDF:
            extra = 1
        elif 0xE0 <= b <= 0xEF:
            extra = 2
        elif 0xF0 <= b <= 0xF4:
            extra = 3
        else:
            return False
        if i + extra >= end:
            return False
        b1 = d[i + 1]
        if b == 0xE0:
            if not (0xA0 <= b1 <= 0xBF):
                return False
        elif b == 0xED:
            if not (0x80 <= b1 <= 0x9F):
                return False
        elif b == 0xF0:
            if not (0x90 <= b1 <= 0xBF):
                return False
        elif b == 0xF4:
            if not (0x80 <= b1 <= 0x8F):
                return False
        else:
            if not (0x80 <= b1 <= 0xBF):
                return False
        if extra >= 2 and not (0x80 <= d[i + 2] <= 0xBF):
            return False
        if extra >= 3 and not (0x80 <= d[i + 3] <= 0xBF):
            return False
        i += extra + 1
    return True


cdef inline void _emit(int state,
                       const int32_t[::1] out_start,
                       const int32_t[::1] out_labels,
                       int64_t[::1] samples_matched,
                       int64_t[::1] term_hits,
                       int64_t[::1] last_seen,
                       int64_t sid) noexcept nogil:
    cdef int32_t k, label
    for k in range(out_start[state], out_start[state + 1]):
        label = out_labels[k]
        term_hits[label] += 1
        if last_seen[label] != sid:
            last_seen[label] = sid
            samples_matched[label] += 1


def scan_chunk(const uint8_t[::1] data,
               const int32_t[::1] transitions,
               int n_classes,
               const int32_t[::1] byte_class,
               const int32_t[::1] out_start,
               const int32_t[::1] out_labels,
               const uint8_t[::1] fold,
               int64_t[::1] samples_matched,
               int64_t[::1] term_hits,
               int64_t[::1] last_seen,
               int64_t sample_base):
    """Scan complete lines; returns (samples seen, undecodable samples).

    Each line is matched as " " + line + " " (the spaces are fed to the
    automaton, never materialized). Lines that are not valid UTF-8 count as
    samples but are skipped for matching.
    """
    cdef Py_ssize_t n = data.shape[0]
    cdef Py_ssize_t pos = 0, end, line_end, i
    cdef int64_t sid = sample_base
    cdef int64_t undecodable = 0
    cdef int state
    cdef int32_t space_class = byte_class[32]
    with nogil:
        while pos < n:
            end = pos
            while end < n and data[end] != 10:
                end += 1
            line_end = end
            if line_end > pos and data[line_end - 1] == 13:
                line_end -= 1
            if _valid_utf8(data, pos, line_end):
                state = transitions[space_class]
                if out_start[state + 1] != out_start[state]:
                    _emit(state, out_start, out_labels, samples_matched,
                          term_hits, last_seen, sid)
                for i in range(pos, line_end):
                    state = transitions[state * n_classes + byte_class[fold[data[i]]]]
                    if out_start[state + 1] != out_start[state]:
                        _emit(state, out_start, out_labels, samples_matched,
                              term_hits, last_seen, sid)
                state = transitions[state * n_classes + space_class]
                if out_start[state + 1] != out_start[state]:
                    _emit(state, out_start, out_labels, samples_matched,
                          term_hits, last_seen, sid)
            else:
                undecodable += 1
            sid += 1
            pos = end + 1
    return sid - sample_base, undecodable
