# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled receiver kernel: per-sample synchronization state machine.

One pass over the cleaned stream.  Unsynchronized, a preamble correlation
at or above tau_p arms the receiver; while synchronized any correlation at
or above the running peak re-anchors the frame, and every W samples after
the anchor one symbol is decoded by correlating the trailing window
against every template (first maximum wins).
"""

import numpy as np


def receiver_scan(double[::1] cleaned, double[::1] pre_corr, double[:, ::1] templates,
                  Py_ssize_t W, Py_ssize_t L, double tau_p, Py_ssize_t start=0,
                  state=None):
    cdef Py_ssize_t T = cleaned.shape[0]
    cdef Py_ssize_t A = templates.shape[0]
    cdef int s = 0
    cdef double R = 0.0
    cdef Py_ssize_t t0 = 0, l = 0, anchor = 0
    partial = []
    if state is not None:
        s = state[0]
        R = state[1]
        t0 = state[2]
        l = state[3]
        anchor = state[4]
        partial = list(state[5])
    frames = []
    cdef Py_ssize_t t, v, i, base, best_v
    cdef double r, best, acc
    for t in range(start, T):
        r = pre_corr[t]
        if s == 0:
            if r >= tau_p:
                s = 1
                R = r
                t0 = t
                anchor = t
                l = 0
                partial = []
        else:
            if r >= R:
                R = r
                t0 = t
                anchor = t
                l = 0
                partial = []
            elif t - t0 == W:
                base = t - W + 1
                best = -1e300
                best_v = 0
                for v in range(A):
                    acc = 0.0
                    for i in range(W):
                        acc += templates[v, i] * cleaned[base + i]
                    if acc > best:
                        best = acc
                        best_v = v
                partial.append(best_v)
                l += 1
                t0 = t
                if l == L:
                    frames.append((int(anchor), R, np.asarray(partial, dtype=np.int64), True))
                    s = 0
                    l = 0
                    partial = []
    return frames, (s, R, int(t0), int(l), int(anchor), tuple(partial))
