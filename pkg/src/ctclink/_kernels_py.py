"""Pure-Python receiver kernel.

Semantically identical to the compiled kernel in _kernels.pyx but jumps
between events instead of visiting every sample: while unsynchronized it
scans for the first preamble correlation above the threshold, while
synchronized it scans for the first correlation beating the running peak
(a re-sync) before the pending decode instant.  Between events the state
cannot change, so the two kernels yield the same frames.
"""

from __future__ import annotations

import numpy as np


def receiver_scan(cleaned, pre_corr, templates, W, L, tau_p, start=0, state=None):
    """Scan a cleaned sample stream for frames.

    Args:
        cleaned: float64 stream in the symmetric (-0.5, +0.5) domain.
        pre_corr: preamble cross-correlation aligned so pre_corr[t] covers
            the window ending at t; -inf where the window is not yet full.
        templates: (alphabet, W) float64 matrix of one-cycle references.
        W: samples per duty cycle (one symbol decoded per cycle).
        L: data symbols per frame.
        tau_p: synchronization threshold.
        start: first sample index to examine (earlier samples are carry-over
            context for windows that reach back across a chunk boundary).
        state: opaque resume state from a previous call, or None.

    Returns:
        (frames, state); frames is a list of
        (sync_index, peak_correlation, symbol_values, complete) tuples with
        indices local to this array.  Incomplete frames are never emitted
        here; the caller decides truncation when the stream ends.
    """
    cleaned = np.ascontiguousarray(cleaned, dtype=np.float64)
    pre_corr = np.ascontiguousarray(pre_corr, dtype=np.float64)
    templates = np.ascontiguousarray(templates, dtype=np.float64)
    T = cleaned.shape[0]
    if state is None:
        s, R, t0, l, anchor, partial = 0, 0.0, 0, 0, 0, []
    else:
        s, R, t0, l, anchor, partial = state
        partial = list(partial)
    frames = []
    pos = start
    while pos < T:
        if s == 0:
            hits = np.nonzero(pre_corr[pos:] >= tau_p)[0]
            if hits.size == 0:
                break
            t = pos + int(hits[0])
            s, R, t0, l, anchor, partial = 1, float(pre_corr[t]), t, 0, t, []
            pos = t + 1
        else:
            next_dec = t0 + W
            end = min(next_dec, T - 1)
            hits = np.nonzero(pre_corr[pos:end + 1] >= R)[0] if pos <= end else ()
            if len(hits):
                # a stronger preamble match restarts the frame
                t = pos + int(hits[0])
                R, t0, l, anchor, partial = float(pre_corr[t]), t, 0, t, []
                pos = t + 1
                continue
            if next_dec >= T:
                break  # decode instant lies beyond this chunk
            t = next_dec
            corr = templates @ cleaned[t - W + 1:t + 1]
            partial.append(int(np.argmax(corr)))
            l += 1
            t0 = t
            if l == L:
                frames.append((anchor, R, np.asarray(partial, dtype=np.int64), True))
                s, l, partial = 0, 0, []
            pos = t + 1
    return frames, (s, float(R), int(t0), int(l), int(anchor), tuple(partial))
