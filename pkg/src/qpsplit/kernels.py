"""Numeric inner loops with a numba path and a pure-numpy path.

Every public function here dispatches on :data:`qpsplit._backend.USE_NUMBA`.
The ``_nb_*`` functions are the compiled loops, the ``_np_*`` functions are
vectorized numpy equivalents.  Both consume the same pre-drawn random
numbers, so switching backend never changes a seeded result beyond
floating-point summation order.
"""

import numpy as np

from . import _backend
from ._backend import njit

# ---------------------------------------------------------------------------
# Lorentzian line synthesis
# ---------------------------------------------------------------------------


@njit
def _nb_lorentzian_rows(freq, centers, amps, hwhm):
    n, m = centers.shape
    nf = freq.shape[0]
    out = np.zeros((n, nf))
    h2 = hwhm * hwhm
    for i in range(n):
        for j in range(m):
            c = centers[i, j]
            a = amps[i, j]
            if np.isnan(c) or a == 0.0:
                continue
            for k in range(nf):
                d = freq[k] - c
                out[i, k] += a * (h2 / (d * d + h2))
    return out


def _np_lorentzian_rows(freq, centers, amps, hwhm, chunk=4096):
    n = centers.shape[0]
    out = np.zeros((n, freq.shape[0]))
    h2 = hwhm * hwhm
    for lo in range(0, n, chunk):
        c = centers[lo:lo + chunk]
        a = np.where(np.isnan(c), 0.0, amps[lo:lo + chunk])
        c = np.where(np.isnan(c), 0.0, c)
        d = freq[None, None, :] - c[:, :, None]
        block = a[:, :, None] * (h2 / (d * d + h2))
        acc = np.zeros((c.shape[0], freq.shape[0]))
        for j in range(c.shape[1]):
            acc += block[:, j, :]
        out[lo:lo + chunk] = acc
    return out


def lorentzian_rows(freq, centers, amps, hwhm):
    """Sum of unit-peak Lorentzians per row.

    Parameters
    ----------
    freq : (nf,) array
        Frequency axis.
    centers, amps : (n, m) arrays
        Line centers and peak amplitudes; NaN centers are skipped.
    hwhm : float
        Half width at half maximum, same units as ``freq``.

    Returns
    -------
    (n, nf) array
    """
    freq = np.ascontiguousarray(freq, dtype=float)
    centers = np.ascontiguousarray(np.atleast_2d(centers), dtype=float)
    amps = np.ascontiguousarray(np.broadcast_to(amps, centers.shape), dtype=float)
    if _backend.USE_NUMBA:
        return _nb_lorentzian_rows(freq, centers, amps, float(hwhm))
    return _np_lorentzian_rows(freq, centers, amps, float(hwhm))


# ---------------------------------------------------------------------------
# Per-row peak picking with parabolic refinement
# ---------------------------------------------------------------------------


@njit
def _nb_row_peaks(data, thresholds, k):
    n, nf = data.shape
    pos = np.full((n, k), np.nan)
    height = np.full((n, k), np.nan)
    count = np.zeros(n, dtype=np.int64)
    best_i = np.empty(k, dtype=np.int64)
    best_h = np.empty(k)
    for r in range(n):
        nb = 0
        thr = thresholds[r]
        for i in range(1, nf - 1):
            y1 = data[r, i]
            if not (y1 > thr and y1 > data[r, i - 1] and y1 >= data[r, i + 1]):
                continue
            # insertion into a descending top-k list; earlier index wins ties
            slot = nb
            while slot > 0 and best_h[slot - 1] < y1:
                slot -= 1
            if slot >= k:
                continue
            last = nb if nb < k else k - 1
            for s in range(last, slot, -1):
                best_h[s] = best_h[s - 1]
                best_i[s] = best_i[s - 1]
            best_h[slot] = y1
            best_i[slot] = i
            if nb < k:
                nb += 1
        count[r] = nb
        for s in range(nb):
            i = best_i[s]
            y0 = data[r, i - 1]
            y1 = data[r, i]
            y2 = data[r, i + 1]
            den = y0 - 2.0 * y1 + y2
            delta = 0.0
            if den != 0.0:
                delta = 0.5 * (y0 - y2) / den
            pos[r, s] = i + delta
            height[r, s] = y1 - 0.25 * (y0 - y2) * delta
    return pos, height, count


def _np_row_peaks(data, thresholds, k):
    n, nf = data.shape
    mid = data[:, 1:-1]
    is_peak = (mid > thresholds[:, None]) & (mid > data[:, :-2]) & (mid >= data[:, 2:])
    h = np.where(is_peak, mid, -np.inf)
    if h.shape[1] < k:
        h = np.concatenate([h, np.full((n, k - h.shape[1]), -np.inf)], axis=1)
    order = np.argsort(-h, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(h, order, axis=1)
    valid = np.isfinite(top)
    idx = np.minimum(order, nf - 3) + 1
    rows = np.arange(n)[:, None]
    y0 = data[rows, idx - 1]
    y1 = data[rows, idx]
    y2 = data[rows, np.minimum(idx + 1, nf - 1)]
    den = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(den != 0.0, 0.5 * (y0 - y2) / den, 0.0)
    pos = np.where(valid, idx + delta, np.nan)
    height = np.where(valid, y1 - 0.25 * (y0 - y2) * delta, np.nan)
    count = valid.sum(axis=1).astype(np.int64)
    return pos, height, count


def row_peaks(data, thresholds, k=2):
    """Find the ``k`` highest local maxima per row above a per-row threshold.

    Returns fractional indices (3-point parabolic refinement), interpolated
    heights, and the number of peaks found.  Missing slots hold NaN.
    """
    data = np.ascontiguousarray(np.atleast_2d(data), dtype=float)
    thresholds = np.ascontiguousarray(
        np.broadcast_to(thresholds, (data.shape[0],)), dtype=float)
    if data.shape[1] < 3:
        raise ValueError("need at least 3 samples per row")
    if _backend.USE_NUMBA:
        return _nb_row_peaks(data, thresholds, int(k))
    return _np_row_peaks(data, thresholds, int(k))


# ---------------------------------------------------------------------------
# Two-state telegraph: occupancy of a recorded trace inside probe windows
# ---------------------------------------------------------------------------


@njit
def _nb_window_occupancy(times, parity, end, starts, window):
    n = starts.shape[0]
    m = times.shape[0]
    out = np.empty(n)
    j = 0
    for p in range(n):
        a = starts[p]
        b = a + window
        # windows may arrive unsorted; restart the cursor when moving back
        if j > 0 and times[j] > a:
            j = 0
        while j + 1 < m and times[j + 1] <= a:
            j += 1
        acc = 0.0
        jj = j
        t0 = a
        while t0 < b:
            t1 = times[jj + 1] if jj + 1 < m else end
            if t1 > b:
                t1 = b
            if parity[jj] == 1:
                acc += t1 - t0
            t0 = t1
            jj += 1
            if jj >= m:
                break
        out[p] = acc / window
    return out


def _np_window_occupancy(times, parity, end, starts, window):
    edges = np.append(times, end)
    odd_time = np.concatenate(([0.0], np.cumsum(parity * np.diff(edges))))
    hi = np.interp(starts + window, edges, odd_time)
    lo = np.interp(starts, edges, odd_time)
    return (hi - lo) / window


def window_occupancy(times, parity, end, starts, window):
    """Fraction of each window ``[s, s + window)`` spent in the odd state."""
    times = np.ascontiguousarray(times, dtype=float)
    parity = np.ascontiguousarray(parity, dtype=np.int64)
    starts = np.ascontiguousarray(starts, dtype=float)
    if _backend.USE_NUMBA:
        return _nb_window_occupancy(times, parity, float(end), starts, float(window))
    return _np_window_occupancy(times, parity, float(end), starts, float(window))


# ---------------------------------------------------------------------------
# Two-state telegraph: exact sampling restricted to probe windows
# ---------------------------------------------------------------------------


@njit
def _nb_telegraph_windows(first_odd_prob, gaps, u_start, holds, r01, r10, window):
    n, kmax = holds.shape
    odd_frac = np.empty(n)
    start_state = np.empty(n, dtype=np.int64)
    switches = np.empty(n, dtype=np.int64)
    overflow = False
    rsum = r01 + r10
    pi1 = r01 / rsum
    state = 0
    for i in range(n):
        if i == 0:
            p_odd = first_odd_prob
        else:
            p_odd = pi1 + (state - pi1) * np.exp(-rsum * gaps[i])
        state = 1 if u_start[i] < p_odd else 0
        start_state[i] = state
        t = 0.0
        odd = 0.0
        k = 0
        cnt = 0
        while True:
            rate = r01 if state == 0 else r10
            if rate == 0.0:
                hold = np.inf
            else:
                if k >= kmax:
                    overflow = True
                    break
                hold = holds[i, k] / rate
                k += 1
            if t + hold >= window:
                if state == 1:
                    odd += window - t
                break
            if state == 1:
                odd += hold
            t += hold
            state = 1 - state
            cnt += 1
        odd_frac[i] = odd / window
        switches[i] = cnt
    return odd_frac, start_state, switches, overflow


def _np_telegraph_windows(first_odd_prob, gaps, u_start, holds, r01, r10, window):
    n, kmax = holds.shape
    res = {}
    for s0 in (0, 1):
        rate = np.empty(kmax)
        first, second = (r01, r10) if s0 == 0 else (r10, r01)
        rate[0::2] = first
        rate[1::2] = second
        safe = np.where(rate > 0, rate, 1.0)
        step = np.where(rate > 0, holds / safe, np.inf)
        t_end = np.cumsum(step, axis=1)
        t_begin = np.concatenate((np.zeros((n, 1)), t_end[:, :-1]), axis=1)
        cnt = (t_end < window).sum(axis=1)
        seg = np.clip(np.minimum(t_end, window) - np.minimum(t_begin, window), 0.0, None)
        odd_cols = np.arange(kmax) % 2 == (1 - s0)
        odd = seg[:, odd_cols].sum(axis=1)
        # hold draws consumed = switches + 1 unless the chain got stuck in a zero-rate state
        stuck_rate = np.where(cnt % 2 == 0, first, second)
        consumed = np.where(stuck_rate > 0, cnt + 1, cnt)
        res[s0] = (odd / window, cnt.astype(np.int64), consumed > kmax)
    rsum = r01 + r10
    pi1 = r01 / rsum
    decay = np.exp(-rsum * gaps)
    start_state = np.empty(n, dtype=np.int64)
    odd_frac = np.empty(n)
    switches = np.empty(n, dtype=np.int64)
    of0, c0, ov0 = res[0]
    of1, c1, ov1 = res[1]
    state = 0
    for i in range(n):
        p_odd = first_odd_prob if i == 0 else pi1 + (state - pi1) * decay[i]
        s = 1 if u_start[i] < p_odd else 0
        start_state[i] = s
        if s == 0:
            odd_frac[i] = of0[i]
            switches[i] = c0[i]
        else:
            odd_frac[i] = of1[i]
            switches[i] = c1[i]
        state = s ^ (int(switches[i]) & 1)
    overflow = bool(np.any(np.where(start_state == 0, ov0, ov1)))
    return odd_frac, start_state, switches, overflow


def telegraph_windows(first_odd_prob, gaps, u_start, holds, r01, r10, window):
    """Exact two-state Markov evolution sampled only inside probe windows.

    Window ``i`` starts ``gaps[i]`` seconds after window ``i - 1`` ended.
    The start state is drawn from the closed-form transition kernel of the
    chain using ``u_start[i]``; in-window holding times are
    ``holds[i, k] / rate``.  Returns ``(odd_fraction, start_state, switches,
    overflow)`` where ``overflow`` signals that a row needed more than
    ``holds.shape[1]`` draws.
    """
    gaps = np.ascontiguousarray(gaps, dtype=float)
    u_start = np.ascontiguousarray(u_start, dtype=float)
    holds = np.ascontiguousarray(holds, dtype=float)
    args = (float(first_odd_prob), gaps, u_start, holds, float(r01), float(r10), float(window))
    if _backend.USE_NUMBA:
        return _nb_telegraph_windows(*args)
    return _np_telegraph_windows(*args)


# ---------------------------------------------------------------------------
# Ridge linking across columns
# ---------------------------------------------------------------------------


def _py_link_peaks(col, freq, max_jump, max_gap):
    n = col.shape[0]
    track = np.full(n, -1, dtype=np.int64)
    last_col = np.empty(n, dtype=np.int64)
    last_f = np.empty(n)
    n_tracks = 0
    i = 0
    while i < n:
        c = col[i]
        j = i
        while j < n and col[j] == c:
            j += 1
        # candidate (distance, peak, track) pairs for this column
        m = 0
        dist = np.empty((j - i) * max(n_tracks, 1))
        pk = np.empty((j - i) * max(n_tracks, 1), dtype=np.int64)
        tr = np.empty((j - i) * max(n_tracks, 1), dtype=np.int64)
        for p in range(i, j):
            for t in range(n_tracks):
                if c - last_col[t] > max_gap + 1:
                    continue
                d = abs(freq[p] - last_f[t])
                if d <= max_jump:
                    dist[m] = d
                    pk[m] = p
                    tr[m] = t
                    m += 1
        order = np.argsort(dist[:m], kind="mergesort")
        used_track = np.zeros(max(n_tracks, 1), dtype=np.bool_)
        for o in order:
            p = pk[o]
            t = tr[o]
            if track[p] >= 0 or used_track[t]:
                continue
            track[p] = t
            used_track[t] = True
        for p in range(i, j):
            if track[p] < 0:
                track[p] = n_tracks
                n_tracks += 1
            last_col[track[p]] = c
            last_f[track[p]] = freq[p]
        i = j
    return track


_nb_link_peaks = njit(_py_link_peaks)


def link_peaks(col, freq, max_jump, max_gap=1):
    """Greedy nearest-frequency linking of per-column peaks into tracks.

    ``col`` must be sorted ascending.  A peak joins the closest open track
    (last point at most ``max_gap`` columns back) within ``max_jump``;
    unmatched peaks open new tracks.  Returns a track id per peak.
    """
    col = np.ascontiguousarray(col, dtype=np.int64)
    freq = np.ascontiguousarray(freq, dtype=float)
    if col.size and np.any(np.diff(col) < 0):
        raise ValueError("peaks must be sorted by column")
    if _backend.USE_NUMBA:
        return _nb_link_peaks(col, freq, float(max_jump), int(max_gap))
    return _py_link_peaks(col, freq, float(max_jump), int(max_gap))
