"""Ridge and peak-pair extraction from spectrograms and trace stacks."""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import kernels

MAD_SCALE = 1.4826


@dataclass
class RidgeConfig:
    smooth_sigma: float = 1.0   # grid steps
    k_mad: float = 5.0
    max_jump: float = 0.005     # GHz
    min_len: int = 10
    max_gap: int = 1            # columns a ridge may skip
    max_peaks: int = 8          # per column
    min_sep: float = 0.002      # GHz; weaker maxima closer than this to a stronger one are dropped


@dataclass
class Ridge:
    bias: np.ndarray
    freq: np.ndarray
    prominence: np.ndarray
    label: str = None

    def __len__(self):
        return self.bias.size


@dataclass
class RidgeSet:
    branches: list
    unassigned: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))

    @property
    def empty(self):
        return not self.branches

    def labelled(self):
        return {r.label: r for r in self.branches if r.label is not None}

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("# units: bias as given, freq in GHz\n")
            fh.write("bias_or_time,freq_ghz,branch_or_flag\n")
            for i, r in enumerate(self.branches):
                name = r.label or f"ridge{i}"
                for b, f in zip(r.bias, r.freq):
                    fh.write(f"{float(b)!r},{float(f)!r},{name}\n")
            for b, f, _ in self.unassigned:
                fh.write(f"{float(b)!r},{float(f)!r},unassigned\n")


def _thresholds(data, k_mad):
    med = np.median(data, axis=1)
    mad = np.median(np.abs(data - med[:, None]), axis=1)
    return med, med + k_mad * MAD_SCALE * mad


def _to_freq(pos, freq_axis):
    return np.interp(pos, np.arange(freq_axis.size), freq_axis)


def column_peaks(amplitude, freq_axis, smooth_sigma, k_mad, k):
    """Smoothed, MAD-thresholded local maxima of every row of ``amplitude``.

    Returns ``(freq, height_above_median, count)`` arrays of shape ``(n, k)``.
    """
    data = gaussian_filter1d(amplitude, smooth_sigma, axis=1, mode="nearest") if smooth_sigma > 0 else amplitude
    med, thr = _thresholds(data, k_mad)
    pos, height, count = kernels.row_peaks(data, thr, k)
    return _to_freq(pos, freq_axis), height - med[:, None], count


def _suppress_close(freq, prom, min_sep):
    # noise splits a broad line into several nearby maxima; keep the strongest
    freq, prom = freq.copy(), prom.copy()
    order = np.argsort(-np.nan_to_num(prom, nan=-np.inf), axis=1)
    freq = np.take_along_axis(freq, order, axis=1)
    prom = np.take_along_axis(prom, order, axis=1)
    for j in range(1, freq.shape[1]):
        close = np.any(np.abs(freq[:, :j] - freq[:, j:j + 1]) < min_sep, axis=1)
        freq[close, j] = np.nan
        prom[close, j] = np.nan
    return freq, prom


def extract_ridges(spec, cfg=None):
    """Link column maxima of a spectrogram into ridges.

    Column maxima above ``median + k_mad * 1.4826 * MAD`` of the smoothed
    column, thinned so no two are closer than ``min_sep``, are joined to
    the nearest open ridge within ``max_jump``;
    ridges shorter than ``min_len`` points are returned as unassigned.
    """
    cfg = cfg or RidgeConfig()
    freq, prom, _ = column_peaks(spec.amplitude, spec.freq_axis, cfg.smooth_sigma, cfg.k_mad, cfg.max_peaks)
    if cfg.min_sep > 0:
        freq, prom = _suppress_close(freq, prom, cfg.min_sep)
    col, slot = np.nonzero(~np.isnan(freq))
    f = freq[col, slot]
    p = prom[col, slot]
    if col.size == 0:
        return RidgeSet([])
    track = kernels.link_peaks(col, f, cfg.max_jump, cfg.max_gap)
    branches, loose = [], []
    for t in range(track.max() + 1):
        m = track == t
        if np.count_nonzero(m) >= cfg.min_len:
            branches.append(Ridge(spec.bias_axis[col[m]], f[m], p[m]))
        else:
            loose.append(np.column_stack([spec.bias_axis[col[m]], f[m], p[m]]))
    branches.sort(key=lambda r: (r.bias[0], r.freq[0]))
    unassigned = np.concatenate(loose) if loose else np.empty((0, 3))
    return RidgeSet(branches, unassigned)


@dataclass
class SplitSeries:
    times: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    mid: np.ndarray
    single: np.ndarray   # exactly one peak found
    n_peaks: np.ndarray

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def two_peak(self):
        return self.n_peaks >= 2

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("# units: t in s, freq in GHz; flag = number of peaks found\n")
            fh.write("bias_or_time,upper_ghz,lower_ghz,mid_ghz,branch_or_flag\n")
            for row in zip(self.times, self.upper, self.lower, self.mid, self.n_peaks):
                fh.write("%r,%r,%r,%r,%d\n" % tuple(float(x) for x in row))


def extract_split_series(stack, cfg=None):
    """Upper and lower line positions of every trace in a stack.

    The two highest smoothed maxima above threshold are kept.  With a single
    peak the width is missing (NaN) and ``mid`` is that peak.
    """
    cfg = cfg or RidgeConfig()
    freq, _, count = column_peaks(stack.amplitude, stack.freq_axis, cfg.smooth_sigma, cfg.k_mad, 2)
    upper = np.fmax(freq[:, 0], freq[:, 1])
    lower = np.fmin(freq[:, 0], freq[:, 1])
    two = count >= 2
    mid = np.where(two, 0.5 * (upper + lower), freq[:, 0])
    upper = np.where(two, upper, np.nan)
    lower = np.where(two, lower, np.nan)
    return SplitSeries(stack.trace_times.copy(), upper, lower, mid, count == 1, count)


@dataclass
class SplitHistogram:
    edges_mhz: np.ndarray
    counts: np.ndarray
    probability: np.ndarray
    mode_mhz: float          # center of the most populated bin

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("# bin_left in MHz; probability = count / total\n")
            fh.write("bin_left_mhz,count,probability\n")
            for e, c, p in zip(self.edges_mhz[:-1], self.counts, self.probability):
                fh.write(f"{float(e)!r},{int(c)},{float(p)!r}\n")


def split_histogram(series, bin_width=0.5):
    """Histogram of split widths (MHz) with bins centered on multiples of ``bin_width``."""
    w = series.width[series.two_peak] * 1e3 if isinstance(series, SplitSeries) else np.asarray(series) * 1e3
    w = w[np.isfinite(w)]
    if w.size == 0:
        raise ValueError("no two-peak traces to histogram")
    lo = np.floor(w.min() / bin_width + 0.5)
    hi = np.floor(w.max() / bin_width + 0.5)
    edges = (np.arange(lo, hi + 2) - 0.5) * bin_width
    idx = np.floor(w / bin_width + 0.5).astype(np.int64) - int(lo)
    counts = np.bincount(idx, minlength=edges.size - 1)
    k = int(np.argmax(counts))
    return SplitHistogram(edges, counts, counts / w.size, float((lo + k) * bin_width))
