"""Charge-offset inversion, PSD estimation and 1/f noise synthesis.

Charges are in units of e, frequencies in Hz, PSDs in e^2/Hz (one-sided).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, signal

from .errors import ChargeRangeError, InvalidParametersError, SamplingError

CLIP_TOL = 0.02
MAX_INTERP_GAP = 5
ZERO_VARIANCE = 1e-24  # e^2; fluctuations below 1e-12 e are floating-point roundoff


@dataclass
class ChargeSeries:
    times: np.ndarray
    q: np.ndarray
    dt: float = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.times.shape != self.q.shape:
            raise ValueError("times and q must have the same shape")
        if self.dt is None and self.times.size > 1:
            self.dt = float(self.times[1] - self.times[0])

    @property
    def is_uniform(self):
        if self.times.size < 3:
            return True
        d = np.diff(self.times)
        return bool(np.all(np.abs(d - self.dt) <= 1e-9 * max(abs(self.dt), 1.0)))

    @property
    def folded(self):
        return bool(self.q.size == 0 or (self.q.min() >= 0 and self.q.max() <= 0.5))


@dataclass
class PsdResult:
    freqs: np.ndarray
    s_q: np.ndarray
    variance: float = None
    integrated: float = None
    segment_variance: float = None
    gamma: float = None
    s_1hz: float = None
    band: tuple = None
    n_points: int = None
    extrapolated: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def parseval_ratio(self):
        return self.integrated / self.segment_variance if self.segment_variance else np.nan

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("# units: f in Hz, S_q in e^2/Hz (one-sided)\n")
            fh.write("f_hz,s_q_e2_per_hz\n")
            for f, s in zip(self.freqs, self.s_q):
                fh.write(f"{float(f)!r},{float(s)!r}\n")

    def report(self):
        def num(x):
            return "null" if x is None else repr(float(x))

        lines = [
            f"gamma: {num(self.gamma)}",
            f"s1hz_e2_per_hz: {num(self.s_1hz)}",
            f"sqrt_s1hz_e_per_rthz: {num(None if self.s_1hz is None else np.sqrt(self.s_1hz))}",
            f"band_hz: [{self.band[0]!r}, {self.band[1]!r}]" if self.band else "band_hz: null",
            f"n_points: {self.n_points}",
            f"extrapolated_to_1hz: {str(self.extrapolated).lower()}",
            f"parseval_ratio: {num(self.parseval_ratio)}",
        ]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# fold and inversion
# ---------------------------------------------------------------------------


def fold_to_range(q_raw):
    """Map any charge onto [0, 0.5] using the 2e period and reflections about e and e/2."""
    q = np.mod(np.asarray(q_raw, dtype=float), 2.0)
    q = np.where(q > 1.0, 2.0 - q, q)
    q = np.where(q > 0.5, 1.0 - q, q)
    return q if q.ndim else float(q)


def cosine_split(q, width_max):
    """Split width of the ideal cosine dispersion at charge ``q``."""
    return width_max * np.abs(np.cos(np.pi * np.asarray(q, dtype=float)))


def invert_split_to_charge(width, width_max, mode="cosine", model_curve=None, tol=CLIP_TOL):
    """Convert split widths to charge offsets in [0, 0.5].

    ``mode="cosine"`` uses q = arccos(width / width_max) / pi.  With
    ``mode="model_lookup"`` ``model_curve`` is a pair ``(q_grid, split)`` of
    the model split on [0, 0.5] and is inverted by monotone interpolation.
    Widths beyond ``width_max * (1 + tol)`` or below ``-tol * width_max``
    raise :class:`ChargeRangeError`; smaller excursions are clipped.
    """
    w = np.asarray(width, dtype=float)
    if not width_max > 0:
        raise InvalidParametersError("width_max must be positive")
    if np.any(~np.isfinite(w)):
        raise ChargeRangeError("non-finite split width")
    if np.any(w > width_max * (1 + tol)) or np.any(w < -tol * width_max):
        raise ChargeRangeError("split width outside the invertible range")
    w = np.clip(w, 0.0, width_max)
    if mode == "cosine":
        q = np.arccos(w / width_max) / np.pi
    elif mode == "model_lookup":
        if model_curve is None:
            raise InvalidParametersError("model_lookup mode needs model_curve")
        qg, sg = (np.asarray(a, dtype=float) for a in model_curve)
        order = np.argsort(sg)
        sg, qg = sg[order], qg[order]
        if np.any(np.diff(sg) <= 0):
            raise InvalidParametersError("model split curve must be strictly monotone in q")
        # widths are rescaled so the curve's own maximum maps to width_max
        w = w * sg[-1] / width_max
        q = interpolate.PchipInterpolator(sg, qg, extrapolate=True)(np.clip(w, sg[0], sg[-1]))
        q = np.clip(q, 0.0, 0.5)
    else:
        raise InvalidParametersError(f"unknown inversion mode {mode!r}")
    return q if q.ndim else float(q)


# ---------------------------------------------------------------------------
# gaps
# ---------------------------------------------------------------------------


def fill_gaps(times, q, valid, dt, max_gap=MAX_INTERP_GAP):
    """Interpolate runs of fewer than ``max_gap`` missing samples; split at longer runs.

    Returns a list of uniformly sampled :class:`ChargeSeries` segments.
    """
    times = np.asarray(times, dtype=float)
    q = np.asarray(q, dtype=float)
    valid = np.asarray(valid, dtype=bool) & np.isfinite(q)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return []
    segments = []
    # break wherever a run of missing samples reaches max_gap
    breaks = np.flatnonzero(np.diff(idx) - 1 >= max_gap)
    for part in np.split(idx, breaks + 1):
        lo, hi = part[0], part[-1] + 1
        seg_q = np.interp(times[lo:hi], times[part], q[part])
        segments.append(ChargeSeries(times[lo:hi].copy(), seg_q, dt))
    return segments


# ---------------------------------------------------------------------------
# PSD
# ---------------------------------------------------------------------------


def compute_psd(series, segment_len=None, overlap=0.5):
    """Welch estimate (Hann window, one-sided) of the charge PSD.

    ``series`` may also be a list of uniformly sampled segments with the same
    interval; their periodograms are averaged.  The ``integrated`` field
    holds the integral of the estimate.  It is compared with the
    Hann-weighted variance of the mean-removed segments, which is what the
    estimator conserves; the plain series variance is kept in ``variance``
    and exceeds it for red spectra with power below the segment resolution.
    """
    segs = series if isinstance(series, (list, tuple)) else [series]
    if not segs:
        raise SamplingError("no data")
    dt = segs[0].dt
    for s in segs:
        if not s.is_uniform or (s.dt is not None and abs(s.dt - dt) > 1e-9 * dt):
            raise SamplingError("charge series must be uniformly sampled")
    n_tot = max(s.q.size for s in segs)
    nper = int(segment_len or max(n_tot // 8, 16))
    use = [s for s in segs if s.q.size >= nper]
    if not use or (len(segs) == 1 and segs[0].q.size < 2 * nper):
        raise SamplingError("series shorter than two segments")
    fs = 1.0 / dt
    nover = int(round(overlap * nper))
    win = signal.get_window("hann", nper)
    w2 = win * win / np.sum(win * win)
    acc, weight, var_acc, seg_var = 0.0, 0, 0.0, 0.0
    for s in use:
        f, p = signal.welch(s.q, fs=fs, window="hann", nperseg=nper, noverlap=nover,
                            detrend="constant", return_onesided=True, scaling="density")
        k = 1 + (s.q.size - nper) // (nper - nover)
        segs_k = np.lib.stride_tricks.sliding_window_view(s.q, nper)[::nper - nover][:k]
        segs_k = segs_k - segs_k.mean(axis=1, keepdims=True)
        seg_var += float(np.sum(segs_k * segs_k @ w2))
        acc = acc + p * k
        weight += k
        var_acc += np.var(s.q) * s.q.size
    p = acc / weight
    variance = var_acc / sum(s.q.size for s in use)
    df = f[1] - f[0]
    integrated = float(np.sum(p) * df)
    keep = f > 0
    return PsdResult(f[keep], p[keep], float(variance), integrated, seg_var / weight,
                     meta={"segment_len": nper, "overlap": overlap, "fs_hz": fs, "n_segments": weight})


def default_band(psd):
    f = psd.freqs
    return (3.0 * f[0], (psd.meta.get("fs_hz", 2 * f[-1]) / 2.0) / 3.0)


def fit_one_over_f(psd, band=None):
    """Least-squares line in log-log coordinates over ``band``.

    Fills ``gamma`` (minus the slope) and ``s_1hz`` (the line at 1 Hz) on
    ``psd`` and returns them.  A series without fluctuations above roundoff gives ``(None, 0.0)``.
    """
    band = tuple(band) if band is not None else default_band(psd)
    sel = (psd.freqs >= band[0]) & (psd.freqs <= band[1])
    if np.count_nonzero(sel) < 10:
        raise SamplingError("fewer than 10 PSD points in the fit band")
    s = psd.s_q[sel]
    psd.band = (float(band[0]), float(band[1]))
    psd.n_points = int(np.count_nonzero(sel))
    psd.extrapolated = not (band[0] <= 1.0 <= band[1])
    if not np.any(s) or (psd.segment_variance is not None and psd.segment_variance < ZERO_VARIANCE):
        # a noiseless series: no exponent to speak of
        psd.gamma, psd.s_1hz = None, 0.0
        return psd.gamma, psd.s_1hz
    if np.any(s <= 0):
        raise InvalidParametersError("PSD values must be positive for a log-log fit")
    x = np.log(psd.freqs[sel])
    slope, intercept = np.polyfit(x, np.log(s), 1)
    psd.gamma = float(-slope)
    psd.s_1hz = float(np.exp(intercept))
    return psd.gamma, psd.s_1hz


def generate_one_over_f(s_1hz, gamma, n, fs, seed):
    """Gaussian series with one-sided PSD ``s_1hz / f**gamma``.

    Spectral synthesis: complex Gaussian amplitudes with variance set by the
    target PSD on the rfft grid, then an inverse real FFT.
    """
    if n < 2 or not fs > 0:
        raise InvalidParametersError("need n >= 2 and fs > 0")
    if s_1hz < 0:
        raise InvalidParametersError("S(1 Hz) must be non-negative")
    rng = np.random.default_rng(seed)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    target = np.zeros_like(f)
    target[1:] = s_1hz / f[1:] ** gamma
    # one-sided S(f) = 2 |X_k|^2 / (n fs) for the unnormalized DFT X_k
    sigma = np.sqrt(target * n * fs / 4.0)
    coef = sigma * (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size))
    if n % 2 == 0:
        coef[-1] = coef[-1].real * np.sqrt(2.0)
    q = np.fft.irfft(coef, n)
    return ChargeSeries(np.arange(n) / fs, q, 1.0 / fs)
