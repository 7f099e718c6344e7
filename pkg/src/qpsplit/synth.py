"""Synthetic spectrograms and repeated single-tone trace stacks."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .circuit import omega20
from .errors import InvalidParametersError
from .noise import generate_one_over_f
from .quasiparticle import sample_probe_parity

DEFAULT_LINEWIDTH_GHZ = 0.002
DEFAULT_FREQ_STEP_GHZ = 0.0002
DEFAULT_F_MID_GHZ = 4.526
DEFAULT_SPLIT_GHZ = 0.018


def _strictly_increasing(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 1 or np.any(np.diff(a) <= 0):
        raise InvalidParametersError(f"{name} must be a strictly increasing 1-d array")
    return a


@dataclass
class Spectrogram:
    bias_axis: np.ndarray
    freq_axis: np.ndarray
    amplitude: np.ndarray  # (n_bias, n_freq)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bias_axis = _strictly_increasing(self.bias_axis, "bias_axis")
        self.freq_axis = _strictly_increasing(self.freq_axis, "freq_axis")
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if self.amplitude.shape != (self.bias_axis.size, self.freq_axis.size):
            raise ValueError("amplitude shape must be (n_bias, n_freq)")
        if not np.all(np.isfinite(self.amplitude)):
            raise ValueError("amplitude must be finite")


@dataclass
class TraceStack:
    trace_times: np.ndarray
    freq_axis: np.ndarray
    amplitude: np.ndarray  # (n_traces, n_freq)
    q_g2: np.ndarray = None          # true island-2 offset per trace, e (unfolded)
    parity: np.ndarray = None        # majority parity inside each probe window
    odd_fraction: np.ndarray = None
    both_visible: np.ndarray = None
    centers: np.ndarray = None       # (n_traces, 2) emitted line centers, NaN if absent
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trace_times = _strictly_increasing(self.trace_times, "trace_times")
        self.freq_axis = _strictly_increasing(self.freq_axis, "freq_axis")
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if self.amplitude.shape != (self.trace_times.size, self.freq_axis.size):
            raise ValueError("one amplitude row per trace time is required")


# ---------------------------------------------------------------------------
# omega_20 versus island-2 charge
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CosineDispersion:
    """omega_20(q) = f_mid + (width_max / 2) cos(pi q); the odd parity is q + 1."""

    f_mid: float = DEFAULT_F_MID_GHZ
    width_max: float = DEFAULT_SPLIT_GHZ

    def __call__(self, q):
        return self.f_mid + 0.5 * self.width_max * np.cos(np.pi * np.asarray(q, dtype=float))

    def to_config(self):
        return {"kind": "cosine", "f_mid_ghz": self.f_mid, "width_max_ghz": self.width_max}


class CircuitDispersion:
    """omega_20(q) of the full circuit model, tabulated on [0, 1] and extended
    by the q -> -q symmetry and the 2e period with a periodic spline."""

    def __init__(self, params, phi_ext=0.5018, basis=None, n_grid=21):
        self.params, self.phi_ext, self.basis = params, float(phi_ext), basis
        half = np.linspace(0.0, 1.0, n_grid)
        vals = np.array([omega20(params, (0.0, q, 0.0, 0.0), phi_ext, basis) for q in half])
        grid = np.concatenate([half, 2.0 - half[-2::-1]])
        self._spline = CubicSpline(grid, np.concatenate([vals, vals[-2::-1]]), bc_type="periodic")
        self.q_grid, self.values = half, vals

    def __call__(self, q):
        return self._spline(np.mod(np.asarray(q, dtype=float), 2.0))

    @property
    def f_mid(self):
        return 0.5 * (self.values[0] + self.values[-1])

    @property
    def width_max(self):
        return abs(self.values[0] - self.values[-1])

    def split_curve(self, n=101):
        """(q, width) on [0, 0.5] for model-lookup inversion."""
        q = np.linspace(0.0, 0.5, n)
        return q, np.abs(self(q) - self(q + 1.0))

    def to_config(self):
        return {"kind": "circuit", "params": self.params.to_config(), "phi_ext": self.phi_ext}


def default_freq_axis(dispersion, linewidth=DEFAULT_LINEWIDTH_GHZ, step=DEFAULT_FREQ_STEP_GHZ, margin=5.0):
    half = 0.5 * dispersion.width_max + margin * linewidth
    n = int(np.ceil(half / step))
    return dispersion.f_mid + step * np.arange(-n, n + 1)


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------


def synth_spectrogram(branches, freq_axis, linewidth=DEFAULT_LINEWIDTH_GHZ, noise_sigma=0.0,
                      seed=0, weights=None, bias_axis=None):
    """Sum of unit-peak Lorentzians (FWHM ``linewidth``) along model branches plus white noise.

    ``branches`` are :class:`~qpsplit.rabi.BranchCurve` objects; they are
    interpolated onto ``bias_axis`` (default: the first branch's grid).
    """
    if not linewidth > 0:
        raise InvalidParametersError("linewidth must be positive")
    if noise_sigma < 0:
        raise InvalidParametersError("noise_sigma must be non-negative")
    freq_axis = _strictly_increasing(freq_axis, "freq_axis")
    bias = _strictly_increasing(branches[0].epsilon if bias_axis is None else bias_axis, "bias_axis")
    w = np.ones(len(branches)) if weights is None else np.asarray(weights, dtype=float)
    centers = np.column_stack([
        b.freq if (b.epsilon.size == bias.size and np.array_equal(b.epsilon, bias))
        else np.interp(bias, b.epsilon, b.freq, left=np.nan, right=np.nan)
        for b in branches])
    amp = kernels.lorentzian_rows(freq_axis, centers, np.broadcast_to(w, centers.shape), 0.5 * linewidth)
    if noise_sigma > 0:
        amp = amp + noise_sigma * np.random.default_rng(seed).standard_normal(amp.shape)
    meta = {"seed": seed, "linewidth_ghz": linewidth, "noise_sigma": noise_sigma,
            "branches": [b.branch for b in branches], "weights": w.tolist()}
    return Spectrogram(bias, freq_axis, amp, meta)


@dataclass
class BackgroundNoise:
    s_1hz: float = (4.06e-2) ** 2
    gamma: float = 1.0
    offset: float = 0.15


@dataclass
class TelegraphParams:
    rate_even_to_odd: float = 1e3
    rate_odd_to_even: float = 1e3
    probe_window: float = 0.02
    threshold: float = 0.1


def synth_trace_stack(dispersion=None, n_traces=84000, interval_s=3.0, background=None,
                      telegraph=None, freq_axis=None, linewidth=DEFAULT_LINEWIDTH_GHZ,
                      noise_sigma=0.0, seed=0, q_override=None):
    """Repeated single-tone traces of the parity-split omega_20 line.

    Each trace sees the island-2 offset ``q(t)`` (constant offset plus 1/f
    noise) and the parity occupancy of its probe window.  Lines appear at
    ``dispersion(q)`` for even and ``dispersion(q + 1)`` for odd parity; both
    are drawn when both parities exceed the visibility threshold, otherwise
    only the majority parity.  ``q_override`` replaces the generated offset
    (e.g. a deterministic sweep).  ``telegraph=None`` disables switching.
    """
    if n_traces < 1:
        raise InvalidParametersError("n_traces must be >= 1")
    if not linewidth > 0:
        raise InvalidParametersError("linewidth must be positive")
    dispersion = dispersion or CosineDispersion()
    background = background or BackgroundNoise()
    ss = np.random.SeedSequence(seed)
    s_bg, s_tel, s_noise = (np.random.default_rng(c) for c in ss.spawn(3))
    times = interval_s * np.arange(n_traces)
    if q_override is not None:
        q = np.broadcast_to(np.asarray(q_override, dtype=float), (n_traces,)).copy()
    elif background.s_1hz > 0 and n_traces > 1:
        q = background.offset + generate_one_over_f(
            background.s_1hz, background.gamma, n_traces, 1.0 / interval_s, s_bg).q
    else:
        q = np.full(n_traces, float(background.offset))
    if telegraph is None:
        odd = np.zeros(n_traces)
        both = np.zeros(n_traces, dtype=bool)
    else:
        occ = sample_probe_parity(telegraph.rate_even_to_odd, telegraph.rate_odd_to_even, times,
                                  telegraph.probe_window, s_tel, threshold=telegraph.threshold)
        odd, both = occ.odd_fraction, occ.both_visible
    parity = (odd > 0.5).astype(np.int8)
    f_even, f_odd = dispersion(q), dispersion(q + 1.0)
    centers = np.column_stack([
        np.where(both | (parity == 0), f_even, np.nan),
        np.where(both | (parity == 1), f_odd, np.nan),
    ])
    if freq_axis is None:
        freq_axis = default_freq_axis(dispersion, linewidth)
    freq_axis = _strictly_increasing(freq_axis, "freq_axis")
    amp = kernels.lorentzian_rows(freq_axis, centers, 1.0, 0.5 * linewidth)
    if noise_sigma > 0:
        amp += noise_sigma * s_noise.standard_normal(amp.shape)
    meta = {
        "seed": seed, "n_traces": n_traces, "interval_s": interval_s,
        "linewidth_ghz": linewidth, "noise_sigma": noise_sigma,
        "dispersion": dispersion.to_config(),
        "background": None if q_override is not None else vars(background).copy(),
        "telegraph": None if telegraph is None else vars(telegraph).copy(),
    }
    return TraceStack(times, freq_axis, amp, q, parity, odd, both, centers, meta)


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

_ARRAYS = {
    "spectrogram": ("bias_axis", "freq_axis", "amplitude"),
    "tracestack": ("trace_times", "freq_axis", "amplitude", "q_g2", "parity",
                   "odd_fraction", "both_visible", "centers"),
}


def save(obj, path):
    """Write a spectrogram or trace stack to ``.npz`` with a JSON metadata header."""
    kind = "spectrogram" if isinstance(obj, Spectrogram) else "tracestack"
    arrays = {k: getattr(obj, k) for k in _ARRAYS[kind] if getattr(obj, k) is not None}
    header = json.dumps({"kind": kind, "metadata": obj.metadata}, sort_keys=True)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(header), **arrays)


def load(path):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        arrays = {k: z[k] for k in z.files if k != "header"}
    cls = Spectrogram if header["kind"] == "spectrogram" else TraceStack
    return cls(metadata=header["metadata"], **arrays)
