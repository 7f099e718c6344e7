import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpsplit import _backend, kernels


def both(fn, *args, monkeypatch):
    monkeypatch.setattr(_backend, "USE_NUMBA", True)
    a = fn(*args)
    monkeypatch.setattr(_backend, "USE_NUMBA", False)
    b = fn(*args)
    return a, b


def test_lorentzian_matches_formula(backend):
    f = np.linspace(4.5, 4.55, 251)
    c = np.array([[4.52, np.nan], [4.51, 4.53]])
    out = kernels.lorentzian_rows(f, c, 1.0, 0.001)
    ref0 = 1.0 / (1 + ((f - 4.52) / 0.001) ** 2)
    ref1 = 1.0 / (1 + ((f - 4.51) / 0.001) ** 2) + 1.0 / (1 + ((f - 4.53) / 0.001) ** 2)
    np.testing.assert_allclose(out[0], ref0, rtol=1e-13)
    np.testing.assert_allclose(out[1], ref1, rtol=1e-13)
    assert out[0].max() == pytest.approx(1.0)


def test_row_peaks_parabolic_refinement(backend):
    x = np.arange(50.0)
    y = np.exp(-0.5 * ((x - 20.3) / 3) ** 2) + 0.5 * np.exp(-0.5 * ((x - 35.0) / 3) ** 2)
    pos, h, n = kernels.row_peaks(y[None], 0.1, 2)
    assert n[0] == 2
    assert pos[0, 0] == pytest.approx(20.3, abs=0.02)
    assert pos[0, 1] == pytest.approx(35.0, abs=0.01)
    assert h[0, 0] > h[0, 1]


def test_row_peaks_below_threshold_is_nan(backend):
    pos, h, n = kernels.row_peaks(np.zeros((2, 10)), 0.5, 2)
    assert np.all(n == 0) and np.all(np.isnan(pos))


def test_window_occupancy_exact(backend):
    times = np.array([0.0, 1.0, 3.0, 3.5])
    parity = np.array([0, 1, 0, 1])
    frac = kernels.window_occupancy(times, parity, 5.0, np.array([0.0, 0.5, 2.5, 4.0]), 1.0)
    np.testing.assert_allclose(frac, [0.0, 0.5, 0.5, 1.0])


def test_link_peaks_two_tracks(backend):
    col = np.repeat(np.arange(20), 2)
    freq = np.ravel(np.column_stack([np.linspace(1, 1.01, 20), np.linspace(2, 1.99, 20)]))
    tr = kernels.link_peaks(col, freq, 0.005)
    assert set(tr[0::2]) == {tr[0]} and set(tr[1::2]) == {tr[1]} and tr[0] != tr[1]


def test_link_peaks_rejects_unsorted():
    with pytest.raises(ValueError):
        kernels.link_peaks(np.array([1, 0]), np.array([1.0, 1.0]), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 6), st.integers(3, 40))
def test_backends_agree_lorentzian_and_peaks(seed, n, nf):
    rng = np.random.default_rng(seed)
    f = np.sort(rng.uniform(0, 1, nf)) + np.arange(nf) * 1e-6
    c = rng.uniform(0, 1, (n, 3))
    c[rng.random((n, 3)) < 0.2] = np.nan
    mp = pytest.MonkeyPatch()
    try:
        a, b = both(kernels.lorentzian_rows, f, c, rng.uniform(0.1, 2, (n, 3)), 0.05, monkeypatch=mp)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
        data = rng.standard_normal((n, nf))
        thr = rng.uniform(-1, 1, n)
        a, b = both(kernels.row_peaks, data, thr, 3, monkeypatch=mp)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, equal_nan=True)
    finally:
        mp.undo()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_backends_agree_telegraph_and_occupancy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    r01, r10 = rng.uniform(0.1, 50, 2)
    gaps = rng.uniform(0, 2, n)
    u = rng.random(n)
    holds = rng.standard_exponential((n, 8))
    mp = pytest.MonkeyPatch()
    try:
        a, b = both(kernels.telegraph_windows, 0.3, gaps, u, holds, r01, r10, 0.2, monkeypatch=mp)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12)
        times = np.concatenate([[0.0], np.sort(rng.uniform(0.01, 10, 30))])
        parity = np.arange(times.size) % 2
        starts = np.sort(rng.uniform(0, 9, 15))
        a, b = both(kernels.window_occupancy, times, parity, 10.0, starts, 0.7, monkeypatch=mp)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
        col = np.sort(rng.integers(0, 15, 60))
        fr = rng.uniform(0, 1, 60)
        a, b = both(kernels.link_peaks, col, fr, 0.2, 2, monkeypatch=mp)
        np.testing.assert_array_equal(a, b)
    finally:
        mp.undo()


def test_telegraph_windows_absorbing(backend):
    frac, state, sw, overflow = kernels.telegraph_windows(
        1.0, np.zeros(5), np.zeros(5), np.ones((5, 4)), 1.0, 0.0, 10.0)
    assert not overflow
    np.testing.assert_array_equal(state, 1)
    np.testing.assert_array_equal(sw, 0)
    np.testing.assert_allclose(frac, 1.0)


def test_telegraph_windows_overflow_flag(backend):
    *_, overflow = kernels.telegraph_windows(0.0, np.zeros(3), np.ones(3), np.full((3, 2), 1e-3), 10.0, 10.0, 1.0)
    assert overflow


def test_benchmark_script_runs(capsys):
    import runpy
    from pathlib import Path
    if not _backend.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    was = _backend.USE_NUMBA
    try:
        mod = runpy.run_path(str(Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"))
        mod["main"](["--repeat", "1", "--scale", "0.005"])
    finally:
        _backend.USE_NUMBA = was
    out = capsys.readouterr().out
    assert "link_peaks" in out and "False" not in out
