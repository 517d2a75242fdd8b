import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linespec.metrics import matched_distance
from linespec.pseudospec import KernelSpec, extract_peaks, rasterize
from linespec.sigmodel import GenConfig, generate_dataset


def direct_rasterize(freqs, half_width, g):
    out = []
    for i in range(g):
        u = i / g
        total = 0.0
        for f in freqs:
            d = abs(u - f) % 1.0
            d = min(d, 1.0 - d)
            total += max(0.0, 1.0 - d / half_width)
        out.append(total)
    return np.array(out)


def test_kernel_shape():
    k = KernelSpec(0.02)
    assert k(0.0) == 1.0
    assert k(0.01) == pytest.approx(0.5)
    assert k(0.02) == 0.0 and k(-0.3) == 0.0
    with pytest.raises(ValueError):
        KernelSpec(0.0)


def test_single_line_peak_and_support():
    v = rasterize([0.25], KernelSpec(0.02), 1000)
    assert v[250] == 1.0
    far = np.abs(np.arange(1000) - 250) > 20
    assert np.all(v[far] == 0)
    assert np.all(v >= 0)


def test_disjoint_lines_add():
    k = KernelSpec(0.02)
    both = rasterize([0.3, 0.36], k, 1000)
    np.testing.assert_array_equal(both, rasterize([0.3], k, 1000) + rasterize([0.36], k, 1000))


def test_matches_direct_evaluation():
    rng = np.random.default_rng(0)
    for _ in range(5):
        f = rng.uniform(size=rng.integers(1, 11))
        ours = rasterize(f, KernelSpec(1 / 50), 1000)
        np.testing.assert_allclose(ours, direct_rasterize(f, 1 / 50, 1000), rtol=0, atol=1e-14)


def test_wraps_around_circle():
    v = rasterize([0.999], KernelSpec(0.01), 1000)
    assert v[0] > 0.8 and v[5] > 0.3 and v[995] > 0.5


@settings(max_examples=40, deadline=None)
@given(f=st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=6),
       s=st.integers(-999, 999))
def test_shift_equivariance(f, s):
    g = 1000
    k = KernelSpec(0.02)
    shifted = rasterize(np.mod(np.array(f) + s / g, 1.0), k, g)
    np.testing.assert_allclose(shifted, np.roll(rasterize(f, k, g), s), rtol=0, atol=1e-12)


class TestExtractPeaks:
    def test_single_line(self):
        v = rasterize([0.25], KernelSpec(0.02), 1000)
        (f,) = extract_peaks(v, 1)
        assert abs(f - 0.25) <= 1 / 2000

    def test_off_grid_line(self):
        for f0 in (0.1234, 0.50049, 0.99971):
            v = rasterize([f0], KernelSpec(0.02), 1000)
            (f,) = extract_peaks(v, 1)
            d = abs(f - f0) % 1.0
            assert min(d, 1 - d) <= 1 / 2000

    def test_constant_spectrum(self):
        assert extract_peaks(np.full(64, 3.0), 1)[0] == 0.0

    def test_plateau_centroid(self):
        v = np.zeros(100)
        v[40:45] = 2.0  # odd plateau, centroid bin 42
        assert extract_peaks(v, 1)[0] == pytest.approx(0.42)
        v[:] = 0
        v[40:44] = 2.0  # even plateau, lower middle bin, flat neighbours give no offset
        assert extract_peaks(v, 1)[0] == pytest.approx(0.41)

    def test_order_and_ties(self):
        v = np.zeros(100)
        v[[10, 30, 50]] = [1.0, 3.0, 1.0]
        out = extract_peaks(v, 3)
        np.testing.assert_allclose(out, [0.30, 0.10, 0.50])

    def test_fill_when_too_few_maxima(self):
        v = np.zeros(50)
        v[20] = 5.0
        v[21] = 4.0
        out = extract_peaks(v, 3)
        assert len(out) == 3
        assert out[1] == pytest.approx(21 / 50) and out[2] == 0.0

    def test_negative_values_allowed(self):
        v = -np.ones(200)
        v[77] = -0.5
        assert extract_peaks(v, 1)[0] == pytest.approx(0.385)

    @settings(max_examples=50, deadline=None)
    @given(v=st.lists(st.floats(-10, 10), min_size=3, max_size=80), m=st.integers(1, 5))
    def test_always_m_values_in_unit_interval(self, v, m):
        m = min(m, len(v))
        out = extract_peaks(np.array(v), m)
        assert out.shape == (m,)
        assert np.all((out >= 0) & (out < 1))

    def test_round_trip_well_separated(self):
        rng = np.random.default_rng(1)
        g, hw = 1000, 0.02
        for _ in range(50):
            base = rng.uniform()
            f = np.mod(base + np.cumsum(rng.uniform(2.1 * hw, 0.15, size=4)), 1.0)
            out = extract_peaks(rasterize(f, KernelSpec(hw), g), 4)
            for fj in f:
                d = np.abs(out - fj) % 1.0
                assert np.min(np.minimum(d, 1 - d)) <= 1 / g

    def test_noiseless_rasterization_md(self):
        n = 50
        ds = generate_dataset(GenConfig(n=n, count=1000, delta_min=2 / n, seed=12))
        k = KernelSpec(1 / n)
        md = [matched_distance(s.freqs, extract_peaks(rasterize(s, k, 1000), s.m), n)
              for s in ds.spectra]
        assert np.mean(md) < 0.05
        assert np.max(md) < 0.05
