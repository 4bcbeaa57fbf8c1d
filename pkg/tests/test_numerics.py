import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cftrack import numerics
from cftrack.errors import ImaginaryResidue

from oracles import dft2_direct, idft2_direct


class TestFft2:
    def test_constant_plane_concentrates_at_dc(self):
        s = numerics.fft2(np.ones((4, 4)))
        assert s[0, 0] == pytest.approx(16.0)
        s[0, 0] = 0.0
        assert np.abs(s).max() < 1e-12

    def test_impulse_gives_flat_spectrum(self):
        p = np.zeros((4, 4))
        p[0, 0] = 1.0
        assert np.allclose(numerics.fft2(p), np.ones((4, 4)), atol=1e-12)

    def test_matches_direct_dft_on_random_plane(self):
        rng = np.random.default_rng(1)
        p = rng.standard_normal((8, 8))
        assert np.abs(numerics.fft2(p) - dft2_direct(p)).max() < 1e-6

    def test_rejects_non_plane_input(self):
        with pytest.raises(ValueError):
            numerics.fft2(np.zeros(4))


class TestIfft2:
    def test_roundtrip_identity(self):
        rng = np.random.default_rng(2)
        p = rng.standard_normal((8, 8))
        assert np.abs(numerics.ifft2(numerics.fft2(p)) - p).max() < 1e-6

    def test_flat_spectrum_gives_unit_impulse(self):
        out = numerics.ifft2(np.ones((4, 4), dtype=complex))
        assert out[0, 0] == pytest.approx(1.0)
        assert np.abs(out).sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_direct_inverse_on_symmetric_spectrum(self):
        rng = np.random.default_rng(3)
        s = numerics.fft2(rng.standard_normal((8, 8)))
        assert np.abs(numerics.ifft2(s) - idft2_direct(s)).max() < 1e-6

    def test_rejects_asymmetric_spectrum(self):
        s = np.zeros((4, 4), dtype=complex)
        s[1, 2] = 3.0 + 1.0j  # no conjugate partner
        with pytest.raises(ImaginaryResidue):
            numerics.ifft2(s)


class TestGaussianLabel:
    def test_peak_value_one_at_center(self):
        lab = numerics.gaussian_label(5, 2.7)
        assert lab[2, 2] == 1.0
        assert lab.argmax() == 2 * 5 + 2

    def test_analytic_neighbor_value(self):
        lab = numerics.gaussian_label(5, 1.0)
        assert lab[2, 3] == pytest.approx(np.exp(-0.5))

    def test_full_map_matches_per_pixel_formula(self):
        sigma = 1.4
        lab = numerics.gaussian_label(7, sigma)
        c = 7 // 2
        for y in range(7):
            for x in range(7):
                want = np.exp(-((x - c) ** 2 + (y - c) ** 2) / (2 * sigma**2))
                assert lab[y, x] == pytest.approx(want, rel=1e-12)


class TestCosineWindow:
    def test_size3_center_and_border(self):
        w = numerics.cosine_window(3)
        assert w[1, 1] == pytest.approx(1.0)
        assert w[0, :].max() == 0.0 and w[:, 0].max() == 0.0

    def test_size4_analytic_value(self):
        w = numerics.cosine_window(4)
        assert w[1, 1] == pytest.approx(0.5625)

    @given(st.integers(min_value=2, max_value=33))
    def test_flip_symmetry(self, size):
        w = numerics.cosine_window(size)
        assert np.allclose(w, w[::-1, :], atol=1e-12)
        assert np.allclose(w, w[:, ::-1], atol=1e-12)

    def test_rejects_size_one(self):
        with pytest.raises(ValueError):
            numerics.cosine_window(1)


class TestTransformProperties:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=2**31))
    def test_parseval(self, size, seed):
        p = np.random.default_rng(seed).standard_normal((size, size))
        spatial = (p * p).sum()
        spectral = (np.abs(numerics.fft2(p)) ** 2).sum() / p.size
        assert spectral == pytest.approx(spatial, rel=1e-5)

    def test_linearity(self):
        rng = np.random.default_rng(8)
        p, q = rng.standard_normal((2, 8, 8))
        a, b = 1.7, -0.4
        lhs = numerics.fft2(a * p + b * q)
        rhs = a * numerics.fft2(p) + b * numerics.fft2(q)
        assert np.abs(lhs - rhs).max() < 1e-6

    def test_shift_theorem(self):
        rng = np.random.default_rng(9)
        p = rng.standard_normal((8, 8))
        dx, dy = 3, 5
        shifted = np.roll(p, (dy, dx), axis=(0, 1))
        u = np.arange(8)[None, :]
        v = np.arange(8)[:, None]
        phase = np.exp(-2j * np.pi * (u * dx / 8 + v * dy / 8))
        assert np.abs(numerics.fft2(shifted) - numerics.fft2(p) * phase).max() < 1e-6
