import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from cdiffmr.errors import ConfigurationError, DegenerateReferenceError, ShapeError, SizeError
from cdiffmr.metrics import PSNR_CAP_DB, gaussian_window, psnr, ssim
from cdiffmr.phantom import PhantomSpec, ellipse_interior, gen_phantom, phantom_stack, sample_ellipses


def test_phantom_deterministic():
    spec = PhantomSpec(size=64, seed=7)
    assert np.array_equal(gen_phantom(spec), gen_phantom(spec))
    assert not np.array_equal(gen_phantom(spec), gen_phantom(PhantomSpec(size=64, seed=8)))


def test_phantom_magnitude_range():
    for seed in range(100):
        x = gen_phantom(PhantomSpec(size=32, seed=seed))
        mag = np.abs(x)
        assert np.isfinite(x).all()
        assert mag.min() >= 0 and mag.max() <= 1 + 1e-12
        assert mag.max() > 0


def test_single_ellipse_support():
    spec = PhantomSpec(size=64, n_ellipses=1, seed=4)
    inside = ellipse_interior(sample_ellipses(spec)[0], 64)
    x = gen_phantom(spec)
    assert not x[~inside].any()
    assert np.abs(x[inside]).min() > 0


def test_phantom_phase_is_smooth_and_present():
    x = gen_phantom(PhantomSpec(size=64, seed=1))
    assert np.abs(x.imag).max() > 0
    ph = np.angle(x)
    inner = np.abs(x) > 0.1
    jumps = np.abs(np.angle(np.exp(1j * np.diff(ph, axis=1))))[inner[:, 1:] & inner[:, :-1]]
    assert jumps.max() < 0.1


@pytest.mark.parametrize("kwargs", [dict(n_ellipses=0), dict(size=8), dict(phase_order=-1)])
def test_phantom_validation(kwargs):
    with pytest.raises(ConfigurationError):
        PhantomSpec(**kwargs)


def test_phantom_stack_shape_and_determinism():
    a = phantom_stack(3, 32, seed=5)
    assert a.shape == (3, 32, 32)
    assert np.array_equal(a, phantom_stack(3, 32, seed=5))
    assert not np.array_equal(a[0], a[1])


def test_psnr_examples(rng):
    x = gen_phantom(PhantomSpec(size=32, seed=2))
    assert psnr(x, x) == PSNR_CAP_DB
    assert psnr(np.full((9, 9), 0.9), np.ones((9, 9))) == pytest.approx(20.0, abs=1e-9)
    truth = np.zeros((128, 128))
    truth[0, 0] = 1.0
    noise = rng.choice([-1.0, 1.0], size=truth.shape) * 1e-2
    noise[0, 0] = 0.0
    # magnitudes of 0 + noise keep |noise|, so MSE stays exactly 1e-4 off the peak pixel
    assert psnr(truth + noise, truth) == pytest.approx(10 * np.log10(1 / (1e-4 * (truth.size - 1) / truth.size)), abs=1e-9)
    assert psnr(truth + noise, truth) == pytest.approx(40.0, abs=0.1)


def test_psnr_errors():
    with pytest.raises(ShapeError):
        psnr(np.ones((4, 4)), np.ones((4, 5)))
    with pytest.raises(DegenerateReferenceError):
        psnr(np.ones((4, 4)), np.zeros((4, 4)))


def test_psnr_monotone_under_interpolation(rng):
    truth = gen_phantom(PhantomSpec(size=32, seed=3))
    recon = truth + 0.2 * (rng.standard_normal(truth.shape) + 1j * rng.standard_normal(truth.shape))
    vals = [psnr(a * truth + (1 - a) * recon, truth) for a in np.linspace(0, 1, 21)]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


def test_gaussian_window():
    w = gaussian_window()
    assert w.shape == (11,) and w.sum() == pytest.approx(1.0)
    assert np.argmax(w) == 5


def test_ssim_self_is_one():
    x = gen_phantom(PhantomSpec(size=32, seed=2))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def _reference_ssim(a, b):
    return structural_similarity(a, b, data_range=b.max(), gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False)


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_reference(seed):
    truth = gen_phantom(PhantomSpec(size=48, seed=seed))
    noisy = truth + 0.1 * np.random.default_rng(seed).standard_normal(truth.shape)
    assert ssim(noisy, truth) == pytest.approx(_reference_ssim(np.abs(noisy), np.abs(truth)), abs=1e-9)


def test_ssim_inverted_binary_is_low():
    rng = np.random.default_rng(0)
    x = (rng.random((32, 32)) > 0.5).astype(float)
    val = ssim(1 - x, x)
    assert val < 0.5
    assert val == pytest.approx(_reference_ssim(1 - x, x), abs=1e-9)


def test_ssim_constant_offset_closed_form():
    a, b = 0.5, 0.6
    c1 = (0.01 * b) ** 2
    expected = (2 * a * b + c1) / (a * a + b * b + c1)
    assert ssim(np.full((16, 16), a), np.full((16, 16), b)) == pytest.approx(expected, abs=1e-12)


def test_ssim_errors():
    with pytest.raises(SizeError):
        ssim(np.ones((10, 10)), np.ones((10, 10)))
    with pytest.raises(ShapeError):
        ssim(np.ones((12, 12)), np.ones((12, 13)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_ssim_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    truth = rng.random((16, 16)) + 0.01
    recon = truth + scale * rng.standard_normal((16, 16))
    assert -1.0 - 1e-12 <= ssim(recon, truth) <= 1.0 + 1e-12
