import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lce.degrade import (DegradationSpec, GaussianKernelSpec, KernelDistribution, bicubic_resize, blur,
                         circular_convolve, cubic, degrade, effective_kernel_l, read_manifest, render_kernel,
                         synth_dataset)
from lce.data import natural_crops, write_png
from lce.tensor import load_tensor
from lce.verify import fixture_images


def iso(sigma, size=21):
    return render_kernel(GaussianKernelSpec("isotropic", sigma=sigma, size=size))


def test_near_delta_kernel():
    assert iso(0.1)[10, 10] > 0.99


def test_isotropic_sigma_24_symmetry():
    k = iso(2.4)
    assert abs(k.sum() - 1) < 1e-9
    for t in (k.T, k[::-1], k[:, ::-1], np.rot90(k), np.rot90(k, 2)):
        np.testing.assert_allclose(k, t, atol=1e-9)
    assert k[10 + 3, 10 + 5] == pytest.approx(k[10 - 5, 10 + 3], abs=1e-15)


@pytest.mark.parametrize("theta", [0.0, 0.4, 1.3, 2.9])
def test_anisotropic_degenerate_equals_isotropic(theta):
    sigma = 1.7
    k = render_kernel(GaussianKernelSpec("anisotropic", lambda1=sigma ** 2, lambda2=sigma ** 2, theta=theta, size=15))
    np.testing.assert_allclose(k, iso(sigma, 15), atol=1e-9)


def test_anisotropic_orientation_and_period():
    k0 = render_kernel(GaussianKernelSpec("anisotropic", lambda1=4.0, lambda2=0.8, theta=0.0, size=11))
    # theta = 0: the long axis (lambda1) lies along x, i.e. the columns
    assert k0[5, 8] > k0[8, 5]
    kp = render_kernel(GaussianKernelSpec("anisotropic", lambda1=4.0, lambda2=0.8, theta=math.pi, size=11))
    np.testing.assert_allclose(k0, kp, atol=1e-12)
    np.testing.assert_allclose(k0, k0[::-1, ::-1], atol=1e-12)


def test_render_kernel_errors():
    with pytest.raises(ValueError):
        render_kernel(GaussianKernelSpec(size=4))
    with pytest.raises(ValueError):
        render_kernel(GaussianKernelSpec(size=1))
    with pytest.raises(ValueError):
        render_kernel(GaussianKernelSpec(sigma=0.0))
    with pytest.raises(ValueError):
        render_kernel(GaussianKernelSpec("anisotropic", lambda1=-1.0))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["isotropic", "anisotropic"]), st.floats(0.2, 5.0), st.floats(0.6, 5.0), st.floats(0, 2 * math.pi),
       st.sampled_from([3, 7, 11, 21]))
def test_property_kernels_normalized(kind, a, b, theta, size):
    k = render_kernel(GaussianKernelSpec(kind, sigma=a, lambda1=a, lambda2=b, theta=theta, size=size))
    assert (k >= 0).all() and abs(k.sum() - 1) < 1e-9 and k.shape == (size, size)


def test_blur_delta_and_constant(rng):
    x = rng.uniform(size=(12, 10, 3))
    d = np.zeros((5, 5))
    d[2, 2] = 1
    np.testing.assert_allclose(blur(x, d), x, atol=1e-15)
    np.testing.assert_allclose(blur(np.full((9, 9), 0.3), iso(1.5, 7)), 0.3, atol=1e-12)
    with pytest.raises(ValueError):
        blur(x, np.ones((4, 4)) / 16)


def test_blur_is_true_convolution():
    x = np.zeros((9, 9))
    x[4, 4] = 1
    k = np.arange(9.0).reshape(3, 3)
    out = blur(x, k, "circular")
    # convolving an impulse reproduces the kernel unflipped
    np.testing.assert_allclose(out[3:6, 3:6], k, atol=1e-15)


def test_circular_blur_convolution_theorem(rng):
    x = rng.uniform(size=(24, 20))
    k = render_kernel(GaussianKernelSpec("anisotropic", lambda1=3.0, lambda2=0.7, theta=0.6, size=9))
    kp = np.zeros_like(x)
    kp[:9, :9] = k
    kp = np.roll(kp, (-4, -4), axis=(0, 1))
    oracle = np.fft.irfft2(np.fft.rfft2(x) * np.fft.rfft2(kp), s=x.shape)
    np.testing.assert_allclose(blur(x, k, "circular"), oracle, atol=1e-4)


def test_cubic_phase_half_weights():
    np.testing.assert_allclose(cubic(np.array([1.5, 0.5, 0.5, 1.5])), [-0.0625, 0.5625, 0.5625, -0.0625],
                               atol=1e-15)
    assert cubic(np.array([0.0]))[0] == 1.0 and cubic(np.array([1.0, 2.0, 3.0])).tolist() == [0.0, 0.0, 0.0]


def test_bicubic_identity_and_constant(rng):
    x = rng.uniform(size=(8, 6, 3))
    np.testing.assert_array_equal(bicubic_resize(x, 1), x)
    np.testing.assert_allclose(bicubic_resize(np.full((16, 12), 0.4), 0.5), 0.4, atol=1e-6)
    np.testing.assert_allclose(bicubic_resize(np.full((16, 12), 0.4), 0.25), 0.4, atol=1e-6)
    with pytest.raises(ValueError):
        bicubic_resize(np.zeros((1, 1)), 0.0)


def test_bicubic_reproduces_ramps_in_interior():
    ramp = np.tile(np.arange(32.0), (32, 1))
    up = bicubic_resize(ramp, 2, antialias=False)
    # output pixel j sits at input coordinate (j + 0.5) / 2 - 0.5
    want = (np.arange(64) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(up[10, 8:-8], want[8:-8], atol=1e-12)
    down = bicubic_resize(ramp, 0.5, antialias=True)
    np.testing.assert_allclose(down[5, 4:-4], (2 * np.arange(16) + 0.5)[4:-4], atol=1e-12)


def test_bicubic_shape_rounding():
    assert bicubic_resize(np.zeros((9, 7)), 0.5).shape == (5, 4)
    assert bicubic_resize(np.zeros((4, 3, 3)), 4).shape == (16, 12, 3)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.sampled_from([0.5, 0.25, 2.0]), st.integers(0, 2**31 - 1))
def test_property_bicubic_linear(a, b, scale, seed):
    r = np.random.default_rng(seed)
    x, y = r.uniform(size=(16, 12)), r.uniform(size=(16, 12))
    lhs = bicubic_resize(a * x + b * y, scale)
    rhs = a * bicubic_resize(x, scale) + b * bicubic_resize(y, scale)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_degrade_delta_is_bicubic_exactly():
    img = fixture_images(1, 32)[0]
    t = degrade(img, DegradationSpec(GaussianKernelSpec.delta(), scale=2))
    assert np.array_equal(t.lr, t.clr_gt)
    assert np.array_equal(t.clr_gt, np.clip(bicubic_resize(img, 0.5), 0, 1))


def test_degrade_blur_changes_lr():
    img = fixture_images(1, 64)[0]
    t = degrade(img, DegradationSpec(GaussianKernelSpec(sigma=2.4), scale=4))
    assert t.lr.shape == t.clr_gt.shape == (16, 16, 3)
    assert np.abs(t.lr - t.clr_gt).sum() > 0


def test_degrade_noise_deterministic_and_errors():
    img = fixture_images(1, 32)[0]
    spec = DegradationSpec(GaussianKernelSpec(sigma=1.0), scale=2, noise_sigma=0.05, seed=11)
    a, b = degrade(img, spec), degrade(img, spec)
    assert a.lr.tobytes() == b.lr.tobytes()
    assert 0 <= a.lr.min() and a.lr.max() <= 1
    with pytest.raises(ValueError):
        degrade(img[:31], spec)
    with pytest.raises(ValueError):
        DegradationSpec(GaussianKernelSpec(), scale=3)
    with pytest.raises(ValueError):
        DegradationSpec(GaussianKernelSpec(), noise_sigma=1.0)


def test_effective_kernel_delta_and_mass():
    gray = fixture_images(1, 64)[0].mean(axis=2)
    kl = effective_kernel_l(gray, render_kernel(GaussianKernelSpec.delta(5)), 2)
    assert kl.max() >= 0.99 * kl.sum()
    kl2 = effective_kernel_l(gray, iso(1.6), 2)
    assert abs(kl2.sum() - 1) < 1e-2
    with pytest.raises(ValueError):
        effective_kernel_l(np.zeros((16, 16)), iso(1.0, 5), 2)


@pytest.mark.parametrize("sigma", [0.8, 2.4])
def test_reformulation_identity(sigma):
    k = iso(sigma)
    for img in fixture_images(3, 64):
        gray = img.mean(axis=2)
        y = bicubic_resize(blur(gray, k, "circular"), 0.5, boundary="circular")
        xd = bicubic_resize(gray, 0.5, boundary="circular")
        rec = circular_convolve(xd, effective_kernel_l(gray, k, 2))
        assert np.abs(rec - y).max() / np.abs(y).max() < 1e-3


def test_distribution_defaults():
    assert KernelDistribution.default("isotropic", 4).sigma_range == (0.2, 4.0)
    assert KernelDistribution.default("anisotropic", 2).size == 11
    assert KernelDistribution.default("anisotropic", 4).size == 31
    with pytest.raises(ValueError):
        KernelDistribution.default("motion")


def _hr_dir(tmp_path, n=3, size=32):
    src = tmp_path / "hr_src"
    src.mkdir()
    for i, c in enumerate(natural_crops(n, size, seed=5)):
        write_png(src / f"{i:02d}.png", c)
    return src


def test_synth_count_zero(tmp_path):
    rows = synth_dataset(tmp_path / "none", KernelDistribution(), 0, 0, tmp_path / "out")
    assert rows == []
    assert [p.name for p in (tmp_path / "out").iterdir()] == ["manifest.tsv"]
    assert read_manifest(tmp_path / "out" / "manifest.tsv") == []


def test_synth_deterministic_layout(tmp_path):
    src = _hr_dir(tmp_path)
    dist = KernelDistribution.default("anisotropic", 2)
    synth_dataset(src, dist, 4, 9, tmp_path / "a")
    synth_dataset(src, dist, 4, 9, tmp_path / "b")
    ma, mb = (tmp_path / "a" / "manifest.tsv").read_bytes(), (tmp_path / "b" / "manifest.tsv").read_bytes()
    assert ma == mb
    for sub, ext in (("hr", "png"), ("lr", "png"), ("clr_gt", "png"), ("kernels", "lcet")):
        files = sorted((tmp_path / "a" / sub).glob(f"*.{ext}"))
        assert len(files) == 4
        assert all(f.read_bytes() == (tmp_path / "b" / sub / f.name).read_bytes() for f in files)
    rows = read_manifest(tmp_path / "a" / "manifest.tsv")
    k = load_tensor(tmp_path / "a" / "kernels" / "0002.lcet").data
    spec = GaussianKernelSpec("anisotropic", lambda1=float(rows[2]["lambda1"]), lambda2=float(rows[2]["lambda2"]),
                              theta=float(rows[2]["theta"]), size=int(rows[2]["size"]))
    np.testing.assert_allclose(k, render_kernel(spec), atol=1e-7)


def test_synth_sigma_range_over_100_draws(tmp_path):
    src = _hr_dir(tmp_path, n=1, size=16)
    rows = synth_dataset(src, KernelDistribution.default("isotropic", 2), 100, 3, tmp_path / "out")
    sig = [float(r["sigma"]) for r in rows]
    assert len(sig) == 100 and min(sig) >= 0.2 and max(sig) <= 2.0
    assert len(set(sig)) == 100


def test_synth_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        synth_dataset(tmp_path, KernelDistribution(), 1, 0, tmp_path / "out")
    src = _hr_dir(tmp_path, n=1, size=8)
    with pytest.raises(ValueError):
        synth_dataset(src, KernelDistribution(), 1, 0, tmp_path / "out2")
