"""Self-verification suites: FFT, gradients, kernels/degradation, parameter counts.

Each check carries a measured value, a tolerance and a pass flag. The oracles
here (naive DFT sums, central differences, closed-form polynomials) do not
share code with the routines they check.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ops, spectral
from .gradcheck import check_grads
from .tensor import Tape, Tensor, backward, concat, default_dtype, roll, take
from .tensor import abs as tabs

SUITES = ("fft", "grad", "kernels", "params")


@dataclass
class Check:
    suite: str
    name: str
    measured: float
    tol: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        cmp = "info" if np.isnan(self.tol) else f"< {self.tol:.3g}"
        return f"{status}  {self.suite:8s} {self.name:40s} measured={self.measured:.4g}  tol {cmp}  {self.note}".rstrip()


def _below(suite, name, measured, tol, note="") -> Check:
    return Check(suite, name, float(measured), tol, bool(measured < tol), note)


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """Full 2-D DFT by explicit double sums (O(N^2) per output)."""
    H, W = x.shape
    u = np.arange(H)[:, None]
    v = np.arange(W)[:, None]
    Eh = np.exp(-2j * np.pi * u * np.arange(H)[None, :] / H)
    Ew = np.exp(-2j * np.pi * v * np.arange(W)[None, :] / W)
    out = np.zeros((H, W), dtype=complex)
    for a in range(H):
        for b in range(W):
            out[a, b] = np.sum(x * Eh[a][:, None] * Ew[b][None, :])
    return out


# -- fft --------------------------------------------------------------------

def suite_fft(rng: np.random.Generator) -> list[Check]:
    checks = []
    x32 = Tensor(rng.standard_normal((4, 16, 16)).astype(np.float32))
    rt = spectral.irfft2(spectral.rfft2(x32)).data
    checks.append(_below("fft", "roundtrip 32-bit 4x16x16 max-abs", np.abs(rt - x32.data).max(), 1e-5))

    worst = 0.0
    with default_dtype(np.float64):
        for H in range(1, 9):
            for W in range(1, 9):
                x = rng.standard_normal((H, W))
                got = spectral.rfft2(Tensor(x)).complex()
                want = naive_dft2(x)[:, :W // 2 + 1]
                worst = max(worst, np.abs(got - want).max())
    checks.append(_below("fft", "naive DFT agreement 64-bit, sizes 1..8", worst, 1e-6))

    worst = 0.0
    for H, W in ((16, 16), (7, 9), (8, 5)):
        x = rng.standard_normal((H, W))
        X = spectral.rfft2(Tensor(x)).complex()
        freq = (spectral.half_bin_weights(W) * np.abs(X) ** 2).sum() / (H * W)
        worst = max(worst, abs(freq - (x * x).sum()) / (x * x).sum())
    checks.append(_below("fft", "Parseval (half-bin weighted) rel", worst, 1e-5))

    # <A x, y> == <x, A^T y> with A^T taken from the tape
    worst = 0.0
    with default_dtype(np.float64):
        worst = _adjoint_worst(rng)
    checks.append(_below("fft", "adjoint identity rel (rfft2, irfft2)", worst, 1e-5))
    return checks


def _adjoint_worst(rng) -> float:
    worst = 0.0
    for H, W in ((6, 8), (5, 7)):
        x = Tensor(rng.standard_normal((H, W)), requires_grad=True)
        yr, yi = rng.standard_normal((2, H, W // 2 + 1))
        with Tape() as tape:
            s = spectral.rfft2(x)
            loss = (s.real * Tensor(yr)).sum() + (s.imag * Tensor(yi)).sum()
        backward(loss, tape)
        lhs, rhs = float(loss.data), float((x.data * x.grad).sum())
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-12))

        re = Tensor(rng.standard_normal((H, W // 2 + 1)), requires_grad=True)
        im = Tensor(rng.standard_normal((H, W // 2 + 1)), requires_grad=True)
        g = rng.standard_normal((H, W))
        with Tape() as tape:
            loss = (spectral.irfft2(spectral.SpectrumTensor(re, im, W)) * Tensor(g)).sum()
        backward(loss, tape)
        # irfft2 ignores the imaginary part of self-conjugate bins, so compare on its range
        rhs = float((re.data * re.grad).sum() + (im.data * im.grad).sum())
        lhs = float(loss.data)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-12))
    return worst


# -- gradients --------------------------------------------------------------

def _op_cases(rng) -> dict[str, Callable]:
    """name -> factory returning (loss_fn, params) in float64."""
    def P(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    def proj(out: Tensor) -> Tensor:
        # fixed random projection so every output entry reaches the scalar loss
        r = np.random.default_rng(0).standard_normal(out.shape)
        return (out * Tensor(r)).sum()

    cases = {}

    def add(name, build):
        cases[name] = build

    def c_binary(fn):
        def build():
            a, b = P(3, 4), P(1, 4)
            return (lambda: proj(fn(a, b))), [a, b]
        return build

    add("add (broadcast)", c_binary(lambda a, b: a + b))
    add("sub (broadcast)", c_binary(lambda a, b: a - b))
    add("mul (broadcast)", c_binary(lambda a, b: a * b))

    def b_neg():
        a = P(3, 4)
        return (lambda: proj(-a)), [a]
    add("neg", b_neg)

    def b_abs():
        a = P(3, 4)
        return (lambda: proj(tabs(a))), [a]
    add("abs", b_abs)

    def b_sum():
        a = P(3, 4, 2)
        return (lambda: proj(a.sum(axis=(0, 2), keepdims=True))), [a]
    add("sum", b_sum)

    def b_mean():
        a = P(3, 4, 2)
        return (lambda: proj(a.mean(axis=1))), [a]
    add("mean", b_mean)

    def b_reshape():
        a = P(3, 4)
        return (lambda: proj(a.reshape(2, 6).transpose(1, 0))), [a]
    add("reshape+transpose", b_reshape)

    def b_getitem():
        a = P(5, 4)
        return (lambda: proj(a[1:4, ::2])), [a]
    add("getitem", b_getitem)

    def b_concat():
        a, b = P(2, 3), P(4, 3)
        return (lambda: proj(concat([a, b], axis=0))), [a, b]
    add("concat", b_concat)

    def b_matmul():
        a, b = P(2, 3, 4), P(4, 5)
        return (lambda: proj(a @ b)), [a, b]
    add("matmul (batched)", b_matmul)

    def b_roll():
        a = P(2, 5, 4)
        return (lambda: proj(roll(a, (2, -1), (1, 2)))), [a]
    add("roll", b_roll)

    def b_take():
        a = P(6, 3)
        idx = np.array([0, 2, 2, 5, 1])
        return (lambda: proj(take(a, idx))), [a]
    add("take", b_take)

    for mode in ("zeros", "reflect"):
        def b_pad(mode=mode):
            a = P(1, 2, 5, 6)
            return (lambda: proj(ops.pad2d(a, (2, 1, 3, 2), mode))), [a]
        add(f"pad2d {mode}", b_pad)

    for stride, mode in ((1, "zeros"), (1, "reflect"), (2, "zeros")):
        def b_conv(stride=stride, mode=mode):
            x, w, b = P(2, 3, 7, 6), P(4, 3, 3, 3), P(4)
            return (lambda: proj(ops.conv2d(x, w, b, stride=stride, padding=1, pad_mode=mode))), [x, w, b]
        add(f"conv2d stride {stride} {mode}", b_conv)

    def b_linear():
        x, w, b = P(2, 3, 5), P(4, 5), P(4)
        return (lambda: proj(ops.linear(x, w, b))), [x, w, b]
    add("linear", b_linear)

    def b_ln():
        x, g, b = P(3, 6), P(6), P(6)
        return (lambda: proj(ops.layer_norm(x, g, b))), [x, g, b]
    add("layer_norm", b_ln)

    for name, fn in (("relu", ops.relu), ("sigmoid", ops.sigmoid), ("gelu", ops.gelu),
                     ("softmax", lambda t: ops.softmax(t, axis=-1))):
        def b_act(fn=fn):
            a = P(3, 5)
            return (lambda: proj(fn(a))), [a]
        add(name, b_act)

    for mode in ("max", "avg"):
        def b_pool(mode=mode):
            a = P(2, 4, 3, 3)
            return (lambda: proj(ops.pool_channel(a, mode))), [a]
        add(f"pool_channel {mode}", b_pool)

    def b_ps():
        a = P(1, 8, 3, 2)
        return (lambda: proj(ops.pixel_unshuffle(ops.pixel_shuffle(a, 2) * ops.pixel_shuffle(a, 2), 2))), [a]
    add("pixel_shuffle/unshuffle", b_ps)

    def b_rfft():
        a = P(2, 5, 6)
        def f():
            s = spectral.rfft2(a)
            return proj(s.real) + proj(s.imag * s.imag)
        return f, [a]
    add("rfft2", b_rfft)

    def b_irfft():
        re, im = P(2, 5, 4), P(2, 5, 4)
        return (lambda: proj(spectral.irfft2(spectral.SpectrumTensor(re, im, 7)))), [re, im]
    add("irfft2", b_irfft)

    def b_l1():
        from .train import l1_loss
        a = P(3, 4)
        t = rng.standard_normal((3, 4))
        return (lambda: l1_loss(a, t)), [a]
    add("l1_loss", b_l1)
    return cases


def _block_cases(rng) -> dict[str, Callable]:
    from .nets import FAB, FSAB, FSAG, RCAB, Corrector, CorrectorConfig, WindowAttention
    from .nets.swin import window_partition

    def proj(out):
        r = np.random.default_rng(1).standard_normal(out.shape)
        return (out * Tensor(r)).sum()

    def run(module, x):
        params = [p for _, p in module.named_parameters()]
        return (lambda: proj(module(x))), [x] + params

    C = 8
    cases = {
        "RCAB": lambda: run(RCAB(C, 4, rng), Tensor(rng.standard_normal((1, C, 8, 8)), requires_grad=True)),
        "FAB": lambda: run(FAB(C, 2, rng), Tensor(rng.standard_normal((1, C, 8, 8)), requires_grad=True)),
        "FSAB (shifted)": lambda: run(FSAB(C, 2, 4, True, 2.0, 2, rng, alpha_init=0.5),
                                      Tensor(rng.standard_normal((1, 8, 8, C)), requires_grad=True)),
        "FSAG": lambda: run(FSAG(C, 2, 2, 4, 2.0, 2, rng, alpha_init=0.5),
                            Tensor(rng.standard_normal((1, C, 8, 8)), requires_grad=True)),
        "Corrector": lambda: run(Corrector(CorrectorConfig(C, 1, 1, 4), rng),
                                 Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)),
    }

    def wmsa():
        attn = WindowAttention(C, 4, 2, rng)
        x = Tensor(rng.standard_normal((1, 8, 8, C)), requires_grad=True)
        from .nets.swin import shift_mask
        mask = shift_mask(8, 8, 4, 2)
        params = [p for _, p in attn.named_parameters()]
        return (lambda: proj(attn(window_partition(x, 4), mask))), [x] + params
    cases["W-MSA (masked)"] = wmsa
    return cases


def suite_grad(rng: np.random.Generator, blocks: bool = True) -> list[Check]:
    checks = []
    with default_dtype(np.float64):
        groups = [("op", _op_cases(rng))] + ([("block", _block_cases(rng))] if blocks else [])
        for kind, cases in groups:
            for name, build in cases.items():
                f, params = build()
                err = check_grads(f, params, h=1e-6)
                checks.append(_below("grad", f"{kind} {name}", err, 1e-3))
    return checks


# -- kernels and degradation ------------------------------------------------

def _cubic_oracle(t: float, a: float = -0.5) -> float:
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def fixture_images(n: int = 3, size: int = 64) -> list[np.ndarray]:
    from .data import natural_crops
    return natural_crops(n, size, seed=7, sources=("astronaut", "coffee", "camera"))


def suite_kernels(rng: np.random.Generator) -> list[Check]:
    from .degrade import (DegradationSpec, GaussianKernelSpec, KernelDistribution, bicubic_resize, circular_convolve,
                          cubic, degrade, effective_kernel_l, render_kernel)
    checks = []
    worst_sum, worst_sym, worst_theta = 0.0, 0.0, 0.0
    for kind in ("isotropic", "anisotropic"):
        dist = KernelDistribution.default(kind, 2)
        for i in range(20):
            spec = dist.sample(rng, i).kernel
            k = render_kernel(spec)
            worst_sum = max(worst_sum, abs(k.sum() - 1.0))
            if kind == "isotropic":
                for t in (k.T, k[::-1], k[:, ::-1], np.rot90(k)):
                    worst_sym = max(worst_sym, np.abs(k - t).max())
            else:
                worst_sym = max(worst_sym, np.abs(k - k[::-1, ::-1]).max())
                k2 = render_kernel(GaussianKernelSpec("anisotropic", lambda1=spec.lambda1, lambda2=spec.lambda2,
                                                      theta=spec.theta + np.pi, size=spec.size))
                worst_theta = max(worst_theta, np.abs(k - k2).max())
    checks.append(_below("kernels", "kernel sums to 1 (40 random)", worst_sum, 1e-9))
    checks.append(_below("kernels", "kernel symmetry (8-fold / 180 deg)", worst_sym, 1e-9))
    checks.append(_below("kernels", "anisotropic theta vs theta+pi", worst_theta, 1e-9))

    w = cubic(np.array([1.5, 0.5, 0.5, 1.5]))
    want = np.array([_cubic_oracle(t) for t in (1.5, 0.5, 0.5, 1.5)])
    ref = np.array([-0.0625, 0.5625, 0.5625, -0.0625])
    checks.append(_below("kernels", "cubic weights at phase 0.5", max(np.abs(w - ref).max(), np.abs(want - ref).max()),
                         1e-15))

    img = fixture_images(1, 32)[0]
    trip = degrade(img, DegradationSpec(GaussianKernelSpec.delta(), scale=2, noise_sigma=0.0, seed=0))
    diff = float(np.abs(trip.lr - trip.clr_gt).max())
    checks.append(Check("kernels", "delta kernel degrade == bicubic (exact)", diff, 0.0, diff == 0.0,
                        "tol: bit-exact"))

    t0 = time.perf_counter()
    worst = 0.0
    for img in fixture_images(3, 64):
        gray = img.mean(axis=2)
        for sigma in (0.8, 2.4):
            k = render_kernel(GaussianKernelSpec("isotropic", sigma=sigma, size=21))
            y = bicubic_resize(_circular_blur(gray, k), 0.5, antialias=True, boundary="circular")
            xd = bicubic_resize(gray, 0.5, antialias=True, boundary="circular")
            kl = effective_kernel_l(gray, k, 2)
            rec = circular_convolve(xd, kl)
            worst = max(worst, np.abs(rec - y).max() / np.abs(y).max())
    checks.append(_below("kernels", "reformulation y = x_down (*) k_l, rel Linf", worst, 1e-3,
                         f"({time.perf_counter() - t0:.1f}s)"))
    return checks


def _circular_blur(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Circular true convolution by direct shifted sums (independent of the FFT path)."""
    r = k.shape[0] // 2
    out = np.zeros_like(x)
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            out += k[i, j] * np.roll(x, (i - r, j - r), axis=(0, 1))
    return out


# -- parameter counts -------------------------------------------------------

FAB_PARAMS_REFERENCE = 15_800
MODEL_PARAMS_REFERENCE = 14_660_000


def suite_params(rng: np.random.Generator) -> list[Check]:
    from .nets import FAB, CorrectorConfig, LceModel, SrConfig, count_multadds, count_params
    fab = FAB(144, 6, rng)
    n = count_params(fab)
    rel = abs(n - FAB_PARAMS_REFERENCE) / FAB_PARAMS_REFERENCE
    checks = [_below("params", f"FAB C=144 squeeze=6: {n} vs 15.8K", rel, 0.01)]
    model = LceModel(CorrectorConfig(), SrConfig(), "case3", seed=0)
    total = count_params(model)
    dev = (total - MODEL_PARAMS_REFERENCE) / MODEL_PARAMS_REFERENCE
    checks.append(Check("params", f"full x4 model: {total} vs 14.66M", dev, float("nan"), True,
                        "relative deviation, informational"))
    ma = count_multadds(model, 180, 320)
    checks.append(Check("params", f"full x4 model mult-adds at 180x320: {ma / 1e9:.2f}G", ma / 1e9, float("nan"), True,
                        "informational"))
    return checks


def run_suite(name: str, seed: int = 0, log: Optional[Callable[[str], None]] = None) -> list[Check]:
    names = SUITES if name == "all" else (name,)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite {unknown[0]!r}; choose from {SUITES + ('all',)}")
    fns = {"fft": suite_fft, "grad": suite_grad, "kernels": suite_kernels, "params": suite_params}
    out = []
    for n in names:
        t0 = time.perf_counter()
        checks = fns[n](np.random.default_rng(seed))
        if log is not None:
            for c in checks:
                log(c.line())
            log(f"suite {n}: {sum(c.passed for c in checks)}/{len(checks)} passed in {time.perf_counter() - t0:.1f}s")
        out.extend(checks)
    return out
