import numpy as np
import pytest

from lce.data import PairedDataset, natural_crops
from lce.degrade import DegradationSpec, GaussianKernelSpec, degrade
from lce.gradcheck import finite_diff_grad
from lce.nets.blocks import CorrectorConfig
from lce.nets.checkpoint import load_checkpoint
from lce.nets.model import SrConfig
from lce.tensor import Parameter, Tape, Tensor, backward
from lce.train import (MetricsTable, OptimizerState, TrainConfig, adam_step, bicubic_predictor, block_means,
                       build_sr_model, corrector_predictor, evaluate, l1_loss, quantize8, sr_predictor, train_corrector, train_sr,
                       write_loss_curve)

CC = CorrectorConfig(channels=8, num_rg=1, rcabs_per_rg=1, reduction=4)
SC = SrConfig.tiny(channels=8, window=4, heads=2)


def make_dataset(n=3, hr=32, seed=0):
    trips = [degrade(c, DegradationSpec(GaussianKernelSpec(sigma=1.2), scale=2))
             for c in natural_crops(n, hr, seed)]
    ds = PairedDataset.from_triplets(trips, 2)
    # same values a PNG round trip would give
    for imgs in (ds.hr, ds.lr, ds.clr_gt):
        imgs[:] = [quantize8(a).astype(np.float32) for a in imgs]
    return ds


@pytest.fixture(scope="module")
def ds():
    return make_dataset()


def test_l1_examples(f64):
    a = Tensor(np.arange(4.0))
    assert l1_loss(a, a).item() == 0.0
    assert l1_loss(Tensor([0.0, 0.0]), np.array([1.0, 3.0])).item() == 2.0
    with pytest.raises(ValueError):
        l1_loss(Tensor([0.0]), np.zeros(2))


def test_l1_gradient(f64, rng):
    pred = Tensor(rng.normal(size=10), requires_grad=True)
    target = rng.normal(size=10)
    with Tape() as tape:
        loss = l1_loss(pred, target)
    backward(loss, tape)
    np.testing.assert_allclose(pred.grad, np.sign(pred.data - target) / 10)
    np.testing.assert_allclose(pred.grad, finite_diff_grad(lambda t: l1_loss(t, target), pred), atol=1e-8)
    tie = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = l1_loss(tie, np.array([1.0, 0.0]))
    backward(loss, tape)
    np.testing.assert_array_equal(tie.grad, [0.0, 0.5])


def test_adam_zero_gradient_keeps_params():
    p = Parameter(np.array([0.5, -1.0], np.float32))
    p.grad = np.zeros(2, np.float32)
    st = OptimizerState()
    adam_step([("p", p)], st, 1e-2)
    np.testing.assert_array_equal(p.data, [0.5, -1.0])
    assert st.step == 1


def test_adam_first_step_is_minus_lr(f64):
    p = Parameter(np.array([2.0]))
    st = OptimizerState()
    for k in range(3):
        p.grad = np.array([1.0])
        before = p.data[0]
        adam_step([("p", p)], st, 1e-3)
        assert p.data[0] - before == pytest.approx(-1e-3, rel=1e-4)
    assert st.m["p"].shape == st.v["p"].shape == p.shape


def test_adam_missing_grad_and_frozen():
    live, frozen = Parameter(np.zeros(2)), Parameter(np.ones(2))
    frozen.requires_grad = False
    with pytest.raises(ValueError):
        adam_step([("a", live)], OptimizerState(), 1e-3)
    live.grad = np.ones(2, live.dtype)
    st = OptimizerState()
    adam_step([("a", live), ("b", frozen)], st, 1e-3)
    assert list(st.m) == ["a"] and np.array_equal(frozen.data, np.ones(2))


def test_lr_schedule():
    cfg = TrainConfig(steps=100, lr=1e-3)
    assert [cfg.lr_at(s) for s in (0, 49, 50, 74, 75, 89, 90, 99)] == \
        [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4, 1.25e-4, 1.25e-4]


@pytest.mark.parametrize("kw", [dict(stage="gan"), dict(steps=0), dict(batch=0), dict(lr_patch=0), dict(lr=0.0),
                                dict(beta1=1.0), dict(milestones=(1.5,)), dict(checkpoint_every=-1)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_block_means_and_loss_curve(tmp_path):
    np.testing.assert_allclose(block_means(np.arange(120.0), 50), [24.5, 74.5])
    write_loss_curve(tmp_path / "l.tsv", [0.5, 0.25])
    assert (tmp_path / "l.tsv").read_text() == "step\tloss\n0\t0.5\n1\t0.25\n"


def corr_cfg(**kw):
    base = dict(stage="corrector", steps=6, batch=2, lr_patch=8, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_corrector_training_is_deterministic(ds, tmp_path):
    a = train_corrector(ds, CC, corr_cfg(), tmp_path / "a", "cfg")
    b = train_corrector(ds, CC, corr_cfg(), tmp_path / "b", "cfg")
    assert a.losses == b.losses
    assert (tmp_path / "a" / "corrector_000006.lcec").read_bytes() == \
        (tmp_path / "b" / "corrector_000006.lcec").read_bytes()
    assert (tmp_path / "a" / "corrector_loss.tsv").read_bytes() == (tmp_path / "b" / "corrector_loss.tsv").read_bytes()
    c = train_corrector(ds, CC, corr_cfg(seed=4))
    assert c.losses != a.losses


def test_corrector_resume_is_bit_identical(ds, tmp_path):
    full = train_corrector(ds, CC, corr_cfg(checkpoint_every=3), tmp_path / "full", "cfg")
    assert [p.name for p in full.checkpoints] == ["corrector_000003.lcec", "corrector_000006.lcec"]
    mid = load_checkpoint(full.checkpoints[0])
    resumed = train_corrector(ds, CC, corr_cfg(checkpoint_every=3), tmp_path / "res", "cfg", resume=mid)
    assert resumed.losses == full.losses
    assert resumed.checkpoints[-1].read_bytes() == full.checkpoints[-1].read_bytes()
    with pytest.raises(ValueError):
        train_corrector(ds, CC, corr_cfg(checkpoint_every=3), None, "other", resume=mid)


def test_checkpoint_contents_and_slots(ds, tmp_path):
    res = train_corrector(ds, CC, corr_cfg(steps=2), tmp_path, "cfg-text")
    ck = load_checkpoint(res.checkpoints[-1])
    assert ck.config_text == "cfg-text"
    names = [n for n, _ in res.module.named_parameters()]
    assert set(ck.prefixed("corrector")) == set(names)
    assert set(res.state.m) == set(names) and int(ck.tensors["opt.step"][0]) == 2
    assert sum(a.size for a in res.state.m.values()) == res.module.num_params()
    np.testing.assert_array_equal(ck.tensors["meta.losses"], res.losses)


def test_train_errors(ds):
    with pytest.raises(ValueError):
        train_corrector(ds, CC, TrainConfig(stage="sr"))
    with pytest.raises(ValueError):
        train_corrector(ds, CC, corr_cfg(lr_patch=64))
    sr_cfg = TrainConfig(stage="sr", steps=1, batch=1, lr_patch=8)
    with pytest.raises(ValueError, match="corrector"):
        train_sr(ds, None, CC, SC, sr_cfg, "case3")
    with pytest.raises(ValueError):
        train_sr(ds, None, CC, SC, TrainConfig(stage="sr", steps=1, lr_patch=6), "case1")
    with pytest.raises(ValueError):
        train_sr(ds, None, CC, SrConfig.tiny(channels=8, window=4, heads=2, scale=4), sr_cfg, "case1")
    with pytest.raises(ValueError):
        build_sr_model(CC, SC, "case9", 0)


@pytest.mark.parametrize("mode", ["case1", "case2", "case3"])
def test_sr_training_freezes_corrector(ds, tmp_path, mode):
    cres = train_corrector(ds, CC, corr_cfg(steps=2))
    state = cres.module.state_dict()
    cfg = TrainConfig(stage="sr", steps=3, batch=2, lr_patch=8, seed=1)
    res = train_sr(ds, state if mode != "case1" else None, CC, SC, cfg, mode, tmp_path, "sr-cfg")
    assert len(res.losses) == 3 and all(np.isfinite(res.losses))
    if mode != "case1":
        after = res.module.corrector.state_dict()
        assert all(after[k].tobytes() == v.tobytes() for k, v in state.items())
        assert not any(k.startswith("corrector.") for k in res.state.m)
    ck = load_checkpoint(res.checkpoints[-1])
    assert set(res.state.m) == {n for n, p in res.module.named_parameters() if p.requires_grad}
    assert ck.tensors["fuse.weight"].tobytes() == res.module.fuse.weight.data.tobytes()


def test_sr_resume_is_bit_identical(ds, tmp_path):
    state = train_corrector(ds, CC, corr_cfg(steps=1)).module.state_dict()
    cfg = TrainConfig(stage="sr", steps=4, batch=1, lr_patch=8, seed=2, checkpoint_every=2)
    full = train_sr(ds, state, CC, SC, cfg, "case3", tmp_path / "a", "t")
    res = train_sr(ds, state, CC, SC, cfg, "case3", tmp_path / "b", "t", resume=load_checkpoint(full.checkpoints[0]))
    assert res.checkpoints[-1].read_bytes() == full.checkpoints[-1].read_bytes()


def test_evaluate_ground_truth_and_determinism(ds, tmp_path):
    table = evaluate(ds, lambda lr: ds.hr[[id(x) for x in ds.lr].index(id(lr))])
    assert all(p == 100.0 and abs(s - 1.0) < 1e-9 for _, p, s in table.rows)
    bic = evaluate(ds, bicubic_predictor(2), dump_dir=tmp_path / "dump")
    assert len(list((tmp_path / "dump").glob("*.png"))) == len(ds)
    again = evaluate(ds, bicubic_predictor(2))
    bic.write(tmp_path / "a.tsv")
    again.write(tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    lines = (tmp_path / "a.tsv").read_text().splitlines()
    assert lines[0] == "image_id\tpsnr\tssim" and lines[-1].startswith("mean\t") and len(lines) == len(ds) + 2
    with pytest.raises(ValueError):
        evaluate(ds, bicubic_predictor(2), target="lr")
    with pytest.raises(ValueError):
        evaluate(ds, lambda lr: lr)


def test_sr_predictor_shapes(ds):
    model = build_sr_model(CC, SC, "case1", 0)
    out = sr_predictor(model)(ds.lr[0])
    assert out.shape == ds.hr[0].shape


def test_quantize8_and_table():
    np.testing.assert_array_equal(quantize8(np.array([-1.0, 0.5 / 255, 0.3, 2.0])) * 255, [0, 0, 76, 255])
    t = MetricsTable([("a", 30.0, 0.9), ("b", 32.0, 0.7)])
    assert t.mean_psnr == 31.0 and t.mean_ssim == pytest.approx(0.8)


@pytest.fixture(scope="module")
def overfit():
    # one image, the whole LR frame as the patch, no augmentation: every step sees the same batch
    ds1 = make_dataset(1, 32, seed=11)
    cfg = TrainConfig(stage="corrector", steps=2000, batch=1, lr_patch=16, augment=False, lr=1e-3)
    return ds1, train_corrector(ds1, CorrectorConfig.tiny(32), cfg)


def test_overfit_single_image(overfit):
    _, res = overfit
    losses = np.asarray(res.losses)
    assert losses[0] / losses[-20:].mean() >= 10


def test_fixed_batch_moving_average_non_increasing():
    ds1 = make_dataset(1, 32, seed=11)
    cfg = TrainConfig(stage="corrector", steps=600, batch=1, lr_patch=16, augment=False, lr=1e-4)
    losses = np.asarray(train_corrector(ds1, CorrectorConfig.tiny(32), cfg).losses)
    ma = np.convolve(losses, np.ones(50) / 50, mode="valid")
    assert np.all(np.diff(ma) <= 0), np.flatnonzero(np.diff(ma) > 0)
    assert np.all(np.diff(block_means(losses, 50)) <= 0)


def test_overfit_single_image_clr_psnr(overfit):
    ds1, res = overfit
    table = evaluate(ds1, corrector_predictor(res.module), target="clr_gt")
    assert table.mean_psnr >= 45.0, table.rows
