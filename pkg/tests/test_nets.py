import numpy as np
import pytest

from lce import ops
from lce.gradcheck import check_grads
from lce.nets import (FAB, FSAB, FSAG, RCAB, Conv2d, Corrector, CorrectorConfig, LceModel, SrConfig, WindowAttention,
                      count_multadds, count_params)
from lce.nets.checkpoint import (Checkpoint, CheckpointError, config_digest, from_bytes, load_checkpoint,
                                 save_checkpoint, to_bytes)
from lce.nets.swin import relative_position_index, shift_mask, window_partition, window_reverse
from lce.tensor import Tape, Tensor, backward


def tiny_cfgs(c=8):
    return CorrectorConfig(channels=c, num_rg=1, rcabs_per_rg=1, reduction=4), SrConfig.tiny(channels=c, window=4,
                                                                                               heads=2)


def zero_params(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


def test_conv_param_count():
    assert count_params(Conv2d(64, 64, 3, np.random.default_rng(0))) == 36_928


def test_fab_param_count_at_144():
    n = count_params(FAB(144, 6, np.random.default_rng(0)))
    assert n == 2 * 3 * 3 * 144 * 6 + 6 + 144 + 7 * 7 * 2 + 1
    assert abs(n - 15_800) / 15_800 < 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        CorrectorConfig(channels=10, reduction=4)
    with pytest.raises(ValueError):
        CorrectorConfig(num_rg=0)
    with pytest.raises(ValueError):
        SrConfig(channels=10, heads=3)
    with pytest.raises(ValueError):
        SrConfig(window=1)
    with pytest.raises(ValueError):
        SrConfig(fab_squeeze_channels=0)
    with pytest.raises(ValueError):
        SrConfig(scale=3)
    with pytest.raises(ValueError):
        LceModel(*tiny_cfgs(), mode="case4")


def test_rcab_zero_and_shape(rng):
    blk = RCAB(64, 16, rng)
    for name, p in blk.named_parameters():
        if name.endswith("bias"):
            p.data = np.zeros_like(p.data)
    assert np.array_equal(blk(Tensor(np.zeros((1, 64, 5, 5)))).data, np.zeros((1, 64, 5, 5)))
    assert blk(Tensor(rng.normal(size=(1, 64, 16, 16)))).shape == (1, 64, 16, 16)


def test_rcab_gradient(f64, rng):
    blk = RCAB(4, 2, rng)
    x = Tensor(rng.normal(size=(1, 4, 8, 8)), requires_grad=True)
    proj = Tensor(rng.normal(size=(1, 4, 8, 8)))
    assert check_grads(lambda: (blk(x) * proj).sum(), [x, blk.conv1.weight, blk.ca.excite.bias]) < 1e-3


def test_corrector_shape_and_zero_conv2(rng):
    cc = Corrector(CorrectorConfig(channels=8, num_rg=2, rcabs_per_rg=1, reduction=4), rng)
    for h, w in [(7, 9), (12, 5)]:
        assert cc(Tensor(rng.uniform(size=(2, 3, h, w)))).shape == (2, 3, h, w)
    cc.conv2.weight.data = np.zeros_like(cc.conv2.weight.data)
    out = cc(Tensor(rng.uniform(size=(1, 3, 6, 6)))).data
    np.testing.assert_array_equal(out, np.broadcast_to(cc.conv2.bias.data[None, :, None, None], out.shape))
    with pytest.raises(ValueError):
        cc(Tensor(np.zeros((1, 4, 6, 6))))


def test_fab_constant_input_stays_constant(f64, rng):
    fab = FAB(4, 2, rng)
    x = np.ones((1, 4, 8, 6)) * np.array([0.3, -1.0, 2.0, 0.5])[None, :, None, None]
    out = fab(Tensor(x)).data
    np.testing.assert_allclose(out, out[:, :, :1, :1] * np.ones_like(out), atol=1e-10)


def test_fab_gradient(f64, rng):
    fab = FAB(4, 2, rng)
    x = Tensor(rng.normal(size=(1, 4, 8, 8)), requires_grad=True)
    proj = Tensor(rng.normal(size=(1, 4, 8, 8)))
    assert check_grads(lambda: (fab(x) * proj).sum(), [x, fab.map_conv.weight, fab.conv1.weight]) < 1e-3


def test_window_partition_roundtrip(rng):
    x = Tensor(rng.normal(size=(2, 8, 12, 3)))
    xw = window_partition(x, 4)
    assert xw.shape == (2 * 2 * 3, 16, 3)
    np.testing.assert_array_equal(window_reverse(xw, 4, 2, 8, 12).data, x.data)


def test_relative_position_index_and_mask():
    idx = relative_position_index(3)
    assert idx.shape == (9, 9) and idx.min() == 0 and idx.max() == 24
    assert (np.diag(idx) == 12).all()
    m = shift_mask(8, 8, 4, 2)
    assert m.shape == (4, 16, 16)
    assert (m[0] == 0).all()  # the top-left window never straddles the wrap
    assert (m[3] != 0).any() and np.array_equal(m, m.transpose(0, 2, 1))


def test_one_token_attention_is_output_projection(rng):
    att = WindowAttention(4, 1, 1, rng)
    w = np.zeros((12, 4), np.float32)
    w[8:] = np.eye(4)
    att.qkv.weight.data, att.qkv.bias.data = w, np.zeros(12, np.float32)
    att.rel_bias.data = np.zeros_like(att.rel_bias.data)
    x = Tensor(rng.normal(size=(5, 1, 4)).astype(np.float32))
    np.testing.assert_allclose(att(x).data, att.proj(x).data, atol=1e-6)


def test_attention_rows_sum_to_one(rng):
    att = WindowAttention(8, 4, 2, rng)
    att.keep_attention = True
    att(Tensor(rng.normal(size=(3, 16, 8))))
    a = att.last_attention
    assert a.shape == (3, 2, 16, 16)
    np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-6)


def test_attention_permutation_equivariance(f64, rng):
    att = WindowAttention(4, 2, 2, rng, position_bias=False)
    x = rng.normal(size=(1, 4, 4))
    perm = np.array([2, 1, 0, 3])
    out = att(Tensor(x)).data
    out_p = att(Tensor(x[:, perm])).data
    np.testing.assert_allclose(out_p, out[:, perm], atol=1e-12)


def _fsab_pair(rng, shift=True):
    a = FSAB(8, 2, 4, shift, 2.0, 2, np.random.default_rng(3))
    b = FSAB(8, 2, 4, shift, 2.0, 2, np.random.default_rng(3))
    for p in b.fab.parameters():
        p.data = rng.normal(size=p.shape).astype(p.dtype)
    return a, b


def test_fsab_alpha_zero_ignores_fab(rng):
    a, b = _fsab_pair(rng)
    a.alpha.data[:] = 0
    b.alpha.data[:] = 0
    x = Tensor(rng.normal(size=(2, 8, 8, 8)).astype(np.float32))
    assert np.array_equal(a(x).data, b(x).data)
    a.branches = ("attn",)
    assert np.array_equal(a(x).data, b(x).data)


def test_fsab_without_attention_branch(f64, rng):
    blk = FSAB(8, 2, 4, False, 2.0, 2, rng)
    blk.alpha.data[:] = 0.7
    blk.branches = ("fab",)
    x = Tensor(rng.normal(size=(1, 4, 8, 8)))
    x1 = blk.norm1(x)
    x2 = x1 + blk.alpha * blk.fab(x1.transpose(0, 3, 1, 2)).transpose(0, 2, 3, 1)
    want = blk.fc2(ops.gelu(blk.fc1(blk.norm2(x2)))) + x2
    assert np.array_equal(blk(x).data, want.data)


def test_fsab_alpha_receives_gradient(rng):
    blk = FSAB(8, 2, 4, True, 2.0, 2, rng)
    x = Tensor(rng.normal(size=(1, 8, 8, 8)).astype(np.float32))
    with Tape() as tape:
        loss = (blk(x) * Tensor(rng.normal(size=(1, 8, 8, 8)))).sum()
    backward(loss, tape)
    assert blk.alpha.grad is not None and abs(blk.alpha.grad[0]) > 0


def test_fsab_rejects_non_window_multiple(rng):
    blk = FSAB(8, 2, 4, False, 2.0, 2, rng)
    with pytest.raises(ValueError):
        blk(Tensor(np.zeros((1, 6, 8, 8))))


def test_fsag_zero_weights_is_identity(rng):
    grp = FSAG(8, 2, 2, 4, 2.0, 2, rng)
    zero_params(grp)
    for h, w in [(4, 8), (8, 12)]:
        x = Tensor(rng.normal(size=(1, 8, h, w)).astype(np.float32))
        np.testing.assert_array_equal(grp(x).data, x.data)


def test_fsag_gradient(f64, rng):
    grp = FSAG(8, 2, 2, 4, 2.0, 2, rng)
    x = Tensor(rng.normal(size=(1, 8, 8, 8)), requires_grad=True)
    proj = Tensor(rng.normal(size=(1, 8, 8, 8)))
    params = [x, grp.blocks[1].alpha, grp.blocks[1].attn.rel_bias, grp.conv.bias]
    assert check_grads(lambda: (grp(x) * proj).sum(), params) < 1e-3


@pytest.mark.parametrize("mode", ["case1", "case2", "case3"])
@pytest.mark.parametrize("scale", [2, 4])
def test_model_output_extents(rng, mode, scale):
    cc, sc = tiny_cfgs()
    model = LceModel(cc, SrConfig.tiny(channels=8, window=4, heads=2, scale=scale), mode)
    sr, clr = model(Tensor(rng.uniform(size=(1, 3, 6, 10)).astype(np.float32)))
    assert sr.shape == (1, 3, 6 * scale, 10 * scale)
    assert (clr is None) == (mode == "case1")
    if clr is not None:
        assert clr.shape == (1, 3, 6, 10)


def test_model_rejects_tiny_or_bad_input():
    model = LceModel(*tiny_cfgs(), "case1")
    with pytest.raises(ValueError):
        model(Tensor(np.zeros((1, 3, 2, 8), np.float32)))
    with pytest.raises(ValueError):
        model(Tensor(np.zeros((1, 4, 8, 8), np.float32)))


def test_alpha_initialized(rng):
    model = LceModel(*tiny_cfgs(), "case3")
    alphas = [p for n, p in model.named_parameters() if n.endswith("alpha")]
    assert len(alphas) == 2 + 2  # two extractor FABs and two FSABs
    assert all(a.data[0] == np.float32(0.01) for a in alphas)


def test_named_parameters_complete_and_unique():
    model = LceModel(*tiny_cfgs(), "case3")
    named = list(model.named_parameters())
    assert len({n for n, _ in named}) == len(named)
    assert len({id(p) for _, p in named}) == len(named)
    assert sum(p.data.size for _, p in named) == count_params(model)


def test_case1_vs_case3_param_bookkeeping():
    cc, sc = tiny_cfgs()
    m1, m3 = LceModel(cc, sc, "case1"), LceModel(cc, sc, "case3")
    c = sc.channels
    extra = count_params(m3.corrector) + count_params(m3.clr_extractor) + c * c
    assert count_params(m3) - count_params(m1) == extra


def _grads_after_step(model, rng):
    x = Tensor(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
    model.zero_grad()
    with Tape() as tape:
        sr, _ = model(x)
        loss = (sr * Tensor(rng.normal(size=sr.shape).astype(np.float32))).sum()
    backward(loss, tape)
    return {n: p.grad for n, p in model.named_parameters()}


def test_gradient_completeness_and_freeze(rng):
    model = LceModel(*tiny_cfgs(), "case3")
    grads = _grads_after_step(model, rng)
    assert all(g is not None for g in grads.values())
    model.corrector.freeze()
    grads = _grads_after_step(model, rng)
    missing = {n for n, g in grads.items() if g is None}
    assert missing == {n for n, _ in model.named_parameters() if n.startswith("corrector.")}


def test_model_determinism(rng):
    x = Tensor(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
    a = LceModel(*tiny_cfgs(), "case3", seed=5)
    b = LceModel(*tiny_cfgs(), "case3", seed=5)
    assert all(np.array_equal(a.state_dict()[k], v) for k, v in b.state_dict().items())
    assert a(x)[0].data.tobytes() == b(x)[0].data.tobytes()
    c = LceModel(*tiny_cfgs(), "case3", seed=6)
    assert not np.array_equal(a.state_dict()["fuse.weight"], c.state_dict()["fuse.weight"])


def test_multadds_rules():
    conv = Conv2d(4, 8, 3, np.random.default_rng(0))
    assert count_multadds(conv, 10, 20) == 8 * 4 * 9 * 10 * 20
    model = LceModel(*tiny_cfgs(), "case3")
    assert count_multadds(model, 6, 10) > count_multadds(LceModel(*tiny_cfgs(), "case1"), 6, 10)


def test_state_dict_roundtrip(rng):
    a = LceModel(*tiny_cfgs(), "case2", seed=1)
    b = LceModel(*tiny_cfgs(), "case2", seed=2)
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
    assert a(x)[0].data.tobytes() == b(x)[0].data.tobytes()
    with pytest.raises(KeyError):
        b.load_state_dict({})
    bad = a.state_dict()
    bad["fuse.bias"] = np.zeros(3)
    with pytest.raises(ValueError):
        b.load_state_dict(bad)


def test_checkpoint_bit_exact(tmp_path, rng):
    model = LceModel(*tiny_cfgs(), "case3")
    tensors = dict(model.state_dict())
    tensors["opt.step"] = np.array([7], dtype=np.int64)
    tensors["meta.f64"] = rng.normal(size=(2, 3))
    tensors["meta.u8"] = np.arange(5, dtype=np.uint8)
    tensors["meta.scalar"] = np.array(1.5, dtype=np.float32)
    ck = Checkpoint("a=1\nb=2\n", tensors)
    save_checkpoint(tmp_path / "m.lcec", ck)
    back = load_checkpoint(tmp_path / "m.lcec", expect_digest=config_digest("a=1\nb=2\n"))
    assert back.config_text == ck.config_text and list(back.tensors) == list(tensors)
    for k, v in tensors.items():
        assert back.tensors[k].dtype == v.dtype and back.tensors[k].tobytes() == v.tobytes()
        assert back.tensors[k].shape == v.shape
    assert to_bytes(back) == (tmp_path / "m.lcec").read_bytes()
    assert set(back.prefixed("corrector")) == {k[len("corrector."):] for k in tensors if k.startswith("corrector.")}


def test_checkpoint_errors(tmp_path):
    buf = to_bytes(Checkpoint("x=1\n", {"w": np.ones(4, np.float32)}))
    assert buf[:4] == b"LCEC"
    with pytest.raises(CheckpointError):
        from_bytes(b"NOPE" + buf[4:])
    with pytest.raises(CheckpointError):
        from_bytes(buf[:-3])
    tampered = bytearray(buf)
    tampered[44] = ord("y")  # config text no longer matches its digest
    with pytest.raises(CheckpointError):
        from_bytes(bytes(tampered))
    (tmp_path / "c.lcec").write_bytes(buf)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.lcec", expect_digest=config_digest("other"))
    with pytest.raises(CheckpointError):
        to_bytes(Checkpoint("", {"c": np.zeros(2, np.complex64)}))
