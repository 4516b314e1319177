import dataclasses

import numpy as np
import pytest

from cdjp.errors import FormatError, ManifestMismatch, NoForwardCache, NonFiniteLoss, ShapeMismatch
from cdjp.losses import combined_loss
from cdjp.permutation import Permutation, apply, inverse
from cdjp.puzzlegen import GenConfig, make_sample
from cdjp.tinynet import (AdamState, ListSource, NetConfig, TinyNet, Trainer, TrainConfig, adam_step, batch_arrays,
                          load_checkpoint, net_config_for)
from cdjp.tinynet.layers import Conv2d, arrange, arrange_backward
from conftest import rel_err


@pytest.fixture(scope="module")
def samples(corpus, fitted, pset9):
    cfg = GenConfig.desk().with_noise_from(fitted)
    return [make_sample(corpus[0][i], "cdjp3", pset9, fitted, cfg, i) for i in range(3)]


def _micro(pset, cb, **kw):
    return net_config_for("cdjp3", pset, cb, GenConfig.desk(), widths=(3, 4, 5, 6, 6), jig_fc8=4, jig_fc9=8,
                          inp_conv8=3, inp_conv9=5, col_conv8=5, **kw)


def test_output_shapes(samples, fitted, pset9):
    cfg = net_config_for("cdjp3", pset9, fitted, GenConfig.desk())
    assert cfg.S == 4 and cfg.patch == 26 and cfg.K == 30 and cfg.Q == fitted.Q
    net = TinyNet(cfg)
    x, perm, *_ = batch_arrays(samples, cfg, pset9, fitted.Q)
    out = net.forward(x, perm)
    assert out["jigsaw"].shape == (3, 30)
    assert out["inpaint"].shape == (3, 4, 4, fitted.Q)
    assert out["colorize"].shape == (3, 9, 4, 4, fitted.Q)
    assert all(v.dtype == np.float32 for v in out.values())
    with pytest.raises(ShapeMismatch):
        net.forward(x[:, :, :, :20, :20], perm)


def test_forward_deterministic(samples, fitted, pset9):
    cfg = _micro(pset9, fitted)
    x, perm, *_ = batch_arrays(samples, cfg, pset9, fitted.Q)
    a = TinyNet(cfg, seed=3).forward(x, perm)
    b = TinyNet(cfg, seed=3).forward(x, perm)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_zero_weights_equal_jigsaw_logits(samples, fitted, pset9):
    cfg = _micro(pset9, fitted)
    net = TinyNet(cfg)
    for k in net.params:
        net.params[k][:] = 0
    x, perm, *_ = batch_arrays(samples, cfg, pset9, fitted.Q)
    z = net.forward(x, perm)["jigsaw"]
    assert np.all(z == z[:, :1])


def test_arrange_tagged():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = Permutation(tuple(int(v) for v in rng.permutation(9)))
        canon = np.arange(9)[None, :, None] * np.ones((1, 1, 3))
        slots = np.stack(apply(p, list(canon[0])))[None]
        inv = np.array(inverse(p).mapping)[None]
        np.testing.assert_array_equal(arrange(slots, inv), canon)


def test_arrange_backward_is_adjoint():
    rng = np.random.default_rng(1)
    perm = np.stack([rng.permutation(9) for _ in range(4)])
    inv = np.argsort(perm, axis=1)
    x = rng.normal(size=(4, 9, 2, 3))
    y = rng.normal(size=(4, 9, 2, 3))
    assert np.sum(arrange(x, inv) * y) == pytest.approx(np.sum(x * arrange_backward(y, perm)), rel=1e-12)


def test_inpaint_invariant_to_consistent_shuffle(corpus, fitted, pset9):
    # same canonical pieces presented under two permutations -> same inpainting output
    cfg = _micro(pset9, fitted)
    net = TinyNet(cfg, seed=1)
    gen = GenConfig.desk(debug_no_damage=True)
    s = make_sample(corpus[0][0], "cdjp3", pset9, fitted, gen, 0)
    canon = apply(inverse(pset9[s.perm_id]), s.patches)
    outs = []
    for pid in (0, 7, 19):
        s2 = dataclasses.replace(s, patches=apply(pset9[pid], canon), perm_id=pid)
        x, perm, *_ = batch_arrays([s2], cfg, pset9, fitted.Q)
        outs.append(net.forward(x, perm)["inpaint"])
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(outs[0], outs[2], rtol=1e-5, atol=1e-6)


def test_parameter_count_independent_of_towers(fitted, pset9, pset4):
    a = TinyNet(NetConfig(n_pieces=9, K=30, Q=fitted.Q))
    b = TinyNet(NetConfig(n_pieces=4, K=30, Q=fitted.Q))
    assert a.n_params("tower") == b.n_params("tower")
    assert a.n_params("colorize") == b.n_params("colorize")
    assert a.n_params("tower") == sum(v.size for k, v in a.params.items() if k.startswith("conv"))


def test_unshared_colorize_branches(samples, fitted, pset9):
    shared = TinyNet(_micro(pset9, fitted), seed=2)
    own = TinyNet(_micro(pset9, fitted, share_colorize=False), seed=2)
    assert own.n_params("colorize") == 9 * shared.n_params("colorize")
    assert own.n_params("tower") == shared.n_params("tower")
    # copying the shared weights into every position reproduces the shared outputs
    for k, v in shared.params.items():
        if k.startswith("col."):
            for i in range(9):
                own.params[k.replace("col.", f"col{i}.")] = v.copy()
        else:
            own.params[k] = v.copy()
    x, perm, *_ = batch_arrays(samples, shared.cfg, pset9, fitted.Q)
    a, b = shared.forward(x, perm)["colorize"], own.forward(x, perm)["colorize"]
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)
    assert NetConfig.from_dict(own.cfg.to_dict()) == own.cfg


def test_unshared_colorize_gradient(samples, fitted, pset9):
    cfg = dataclasses.replace(_micro(pset9, fitted, share_colorize=False), dtype="float64")
    net = TinyNet(cfg, seed=4)
    rng = np.random.default_rng(1)
    for k, v in net.params.items():
        if k.endswith(".b"):
            v += rng.normal(0, 0.1, v.shape)
    _, grads = _loss_and_grads(net, samples[:2], pset9, fitted, 0.0, 1.0)
    analytic, numeric = [], []
    for i in (0, 4, 8):
        name = f"col{i}.conv8.w"
        flat = net.params[name].reshape(-1)
        for j in rng.choice(flat.size, 5, replace=False):
            old = flat[j]
            flat[j] = old + 1e-5
            up = _loss_and_grads(net, samples[:2], pset9, fitted, 0.0, 1.0)[0].l_final
            flat[j] = old - 1e-5
            down = _loss_and_grads(net, samples[:2], pset9, fitted, 0.0, 1.0)[0].l_final
            flat[j] = old
            numeric.append((up - down) / 2e-5)
            analytic.append(grads[name].reshape(-1)[j])
    assert rel_err(analytic, numeric) < 1e-6


def _loss_and_grads(net, samples, pset, cb, alpha, beta):
    x, perm, labels, inp_t, col_t, mask = batch_arrays(samples, net.cfg, pset, cb.Q, net.dtype)
    heads = net.forward(x, perm)
    b = combined_loss(heads, labels, inp_t, col_t, cb.weights.astype(net.dtype), alpha, beta, mask)
    return b, net.backward(b.grads)


def test_full_model_gradient_check(samples, fitted, pset9):
    cfg32 = _micro(pset9, fitted)
    cfg64 = dataclasses.replace(cfg32, dtype="float64")
    net32, net64 = TinyNet(cfg32, seed=5), TinyNet(cfg64, seed=5)
    rng = np.random.default_rng(0)
    # zero biases leave many pre-activations exactly on the ReLU kink
    for k, v in net32.params.items():
        if k.endswith(".b"):
            v += rng.normal(0, 0.1, v.shape).astype(v.dtype)
    net64.params = {k: v.astype(np.float64) for k, v in net32.params.items()}
    batch = samples[:2]
    alpha = beta = 0.5
    _, grads = _loss_and_grads(net32, batch, pset9, fitted, alpha, beta)
    names = sorted(net64.params)
    sizes = np.array([net64.params[n].size for n in names])
    picks = []
    # every parameter tensor at least once, the rest at random
    for n in names:
        picks.append((n, int(rng.integers(net64.params[n].size))))
    while len(picks) < 200:
        n = names[rng.choice(len(names), p=sizes / sizes.sum())]
        picks.append((n, int(rng.integers(net64.params[n].size))))
    analytic, numeric = [], []
    h = 1e-5   # small enough to stay clear of ReLU kinks
    for n, i in picks:
        flat = net64.params[n].reshape(-1)
        old = flat[i]
        flat[i] = old + h
        up = _loss_and_grads(net64, batch, pset9, fitted, alpha, beta)[0].l_final
        flat[i] = old - h
        down = _loss_and_grads(net64, batch, pset9, fitted, alpha, beta)[0].l_final
        flat[i] = old
        numeric.append((up - down) / (2 * h))
        analytic.append(grads[n].reshape(-1)[i])
    assert len(picks) == 200
    assert rel_err(analytic, numeric) < 1e-3


def test_unused_head_gets_zero_gradient(samples, fitted, pset9):
    net = TinyNet(_micro(pset9, fitted))
    _, grads = _loss_and_grads(net, samples, pset9, fitted, 0.0, 0.01)
    groups = net.param_groups()
    for k, g in grads.items():
        if groups[k] == "inpaint":
            assert np.all(g == 0)
    assert any(np.any(g != 0) for k, g in grads.items() if groups[k] == "colorize")


def test_double_backward_errors(samples, fitted, pset9):
    net = TinyNet(_micro(pset9, fitted))
    b, _ = _loss_and_grads(net, samples, pset9, fitted, 0.01, 0.01)
    with pytest.raises(NoForwardCache):
        net.backward(b.grads)
    with pytest.raises(NoForwardCache):
        Conv2d("c", 1, 1, 3).backward({}, {}, np.zeros((1, 1, 2, 2)))


def test_adam_zero_gradient():
    p = {"a": np.array([1.5, -2.0])}
    st = AdamState()
    adam_step(p, {"a": np.zeros(2)}, st)
    np.testing.assert_array_equal(p["a"], [1.5, -2.0])


def test_adam_first_step():
    p = {"a": np.array([0.0])}
    adam_step(p, {"a": np.array([1.0])}, AdamState(lr=1e-3))
    # m_hat = v_hat = 1 -> step lr / (1 + eps)
    assert p["a"][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_decay_and_shapes():
    st = AdamState(lr=1e-3, decay_every=10)
    assert st.lr_at(9) == 1e-3 and st.lr_at(10) == pytest.approx(1e-4) and st.lr_at(20) == pytest.approx(1e-5)
    assert AdamState().decay_every == 100_000
    with pytest.raises(ShapeMismatch):
        adam_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, AdamState())


def test_checkpoint_round_trip(tmp_path, fitted, pset9):
    tr = Trainer(TinyNet(_micro(pset9, fitted)), fitted, pset9, TrainConfig())
    path = tmp_path / "c.ckpt"
    tr.save(path)
    config, params, step, moments = load_checkpoint(path)
    assert config["alpha"] == 0.01 and config["beta"] == 0.01 and step == 0 and moments is None
    for k, v in tr.net.params.items():
        assert params[k].tobytes() == v.tobytes()
    buf = bytearray(path.read_bytes())
    buf[20] ^= 0xFF
    path.write_bytes(bytes(buf))
    with pytest.raises((FormatError, ValueError)):
        load_checkpoint(path)
    path.write_bytes(b"junk")
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_resume_bit_identical(tmp_path, samples, fitted, pset9):
    cfg = _micro(pset9, fitted)
    src = ListSource(samples, seed=2)
    a = Trainer(TinyNet(cfg, seed=1), fitted, pset9, TrainConfig(batch_size=2))
    a.run(src, steps=3)
    a.save(tmp_path / "r.ckpt")
    a.run(src, steps=2)
    b = Trainer.resume(tmp_path / "r.ckpt", fitted, pset9)
    assert b.step == 3
    b.run(src, steps=2)
    assert [r["l_final"] for r in a.history[-2:]] == [r["l_final"] for r in b.history]
    for k in a.net.params:
        assert a.net.params[k].tobytes() == b.net.params[k].tobytes()


def test_resume_rejects_other_codebook(tmp_path, fitted, codebook, pset9):
    Trainer(TinyNet(_micro(pset9, fitted)), fitted, pset9, TrainConfig()).save(tmp_path / "x.ckpt")
    with pytest.raises(ManifestMismatch):
        Trainer.resume(tmp_path / "x.ckpt", codebook, pset9)


def test_trajectory_deterministic(samples, fitted, pset9, tmp_path):
    runs = []
    for i in range(2):
        tr = Trainer(TinyNet(_micro(pset9, fitted), seed=4), fitted, pset9, TrainConfig(batch_size=2))
        tr.run(ListSource(samples, 1), steps=4, metrics_path=tmp_path / f"m{i}.csv")
        runs.append((tmp_path / f"m{i}.csv").read_text())
    assert runs[0] == runs[1]
    assert runs[0].splitlines()[0] == "step,lr,l_jig,l_inp,l_col,l_final,jigsaw_acc"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss(samples, fitted, pset9):
    tr = Trainer(TinyNet(_micro(pset9, fitted)), fitted, pset9, TrainConfig(batch_size=2))
    tr.weights = tr.weights * np.float32(np.inf)
    with pytest.raises(NonFiniteLoss):
        tr.train_step(ListSource(samples))


def test_single_sample_overfit(corpus, fitted, pset9):
    # hard targets: soft labels put an entropy floor under the color losses
    gen = GenConfig.desk(encode="hard").with_noise_from(fitted)
    s = make_sample(corpus[0][5], "cdjp3", pset9, fitted, gen, 7)
    tr = Trainer(TinyNet(net_config_for("cdjp3", pset9, fitted, gen)), fitted, pset9, TrainConfig(batch_size=1))
    tr.run(ListSource([s]), steps=500)
    assert min(r["l_final"] for r in tr.history) < 0.05 * tr.history[0]["l_final"]
