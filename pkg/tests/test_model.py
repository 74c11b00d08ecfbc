import math

import numpy as np
import pytest

from subrecomb.cohort import CohortVolumes
from subrecomb.dataset import TrainingBank
from subrecomb.deform import DeformSpec
from subrecomb.model import (
    Adam,
    EncoderConfig,
    Network,
    bce_with_logits,
    load_checkpoint,
    parameter_digest,
    save_checkpoint,
    sigmoid,
)
from subrecomb.model.layers import BatchNorm1d, Conv3D, GlobalMaxPool, MaxPool3D, ReLU
from subrecomb.model.train import NumericalError, TrainConfig, train, write_history

TINY = EncoderConfig(conv_blocks=((2, 2), (4, 2)), feature_len=8)
# batch of 6: batch-norm statistics over fewer samples make the loss so curved that
# step-1e-4 central differences lose accuracy
TOY_SHAPES = {"whole_head": [(6, 16, 8, 8, 1)], "h_stack": [(6, 8, 8, 8, 2)], "im_stack": [(6, 8, 8, 8, 2), (6, 8, 8, 8, 2)]}


def toy_inputs(kind, rng):
    return [rng.normal(size=s) for s in TOY_SHAPES[kind]]


def one_hot_targets(n, rng):
    t = np.zeros((n, 9))
    for h in range(3):
        t[np.arange(n), 3 * h + rng.integers(0, 3, n)] = 1
    return t


def activation_pattern(net):
    """ReLU masks and max-pool winners of the last forward pass."""
    out = []
    for enc in net.encoders:
        for layer in enc.layers:
            if isinstance(layer, ReLU):
                out.append(layer.mask.copy())
            elif isinstance(layer, (MaxPool3D, GlobalMaxPool)) and layer.cache is not None:
                out.append(layer.cache[0].copy())
    return out


def same_pattern(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def gradient_check(kind, n_coords=200, seed=0):
    """Max relative error of analytic vs central-difference gradients (float64).

    Coordinates whose +-h perturbation flips a ReLU or max-pool decision
    straddle a kink, where central differences are meaningless; those are
    replaced by other randomly drawn coordinates.
    """
    rng = np.random.default_rng(seed)
    net = Network(kind, EncoderConfig(TINY.conv_blocks, TINY.feature_len, weight_init_seed=seed), dtype=np.float64)
    xs = toy_inputs(kind, rng)
    y = one_hot_targets(xs[0].shape[0], rng)

    def loss():
        return bce_with_logits(net.forward(xs), y)[0]

    net.zero_grad()
    _, g = bce_with_logits(net.forward(xs), y)
    net.backward(g)
    base = activation_pattern(net)
    params, grads = net.parameters(), {k: v.copy() for k, v in net.gradients().items()}
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    h, worst, checked, skipped = 1e-4, 0.0, 0, 0
    for f in rng.permutation(sizes.sum()):
        if checked == n_coords:
            break
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        p = params[names[i]].reshape(-1)
        j = f - offsets[i]
        old = p[j]
        p[j] = old + h
        lp = loss()
        kink = not same_pattern(activation_pattern(net), base)
        p[j] = old - h
        lm = loss()
        kink |= not same_pattern(activation_pattern(net), base)
        p[j] = old
        if kink:
            skipped += 1
            continue
        num = (lp - lm) / (2 * h)
        ana = grads[names[i]].reshape(-1)[j]
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
        checked += 1
    assert checked == n_coords and skipped < n_coords
    return worst, net.n_parameters()


@pytest.mark.parametrize("kind", ["whole_head", "h_stack", "im_stack"])
def test_gradients_match_finite_differences(kind):
    err, n = gradient_check(kind)
    assert n <= 5000
    assert err < 1e-4


def test_conv_matches_direct_convolution(rng):
    conv = Conv3D(2, 3, rng, dtype=np.float64)
    x = rng.normal(size=(2, 5, 4, 3, 2))
    out = conv.forward(x)
    W, b = conv.params["W"], conv.params["b"]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for n, i, j, k, o in np.ndindex(*out.shape):
        ref[n, i, j, k, o] = np.sum(xp[n, i : i + 3, j : j + 3, k : k + 3, :] * W[o].transpose(1, 2, 3, 0)) + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_maxpool_ceil_mode():
    x = np.arange(5 * 3 * 1).reshape(1, 5, 3, 1, 1).astype(float)
    out = MaxPool3D(2).forward(x)
    assert out.shape == (1, 3, 2, 1, 1)
    assert out[0, 2, 1, 0, 0] == x[0, 4, 2, 0, 0]


def test_batchnorm_eval_uses_running_stats(rng):
    bn = BatchNorm1d(3, dtype=np.float64)
    for _ in range(50):
        bn.forward(rng.normal(2.0, 3.0, (64, 3)))
    assert np.allclose(bn.running_mean, 2.0, atol=0.5)
    bn.training = False
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose(bn.forward(x), (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps))


def test_zero_input_finite_logits():
    for kind in ("whole_head", "h_stack", "im_stack"):
        net = Network(kind, TINY)
        xs = [np.zeros(s, np.float32) for s in TOY_SHAPES[kind]]
        assert np.isfinite(net.predict(xs)).all()
        assert net.forward(xs).shape == (6, 9)


def test_im_stack_global_head_width():
    net = Network("im_stack", EncoderConfig(feature_len=64))
    assert net.heads["global"].linear.params["W"].shape == (3, 128)
    assert net.heads["ica"].linear.params["W"].shape == (3, 64)


def test_forward_shape_errors():
    net = Network("h_stack", TINY)
    with pytest.raises(ValueError):
        net.forward([np.zeros((2, 8, 8, 8, 1))])
    with pytest.raises(ValueError):
        net.forward([np.zeros((2, 8, 8, 8, 2))] * 2)
    with pytest.raises(ValueError):
        Network("bogus")


def test_inference_deterministic(rng):
    net = Network("h_stack", TINY)
    xs = toy_inputs("h_stack", rng)
    assert np.array_equal(net.predict(xs), net.predict(xs))


def _symmetrize_h_stack(net):
    """Impose weights under which swapping input channels swaps left/right logits."""
    enc = net.encoders[0]
    convs = [layer for layer in enc.layers if isinstance(layer, Conv3D)]
    perm_in = np.array([1, 0])
    for conv in convs:
        W, b = conv.params["W"], conv.params["b"]
        m = W.shape[0] // 2
        W[m:] = W[:m][:, perm_in]
        b[m:] = b[:m]
        perm_in = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
    for head in net.heads.values():
        W, b = head.linear.params["W"], head.linear.params["b"]
        W[0] = 0.5 * (W[0] + W[0][perm_in])
        W[2] = W[1][perm_in]
        b[2] = b[1]
        bn = head.norm
        for arr in (bn.params["gamma"], bn.params["beta"], bn.running_mean, bn.running_var):
            arr[2] = arr[1]


def test_weight_mirrored_h_stack_swaps_sides(rng):
    net = Network("h_stack", EncoderConfig(((4, 2), (6, 2)), feature_len=8, weight_init_seed=3), dtype=np.float64)
    _symmetrize_h_stack(net)
    x = rng.normal(size=(5, 8, 8, 8, 2))
    a = net.predict([x])
    b = net.predict([x[..., ::-1]])
    swap = [0, 2, 1, 3, 5, 4, 6, 8, 7]
    np.testing.assert_allclose(b, a[:, swap], atol=1e-10)
    for h in range(3):
        za, zb = a[:, 3 * h : 3 * h + 3], b[:, 3 * h : 3 * h + 3]
        assert np.array_equal(np.argmax(za[:, 1:], 1), 1 - np.argmax(zb[:, 1:], 1)) or np.any(za[:, 1] == za[:, 2])


def test_bce_zero_logits_is_ln2():
    loss, grad = bce_with_logits(np.zeros((4, 9)), one_hot_targets(4, np.random.default_rng(0)))
    assert loss == pytest.approx(math.log(2))
    assert np.allclose(np.abs(grad), 0.5 / 36)


def test_bce_large_margin():
    t = one_hot_targets(3, np.random.default_rng(1))
    loss, _ = bce_with_logits(np.where(t == 1, 40.0, -40.0), t)
    assert loss < 1e-15


def test_bce_matches_naive_form(rng):
    z = rng.normal(0, 3, (7, 9))
    t = one_hot_targets(7, rng)
    p = 1 / (1 + np.exp(-z))
    naive = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert abs(bce_with_logits(z, t)[0] - naive) < 1e-9
    np.testing.assert_allclose(sigmoid(z), p, rtol=1e-12)


def test_stationary_point_gives_zero_gradients(rng):
    net = Network("h_stack", TINY, dtype=np.float64)
    xs = toy_inputs("h_stack", rng)
    z = net.forward(xs)
    net.zero_grad()
    _, g = bce_with_logits(z, sigmoid(z))  # soft targets at the minimiser
    net.backward(g)
    assert all(np.abs(v).max() < 1e-15 for v in net.gradients().values())


def test_masked_head_gets_no_gradient(rng):
    net = Network("im_stack", TINY, dtype=np.float64)
    xs = toy_inputs("im_stack", rng)
    mask = np.ones(9)
    mask[3:6] = 0  # drop the ICA head
    net.zero_grad()
    _, g = bce_with_logits(net.forward(xs), one_hot_targets(6, rng), mask)
    net.backward(g)
    grads = net.gradients()
    ica = [k for k in grads if k.startswith("ica.")]
    assert ica and all(not grads[k].any() for k in ica)
    assert any(grads[k].any() for k in grads if k.startswith("global."))


def test_descent_on_fixed_batch(rng):
    net = Network("h_stack", TINY, dtype=np.float64)
    xs = toy_inputs("h_stack", rng)
    y = one_hot_targets(6, rng)
    opt = Adam(net.parameters(), lr=1e-3)
    losses = []
    for _ in range(30):
        net.zero_grad()
        loss, g = bce_with_logits(net.forward(xs), y)
        net.backward(g)
        opt.step(net.gradients())
        losses.append(loss)
    assert losses[-1] < losses[0]


def test_adam_first_step_is_lr_sized():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p, lr=0.1)
    opt.step({"w": np.array([3.0, -0.5])})
    np.testing.assert_allclose(p["w"], [0.9, -1.9], atol=1e-6)


def test_checkpoint_roundtrip(tmp_path, rng):
    net = Network("im_stack", TINY)
    xs = [x.astype(np.float32) for x in toy_inputs("im_stack", rng)]
    net.forward(xs)  # move batch-norm statistics off their defaults
    save_checkpoint(net, tmp_path / "ck", extra={"note": 1})
    back = load_checkpoint(tmp_path / "ck")
    assert parameter_digest(back) == parameter_digest(net)
    np.testing.assert_array_equal(back.predict(xs), net.predict(xs))
    raw = (tmp_path / "ck" / "ica.0.W.f32").read_bytes()
    assert np.array_equal(np.frombuffer(raw, "<f4").reshape(3, 8), net.heads["ica"].linear.params["W"])


# -- training loop --

@pytest.fixture(scope="module")
def tiny_bank(small_cohort):
    manifest, volumes, _ = small_cohort
    src = CohortVolumes(manifest, volumes=volumes)
    flat = DeformSpec(anchors_per_axis=4, max_displacement_vox=0.0, repetitions=2)
    return TrainingBank(manifest, src, factor=4, repetitions=2, hemi_deform=flat, sub_deform=flat)


FAST = TrainConfig(learning_rate=1e-3, max_epochs=2, encoder=TINY)


def test_train_deterministic(tiny_bank):
    a = train("h_stack", tiny_bank, range(6), [6, 7], FAST.with_flags("R"))
    b = train("h_stack", tiny_bank, range(6), [6, 7], FAST.with_flags("R"))
    assert a.digest() == b.digest()
    assert len(a.history) == 2


def test_zero_deformation_equals_plain_training(tiny_bank):
    plain = train("whole_head", tiny_bank, range(6), [6, 7], FAST)
    deformed = train("whole_head", tiny_bank, range(6), [6, 7], FAST.with_flags("D"))
    assert plain.digest() == deformed.digest()


def test_train_rejects_overlap(tiny_bank):
    with pytest.raises(ValueError):
        train("h_stack", tiny_bank, [0, 1, 2], [2, 3], FAST)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises(tiny_bank):
    with pytest.raises(NumericalError):
        train("im_stack", tiny_bank, range(6), [6, 7], TrainConfig(learning_rate=1e300, max_epochs=3, encoder=TINY))


def test_history_csv(tmp_path, tiny_bank):
    r = train("im_stack", tiny_bank, range(6), [6, 7], FAST)
    write_history(tmp_path / "h.csv", r.history)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_auc_global,val_auc_ica,val_auc_mca"
    assert len(lines) == 3


def test_flags_parsing():
    c = TrainConfig().with_flags("RD")
    assert c.recombine and c.deform and not c.mirror and c.flags == "RD"
    assert TrainConfig().with_flags("none").flags == "none"
    with pytest.raises(ValueError):
        TrainConfig().with_flags("X")
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


@pytest.mark.slow
def test_smoke_training_reduces_loss(tmp_path_factory):
    from subrecomb.phantom import PhantomSpec, generate_cohort

    manifest, volumes = generate_cohort(PhantomSpec(patients=30, seed=5))
    bank = TrainingBank(manifest, CohortVolumes(manifest, volumes=volumes), factor=4, kinds=("ica", "mca"))
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=200, early_stop_patience=200,
                      encoder=EncoderConfig(((4, 2), (8, 2), (16, 2)), 64))
    r = train("im_stack", bank, range(18), range(18, 24), cfg)
    first = np.mean([h["train_loss"] for h in r.history[:10]])
    last = np.mean([h["train_loss"] for h in r.history[-10:]])
    print(f"train BCE {first:.3f} -> {last:.3f}")
    assert last < 0.7 * first
