import numpy as np
import pytest

from voxelseg import autodiff as ad
from voxelseg.autodiff import Tensor
from voxelseg.errors import EmptyDataset, NonFiniteParameters, ShapeMismatch
from voxelseg.inference import predict_volume, threshold_mask
from voxelseg.losses import DICE, TVERSKY, TverskyParams, soft_counts, soft_loss_grad
from voxelseg.normalize import clip_rescale
from voxelseg.patches import PatchSpec
from voxelseg.phantom import PhantomConfig, generate
from voxelseg.rng import RngStream
from voxelseg.training import TrainConfig, sgd_step, soft_loss_graph, train
from voxelseg.vnet import VNetConfig, build, forward, save

from oracles import finite_difference_grad, max_rel_err

TINY_MODEL = VNetConfig(stage_channels=(2, 4), convs_per_stage=1)


def tiny_dataset(n=3, extents=(16, 16, 16), seed0=40):
    pairs = []
    for i in range(n):
        img, mask = generate(PhantomConfig(extents=extents, radius_range=(2.0, 4.0), seed=seed0 + i))
        pairs.append((clip_rescale(img), mask))
    return pairs


# ------------------------------------------------------------------- sgd

def test_sgd_zero_lr_keeps_params(rng):
    p = {"w": rng.normal(size=(3, 3))}
    g = {"w": rng.normal(size=(3, 3))}
    new_p, _ = sgd_step(p, g, {}, lr=0.0, momentum=0.9)
    assert np.array_equal(new_p["w"], p["w"])


def test_sgd_vanilla(rng):
    p = {"w": rng.normal(size=(4,))}
    g = {"w": rng.normal(size=(4,))}
    new_p, v = sgd_step(p, g, {}, lr=0.1, momentum=0.0)
    assert np.allclose(new_p["w"], p["w"] - 0.1 * g["w"])
    assert np.array_equal(v["w"], g["w"])


def test_sgd_momentum_two_steps_unrolled(rng):
    # constant gradient, momentum 0.9: after two steps the total update is lr*g*(1 + 1.9)
    p0 = {"w": rng.normal(size=(5,))}
    g = {"w": rng.normal(size=(5,))}
    lr = 0.2
    p1, v1 = sgd_step(p0, g, {}, lr=lr, momentum=0.9)
    p2, _ = sgd_step(p1, g, v1, lr=lr, momentum=0.9)
    assert np.allclose(p0["w"] - p2["w"], lr * g["w"] * (1.0 + 1.9))


def test_sgd_shape_check(rng):
    with pytest.raises(ShapeMismatch):
        sgd_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, {}, 0.1, 0.0)
    with pytest.raises(ShapeMismatch):
        sgd_step({"w": np.zeros(3)}, {}, {}, 0.1, 0.0)


# ------------------------------------------------------- tape soft loss

@pytest.mark.parametrize("kind", ["jaccard", "dice", "tversky"])
def test_tape_loss_matches_analytic_gradient(rng, kind):
    params = TverskyParams.from_alpha(0.3)
    pred_data = rng.uniform(0.05, 0.95, size=(3, 3, 3))
    truth = (rng.random((3, 3, 3)) > 0.6).astype(np.float64)
    pred = Tensor(pred_data.copy(), requires_grad=True)
    loss = soft_loss_graph(pred, truth, kind, params)
    ad.backward(loss)
    ref_loss, ref_grad = soft_loss_grad(pred_data, truth, kind, params)
    assert float(loss.data) == pytest.approx(ref_loss, abs=1e-12)
    assert np.abs(pred.grad - ref_grad).max() < 1e-12


def test_toy_descent_matches_direct_iteration():
    # p = sigmoid(w), target 1, soft dice loss, 50 vanilla-SGD steps at lr 0.5
    eps = 1e-6
    lr = 0.5

    def loss_of(w):
        p = 1.0 / (1.0 + np.exp(-w))
        return 1.0 - (2.0 * p + eps) / (p + 1.0 + eps)

    # direct iteration oracle: analytic derivative of the scalar recurrence
    def dloss_dw(w):
        p = 1.0 / (1.0 + np.exp(-w))
        dcoef_dp = (2.0 * (p + 1.0 + eps) - (2.0 * p + eps)) / (p + 1.0 + eps) ** 2
        return -dcoef_dp * p * (1.0 - p)

    w_ref = 0.0
    ref_losses = []
    for _ in range(50):
        ref_losses.append(loss_of(w_ref))
        w_ref -= lr * dloss_dw(w_ref)

    w = Tensor(np.asarray(0.0), requires_grad=True)
    got_losses = []
    for _ in range(50):
        w.zero_grad()
        loss = soft_loss_graph(ad.sigmoid(w), np.ones(()), DICE)
        ad.backward(loss)
        got_losses.append(float(loss.data))
        new_params, _ = sgd_step({"w": w.data}, {"w": w.grad}, {}, lr, 0.0)
        w.data = new_params["w"]

    assert np.allclose(got_losses, ref_losses, atol=1e-12)
    assert all(b < a for a, b in zip(got_losses, got_losses[1:]))  # strictly decreasing


# ------------------------------------------------------------- training

def test_train_deterministic():
    pairs = tiny_dataset()
    cfg = TrainConfig(steps=6, eval_every=3, seed=21, batch_size=2,
                      patch=PatchSpec(size=(8, 8, 8)), learning_rate=0.05)
    runs = []
    for _ in range(2):
        model = build(TINY_MODEL, RngStream(cfg.seed).split(2)[0])
        model, log = train(pairs[:2], pairs[2:], model, cfg)
        runs.append((save(model), log))
    assert runs[0][0] == runs[1][0]  # byte-identical checkpoints
    assert runs[0][1] == runs[1][1]  # identical metric logs


def test_train_log_format():
    pairs = tiny_dataset()
    cfg = TrainConfig(steps=4, eval_every=2, seed=5, patch=PatchSpec(size=(8, 8, 8)),
                      learning_rate=0.05)
    model = build(TINY_MODEL, RngStream(cfg.seed).split(2)[0])
    _, log = train(pairs[:2], pairs[2:], model, cfg)
    steps = [l for l in log if l.startswith("step ")]
    evals = [l for l in log if l.startswith("eval ")]
    assert len(steps) == 4
    assert [int(l.split()[1]) for l in steps] == [1, 2, 3, 4]
    assert [int(l.split()[1]) for l in evals] == [2, 4]
    for line in steps:
        parts = line.split()
        assert parts[2] == "loss" and 0.0 <= float(parts[3]) <= 1.0 + 1e-9
    for line in evals:
        parts = line.split()
        assert parts[2] == "dice" and 0.0 <= float(parts[3]) <= 1.0


def test_train_empty_dataset():
    cfg = TrainConfig(steps=1, patch=PatchSpec(size=(8, 8, 8)))
    model = build(TINY_MODEL, RngStream(0))
    with pytest.raises(EmptyDataset):
        train([], [], model, cfg)


def test_nan_guard_triggers():
    pairs = tiny_dataset(n=1)
    cfg = TrainConfig(steps=3, eval_every=0, seed=1, patch=PatchSpec(size=(8, 8, 8)),
                      learning_rate=1e300)
    model = build(TINY_MODEL, RngStream(cfg.seed).split(2)[0])
    with np.errstate(over="ignore"), pytest.raises(NonFiniteParameters):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # overflow is the point
            train(pairs, [], model, cfg)


def test_loss_ordering_on_imbalanced_prediction(rng):
    # trainer-level sanity: configured tversky (beta 0.7) exceeds dice when fn > fp
    truth = np.zeros((4, 4, 4))
    truth[:2] = 1.0
    pred = np.where(truth == 1.0, 0.3, 0.05)  # under-segmentation: fn heavy
    c = soft_counts(pred, truth)
    assert c.fn > c.fp
    t_loss = float(soft_loss_graph(Tensor(pred), truth, TVERSKY, TverskyParams.from_alpha(0.3)).data)
    d_loss = float(soft_loss_graph(Tensor(pred), truth, DICE).data)
    assert t_loss > d_loss


def test_parameters_stay_finite_in_short_run():
    pairs = tiny_dataset()
    cfg = TrainConfig(steps=8, eval_every=0, seed=9, patch=PatchSpec(size=(8, 8, 8)),
                      learning_rate=0.05)
    model = build(TINY_MODEL, RngStream(cfg.seed).split(2)[0])
    model, _ = train(pairs, [], model, cfg)
    for t in model.params.values():
        assert np.all(np.isfinite(t.data))


# ------------------------------------------------------------ inference

def test_predict_single_tile_equals_forward():
    model = build(TINY_MODEL, RngStream(31))
    data = np.random.default_rng(8).normal(size=(8, 8, 8))
    direct = forward(model, Tensor(data[None, None])).data[0, 0]
    tiled = predict_volume(model, data, (8, 8, 8))
    assert np.array_equal(tiled, direct)


def test_predict_threaded_matches_serial():
    model = build(TINY_MODEL, RngStream(31))
    data = np.random.default_rng(9).normal(size=(16, 16, 16))
    serial = predict_volume(model, data, (8, 8, 8), threads=1)
    threaded = predict_volume(model, data, (8, 8, 8), threads=4)
    assert np.array_equal(serial, threaded)


def test_predict_volume_smaller_than_patch():
    model = build(TINY_MODEL, RngStream(31))
    data = np.random.default_rng(10).normal(size=(6, 6, 6))
    out = predict_volume(model, data, (8, 8, 8))
    assert out.shape == (6, 6, 6)
    assert np.all((out > 0) & (out < 1))


def test_threshold_mask():
    prob = np.array([0.2, 0.5, 0.8])
    assert list(threshold_mask(prob)) == [0.0, 0.0, 1.0]
