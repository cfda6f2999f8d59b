"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines live.
Every tolerance and runtime bound is asserted, not just reported.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from voxelseg import autodiff as ad
from voxelseg.autodiff import Tensor
from voxelseg.losses import (
    DICE,
    JACCARD,
    TVERSKY,
    OverlapCounts,
    TverskyParams,
    counts,
    dice,
    jaccard,
    soft_counts,
    soft_loss_grad,
    tversky,
)
from voxelseg.nifti import read_nifti, write_nifti
from voxelseg.normalize import clip_rescale
from voxelseg.orientation import axis_transform, reorient
from voxelseg.patches import HANN, UNIFORM, PatchSpec, extract_patch, grid_tiles, sample_training_patches, stitch
from voxelseg.phantom import PhantomConfig, generate
from voxelseg.rng import RngStream
from voxelseg.training import TrainConfig, soft_loss_graph, train
from voxelseg.vnet import VNetConfig, build, forward, load, save
from voxelseg.volume import Volume

from conftest import random_volume
from oracles import finite_difference_grad, max_rel_err


@contextmanager
def criterion(number: int, name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} {name}: FAIL ({time.perf_counter() - start:.1f}s)")
        raise
    elapsed = time.perf_counter() - start
    status = "PASS" if elapsed < budget_s else "FAIL (over time budget)"
    print(f"ACCEPTANCE {number} {name}: {status} ({elapsed:.1f}s, budget {budget_s:.0f}s)")
    assert elapsed < budget_s, f"criterion {number} exceeded its {budget_s}s budget: {elapsed:.1f}s"


def test_criterion_1_metric_oracle_equivalence():
    with criterion(1, "metric-oracle-equivalence", 5.0):
        masks = []
        sets = []
        for bits in range(256):
            flat = np.array([(bits >> i) & 1 for i in range(8)], dtype=np.float64)
            masks.append(flat.reshape(2, 2, 2))
            sets.append(frozenset(np.flatnonzero(flat).tolist()))
        alpha, beta = 0.3, 0.7
        for i in range(256):
            p_mask, p_set = masks[i], sets[i]
            for j in range(256):
                g_mask, g_set = masks[j], sets[j]
                c = counts(p_mask, g_mask)
                tp = len(p_set & g_set)
                fp = len(p_set - g_set)
                fn = len(g_set - p_set)
                assert (c.tp, c.fp, c.fn) == (tp, fp, fn)
                union = tp + fp + fn
                assert jaccard(c) == (tp / union if union else 1.0)
                dice_den = 2 * tp + fp + fn
                assert dice(c) == (2 * tp / dice_den if dice_den else 1.0)
                t_den = tp + alpha * fp + beta * fn
                assert tversky(c, TverskyParams(alpha, beta)) == (tp / t_den if t_den else 1.0)


def test_criterion_2_identities():
    with criterion(2, "tversky-dice-jaccard-identities", 1.0):
        gen = np.random.default_rng(2024)
        half = TverskyParams(0.5, 0.5)
        for _ in range(1000):
            c = OverlapCounts(*gen.uniform(0.0, 100.0, size=3))
            d = dice(c)
            assert abs(tversky(c, half) - d) < 1e-12
            j = jaccard(c)
            assert abs(d - 2.0 * j / (1.0 + j)) < 1e-12


def _fd_check(build_fn, arrays, tol=1e-4):
    """FD-check gradients of sum(build_fn(*tensors)^2) w.r.t. every input."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build_fn(*tensors)
    ad.backward(ad.tensor_sum(ad.mul(out, out)))
    for idx, base in enumerate(arrays):
        def f(v, idx=idx):
            args = [Tensor(a) for a in arrays]
            args[idx] = Tensor(v)
            return float((build_fn(*args).data ** 2).sum())

        fd = finite_difference_grad(f, base.copy())
        assert max_rel_err(tensors[idx].grad, fd, floor=1e-7) < tol


def test_criterion_3_gradient_suite():
    with criterion(3, "gradient-suite", 120.0):
        gen = np.random.default_rng(33)

        def arr(*shape):
            return gen.normal(size=shape)

        for _ in range(20):
            a, b = arr(2, 3), arr(2, 3) + 2.5
            _fd_check(lambda x, y: ad.add(x, y), [a, b])
            _fd_check(lambda x, y: ad.sub(x, y), [a, b])
            _fd_check(lambda x, y: ad.mul(x, y), [a, b])
            _fd_check(lambda x, y: ad.div(x, y), [a, b])
            _fd_check(lambda x: ad.neg(x), [arr(4)])
            relu_in = arr(3, 3)
            relu_in[np.abs(relu_in) < 0.05] = 0.5  # keep away from the kink
            _fd_check(lambda x: ad.relu(x), [relu_in])
            _fd_check(lambda x, s: ad.prelu(x, s), [relu_in, np.asarray(0.25)])
            _fd_check(lambda x: ad.sigmoid(x), [arr(3, 3)])
            _fd_check(lambda x: ad.tensor_sum(x), [arr(5)])
            _fd_check(lambda x: ad.tensor_mean(x), [arr(5)])
            _fd_check(lambda x, bias: ad.add_bias(x, bias), [arr(1, 2, 2, 2, 2), arr(2)])
            _fd_check(lambda x, y: ad.concat([x, y], axis=1), [arr(1, 1, 2, 2, 2), arr(1, 2, 2, 2, 2)])
            _fd_check(lambda x, k: ad.conv3d(x, k, stride=1, padding=1), [arr(1, 1, 3, 3, 3), arr(2, 1, 3, 3, 3)])
            _fd_check(lambda x, k: ad.conv3d(x, k, stride=2, padding=0), [arr(1, 2, 4, 4, 4), arr(2, 2, 2, 2, 2)])
            _fd_check(lambda x, k: ad.conv3d_down(x, k), [arr(1, 1, 4, 4, 4), arr(2, 1, 2, 2, 2)])
            _fd_check(lambda x, k: ad.conv_transpose3d(x, k, stride=2), [arr(1, 2, 2, 2, 2), arr(2, 1, 2, 2, 2)])

        # soft losses against finite differences
        params = TverskyParams.from_alpha(0.3)
        for kind in (JACCARD, DICE, TVERSKY):
            for _ in range(20):
                pred = gen.uniform(0.05, 0.95, size=(4, 4, 4))
                truth = (gen.random((4, 4, 4)) > 0.7).astype(np.float64)
                _, grad = soft_loss_grad(pred, truth, kind, params)
                fd = finite_difference_grad(lambda p: soft_loss_grad(p, truth, kind, params)[0], pred)
                assert max_rel_err(grad, fd, floor=1e-7) < 1e-4

        # full-model parameter gradients on a 2-stage 8^3 config
        model = build(VNetConfig(stage_channels=(2, 4), convs_per_stage=1), RngStream(11))
        x = gen.normal(size=(1, 1, 8, 8, 8))
        truth = (gen.random((1, 1, 8, 8, 8)) > 0.9).astype(np.float64)
        model.zero_grad()
        ad.backward(soft_loss_graph(forward(model, Tensor(x)), truth))
        grads = {name: t.grad.copy() for name, t in model.params.items()}
        for name, t in model.params.items():
            def f(values, t=t):
                keep = t.data
                t.data = values.reshape(keep.shape)
                out = float(soft_loss_graph(forward(model, Tensor(x)), truth).data)
                t.data = keep
                return out

            fd = finite_difference_grad(f, t.data.reshape(-1).copy()).reshape(t.data.shape)
            assert max_rel_err(grads[name], fd, floor=1e-6) < 1e-3, name


def test_criterion_4_stitching_partition_of_unity():
    with criterion(4, "stitching-partition-of-unity", 30.0):
        gen = np.random.default_rng(44)
        for trial in range(50):
            extents = tuple(int(v) for v in gen.integers(6, 36, size=3))
            patch = tuple(int(gen.integers(2, e + 4)) for e in extents)
            overlap = tuple(int(gen.integers(0, p)) for p in patch)
            value = float(gen.uniform(-2, 2))
            for window in (UNIFORM, HANN):
                layout = grid_tiles(extents, patch, overlap, window=window)
                preds = [np.full(patch, value) for _ in layout.origins]
                out = stitch(layout, preds)
                assert np.abs(out - value).max() < 1e-6

        # exact reconstruction from slices of a known (integer-valued) volume
        volume = gen.integers(-100, 100, size=(25, 19, 22)).astype(np.float64)
        layout = grid_tiles(volume.shape, (8, 8, 8), (3, 2, 5), window=UNIFORM)
        preds = [extract_patch(volume, o, (8, 8, 8)) for o in layout.origins]
        assert np.array_equal(stitch(layout, preds), volume)


def test_criterion_5_geometry():
    with criterion(5, "reorientation-world-preservation", 30.0):
        gen = np.random.default_rng(55)
        codes = [a + b + c for a in "RL" for b in "AP" for c in "SI"]
        codes += ["ASR", "SAR", "PIL", "IPR", "SRA", "LIA", "AIR", "ISL"]
        for _ in range(100):
            source = codes[int(gen.integers(len(codes)))]
            target = codes[int(gen.integers(len(codes)))]
            extents = tuple(int(e) for e in gen.integers(2, 6, size=3))
            v = random_volume(gen, extents=extents, orientation=source)
            out = reorient(v, target)
            assert out.orientation == target

            t = axis_transform(source, target)
            idx = np.argwhere(np.ones(extents)).astype(np.float64)
            new_idx = np.empty_like(idx)
            for d in range(3):
                s = t.permutation[d]
                new_idx[:, d] = (extents[s] - 1) - idx[:, s] if t.flips[d] else idx[:, s]
            assert np.abs(v.world_coords(idx) - out.world_coords(new_idx)).max() < 1e-9
            assert np.array_equal(
                v.data[tuple(idx.astype(int).T)], out.data[tuple(new_idx.astype(int).T)]
            )
            again = reorient(out, target)
            assert np.array_equal(again.data, out.data)
            assert np.array_equal(again.affine, out.affine)


def test_criterion_6_format_round_trips():
    with criterion(6, "format-round-trips", 10.0):
        gen = np.random.default_rng(66)
        affine = np.eye(4)
        affine[:3, 3] = (0.5, -1.25, 2.0)
        cases = {
            2: gen.integers(0, 256, size=(4, 5, 6)).astype(np.float64),
            4: gen.integers(-1000, 1000, size=(4, 5, 6)).astype(np.float64),
            16: gen.normal(size=(4, 5, 6)).astype(np.float32).astype(np.float64),
            64: gen.normal(size=(4, 5, 6)),
        }
        for code, data in cases.items():
            v = Volume(data, affine, "RAS")
            back = read_nifti(write_nifti(v, code))
            assert back.extents == v.extents
            assert np.array_equal(back.data, v.data)
            assert np.abs(back.affine - v.affine).max() < 1e-6

        model = build(VNetConfig(), RngStream(9))
        x = gen.normal(size=(1, 1, 16, 16, 16))
        before = forward(model, Tensor(x)).data
        after = forward(load(save(model)), Tensor(x)).data
        assert np.array_equal(before, after)


def _phantom_dataset():
    pairs = []
    for i in range(16):
        img, mask = generate(PhantomConfig(seed=100 + i))
        pairs.append((clip_rescale(img), mask))
    return pairs[:12], pairs[12:]


def test_criterion_7_end_to_end_learning():
    with criterion(7, "end-to-end-learning", 900.0):
        train_pairs, heldout_pairs = _phantom_dataset()
        assert len(train_pairs) == 12 and len(heldout_pairs) == 4

        cfg = TrainConfig()  # the default pipeline configuration
        assert cfg.steps <= 2000
        assert cfg.patch.size == (32, 32, 32)
        assert cfg.loss == DICE

        model = build(VNetConfig(), RngStream(cfg.seed).split(2)[0])
        model, log = train(train_pairs, heldout_pairs, model, cfg)

        final_eval = [l for l in log if l.startswith("eval")][-1]
        score = float(final_eval.split()[-1])
        print(f"  held-out hard dice: {score:.4f} after {cfg.steps} steps")
        assert score >= 0.80

        # determinism per seed, demonstrated on a truncated run
        short = TrainConfig(steps=20, eval_every=10, seed=cfg.seed)
        blobs = []
        for _ in range(2):
            m = build(VNetConfig(), RngStream(short.seed).split(2)[0])
            m, short_log = train(train_pairs, heldout_pairs, m, short)
            blobs.append((save(m), tuple(short_log)))
        assert blobs[0] == blobs[1]


def test_criterion_8_imbalance_ordering():
    with criterion(8, "tversky-dice-imbalance-ordering", 1.0):
        gen = np.random.default_rng(88)
        beta_heavy = TverskyParams.from_alpha(0.3)  # beta = 0.7
        checked = 0
        while checked < 1000:
            pred = gen.uniform(0.0, 1.0, size=(4, 4, 4))
            truth = (gen.random((4, 4, 4)) > 0.5).astype(np.float64)
            c = soft_counts(pred, truth)
            if c.fn <= c.fp:
                continue
            t_loss, _ = soft_loss_grad(pred, truth, TVERSKY, beta_heavy)
            d_loss, _ = soft_loss_grad(pred, truth, DICE, beta_heavy)
            assert t_loss > d_loss
            checked += 1


def test_criterion_9_sampler_balance():
    with criterion(9, "sampler-class-balance", 30.0):
        extents = (64, 64, 64)
        image = Volume(np.zeros(extents), np.eye(4), "RAS")
        label_data = np.zeros(extents)
        label_data[13, 29, 47] = 1.0  # one isolated foreground voxel
        label = Volume(label_data, np.eye(4), "RAS")
        spec = PatchSpec(size=(16, 16, 16), fg_fraction=0.5)
        n = 10_000
        triples = sample_training_patches(image, label, spec, n, RngStream(2718))
        containing = sum(1 for _, lab, _ in triples if lab.sum() > 0)
        fraction = containing / n
        print(f"  {fraction:.4f} of patches contain foreground")
        assert fraction >= 0.48
