"""Deterministic patch-based training: sampler -> VNet -> soft overlap loss.

Every batch is freshly sampled (no epoch bookkeeping), the soft loss is
built on the differentiation tape over the whole batch, and plain SGD with
momentum updates the parameters. Given one seed, sampling, updates and the
metric log are bit-for-bit reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyDataset, NonFiniteParameters, ShapeMismatch
from .inference import predict_volume, threshold_mask
from .losses import DICE, JACCARD, LOSS_KINDS, TVERSKY, TverskyParams, counts, dice
from .patches import PatchSpec, sample_training_patches
from .rng import RngStream
from .vnet import Model, forward
from .volume import Volume


@dataclass(frozen=True)
class TrainConfig:
    loss: str = DICE
    tversky: TverskyParams = field(default_factory=TverskyParams)
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 1
    steps: int = 300
    patch: PatchSpec = field(default_factory=PatchSpec)
    seed: int = 0
    eval_every: int = 100

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.steps < 1:
            raise ValueError("need learning_rate > 0, batch_size >= 1, steps >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def soft_loss_graph(pred: Tensor, truth: np.ndarray, which: str = DICE,
                    params: TverskyParams | None = None) -> Tensor:
    """Smoothed soft overlap loss as a scalar node on the tape.

    Same (num + eps) / (den + eps) form as losses.soft_loss_grad, but
    differentiated by the tape so gradients reach the model parameters.
    """
    params = params or TverskyParams()
    truth = np.asarray(truth, dtype=np.float64)
    g = Tensor(truth)
    g_inv = Tensor(1.0 - truth)
    tp = ad.tensor_sum(ad.mul(pred, g))
    fp = ad.tensor_sum(ad.mul(pred, g_inv))
    fn = ad.tensor_sum(ad.mul(ad.sub(1.0, pred), g))
    if which == JACCARD:
        num = tp
        den = ad.add(ad.add(tp, fp), fn)
    elif which == DICE:
        num = ad.mul(2.0, tp)
        den = ad.add(ad.add(num, fp), fn)
    elif which == TVERSKY:
        num = tp
        den = ad.add(ad.add(tp, ad.mul(params.alpha, fp)), ad.mul(params.beta, fn))
    else:
        raise ValueError(f"unknown loss kind {which!r}")
    coef = ad.div(ad.add(num, params.epsilon), ad.add(den, params.epsilon))
    return ad.sub(1.0, coef)


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """v <- momentum * v + g; p <- p - lr * v. Returns new (params, velocity)."""
    new_params = {}
    new_velocity = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name!r} missing or wrong shape")
        v = velocity.get(name)
        v = momentum * v + g if v is not None else np.array(g, dtype=np.float64)
        new_velocity[name] = v
        new_params[name] = p - lr * v
    return new_params, new_velocity


def _assemble_batch(pairs, spec: PatchSpec, batch_size: int, rng: RngStream):
    imgs = []
    labs = []
    for _ in range(batch_size):
        idx = int(rng.gen.integers(len(pairs))) if len(pairs) > 1 else 0
        image, label = pairs[idx]
        (img, lab, _center), = sample_training_patches(image, label, spec, 1, rng)
        imgs.append(img)
        labs.append(lab)
    return np.stack(imgs)[:, None], np.stack(labs)[:, None]


def evaluate_hard_dice(model: Model, heldout, patch_size, overlap=None, threads: int = 1) -> float:
    """Mean hard Dice of tiled, thresholded predictions over held-out pairs."""
    scores = []
    for image, label in heldout:
        prob = predict_volume(model, image.data, patch_size, overlap=overlap, threads=threads)
        scores.append(dice(counts(threshold_mask(prob), label.data)))
    return float(np.mean(scores))


def train(
    train_pairs: list[tuple[Volume, Volume]],
    heldout_pairs: list[tuple[Volume, Volume]],
    model: Model,
    cfg: TrainConfig,
    threads: int = 1,
) -> tuple[Model, list[str]]:
    """Run cfg.steps SGD steps over freshly sampled class-balanced patches.

    Emits `step <n> loss <x>` per step and `eval <n> dice <x>` every
    eval_every steps (and at the end) when held-out pairs are given. The
    sampling stream is the second child of RngStream(cfg.seed); the first
    child is reserved for model initialization, so one seed pins the whole
    run.
    """
    if not train_pairs:
        raise EmptyDataset("no training volumes")
    _init_rng, sample_rng = RngStream(cfg.seed).split(2)

    velocity: dict[str, np.ndarray] = {}
    log: list[str] = []
    for step in range(1, cfg.steps + 1):
        x, g = _assemble_batch(train_pairs, cfg.patch, cfg.batch_size, sample_rng)
        model.zero_grad()
        pred = forward(model, Tensor(x))
        loss = soft_loss_graph(pred, g, cfg.loss, cfg.tversky)
        ad.backward(loss)

        grads = {name: t.grad for name, t in model.params.items()}
        new_params, velocity = sgd_step(
            model.parameter_arrays(), grads, velocity, cfg.learning_rate, cfg.momentum
        )
        for name, t in model.params.items():
            if not np.all(np.isfinite(new_params[name])):
                raise NonFiniteParameters(f"parameter {name!r} became non-finite at step {step}")
            t.data = new_params[name]

        log.append(f"step {step} loss {float(loss.data):.6f}")
        if heldout_pairs and cfg.eval_every > 0 and (step % cfg.eval_every == 0 or step == cfg.steps):
            score = evaluate_hard_dice(model, heldout_pairs, cfg.patch.size, threads=threads)
            log.append(f"eval {step} dice {score:.6f}")
    return model, log
