"""Frozen-stem convolutional classifier with a trainable dense head.

The stem is two fixed convolution + ReLU + max-pool stages whose weights
are drawn once from a seeded He initialization and never updated; it stands
in for a pretrained feature extractor at desk scale. Training touches only
the head: a 512-unit dense layer and a 3-class log-softmax output, fitted
by Adam on the mean negative log-likelihood with an 80/20 stratified split
and early stopping after three epochs without validation improvement.

All arithmetic is float64 and the gradients are written out by hand, so
they can be checked against finite differences to tight tolerances.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

CLASS_NAMES = ("High", "Medium", "Low")
IMAGE_SHAPE = (32, 20, 15)
STEM_FILTERS = (16, 32)
HIDDEN_UNITS = 512
FEATURE_DIM = STEM_FILTERS[1] * 5 * 3  # 20x15 -> 10x7 -> 5x3 after two pools


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 3
    val_fraction: float = 0.2
    seed: int = 0


@dataclass
class LabeledDataset:
    """TFR images with performance-level labels for one hazard task."""

    images: np.ndarray  # [n, 32, 20, 15]
    labels: np.ndarray  # [n] ints indexing CLASS_NAMES
    task_tag: str

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels must align")
        if self.images.ndim != 4 or self.images.shape[1:] != IMAGE_SHAPE:
            raise ValueError(f"images must be [n x {IMAGE_SHAPE}]")
        if self.labels.size and not (
            0 <= self.labels.min() and self.labels.max() < len(CLASS_NAMES)
        ):
            raise ValueError("labels out of class range")

    def __len__(self):
        return int(self.labels.size)


def _conv2d_same(x, W):
    """3x3 same-padding convolution, x [n,c,h,w], W [o,c,3,3]."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2))
    xp[:, :, 1:-1, 1:-1] = x
    o = W.shape[0]
    out = np.zeros((n, o, h * w))
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di : di + h, dj : dj + w].reshape(n, c, h * w)
            out += W[None, :, :, di, dj] @ patch
    return out.reshape(n, o, h, w)


def _maxpool2(x):
    n, c, h, w = x.shape
    h2, w2 = (h // 2) * 2, (w // 2) * 2
    v = x[:, :, :h2, :w2].reshape(n, c, h2 // 2, 2, w2 // 2, 2)
    return v.max(axis=(3, 5))


class FrozenStem:
    """Fixed convolutional feature extractor, deterministic from its seed."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xFEED]))
        c_in = IMAGE_SHAPE[0]
        self.w1 = rng.standard_normal((STEM_FILTERS[0], c_in, 3, 3)) * math.sqrt(
            2.0 / (c_in * 9)
        )
        self.w2 = rng.standard_normal(
            (STEM_FILTERS[1], STEM_FILTERS[0], 3, 3)
        ) * math.sqrt(2.0 / (STEM_FILTERS[0] * 9))
        self.w1.flags.writeable = False
        self.w2.flags.writeable = False

    def forward(self, images) -> np.ndarray:
        """[n, 32, 20, 15] -> [n, 480] features (biases are zero)."""
        x = np.asarray(images, dtype=float)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != IMAGE_SHAPE:
            raise ValueError(f"expected input shape {IMAGE_SHAPE}")
        h = _maxpool2(np.maximum(_conv2d_same(x, self.w1), 0.0))
        h = _maxpool2(np.maximum(_conv2d_same(h, self.w2), 0.0))
        feats = h.reshape(x.shape[0], -1)
        return feats[0] if single else feats

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.w1.tobytes())
        digest.update(self.w2.tobytes())
        return digest.hexdigest()


#: Flat-vector layout of the trainable head.
HEAD_SLICES = {
    "dense_w": (slice(0, FEATURE_DIM * HIDDEN_UNITS), (FEATURE_DIM, HIDDEN_UNITS)),
    "dense_b": (
        slice(FEATURE_DIM * HIDDEN_UNITS, FEATURE_DIM * HIDDEN_UNITS + HIDDEN_UNITS),
        (HIDDEN_UNITS,),
    ),
    "out_w": (
        slice(
            FEATURE_DIM * HIDDEN_UNITS + HIDDEN_UNITS,
            FEATURE_DIM * HIDDEN_UNITS + HIDDEN_UNITS + HIDDEN_UNITS * len(CLASS_NAMES),
        ),
        (HIDDEN_UNITS, len(CLASS_NAMES)),
    ),
    "out_b": (
        slice(
            FEATURE_DIM * HIDDEN_UNITS + HIDDEN_UNITS + HIDDEN_UNITS * len(CLASS_NAMES),
            FEATURE_DIM * HIDDEN_UNITS
            + HIDDEN_UNITS
            + HIDDEN_UNITS * len(CLASS_NAMES)
            + len(CLASS_NAMES),
        ),
        (len(CLASS_NAMES),),
    ),
}
N_HEAD_PARAMS = HEAD_SLICES["out_b"][0].stop


def head_views(params):
    """Named, shaped views into the flat head-parameter vector."""
    return {name: params[sl].reshape(shape) for name, (sl, shape) in HEAD_SLICES.items()}


def init_head_params(seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xCAFE]))
    params = np.zeros(N_HEAD_PARAMS)
    v = head_views(params)
    v["dense_w"][:] = rng.standard_normal((FEATURE_DIM, HIDDEN_UNITS)) * math.sqrt(
        2.0 / FEATURE_DIM
    )
    v["out_w"][:] = rng.standard_normal((HIDDEN_UNITS, len(CLASS_NAMES))) * math.sqrt(
        1.0 / HIDDEN_UNITS
    )
    return params


@dataclass
class ModelState:
    """Frozen stem plus the flat trainable head vector."""

    stem: FrozenStem
    params: np.ndarray
    class_names: tuple = CLASS_NAMES

    @classmethod
    def fresh(cls, stem_seed: int = 0, head_seed: int = 0):
        return cls(stem=FrozenStem(stem_seed), params=init_head_params(head_seed))


def head_forward(features, params) -> np.ndarray:
    """Dense(512) + ReLU + Dense(3) + log-softmax; rows exp-sum to 1."""
    feats = np.asarray(features, dtype=float)
    single = feats.ndim == 1
    if single:
        feats = feats[None]
    v = head_views(params)
    hidden = np.maximum(feats @ v["dense_w"] + v["dense_b"], 0.0)
    logits = hidden @ v["out_w"] + v["out_b"]
    logz = np.log(np.sum(np.exp(logits - logits.max(axis=1, keepdims=True)), axis=1))
    logp = logits - logits.max(axis=1, keepdims=True) - logz[:, None]
    return logp[0] if single else logp


def nll_loss_and_grad(features, labels, params):
    """Mean negative log-likelihood and its gradient over head parameters."""
    feats = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = feats.shape[0]
    v = head_views(params)
    pre = feats @ v["dense_w"] + v["dense_b"]
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ v["out_w"] + v["out_b"]
    shift = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shift), axis=1))
    logp = shift - logz[:, None]
    loss = float(-logp[np.arange(n), labels].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grad = np.zeros_like(params)
    g = head_views(grad)
    g["out_w"][:] = hidden.T @ dlogits
    g["out_b"][:] = dlogits.sum(axis=0)
    dhidden = (dlogits @ v["out_w"].T) * (pre > 0.0)
    g["dense_w"][:] = feats.T @ dhidden
    g["dense_b"][:] = dhidden.sum(axis=0)
    return loss, grad


def adam_step(
    params,
    grad,
    m,
    v,
    t: int,
    lr: float = 0.003,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One Adam update (bias-corrected); returns new (params, m, v)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, m, v


def stratified_split(labels, val_fraction: float, rng):
    """Seeded shuffled split preserving class shares; >= 1 example of each
    class lands in validation and at least one stays in training."""
    labels = np.asarray(labels, dtype=int)
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        if idx.size < 2:
            raise ValueError(f"class {cls} needs at least 2 examples to split")
        perm = rng.permutation(idx)
        n_val = min(max(1, int(round(val_fraction * idx.size))), idx.size - 1)
        val_idx.append(perm[:n_val])
        train_idx.append(perm[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def train_with_early_stopping(
    stem: FrozenStem,
    dataset: LabeledDataset,
    config: TrainConfig,
    params0=None,
    features=None,
    penalty=None,
    batch_augment=None,
):
    """Train the head on one task; returns (best params, history).

    Keeps the parameters from the epoch with the lowest validation NLL and
    stops once `patience` consecutive epochs fail to strictly improve it.
    `penalty(params) -> (extra_loss, extra_grad)` joins each training batch
    (validation stays plain NLL), and `batch_augment(rng, feats, labels)`
    may extend a batch; both default to no-ops so strategy variants with
    zero-strength settings reproduce plain training bit for bit.
    """
    if len(dataset) < 10:
        raise ValueError("need at least 10 examples to train")
    feats = stem.forward(dataset.images) if features is None else np.asarray(features)
    labels = dataset.labels

    split_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    train_idx, val_idx = stratified_split(labels, config.val_fraction, split_rng)
    if np.unique(labels[train_idx]).size < np.unique(labels).size:
        raise ValueError("a class vanished from the training split")
    f_train, y_train = feats[train_idx], labels[train_idx]
    f_val, y_val = feats[val_idx], labels[val_idx]

    params = init_head_params(config.seed) if params0 is None else np.array(params0, dtype=float)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    t = 0

    epoch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    aug_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))

    best_loss = np.inf
    best_params = params.copy()
    best_epoch = 0
    stale = 0
    history = {"train_loss": [], "val_loss": []}

    for epoch in range(1, config.max_epochs + 1):
        order = epoch_rng.permutation(f_train.shape[0])
        batch_losses = []
        for start in range(0, order.size, config.batch_size):
            sel = order[start : start + config.batch_size]
            fb, yb = f_train[sel], y_train[sel]
            if batch_augment is not None:
                fb, yb = batch_augment(aug_rng, fb, yb)
            loss, grad = nll_loss_and_grad(fb, yb, params)
            if penalty is not None:
                extra_loss, extra_grad = penalty(params)
                loss = loss + extra_loss
                grad = grad + extra_grad
            t += 1
            params, m, v = adam_step(params, grad, m, v, t, lr=config.learning_rate)
            batch_losses.append(loss)
        val_loss, _ = nll_loss_and_grad(f_val, y_val, params)
        history["train_loss"].append(float(np.mean(batch_losses)))
        history["val_loss"].append(float(val_loss))

        if val_loss < best_loss:
            best_loss = val_loss
            best_params = params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    history["best_epoch"] = best_epoch
    history["stopped_epoch"] = len(history["val_loss"])
    return best_params, history


def evaluate(stem: FrozenStem, dataset: LabeledDataset, params, features=None) -> float:
    """Fraction of argmax-correct predictions; sees no task identity."""
    feats = stem.forward(dataset.images) if features is None else np.asarray(features)
    logp = head_forward(feats, params)
    return float(np.mean(np.argmax(logp, axis=1) == dataset.labels))


def predict_labels(stem: FrozenStem, images, params) -> np.ndarray:
    feats = stem.forward(images)
    logp = head_forward(feats, params)
    return np.argmax(logp, axis=1)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(state: ModelState, bin_path, json_path, train_config=None):
    np.ascontiguousarray(state.params, dtype="<f8").tofile(bin_path)
    manifest = {
        "n_params": int(state.params.size),
        "slices": {
            name: {"start": sl.start, "stop": sl.stop, "shape": list(shape)}
            for name, (sl, shape) in HEAD_SLICES.items()
        },
        "stem_seed": state.stem.seed,
        "stem_fingerprint": state.stem.fingerprint(),
        "class_names": list(state.class_names),
        "train_config": asdict(train_config) if train_config else None,
        "dtype": "<f8",
    }
    with open(json_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(bin_path, json_path) -> ModelState:
    with open(json_path) as fh:
        manifest = json.load(fh)
    params = np.fromfile(bin_path, dtype="<f8")
    if params.size != manifest["n_params"]:
        raise ValueError("checkpoint size mismatch")
    stem = FrozenStem(manifest["stem_seed"])
    if stem.fingerprint() != manifest["stem_fingerprint"]:
        raise ValueError("stem fingerprint mismatch; seed drift?")
    return ModelState(stem=stem, params=params, class_names=tuple(manifest["class_names"]))
