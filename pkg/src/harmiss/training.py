"""Adam training loop and accuracy metrics."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ACTIVITY_NAMES
from .network import ClassifierModel, as_sequences, backward, cross_entropy, forward, init_model, predict_logits

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    val_fraction: float = 0.2
    seed: int = 0
    shuffle_each_epoch: bool = True
    hidden_size: int = 128
    dense_units: int = 64
    dropout_p: float = 0.2
    timesteps: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigError("learning_rate and epsilon must be positive")

    def to_dict(self):
        return asdict(self)


def derive_seed(master_seed: int, *key) -> int:
    """Stable 63-bit seed for ``key`` under ``master_seed``.

    SHA-256 of ``"<master>|<k1>|<k2>..."``, first 8 bytes big-endian, top
    bit cleared.
    """
    text = "|".join([str(master_seed), *map(str, key)])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState({k: np.zeros_like(p) for k, p in params.items()},
                     {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig, inplace: bool = False):
    """One bias-corrected Adam update.

    Returns ``(params, state)``. With ``inplace=False`` the inputs are left
    untouched and fresh arrays are returned.

    Raises:
        TrainingError: a gradient contains NaN or inf.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {name} at Adam step {state.t + 1}")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    if inplace:
        new_p, new_m, new_v = params, state.m, state.v
    else:
        new_p = {k: v.copy() for k, v in params.items()}
        new_m = {k: v.copy() for k, v in state.m.items()}
        new_v = {k: v.copy() for k, v in state.v.items()}
    for name, g in grads.items():
        m, v = new_m[name], new_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v * (1.0 / c2))
        denom += cfg.epsilon
        step = m * (cfg.learning_rate / c1)
        step /= denom
        new_p[name] -= step
    return new_p, AdamState(new_m, new_v, t)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    train_rows: np.ndarray | None = None
    val_rows: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for e in range(len(self)):
                w.writerow([e + 1, repr(self.train_loss[e]), repr(self.train_acc[e]),
                            repr(self.val_loss[e]), repr(self.val_acc[e])])


def train(X, y, num_classes: int, cfg: TrainConfig = TrainConfig(), init_seed: int = 0):
    """Fit a fresh classifier on ``X`` (rows) and dense labels ``y``.

    A seeded ``cfg.val_fraction`` of the rows is held out for the history's
    validation columns and never contributes a gradient. Returns the model
    after the final epoch.
    """
    X = as_sequences(X, cfg.timesteps)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y):
        raise ValueError(f"{len(X)} rows but {len(y)} labels")
    if len(y) and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in 0..{num_classes - 1}")
    split_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    perm = np.random.default_rng(split_ss).permutation(len(y))
    n_val = int(round(cfg.val_fraction * len(y)))
    val_rows = np.sort(perm[:n_val])
    train_rows = np.sort(perm[n_val:])
    if len(train_rows) == 0:
        raise TrainingError("no training rows left after the validation split")

    history = TrainHistory(train_rows=train_rows, val_rows=val_rows)
    missing = sorted(set(range(num_classes)) - set(y[train_rows].tolist()))
    if missing:
        msg = f"classes {missing} have no training rows"
        log.warning(msg)
        history.warnings.append(msg)

    model = init_model(X.shape[2], num_classes, cfg.hidden_size, cfg.dense_units, cfg.dropout_p,
                       cfg.timesteps, seed=init_seed)
    # Adam runs on the flat parameter vector; per-tensor views follow along
    flat = {"theta": model.theta}
    state = adam_init(flat)
    gbuf = np.zeros_like(model.theta)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    Xv, yv = X[val_rows], y[val_rows]

    order = train_rows
    for epoch in range(cfg.epochs):
        if cfg.shuffle_each_epoch or epoch == 0:
            order = shuffle_rng.permutation(train_rows)
        loss_sum = 0.0
        correct = 0
        for b, s in enumerate(range(0, len(order), cfg.batch_size)):
            rows = order[s:s + cfg.batch_size]
            probs, cache = forward(model, X[rows], "train", dropout_rng)
            loss_sum += cross_entropy(probs, y[rows]) * len(rows)
            correct += int((probs.argmax(axis=1) == y[rows]).sum())
            backward(model, cache, y[rows], out=gbuf)
            try:
                _, state = adam_step(flat, {"theta": gbuf}, state, cfg, inplace=True)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch + 1}, batch {b + 1}: {exc}") from None
        history.train_loss.append(loss_sum / len(order))
        history.train_acc.append(correct / len(order))
        if len(val_rows):
            probs = predict_proba(model, Xv)
            history.val_loss.append(cross_entropy(probs, yv))
            history.val_acc.append(float((probs.argmax(axis=1) == yv).mean()))
        else:
            history.val_loss.append(float("nan"))
            history.val_acc.append(float("nan"))
        log.debug("epoch %d loss %.4f acc %.4f val_acc %.4f", epoch + 1,
                  history.train_loss[-1], history.train_acc[-1], history.val_acc[-1])
    return model, history


# --------------------------------------------------------------------------
# metrics


def predict_proba(model: ClassifierModel, X, batch_size: int = 2048) -> np.ndarray:
    X = as_sequences(X, model.timesteps)
    out = [forward(model, X[s:s + batch_size], "eval")[0] for s in range(0, len(X), batch_size)]
    return np.vstack(out) if out else np.empty((0, model.num_classes))


def predict(model: ClassifierModel, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return predict_logits(model, X).argmax(axis=1)


def accuracy(pred, labels) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    return float((pred == labels).mean()) if len(labels) else float("nan")


def evaluate_accuracy(model: ClassifierModel, X, labels) -> float:
    return accuracy(predict(model, X), labels)


def per_activity_subject_accuracy(model: ClassifierModel, X, subject_labels, activity_labels) -> dict:
    """Subject-recognition accuracy restricted to each activity's rows.

    ``activity_labels`` are the original 1..6 codes; keys of the result are
    the activity names. Activities with no rows are left out.
    """
    pred = predict(model, X)
    return subject_accuracy_by_activity(pred, subject_labels, activity_labels)


def subject_accuracy_by_activity(pred, subject_labels, activity_labels) -> dict:
    pred = np.asarray(pred)
    subject_labels = np.asarray(subject_labels)
    activity_labels = np.asarray(activity_labels)
    out = {}
    for code, name in ACTIVITY_NAMES.items():
        rows = activity_labels == code
        if not rows.any():
            log.warning("no test rows for activity %s", name)
            continue
        out[name] = accuracy(pred[rows], subject_labels[rows])
    return out
