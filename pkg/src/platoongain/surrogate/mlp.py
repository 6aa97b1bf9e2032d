"""Split-branch regression network mapping initial conditions to a gain.

Speeds and positions enter separate dense+ReLU branches that share no weights;
their outputs are concatenated and passed through a ReLU hidden layer and an
affine output unit. Inputs and the label are min-max scaled with statistics
fitted on the training split. Positions are first re-based to the lead
vehicle, since the dynamics only see spacings.
"""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)

MU_FLOOR = 1e-6
MU_CEIL = 2.0


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.00075
    epochs: int = 400
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"  # "adam" or "sgd" (plain mini-batch descent)
    weight_decay: float = 1e-4  # L2 penalty on the weights (not biases)

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class NormStats:
    feat_min: np.ndarray  # (2n,) speeds first, then re-based positions
    feat_max: np.ndarray
    label_min: float
    label_max: float

    @classmethod
    def fit(cls, features: np.ndarray, labels: np.ndarray) -> "NormStats":
        return cls(features.min(axis=0), features.max(axis=0),
                   float(labels.min()), float(labels.max()))

    def scale_features(self, features: np.ndarray) -> np.ndarray:
        span = self.feat_max - self.feat_min
        flat = span <= 0.0
        out = (features - self.feat_min) / np.where(flat, 1.0, span)
        return np.where(flat, 0.5, out)

    def scale_label(self, y):
        span = self.label_max - self.label_min
        if span <= 0.0:
            return np.full_like(np.asarray(y, dtype=float), 0.5)
        return (np.asarray(y, dtype=float) - self.label_min) / span

    def unscale_label(self, z):
        span = self.label_max - self.label_min
        if span <= 0.0:
            return np.full_like(np.asarray(z, dtype=float), self.label_min)
        return np.asarray(z, dtype=float) * span + self.label_min

    def unscale_features(self, z: np.ndarray) -> np.ndarray:
        span = self.feat_max - self.feat_min
        return np.where(span <= 0.0, self.feat_min, z * span + self.feat_min)


def raw_features(speeds, positions) -> np.ndarray:
    """Stack speeds with lead-relative positions, shape (N, 2n)."""
    speeds = np.atleast_2d(np.asarray(speeds, dtype=float))
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    return np.hstack([speeds, positions - positions[:, :1]])


def normalize(dataset: Dataset, stats: NormStats | None = None):
    """Scale features and labels to [0, 1].

    Statistics are fitted on the training split unless ``stats`` is given, in
    which case they are reused verbatim. Returns ``(features, labels, stats)``
    for the whole dataset.
    """
    feats = raw_features(dataset.speeds, dataset.positions)
    if stats is None:
        idx = dataset.split.get("train", np.arange(len(dataset)))
        if len(idx) == 0:
            raise ValueError("training split is empty")
        stats = NormStats.fit(feats[idx], dataset.mu_star[idx])
    return stats.scale_features(feats), stats.scale_label(dataset.mu_star), stats


@dataclass
class MlpModel:
    n: int
    h1: int
    h2: int
    W_speed: np.ndarray  # (h1, n)
    b_speed: np.ndarray
    W_pos: np.ndarray  # (h1, n)
    b_pos: np.ndarray
    W_hidden: np.ndarray  # (h2, 2*h1)
    b_hidden: np.ndarray
    W_out: np.ndarray  # (1, h2)
    b_out: np.ndarray
    stats: NormStats

    @classmethod
    def init(cls, n: int, h1: int = 32, h2: int = 64, seed: int = 0,
             stats: NormStats | None = None) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)

        def glorot(fan_out, fan_in):
            r = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-r, r, (fan_out, fan_in))

        if stats is None:
            stats = NormStats(np.zeros(2 * n), np.ones(2 * n), 0.0, 1.0)
        return cls(n, h1, h2,
                   glorot(h1, n), np.zeros(h1), glorot(h1, n), np.zeros(h1),
                   glorot(h2, 2 * h1), np.zeros(h2), glorot(1, h2), np.zeros(1), stats)

    def params(self) -> list[np.ndarray]:
        return [self.W_speed, self.b_speed, self.W_pos, self.b_pos,
                self.W_hidden, self.b_hidden, self.W_out, self.b_out]

    def set_params(self, values) -> None:
        (self.W_speed, self.b_speed, self.W_pos, self.b_pos,
         self.W_hidden, self.b_hidden, self.W_out, self.b_out) = values

    def branches(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Post-ReLU activations of the speed and position branches."""
        hs = np.maximum(feats[:, :self.n] @ self.W_speed.T + self.b_speed, 0.0)
        hp = np.maximum(feats[:, self.n:] @ self.W_pos.T + self.b_pos, 0.0)
        return hs, hp

    def forward_scaled(self, feats: np.ndarray, cache: bool = False):
        """Network output in label-scaled units for already scaled features."""
        zs = feats[:, :self.n] @ self.W_speed.T + self.b_speed
        zp = feats[:, self.n:] @ self.W_pos.T + self.b_pos
        h = np.hstack([np.maximum(zs, 0.0), np.maximum(zp, 0.0)])
        z2 = h @ self.W_hidden.T + self.b_hidden
        a2 = np.maximum(z2, 0.0)
        y = (a2 @ self.W_out.T + self.b_out)[:, 0]
        if cache:
            return y, (feats, zs, zp, h, z2, a2)
        return y


def mlp_forward(model: MlpModel, speeds0, positions0):
    """Predicted gain for one initial condition (or a batch of them).

    The network output is mapped back to gain units and clamped to (0, 2].
    """
    speeds0 = np.asarray(speeds0, dtype=float)
    positions0 = np.asarray(positions0, dtype=float)
    if speeds0.shape[-1] != model.n or positions0.shape[-1] != model.n:
        raise ValueError(f"model expects {model.n} speeds and {model.n} positions, got "
                         f"{speeds0.shape[-1]} and {positions0.shape[-1]}")
    single = speeds0.ndim == 1
    feats = model.stats.scale_features(raw_features(speeds0, positions0))
    mu = np.clip(model.stats.unscale_label(model.forward_scaled(feats)), MU_FLOOR, MU_CEIL)
    return float(mu[0]) if single else mu


def loss_and_grads(model: MlpModel, feats: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradients, ordered like ``model.params()``."""
    pred, (x, zs, zp, h, z2, a2) = model.forward_scaled(feats, cache=True)
    m = len(y)
    err = pred - y
    loss = float(np.mean(err * err))
    d_out = (2.0 / m) * err[:, None]  # (m, 1)
    g_W_out = d_out.T @ a2
    g_b_out = d_out.sum(axis=0)
    d_z2 = (d_out @ model.W_out) * (z2 > 0.0)
    g_W_hidden = d_z2.T @ h
    g_b_hidden = d_z2.sum(axis=0)
    d_h = d_z2 @ model.W_hidden
    h1 = model.h1
    d_zs = d_h[:, :h1] * (zs > 0.0)
    d_zp = d_h[:, h1:] * (zp > 0.0)
    g_W_speed = d_zs.T @ x[:, :model.n]
    g_W_pos = d_zp.T @ x[:, model.n:]
    return loss, [g_W_speed, d_zs.sum(axis=0), g_W_pos, d_zp.sum(axis=0),
                  g_W_hidden, g_b_hidden, g_W_out, g_b_out]


def _mse(model: MlpModel, feats, y) -> float:
    err = model.forward_scaled(feats) - y
    return float(np.mean(err * err))


def mlp_train(dataset: Dataset, h1: int = 32, h2: int = 64,
              tc: TrainConfig = TrainConfig()) -> tuple[MlpModel, list[tuple[int, float, float]]]:
    """Mini-batch training on the MSE loss.

    Adam by default (``tc.optimizer = "sgd"`` gives plain descent), with an
    optional L2 penalty on the weight matrices. The reported MSE curves
    exclude the penalty. Returns the epoch snapshot with the lowest validation MSE together with
    the per-epoch ``(epoch, train_mse, val_mse)`` history.
    """
    feats, y, stats = normalize(dataset)
    tr, va = dataset.split["train"], dataset.split["val"]
    if len(va) == 0:
        va = tr
    model = MlpModel.init(dataset.n, h1, h2, seed=tc.seed, stats=stats)
    rng = np.random.default_rng([tc.seed, 1])
    lr = tc.learning_rate
    moments = [(np.zeros_like(p), np.zeros_like(p)) for p in model.params()]
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    t = 0
    history = []
    best, best_val = None, np.inf
    for epoch in range(1, tc.epochs + 1):
        order = tr[rng.permutation(len(tr))]
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            loss, grads = loss_and_grads(model, feats[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            params = model.params()
            if tc.weight_decay:
                grads = [g + tc.weight_decay * p if p.ndim == 2 else g for p, g in zip(params, grads)]
            if tc.optimizer == "sgd":
                model.set_params([p - lr * g for p, g in zip(params, grads)])
            else:
                t += 1
                new = []
                for k, (p, g) in enumerate(zip(params, grads)):
                    m1, m2 = moments[k]
                    m1 = beta1 * m1 + (1.0 - beta1) * g
                    m2 = beta2 * m2 + (1.0 - beta2) * g * g
                    moments[k] = (m1, m2)
                    m_hat = m1 / (1.0 - beta1 ** t)
                    v_hat = m2 / (1.0 - beta2 ** t)
                    new.append(p - lr * m_hat / (np.sqrt(v_hat) + eps_adam))
                model.set_params(new)
        train_mse = _mse(model, feats[tr], y[tr])
        val_mse = _mse(model, feats[va], y[va])
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise TrainingError(f"non-finite loss at end of epoch {epoch}")
        history.append((epoch, train_mse, val_mse))
        if val_mse < best_val:
            best_val, best = val_mse, copy.deepcopy(model)
        if epoch % 50 == 0:
            log.info("epoch %d train %.3g val %.3g", epoch, train_mse, val_mse)
    return best, history


def mlp_eval(model: MlpModel, dataset: Dataset, split: str = "test") -> tuple[float, float]:
    """Normalized-label MSE and mean absolute gain deviation on one split."""
    idx = dataset.split[split] if split in dataset.split else np.arange(len(dataset))
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    feats = model.stats.scale_features(raw_features(dataset.speeds[idx], dataset.positions[idx]))
    y = model.stats.scale_label(dataset.mu_star[idx])
    mse = _mse(model, feats, y)
    pred = mlp_forward(model, dataset.speeds[idx], dataset.positions[idx])
    return mse, float(np.mean(np.abs(pred - dataset.mu_star[idx])))


def save_model(model: MlpModel, path) -> None:
    """Plain-text model file that reloads bit-exactly (round-trip float repr)."""
    def fmt(values):
        return " ".join(repr(float(v)) for v in np.ravel(values))

    s = model.stats
    stats = np.concatenate([np.column_stack([s.feat_min, s.feat_max]).ravel(),
                            [s.label_min, s.label_max]])
    lines = [f"{model.n} {model.h1} {model.h2}", fmt(stats)]
    for W, b in zip(model.params()[0::2], model.params()[1::2]):
        lines.append(f"{W.shape[0]} {W.shape[1]} {fmt(W)} {fmt(b)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> MlpModel:
    with open(path) as fh:
        lines = [ln.split() for ln in fh.read().splitlines()]
    try:
        n, h1, h2 = (int(v) for v in lines[0])
    except (ValueError, IndexError):
        raise ValueError(f"{path}: line 1: expected 'n h1 h2'") from None
    try:
        stats = np.array(lines[1], dtype=float)
    except (ValueError, IndexError):
        raise ValueError(f"{path}: line 2: malformed normalization statistics") from None
    if stats.size != 4 * n + 2:
        raise ValueError(f"{path}: line 2: expected {4 * n + 2} values, got {stats.size}")
    pairs = stats[:-2].reshape(-1, 2)
    norm = NormStats(pairs[:, 0].copy(), pairs[:, 1].copy(), float(stats[-2]), float(stats[-1]))
    shapes = [(h1, n), (h1, n), (h2, 2 * h1), (1, h2)]
    values = []
    for k, shape in enumerate(shapes):
        lineno = k + 3
        try:
            row = lines[k + 2]
            rows, cols = int(row[0]), int(row[1])
            nums = np.array(row[2:], dtype=float)
        except (ValueError, IndexError):
            raise ValueError(f"{path}: line {lineno}: malformed layer record") from None
        if (rows, cols) != shape or nums.size != rows * cols + rows:
            raise ValueError(f"{path}: line {lineno}: layer shape mismatch, expected {shape}")
        values += [nums[:rows * cols].reshape(rows, cols), nums[rows * cols:]]
    model = MlpModel.init(n, h1, h2, stats=norm)
    model.set_params(values)
    return model


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, tr, va in history:
            w.writerow([epoch, repr(float(tr)), repr(float(va))])
