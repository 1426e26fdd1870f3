"""Minibatch Adam training with early stopping, and finite-difference gradient checking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, TrainingDivergence
from .features import Normalizer, stack_windows
from .forecast import rmse
from .gru import GruEdModel, forward, init_model, loss_and_grads

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 32
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 10
    train_fraction: float = 0.7
    val_fraction: float = 0.15       # rest of the held-out 30% is the test split
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    @classmethod
    def from_dict(cls, doc: dict | None) -> "TrainConfig":
        return cls(**dict(doc or {}))


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)
    best_epoch: int = 0
    test_rmse: float = float("nan")
    split_sizes: tuple = (0, 0, 0)

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_rmse": self.val_rmse, "best_epoch": self.best_epoch,
                "test_rmse": self.test_rmse, "split_sizes": list(self.split_sizes)}


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def split_indices(windows, train_fraction: float, val_fraction: float, rng) -> tuple:
    """Disjoint train/val/test index arrays.

    With three or more distinct sources the split is by source, so that
    overlapping windows of one trajectory never straddle two splits.
    """
    sources = np.array([w.source for w in windows])
    uniq = np.unique(sources)
    if len(uniq) >= 3:
        order = rng.permutation(uniq)
        n_tr = max(1, int(round(train_fraction * len(order))))
        n_va = max(1, int(round(val_fraction * len(order))))
        n_tr = min(n_tr, len(order) - 2)
        groups = (order[:n_tr], order[n_tr:n_tr + n_va], order[n_tr + n_va:])
        if len(groups[2]) == 0:
            groups = (groups[0], groups[1][:-1], groups[1][-1:])
        return tuple(np.flatnonzero(np.isin(sources, g)) for g in groups)
    idx = rng.permutation(len(windows))
    n_tr = max(1, int(round(train_fraction * len(idx))))
    n_va = int(round(val_fraction * len(idx)))
    tr, va, te = idx[:n_tr], idx[n_tr:n_tr + n_va], idx[n_tr + n_va:]
    if len(va) == 0:
        va = tr
    if len(te) == 0:
        te = va
    return np.sort(tr), np.sort(va), np.sort(te)


def evaluate_rmse(model: GruEdModel, X: np.ndarray, Y: np.ndarray, batch: int = 4096) -> float:
    """RMSE in m/s of clamped, denormalised predictions against raw targets."""
    preds = []
    Xn = model.normalizer.normalize(X)
    for s in range(0, len(X), batch):
        z = forward(model.params, Xn[s:s + batch], Y.shape[1])
        preds.append(np.maximum(model.normalizer.denormalize_velocity(z), 0.0))
    return rmse(Y, np.concatenate(preds))


def train(dataset, T_h: float, T_p: float, config: TrainConfig | None = None, seed: int = 0,
          sample_period: float = 1.0, dsrc_range: float = 300.0):
    """Fit a GRU encoder-decoder to ``dataset`` (a list of WindowPair).

    Returns ``(model, log)``; the model holds the weights of the epoch with
    the lowest validation RMSE.
    """
    if not dataset:
        raise ContractViolation("empty dataset")
    cfg = config or TrainConfig()
    rng = np.random.default_rng(seed)
    X, Y = stack_windows(dataset)
    tr, va, te = split_indices(dataset, cfg.train_fraction, cfg.val_fraction, rng)
    train_feats = np.concatenate([X[tr].reshape(-1, X.shape[-1])])
    norm = Normalizer.fit(train_feats)
    vmax = max(norm.maxs[0], float(Y[tr].max()))
    norm = Normalizer(norm.mins, np.concatenate([[vmax], norm.maxs[1:]]))
    model = init_model(X.shape[-1], cfg.hidden_dim, norm, T_h, T_p, seed=int(rng.integers(2**31)),
                       sample_period=sample_period, dsrc_range=dsrc_range)
    Xn = norm.normalize(X)
    Yn = norm.normalize_velocity(Y)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    tlog = TrainLog(split_sizes=(len(tr), len(va), len(te)))
    best = (np.inf, model.copy(), 0)
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = tr[rng.permutation(len(tr))]
        total, count = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            loss, grads = loss_and_grads(model.params, Xn[b], Yn[b])
            if not np.isfinite(loss):
                raise TrainingDivergence(epoch)
            opt.update(model.params, grads)
            total += loss * len(b)
            count += len(b)
        epoch_loss = total / count
        if not np.isfinite(epoch_loss):
            raise TrainingDivergence(epoch)
        val = evaluate_rmse(model, X[va], Y[va])
        tlog.train_loss.append(epoch_loss)
        tlog.val_rmse.append(val)
        log.info("epoch %d loss %.5f val_rmse %.4f", epoch, epoch_loss, val)
        if val < best[0]:
            best = (val, model.copy(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model = best[1]
    tlog.best_epoch = best[2]
    tlog.test_rmse = evaluate_rmse(model, X[te], Y[te])
    return model, tlog


def _flat_loss(model: GruEdModel, X, Y):
    out = forward(model.params, X, Y.shape[1])
    d = out - Y
    return float(np.mean(d * d))


def grad_check(model: GruEdModel, window, epsilon: float = 1e-5, analytic=None) -> float:
    """Largest relative difference between analytic and central-difference gradients.

    ``analytic`` may replace :func:`loss_and_grads` (used to inject faults in
    tests).  Relative error is ``|g_a - g_n| / max(|g_a| + |g_n|, 1e-8)``.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ContractViolation("epsilon must lie in [1e-7, 1e-4]")
    X = model.normalizer.normalize(np.asarray(window.history, dtype=float))[None]
    Y = model.normalizer.normalize_velocity(np.asarray(window.future, dtype=float))[None]
    _, grads = (analytic or loss_and_grads)(model.params, X, Y)
    probe = model.copy()
    worst = 0.0
    for key, arr in probe.params.items():
        flat = arr.reshape(-1)
        g = grads[key].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + epsilon
            lp = _flat_loss(probe, X, Y)
            flat[i] = old - epsilon
            lm = _flat_loss(probe, X, Y)
            flat[i] = old
            num = (lp - lm) / (2.0 * epsilon)
            err = abs(g[i] - num) / max(abs(g[i]) + abs(num), 1e-8)
            worst = max(worst, err)
    return worst
