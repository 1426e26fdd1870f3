"""GRU encoder-decoder in plain numpy with hand-written backpropagation through time.

Shapes follow the column-vector convention of the gate equations (``W`` is
``H x d``); batched code multiplies row vectors by the transposes.  The
decoder receives the encoder's final hidden state both as its initial
hidden state and as its input at every step, and an affine read-out maps
each decoder hidden state to a normalised velocity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractViolation, SchemaError
from .features import Normalizer
from .forecast import TargetForecast

SCHEMA_VERSION = 1
GATE_PARAMS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(eq=False)
class GruEdModel:
    input_dim: int
    hidden_dim: int
    params: dict
    normalizer: Normalizer
    T_h: float
    T_p: float
    sample_period: float = 1.0
    dsrc_range: float = 300.0

    def __post_init__(self):
        d, H = self.input_dim, self.hidden_dim
        expect = {"out_W": (1, H), "out_b": (1,)}
        for prefix, din in (("enc_", d), ("dec_", H)):
            for name in GATE_PARAMS:
                if name.startswith("W"):
                    expect[prefix + name] = (H, din)
                elif name.startswith("U"):
                    expect[prefix + name] = (H, H)
                else:
                    expect[prefix + name] = (H,)
        for key, shape in expect.items():
            if key not in self.params:
                raise ContractViolation(f"missing parameter {key}")
            arr = np.asarray(self.params[key], dtype=float)
            if arr.shape != shape:
                raise ContractViolation(f"{key} has shape {arr.shape}, expected {shape}")
            self.params[key] = arr
        if len(self.normalizer.mins) != d:
            raise ContractViolation("normalizer width does not match input_dim")

    @property
    def n_history(self) -> int:
        return int(round(self.T_h / self.sample_period))

    @property
    def n_future(self) -> int:
        return int(round(self.T_p / self.sample_period))

    def copy(self) -> "GruEdModel":
        return GruEdModel(self.input_dim, self.hidden_dim, {k: v.copy() for k, v in self.params.items()},
                          self.normalizer, self.T_h, self.T_p, self.sample_period, self.dsrc_range)

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def init_model(input_dim: int, hidden_dim: int, normalizer: Normalizer, T_h: float, T_p: float,
               seed: int, sample_period: float = 1.0, dsrc_range: float = 300.0) -> GruEdModel:
    """Uniform(+-sqrt(1/H)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    s = np.sqrt(1.0 / hidden_dim)
    params = {}
    for prefix, din in (("enc_", input_dim), ("dec_", hidden_dim)):
        for name in GATE_PARAMS:
            if name.startswith("W"):
                params[prefix + name] = rng.uniform(-s, s, (hidden_dim, din))
            elif name.startswith("U"):
                params[prefix + name] = rng.uniform(-s, s, (hidden_dim, hidden_dim))
            else:
                params[prefix + name] = np.zeros(hidden_dim)
    params["out_W"] = rng.uniform(-s, s, (1, hidden_dim))
    params["out_b"] = np.zeros(1)
    return GruEdModel(input_dim, hidden_dim, params, normalizer, T_h, T_p, sample_period, dsrc_range)


def gru_cell_step(weights: dict, x, h_prev, prefix: str = ""):
    """One GRU update for a single vector or a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    W_z = weights[prefix + "W_z"]
    if x.shape[-1] != W_z.shape[1] or h_prev.shape[-1] != W_z.shape[0]:
        raise ContractViolation(f"shape mismatch: x {x.shape}, h {h_prev.shape}, W_z {W_z.shape}")
    h, _ = _cell_forward(weights, prefix, x, h_prev)
    return h


def _cell_forward(p, prefix, x, h):
    z = sigmoid(x @ p[prefix + "W_z"].T + h @ p[prefix + "U_z"].T + p[prefix + "b_z"])
    r = sigmoid(x @ p[prefix + "W_r"].T + h @ p[prefix + "U_r"].T + p[prefix + "b_r"])
    rh = r * h
    n = np.tanh(x @ p[prefix + "W_h"].T + rh @ p[prefix + "U_h"].T + p[prefix + "b_h"])
    h_new = (1.0 - z) * h + z * n
    return h_new, (x, h, z, r, rh, n)


def _cell_backward(p, prefix, dh_new, cache, grads):
    x, h, z, r, rh, n = cache
    dz = dh_new * (n - h)
    dn = dh_new * z
    dh = dh_new * (1.0 - z)
    da_h = dn * (1.0 - n * n)
    grads[prefix + "W_h"] += da_h.T @ x
    grads[prefix + "U_h"] += da_h.T @ rh
    grads[prefix + "b_h"] += da_h.sum(axis=0)
    drh = da_h @ p[prefix + "U_h"]
    dr = drh * h
    dh += drh * r
    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)
    grads[prefix + "W_z"] += da_z.T @ x
    grads[prefix + "U_z"] += da_z.T @ h
    grads[prefix + "b_z"] += da_z.sum(axis=0)
    grads[prefix + "W_r"] += da_r.T @ x
    grads[prefix + "U_r"] += da_r.T @ h
    grads[prefix + "b_r"] += da_r.sum(axis=0)
    dh += da_z @ p[prefix + "U_z"] + da_r @ p[prefix + "U_r"]
    dx = da_h @ p[prefix + "W_h"] + da_z @ p[prefix + "W_z"] + da_r @ p[prefix + "W_r"]
    return dx, dh


def forward(params: dict, X: np.ndarray, n_future: int, keep_cache: bool = False):
    """Normalised inputs ``X`` (B, T_h, d) to normalised outputs (B, n_future)."""
    B, T, _ = X.shape
    H = params["enc_U_z"].shape[0]
    h = np.zeros((B, H))
    enc_caches = []
    for t in range(T):
        h, cache = _cell_forward(params, "enc_", X[:, t, :], h)
        if keep_cache:
            enc_caches.append(cache)
    context = h
    s = context
    out = np.empty((B, n_future))
    dec_caches, states = [], []
    for k in range(n_future):
        s, cache = _cell_forward(params, "dec_", context, s)
        out[:, k] = (s @ params["out_W"].T)[:, 0] + params["out_b"][0]
        if keep_cache:
            dec_caches.append(cache)
            states.append(s)
    if keep_cache:
        return out, (enc_caches, dec_caches, states)
    return out


def loss_and_grads(params: dict, X: np.ndarray, Y: np.ndarray):
    """Mean squared error over batch and horizon, and its exact gradient."""
    B, n_future = Y.shape
    out, (enc_caches, dec_caches, states) = forward(params, X, n_future, keep_cache=True)
    diff = out - Y
    loss = float(np.mean(diff * diff))
    dout = 2.0 * diff / diff.size
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    grads["out_b"][0] = dout.sum()
    d_context = np.zeros((B, params["enc_U_z"].shape[0]))
    ds = np.zeros_like(d_context)
    for k in reversed(range(n_future)):
        grads["out_W"] += dout[:, k:k + 1].T @ states[k]
        ds = ds + dout[:, k:k + 1] @ params["out_W"]
        dx, ds = _cell_backward(params, "dec_", ds, dec_caches[k], grads)
        d_context += dx
    dh = d_context + ds
    for t in reversed(range(len(enc_caches))):
        _, dh = _cell_backward(params, "enc_", dh, enc_caches[t], grads)
    return loss, grads


def predict_normalized(model: GruEdModel, X_norm: np.ndarray, n_future: int | None = None) -> np.ndarray:
    return forward(model.params, X_norm, n_future or model.n_future)


def predict_batch(model: GruEdModel, histories: np.ndarray, n_future: int | None = None) -> np.ndarray:
    """Raw (B, T_h, 3) histories to non-negative velocities (B, n_future) in m/s."""
    z = predict_normalized(model, model.normalizer.normalize(histories), n_future)
    return np.maximum(model.normalizer.denormalize_velocity(z), 0.0)


def predict(model: GruEdModel, history, T_p: float | None = None, start_time: float = 0.0) -> TargetForecast:
    history = np.asarray(history, dtype=float)
    if history.ndim != 2 or history.shape[0] != model.n_history or history.shape[1] != model.input_dim:
        raise ContractViolation(
            f"history shape {history.shape} does not match the model window ({model.n_history}, {model.input_dim})")
    n = model.n_future if T_p is None else int(round(T_p / model.sample_period))
    v = predict_batch(model, history[None, :, :], n)[0]
    return TargetForecast.from_velocities(start_time, v, model.sample_period)


# ------------------------------------------------------------------ file IO

def model_to_dict(model: GruEdModel) -> dict:
    return {
        "format": "gru-ed",
        "version": SCHEMA_VERSION,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "config": {"T_h": model.T_h, "T_p": model.T_p, "sample_period": model.sample_period,
                   "dsrc_range": model.dsrc_range},
        "normalization": {"features": ["v", "a", "d_tl"], "min": model.normalizer.mins.tolist(),
                          "max": model.normalizer.maxs.tolist()},
        "params": {k: {"shape": list(v.shape), "data": v.ravel(order="C").tolist()}
                   for k, v in sorted(model.params.items())},
    }


def model_from_dict(doc: dict, path=None) -> GruEdModel:
    if doc.get("format") != "gru-ed":
        raise SchemaError("not a gru-ed model document", path=path, field="format")
    if doc.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {doc.get('version')}", path=path, field="version")
    try:
        params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
        cfg = doc["config"]
        norm = Normalizer(doc["normalization"]["min"], doc["normalization"]["max"])
        return GruEdModel(int(doc["input_dim"]), int(doc["hidden_dim"]), params, norm,
                          float(cfg["T_h"]), float(cfg["T_p"]), float(cfg.get("sample_period", 1.0)),
                          float(cfg.get("dsrc_range", 300.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model document: {exc}", path=path) from exc


def save_model(model: GruEdModel, file_path) -> None:
    Path(file_path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(file_path) -> GruEdModel:
    from ..route_world import load_json
    return model_from_dict(load_json(file_path), path=file_path)
