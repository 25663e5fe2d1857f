"""From-scratch LSTM + dropout + dense sigmoid classifier.

Single LSTM layer read out at the last unmasked step, inverted dropout
on that state, one dense unit with sigmoid. Training is full
backpropagation through time with binary cross-entropy and Adam, all in
binary64 and fully deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    ModelFormatError,
    TrainingDivergedError,
    VulnhoundError,
)

BCE_CLAMP = 1e-12

GATE_NAMES = ("i", "f", "o", "g")
TENSOR_ORDER = (
    "W_i", "U_i", "b_i",
    "W_f", "U_f", "b_f",
    "W_o", "U_o", "b_o",
    "W_g", "U_g", "b_g",
    "w", "b",
)

MODEL_MAGIC = b"VLSM"
MODEL_VERSION = 1


@dataclass
class LstmParams:
    W_i: np.ndarray
    U_i: np.ndarray
    b_i: np.ndarray
    W_f: np.ndarray
    U_f: np.ndarray
    b_f: np.ndarray
    W_o: np.ndarray
    U_o: np.ndarray
    b_o: np.ndarray
    W_g: np.ndarray
    U_g: np.ndarray
    b_g: np.ndarray
    w: np.ndarray  # dense weights (hidden,)
    b: np.ndarray  # dense bias, shape ()

    @property
    def dim(self) -> int:
        return self.W_i.shape[1]

    @property
    def hidden(self) -> int:
        return self.W_i.shape[0]

    def tensors(self):
        for name in TENSOR_ORDER:
            yield name, getattr(self, name)

    def copy(self) -> "LstmParams":
        return LstmParams(**{name: t.copy() for name, t in self.tensors()})

    def check_finite(self) -> None:
        for name, t in self.tensors():
            if not np.all(np.isfinite(t)):
                raise VulnhoundError(f"non-finite values in parameter {name}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    hidden: int = 100
    dropout_rate: float = 0.20
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5
    seed: int = 0
    patience: int | None = None  # early stop on validation F1, off by default

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("epochs must be >= 0; batch_size, hidden >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainReport:
    params: LstmParams
    epoch_losses: list[float] = field(default_factory=list)
    validation_metrics: list[dict] = field(default_factory=list)
    wall_time: float = 0.0


def init_params(dim: int, hidden: int, rng: np.random.Generator) -> LstmParams:
    """Uniform(-0.08, 0.08) weights with forget-gate bias offset +1."""
    def u(*shape):
        return rng.uniform(-0.08, 0.08, shape)

    kwargs = {}
    for gate in GATE_NAMES:
        kwargs[f"W_{gate}"] = u(hidden, dim)
        kwargs[f"U_{gate}"] = u(hidden, hidden)
        kwargs[f"b_{gate}"] = np.zeros(hidden)
    kwargs["b_f"] = kwargs["b_f"] + 1.0
    kwargs["w"] = u(hidden)
    kwargs["b"] = np.zeros(())
    return LstmParams(**kwargs)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _check_batch(params: LstmParams, X: np.ndarray, mask: np.ndarray) -> None:
    if X.ndim != 3 or mask.shape != X.shape[:2]:
        raise VulnhoundError(f"bad input shapes X{X.shape}, mask{mask.shape}")
    if X.shape[2] != params.dim:
        raise DimensionMismatchError(
            f"input dim {X.shape[2]} != model dim {params.dim}"
        )
    if not np.all(np.isfinite(X)):
        raise VulnhoundError("non-finite values in input vectors")
    if not mask.any(axis=1).all():
        raise VulnhoundError("every sequence needs at least one unmasked step")


def forward_batch(
    params: LstmParams,
    X: np.ndarray,  # (B, T, dim) float64
    mask: np.ndarray,  # (B, T) bool; padded positions False
    dropout_mask: np.ndarray | None = None,  # (B, hidden), inverted-dropout scale
    want_cache: bool = False,
):
    """Probabilities for a batch; padded steps leave the state untouched."""
    _check_batch(params, X, mask)
    B, T, _ = X.shape
    H = params.hidden
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(T):
        x = X[:, t]
        m = mask[:, t][:, None]
        a_i = x @ params.W_i.T + h @ params.U_i.T + params.b_i
        a_f = x @ params.W_f.T + h @ params.U_f.T + params.b_f
        a_o = x @ params.W_o.T + h @ params.U_o.T + params.b_o
        a_g = x @ params.W_g.T + h @ params.U_g.T + params.b_g
        gi = _sigmoid(a_i)
        gf = _sigmoid(a_f)
        go = _sigmoid(a_o)
        gg = np.tanh(a_g)
        c_new = gf * c + gi * gg
        tanh_c = np.tanh(c_new)
        h_new = go * tanh_c
        if want_cache:
            steps.append((x, m, gi, gf, go, gg, c, h, c_new, tanh_c))
        c = np.where(m, c_new, c)
        h = np.where(m, h_new, h)
    h_final = h
    h_dropped = h_final if dropout_mask is None else h_final * dropout_mask
    z = h_dropped @ params.w + params.b
    y = _sigmoid(z)
    if want_cache:
        return y, {"steps": steps, "h_final": h_final, "h_dropped": h_dropped}
    return y


def forward(
    params: LstmParams, x: np.ndarray, mask: np.ndarray | None = None
) -> float:
    """Single-sequence probability; x is (T, dim)."""
    x = np.asarray(x, dtype=np.float64)
    if mask is None:
        mask = np.ones(x.shape[0], dtype=bool)
    y = forward_batch(params, x[None], np.asarray(mask, dtype=bool)[None])
    return float(y[0])


def bce_loss(y: float | np.ndarray, label: float | np.ndarray) -> float:
    """Binary cross-entropy with probability clamped away from {0, 1}."""
    y = np.clip(np.asarray(y, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    label = np.asarray(label, dtype=np.float64)
    return float(np.mean(-(label * np.log(y) + (1 - label) * np.log1p(-y))))


def backward(
    params: LstmParams,
    X: np.ndarray,
    mask: np.ndarray,
    labels: np.ndarray,
    dropout_mask: np.ndarray | None = None,
) -> tuple[float, LstmParams]:
    """Mean BCE over the batch and its gradient for every tensor.

    Dropout reuses the supplied mask from the matching forward pass
    (inverted dropout: entries are 0 or 1/(1-rate)).
    """
    y, cache = forward_batch(params, X, mask, dropout_mask, want_cache=True)
    labels = np.asarray(labels, dtype=np.float64)
    loss = bce_loss(y, labels)

    B, T, _ = X.shape
    grads = {name: np.zeros_like(t) for name, t in params.tensors()}
    dz = (y - labels) / B  # BCE + sigmoid
    grads["b"] = np.asarray(dz.sum())
    grads["w"] = dz @ cache["h_dropped"]
    dh = dz[:, None] * params.w[None, :]
    if dropout_mask is not None:
        dh = dh * dropout_mask
    dc = np.zeros_like(dh)

    U = {g: getattr(params, f"U_{g}") for g in GATE_NAMES}
    for t in range(T - 1, -1, -1):
        x, m, gi, gf, go, gg, c_prev, h_prev, _c_new, tanh_c = cache["steps"][t]
        dh_eff = np.where(m, dh, 0.0)
        dh_pass = np.where(m, 0.0, dh)
        dc_eff = np.where(m, dc, 0.0)
        dc_pass = np.where(m, 0.0, dc)

        do = dh_eff * tanh_c
        dc_new = dh_eff * go * (1.0 - tanh_c**2) + dc_eff
        da = {
            "i": dc_new * gg * gi * (1.0 - gi),
            "f": dc_new * c_prev * gf * (1.0 - gf),
            "o": do * go * (1.0 - go),
            "g": dc_new * gi * (1.0 - gg**2),
        }
        dh = dh_pass
        for gate in GATE_NAMES:
            grads[f"W_{gate}"] += da[gate].T @ x
            grads[f"U_{gate}"] += da[gate].T @ h_prev
            grads[f"b_{gate}"] += da[gate].sum(axis=0)
            dh = dh + da[gate] @ U[gate]
        dc = dc_pass + dc_new * gf
    grad_params = LstmParams(**grads)
    for name, g in grad_params.tensors():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in {name}")
    return loss, grad_params


def predict(
    params: LstmParams,
    x: np.ndarray,
    mask: np.ndarray | None = None,
    threshold: float = 0.5,
) -> tuple[float, bool]:
    """(probability, verdict); verdict is positive at exactly the threshold."""
    prob = forward(params, x, mask)
    return prob, prob >= threshold


def predict_batch(
    params: LstmParams, X: np.ndarray, mask: np.ndarray, threshold: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    probs = forward_batch(params, X, mask)
    return probs, probs >= threshold


# -- training -----------------------------------------------------------------

class _Adam:
    def __init__(self, params: LstmParams, config: TrainConfig):
        self.m = {name: np.zeros_like(t) for name, t in params.tensors()}
        self.v = {name: np.zeros_like(t) for name, t in params.tensors()}
        self.t = 0
        self.cfg = config

    def step(self, params: LstmParams, grads: LstmParams) -> None:
        self.t += 1
        cfg = self.cfg
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, g in grads.tensors():
            self.m[name] = cfg.beta1 * self.m[name] + (1 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1 - cfg.beta2) * g**2
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + cfg.adam_eps)
            setattr(params, name, getattr(params, name) - cfg.learning_rate * update)


def batch_arrays(
    vector_seqs: Sequence[np.ndarray], full_len: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length (T, dim) sequences into padded (B, T, dim) + mask."""
    if not vector_seqs:
        raise VulnhoundError("empty batch")
    dim = vector_seqs[0].shape[1]
    T = full_len or max(len(s) for s in vector_seqs)
    B = len(vector_seqs)
    X = np.zeros((B, T, dim))
    mask = np.zeros((B, T), dtype=bool)
    for k, seq in enumerate(vector_seqs):
        X[k, : len(seq)] = seq
        mask[k, : len(seq)] = True
    return X, mask


def train(
    X: np.ndarray,
    mask: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    validation: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> TrainReport:
    """Train on pre-batched arrays; deterministic for a fixed seed.

    validation, when given, is (X, mask, labels) scored each epoch with
    threshold verdicts and confusion-matrix metrics.
    """
    from . import evalkit

    t0 = time.monotonic()
    n = X.shape[0]
    if n == 0:
        raise VulnhoundError("empty training set")
    rng = np.random.default_rng(config.seed)
    params = init_params(X.shape[2], config.hidden, rng)
    optimizer = _Adam(params, config)
    report = TrainReport(params=params)
    best_f1 = -1.0
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            bX, bmask, blab = X[idx], mask[idx], labels[idx]
            dropout_mask = None
            if config.dropout_rate > 0:
                keep = rng.random((len(idx), config.hidden)) >= config.dropout_rate
                dropout_mask = keep / (1.0 - config.dropout_rate)
            loss, grads = backward(params, bX, bmask, blab, dropout_mask)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}"
                )
            optimizer.step(params, grads)
            losses.append(loss)
        report.epoch_losses.append(float(np.mean(losses)))
        if validation is not None and len(validation[2]) > 0:
            vX, vmask, vlab = validation
            _, verdicts = predict_batch(params, vX, vmask, config.threshold)
            metrics = evalkit.compute_metrics(
                evalkit.score_windows(verdicts.tolist(), vlab.tolist())
            )
            report.validation_metrics.append(
                {
                    "epoch": epoch,
                    "accuracy": metrics.accuracy,
                    "precision": metrics.precision,
                    "recall": metrics.recall,
                    "f1": metrics.f1,
                }
            )
            if config.patience is not None:
                f1 = metrics.f1 if metrics.f1 is not None else 0.0
                if f1 > best_f1:
                    best_f1, stale = f1, 0
                else:
                    stale += 1
                    if stale > config.patience:
                        break
    report.params = params
    report.wall_time = time.monotonic() - t0
    return report


# -- model container ----------------------------------------------------------

def save_model(
    params: LstmParams,
    path: str | Path,
    threshold: float = 0.5,
    metadata: dict | None = None,
) -> None:
    """Write the VLSM container; metadata (window spec, provider, seed)
    rides in a JSON block after the tensor section."""
    params.check_finite()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<III", MODEL_VERSION, params.dim, params.hidden))
        fh.write(struct.pack("<d", threshold))
        for _, tensor in params.tensors():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
        meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def _tensor_shapes(dim: int, hidden: int):
    for name in TENSOR_ORDER:
        if name == "w":
            yield name, (hidden,)
        elif name == "b":
            yield name, ()
        elif name.startswith("W"):
            yield name, (hidden, dim)
        elif name.startswith("U"):
            yield name, (hidden, hidden)
        else:
            yield name, (hidden,)


def load_model(path: str | Path) -> tuple[LstmParams, float, dict]:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"bad model magic {data[:4]!r}")
    version, dim, hidden = struct.unpack("<III", data[4:16])
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    (threshold,) = struct.unpack("<d", data[16:24])
    pos = 24
    tensors = {}
    for name, shape in _tensor_shapes(dim, hidden):
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(data):
            raise ModelFormatError(f"model file truncated in tensor {name}")
        arr = np.frombuffer(data[pos:end], dtype="<f8").reshape(shape).copy()
        tensors[name] = arr if shape else arr.reshape(())
        pos = end
    if pos + 4 > len(data):
        raise ModelFormatError("model file truncated before metadata")
    (meta_len,) = struct.unpack("<I", data[pos : pos + 4])
    pos += 4
    if pos + meta_len > len(data):
        raise ModelFormatError("model file truncated inside metadata")
    metadata = json.loads(data[pos : pos + meta_len].decode("utf-8"))
    params = LstmParams(**tensors)
    params.check_finite()
    return params, threshold, metadata
