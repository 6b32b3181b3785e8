"""From-scratch feedforward classifier: featurization, forward/backward
passes, Adam updates, and a seeded training loop.

The network is a stack of ReLU hidden layers with inverted dropout and a
softmax cross-entropy head, trained with standard bias-corrected Adam.
Everything is plain numpy; a fixed seed reproduces the final weights
bit for bit.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .kinematics import Event, ObjectKind

log = logging.getLogger(__name__)


class FfnError(ValueError):
    pass


# --- featurization ---------------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    """Fixed-length feature layout for an event.

    ``complex`` mode: leading lepton (pT, eta, phi, is_electron, is_muon),
    up to ``max_jets`` jets (pT, eta, phi, is_btagged) in descending pT,
    then (MET, MET phi).  ``dimuon`` mode: the two leading muons'
    (pT, eta, phi).  Absent slots take ``default_fill``.
    """

    mode: str = "complex"
    max_jets: int = 4
    default_fill: float = 0.0

    def __post_init__(self):
        if self.mode not in ("complex", "dimuon"):
            raise FfnError(f"unknown feature mode {self.mode!r}")
        if self.max_jets < 0:
            raise FfnError("max_jets must be >= 0")

    def feature_names(self) -> list[str]:
        if self.mode == "dimuon":
            return ["mu1_pt", "mu1_eta", "mu1_phi",
                    "mu2_pt", "mu2_eta", "mu2_phi"]
        names = ["lep_pt", "lep_eta", "lep_phi", "lep_is_electron",
                 "lep_is_muon"]
        for j in range(self.max_jets):
            names += [f"jet{j}_pt", f"jet{j}_eta", f"jet{j}_phi",
                      f"jet{j}_btag"]
        names += ["met", "met_phi"]
        return names

    @property
    def input_dim(self) -> int:
        return len(self.feature_names())

    def to_dict(self) -> dict:
        return {"mode": self.mode, "max_jets": self.max_jets,
                "default_fill": self.default_fill}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(**d)


def featurize(event: Event, spec: FeatureSpec) -> np.ndarray:
    fill = spec.default_fill
    out = np.full(spec.input_dim, fill, dtype=np.float64)
    if spec.mode == "dimuon":
        muons = sorted((o for o in event.objects
                        if o.kind is ObjectKind.MUON), key=lambda o: -o.pt)
        for slot, mu in enumerate(muons[:2]):
            out[3 * slot:3 * slot + 3] = (mu.pt, mu.eta, mu.phi)
        return out
    leptons = sorted(event.leptons(), key=lambda o: -o.pt)
    if leptons:
        lep = leptons[0]
        out[0:3] = (lep.pt, lep.eta, lep.phi)
        out[3] = 1.0 if lep.kind is ObjectKind.ELECTRON else 0.0
        out[4] = 1.0 if lep.kind is ObjectKind.MUON else 0.0
    jets = sorted(event.jets(), key=lambda o: -o.pt)
    if len(jets) > spec.max_jets:
        log.warning("event %s: %d jets, keeping the %d leading",
                    event.id, len(jets), spec.max_jets)
        jets = jets[:spec.max_jets]
    for j, jet in enumerate(jets):
        base = 5 + 4 * j
        out[base:base + 3] = (jet.pt, jet.eta, jet.phi)
        out[base + 3] = 1.0 if jet.kind is ObjectKind.BJET else 0.0
    if event.met is not None:
        out[-2] = event.met.pt
        out[-1] = event.met.phi
    return out


def featurize_events(events, spec: FeatureSpec) -> np.ndarray:
    return np.stack([featurize(ev, spec) for ev in events])


# --- model -----------------------------------------------------------------

@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    n_classes: int
    hidden_layers: int = 5
    hidden_units: int = 500
    dropout_rate: float = 0.5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 40
    seed: int = 0
    standardize: bool = True
    early_stop_val_acc: Optional[float] = None

    def __post_init__(self):
        if self.input_dim <= 0 or self.n_classes <= 0:
            raise FfnError("input_dim and n_classes must be positive")
        if self.hidden_layers < 0 or self.hidden_units <= 0:
            raise FfnError("bad hidden layer configuration")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise FfnError("dropout_rate must be in [0, 1)")

    @property
    def layer_dims(self) -> list[int]:
        return ([self.input_dim]
                + [self.hidden_units] * self.hidden_layers
                + [self.n_classes])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(**d)


@dataclass
class MlpModel:
    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None


def init_model(config: MlpConfig) -> MlpModel:
    """Seeded scaled-uniform fan-in initialization, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))
    dims = config.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        config=config,
        weights=weights,
        biases=biases,
        m_w=[np.zeros_like(w) for w in weights],
        v_w=[np.zeros_like(w) for w in weights],
        m_b=[np.zeros_like(b) for b in biases],
        v_b=[np.zeros_like(b) for b in biases],
        feature_mean=np.zeros(config.input_dim),
        feature_std=np.ones(config.input_dim),
    )


@dataclass
class ForwardCache:
    layer_inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    dropout_masks: list[Optional[np.ndarray]]
    logits: np.ndarray
    mode: str
    model_step: int


def forward(model: MlpModel, batch: np.ndarray, mode: str = "infer",
            rng: Optional[np.random.Generator] = None
            ) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass; in train mode dropout masks come from ``rng`` and are
    inverted-scaled by 1/(1-p) so inference needs no mask."""
    if mode not in ("train", "infer"):
        raise FfnError(f"mode must be 'train' or 'infer', got {mode!r}")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.config.input_dim:
        raise FfnError(f"batch shape {batch.shape} does not match "
                       f"input_dim {model.config.input_dim}")
    p = model.config.dropout_rate
    if mode == "train" and p > 0.0 and rng is None:
        raise FfnError("train-mode forward with dropout needs an rng")
    a = (batch - model.feature_mean) / model.feature_std
    layer_inputs = [a]
    pre_activations: list[np.ndarray] = []
    dropout_masks: list[Optional[np.ndarray]] = []
    n_hidden = model.config.hidden_layers
    for i in range(n_hidden):
        z = a @ model.weights[i] + model.biases[i]
        h = np.maximum(z, 0.0)
        mask = None
        if mode == "train" and p > 0.0:
            mask = rng.random(h.shape) >= p
            h = h * mask / (1.0 - p)
        pre_activations.append(z)
        dropout_masks.append(mask)
        a = h
        layer_inputs.append(a)
    logits = a @ model.weights[n_hidden] + model.biases[n_hidden]
    cache = ForwardCache(layer_inputs=layer_inputs,
                         pre_activations=pre_activations,
                         dropout_masks=dropout_masks, logits=logits,
                         mode=mode, model_step=model.step)
    return logits, cache


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_softmax_xent(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy with max-subtraction stabilization."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise FfnError("labels out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(log_z - picked))


@dataclass
class Gradients:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]


def backward(model: MlpModel, cache: ForwardCache,
             labels: np.ndarray) -> Gradients:
    """Gradient of the mean cross-entropy w.r.t. every weight and bias."""
    if cache.model_step != model.step:
        raise FfnError("stale forward cache: model was updated since")
    labels = np.asarray(labels)
    n = len(labels)
    probs = softmax(cache.logits)
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    n_layers = len(model.weights)
    d_weights: list[np.ndarray] = [None] * n_layers  # type: ignore
    d_biases: list[np.ndarray] = [None] * n_layers   # type: ignore
    p = model.config.dropout_rate
    for i in reversed(range(n_layers)):
        d_weights[i] = cache.layer_inputs[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ model.weights[i].T
        mask = cache.dropout_masks[i - 1]
        if mask is not None:
            delta = delta * mask / (1.0 - p)
        delta = delta * (cache.pre_activations[i - 1] > 0.0)
    return Gradients(d_weights=d_weights, d_biases=d_biases)


def adam_step(model: MlpModel, grads: Gradients) -> MlpModel:
    """One bias-corrected Adam update, in place; increments the step counter."""
    cfg = model.config
    t = model.step + 1
    bias1 = 1.0 - cfg.beta1 ** t
    bias2 = 1.0 - cfg.beta2 ** t
    params = list(zip(model.weights, grads.d_weights, model.m_w, model.v_w)) \
        + list(zip(model.biases, grads.d_biases, model.m_b, model.v_b))
    for param, grad, m, v in params:
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        param -= cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2)
                                                    + cfg.epsilon)
    model.step = t
    return model


# --- training --------------------------------------------------------------

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def evaluate(model: MlpModel, x: np.ndarray, y: np.ndarray
             ) -> tuple[float, float]:
    logits, _ = forward(model, x, mode="infer")
    loss = loss_softmax_xent(logits, y)
    acc = float(np.mean(logits.argmax(axis=1) == y))
    return loss, acc


def predict(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logits, _ = forward(model, x, mode="infer")
    probs = softmax(logits)
    return probs.argmax(axis=1), probs


def train(train_x: np.ndarray, train_y: np.ndarray, val_x: np.ndarray,
          val_y: np.ndarray, config: MlpConfig) -> tuple[MlpModel,
                                                         list[EpochStats]]:
    """Seeded training loop; returns the model and per-epoch history.

    Train loss/accuracy are batch-weighted running values from the
    training passes; validation metrics come from a clean inference pass
    after each epoch.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    val_y = np.asarray(val_y)
    if len(train_x) == 0 or len(val_x) == 0:
        raise FfnError("train and val splits must be non-empty")
    model = init_model(config)
    if config.standardize:
        mean = train_x.mean(axis=0)
        std = train_x.std(axis=0)
        std[std < 1e-8] = 1.0
        model.feature_mean = mean
        model.feature_std = std
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, 1)))
    dropout_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, 2)))
    n = len(train_x)
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        total_correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            logits, cache = forward(model, xb, mode="train", rng=dropout_rng)
            total_loss += loss_softmax_xent(logits, yb) * len(idx)
            total_correct += int(np.sum(logits.argmax(axis=1) == yb))
            grads = backward(model, cache, yb)
            adam_step(model, grads)
        val_loss, val_acc = evaluate(model, val_x, val_y)
        history.append(EpochStats(
            epoch=epoch,
            train_loss=total_loss / n,
            train_acc=total_correct / n,
            val_loss=val_loss,
            val_acc=val_acc,
        ))
        if config.early_stop_val_acc is not None \
                and val_acc >= config.early_stop_val_acc:
            break
    return model, history


def history_to_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    for row in history:
        lines.append(f"{row.epoch},{row.train_loss:.10g},{row.train_acc:.10g},"
                     f"{row.val_loss:.10g},{row.val_acc:.10g}")
    return "\n".join(lines) + "\n"


# --- serialization ---------------------------------------------------------

_MODEL_MAGIC = b"CSMLP001"


def _model_arrays(model: MlpModel) -> list[tuple[str, np.ndarray]]:
    arrays = [("feature_mean", model.feature_mean),
              ("feature_std", model.feature_std)]
    for group, items in (("w", model.weights), ("b", model.biases),
                         ("mw", model.m_w), ("vw", model.v_w),
                         ("mb", model.m_b), ("vb", model.v_b)):
        arrays += [(f"{group}{i}", arr) for i, arr in enumerate(items)]
    return arrays


def save_model(model: MlpModel, path: Path) -> None:
    """Versioned binary: magic, JSON header, then raw little-endian float64."""
    arrays = _model_arrays(model)
    header = {
        "config": model.config.to_dict(),
        "step": model.step,
        "arrays": [{"name": name, "shape": list(arr.shape)}
                   for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: Path) -> MlpModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MODEL_MAGIC))
        if magic != _MODEL_MAGIC:
            raise FfnError(f"{path}: not a model file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len))
        config = MlpConfig.from_dict(header["config"])
        loaded: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            loaded[spec["name"]] = data.reshape(shape).copy()
    n_layers = config.hidden_layers + 1
    model = MlpModel(
        config=config,
        weights=[loaded[f"w{i}"] for i in range(n_layers)],
        biases=[loaded[f"b{i}"] for i in range(n_layers)],
        m_w=[loaded[f"mw{i}"] for i in range(n_layers)],
        v_w=[loaded[f"vw{i}"] for i in range(n_layers)],
        m_b=[loaded[f"mb{i}"] for i in range(n_layers)],
        v_b=[loaded[f"vb{i}"] for i in range(n_layers)],
        step=header["step"],
        feature_mean=loaded["feature_mean"],
        feature_std=loaded["feature_std"],
    )
    return model
