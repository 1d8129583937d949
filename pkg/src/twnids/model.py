"""TWNet models: trainable activations feeding protocol-routed sub-networks.

Each input column passes through its own activation. The activated vector
then goes to one of three parallel sub-networks (TCP, UDP, OTHER) chosen
by the flow's protocol; each sub-network is zero or two ReLU layers plus a
linear classifier. Routing rows to their branch is the same as evaluating
all three branches and multiplying each by its one-hot mask bit, except
that inactive branches never touch the sample at all.

Everything is plain numpy in float64 with hand-written gradients, trained
with AdamW under mean cross-entropy.
"""

from __future__ import annotations

import io
import json
import logging
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import activations as act
from .errors import CheckpointError, ConfigError
from .features import N_FEATURES, ZERO_LENGTH_FLAG, FeatureSet, check_input_ids, select_matrix

logger = logging.getLogger(__name__)

BRANCHES = ("tcp", "udp", "other")
CHECKPOINT_FORMAT = "twnids-checkpoint"
CHECKPOINT_VERSION = 1
DEFAULT_LR = 5e-4
DEFAULT_WEIGHT_DECAY = 1e-5
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8
DEFAULT_BATCH_SIZE = 512

_ACTIVATION_KINDS = ("none", "step", "peak", "erf_scale", "erf_shift")


@dataclass(frozen=True)
class InputSlot:
    feature: int | str
    activation: str = "none"
    n: int = 1

    def __post_init__(self) -> None:
        check_input_ids([self.feature])
        if self.activation not in _ACTIVATION_KINDS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.n < 1 or (self.activation not in ("step", "peak") and self.n != 1):
            raise ConfigError(f"activation {self.activation!r} cannot have n={self.n}")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    inputs: tuple[InputSlot, ...]
    hidden: tuple[int, ...] = ()
    n_classes: int = 6
    protocol_masked: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.inputs:
            raise ConfigError("model needs at least one input")
        if len(self.hidden) not in (0, 2) or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must be empty or two positive ints, got {self.hidden}")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")

    @property
    def input_ids(self) -> tuple:
        return tuple(s.feature for s in self.inputs)

    @property
    def branches(self) -> tuple[str, ...]:
        return BRANCHES if self.protocol_masked else ("all",)

    @property
    def label(self) -> str:
        sizes = ",".join(map(str, self.hidden)) if self.hidden else "0"
        return f"{self.name}{{{sizes}}}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inputs"] = [asdict(s) for s in self.inputs]
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            name=d["name"],
            inputs=tuple(InputSlot(**s) for s in d["inputs"]),
            hidden=tuple(d.get("hidden", ())),
            n_classes=int(d.get("n_classes", 6)),
            protocol_masked=bool(d.get("protocol_masked", True)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ModelSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _slots(ids: Sequence, activation: str = "none", n: int = 1) -> list[InputSlot]:
    return [InputSlot(i, activation, n) for i in ids]


_R_13_20 = list(range(13, 21))

# Table of the five studied layouts: inputs and default hidden sizes.
_TWNETS: dict[str, tuple[list[InputSlot], tuple[int, ...]]] = {
    "TWNet1": (
        _slots([1, 3, 5, 13, 15], "erf_scale") + _slots([2, ZERO_LENGTH_FLAG]),
        (16, 32),
    ),
    "TWNet2": (
        _slots([1, 3, 5, 13, 15], "erf_scale")
        + _slots([6, 7, 8, 9], "erf_shift") * 2
        + _slots([12, 1]),
        (16, 32),
    ),
    "TWNet3": (
        _slots([1], "step", 3) + _slots([3, 5] + _R_13_20, "step") + _slots(range(6, 12), "step", 2) + _slots([12]),
        (32, 32),
    ),
    "TWNet4": (
        _slots([1], "step", 3) + _slots([3, 5] + _R_13_20, "step") + _slots(range(6, 12), "peak", 2) + _slots([12]),
        (32, 16),
    ),
    "TWNet5": (
        _slots([1], "step", 3)
        + _slots([2, 3, 4, 5] + _R_13_20, "step")
        + _slots(range(6, 12), "peak", 3)
        + _slots([12]),
        (32, 16),
    ),
}
TWNET_NAMES = tuple(_TWNETS)


def twnet_spec(name: str, hidden: Sequence[int] | None = None, n_classes: int = 6) -> ModelSpec:
    """One of the predefined layouts; ``hidden=()`` gives the classifier-only variant."""
    if name not in _TWNETS:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(TWNET_NAMES)}")
    inputs, default_hidden = _TWNETS[name]
    return ModelSpec(name, tuple(inputs), tuple(default_hidden if hidden is None else hidden), n_classes)


def parse_hidden(text: str) -> tuple[int, ...]:
    """``"32,16"`` -> (32, 16); ``"0"`` or ``""`` -> ()."""
    text = text.strip().strip("{}")
    if text in ("", "0"):
        return ()
    return tuple(int(p) for p in text.split(","))


def _init_activation(slot: InputSlot, column: np.ndarray | None, copy_index: int, copies: int) -> act.Activation:
    kind, n = slot.activation, slot.n
    if kind == "none":
        return act.Identity()
    if column is None:
        if kind == "step":
            return act.StepLadder(np.ones(n), np.arange(n, dtype=float))
        if kind == "peak":
            return act.PeakSum(np.ones(n), np.arange(n, dtype=float))
        if kind == "erf_scale":
            return act.ErfScale(np.ones(1))
        return act.ErfShift(np.zeros(1))
    if kind in ("step", "peak"):
        return act.init_from_data(column, kind, n)
    if kind == "erf_scale":
        positive = column[column > 0]
        scale = float(np.median(positive)) if positive.size else 1.0
        return act.ErfScale(np.array([1.0 / scale if scale > 0 else 1.0]))
    # repeated erf_shift inputs spread over distinct quantiles; a single one sits at the median
    return act.ErfShift(np.array([np.quantile(column, (copy_index + 1) / (copies + 1))]))


class TWNet:
    """A built model: activation parameters, branch weights and optimizer state."""

    def __init__(self, spec: ModelSpec, activations: list[act.Activation], layers: dict[str, list[list[np.ndarray]]]):
        self.spec = spec
        self.activations = activations
        self.layers = layers  # branch -> [[W, b], ...], classifier last
        self.optimizer: AdamW | None = None

    # ---- construction -------------------------------------------------

    @classmethod
    def build(cls, spec: ModelSpec, seed: int = 0, init_data: np.ndarray | FeatureSet | None = None) -> "TWNet":
        """Initialize weights (fan-in scaled uniform) and activations.

        ``init_data`` is an (N, 20) feature matrix; when given, activation
        knots are placed on its per-feature distribution.
        """
        if isinstance(init_data, FeatureSet):
            init_data = init_data.features
        inputs = None
        if init_data is not None and len(init_data):
            inputs = select_matrix(np.asarray(init_data, dtype=np.float64), spec.input_ids)
        seen: dict = {}
        totals: dict = {}
        for s in spec.inputs:
            totals[(s.feature, s.activation)] = totals.get((s.feature, s.activation), 0) + 1
        activations = []
        for j, slot in enumerate(spec.inputs):
            key = (slot.feature, slot.activation)
            copy_index = seen.get(key, 0)
            seen[key] = copy_index + 1
            column = inputs[:, j] if inputs is not None else None
            activations.append(_init_activation(slot, column, copy_index, totals[key]))

        rng = np.random.default_rng(seed)
        sizes = [len(spec.inputs), *spec.hidden, spec.n_classes]
        layers = {}
        for branch in spec.branches:
            branch_layers = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                bound = 1.0 / math.sqrt(fan_in)
                W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                b = rng.uniform(-bound, bound, size=fan_out)
                branch_layers.append([W, b])
            layers[branch] = branch_layers
        return cls(spec, activations, layers)

    def parameters(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array, in a fixed order."""
        out: dict[str, np.ndarray] = {}
        for j, a in enumerate(self.activations):
            for name, arr in a.arrays().items():
                out[f"act{j}.{name}"] = arr
        for branch, layers in self.layers.items():
            for i, (W, b) in enumerate(layers):
                out[f"{branch}.W{i}"] = W
                out[f"{branch}.b{i}"] = b
        return out

    def localized_names(self) -> set[str]:
        """Activation parameters subject to one-unit-at-a-time updates."""
        return {
            f"act{j}.{name}"
            for j, a in enumerate(self.activations)
            if a.n > 1
            for name in a.params
        }

    def activation_names(self) -> set[str]:
        return {f"act{j}.{name}" for j, a in enumerate(self.activations) for name in a.params}

    def constrain(self) -> None:
        for a in self.activations:
            a.constrain()

    def copy(self) -> "TWNet":
        clone = TWNet.build(self.spec, 0)
        clone.load_arrays({k: v.copy() for k, v in self.parameters().items()})
        if self.optimizer is not None:
            clone.optimizer = self.optimizer.copy()
        return clone

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Replace parameters by name; activation shapes may change, layer shapes may not."""
        for j, a in enumerate(self.activations):
            for name in a.params:
                key = f"act{j}.{name}"
                if key not in arrays:
                    raise CheckpointError(f"missing parameter {key}")
                setattr(a, name, np.array(arrays[key], dtype=np.float64).reshape(-1))
        for branch, layers in self.layers.items():
            for i, pair in enumerate(layers):
                for slot, tag in ((0, "W"), (1, "b")):
                    key = f"{branch}.{tag}{i}"
                    if key not in arrays:
                        raise CheckpointError(f"missing parameter {key}")
                    value = np.array(arrays[key], dtype=np.float64)
                    if value.shape != pair[slot].shape:
                        raise CheckpointError(f"{key}: shape {value.shape} != expected {pair[slot].shape}")
                    pair[slot] = value

    # ---- forward / backward ---------------------------------------------

    def _inputs(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != N_FEATURES:
            raise ValueError(f"expected an (N, {N_FEATURES}) feature matrix, got shape {features.shape}")
        return select_matrix(features, self.spec.input_ids)

    def _routes(self, protocol: np.ndarray, n: int) -> list[tuple[str, np.ndarray]]:
        protocol = np.asarray(protocol)
        if protocol.ndim == 2:
            if protocol.shape[1] != 3:
                raise ValueError("protocol mask must have three columns")
            protocol = protocol.argmax(axis=1)
        if protocol.shape != (n,):
            raise ValueError("need one protocol entry per sample")
        if not self.spec.protocol_masked:
            return [("all", np.arange(n))]
        return [(b, np.flatnonzero(protocol == i)) for i, b in enumerate(BRANCHES)]

    def _activate(self, inputs: np.ndarray) -> np.ndarray:
        out = np.empty_like(inputs)
        for j, a in enumerate(self.activations):
            out[:, j] = a.forward(inputs[:, j])
        return out

    def _branch_forward(self, branch: str, h: np.ndarray, cache: list | None) -> np.ndarray:
        layers = self.layers[branch]
        for W, b in layers[:-1]:
            if cache is not None:
                cache.append(h)
            h = np.maximum(h @ W + b, 0.0)
        if cache is not None:
            cache.append(h)
        W, b = layers[-1]
        return h @ W + b

    def forward_inputs(self, inputs: np.ndarray, protocol) -> np.ndarray:
        activated = self._activate(inputs)
        scores = np.zeros((len(inputs), self.spec.n_classes))
        for branch, rows in self._routes(protocol, len(inputs)):
            if rows.size:
                scores[rows] = self._branch_forward(branch, activated[rows], None)
        return scores

    def forward(self, features: np.ndarray, protocol) -> np.ndarray:
        """Pre-softmax class scores for an (N, 20) feature batch."""
        return self.forward_inputs(self._inputs(features), protocol)

    def predict(self, features: np.ndarray, protocol, batch_size: int = 65536) -> np.ndarray:
        inputs = self._inputs(features)
        protocol = np.asarray(protocol)
        out = np.empty(len(inputs), dtype=np.int64)
        for start in range(0, len(inputs), batch_size):
            sl = slice(start, start + batch_size)
            out[sl] = self.forward_inputs(inputs[sl], protocol[sl]).argmax(axis=1)
        return out

    def loss_and_gradients_inputs(
        self,
        inputs: np.ndarray,
        protocol,
        labels: np.ndarray,
        localize: bool = True,
        class_weights: np.ndarray | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        n = len(inputs)
        labels = np.asarray(labels, dtype=np.int64)
        if n == 0:
            raise ValueError("empty batch")
        if labels.min() < 0 or labels.max() >= self.spec.n_classes:
            raise ValueError("label outside the model's class range")
        activated = self._activate(inputs)
        scores = np.zeros((n, self.spec.n_classes))
        caches: dict[str, tuple[np.ndarray, list]] = {}
        for branch, rows in self._routes(protocol, n):
            if rows.size:
                cache: list = []
                scores[rows] = self._branch_forward(branch, activated[rows], cache)
                caches[branch] = (rows, cache)

        shifted = scores - scores.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        log_p = shifted - log_z[:, None]
        nll = -log_p[np.arange(n), labels]
        weights = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[labels]
        total = weights.sum()
        loss = float((weights * nll).sum() / total)

        d_scores = np.exp(log_p)
        d_scores[np.arange(n), labels] -= 1.0
        d_scores *= (weights / total)[:, None]

        grads = {name: np.zeros_like(p) for name, p in self.parameters().items()}
        d_act = np.zeros_like(activated)
        for branch, (rows, cache) in caches.items():
            layers = self.layers[branch]
            delta = d_scores[rows]
            for i in range(len(layers) - 1, -1, -1):
                W, _ = layers[i]
                h = cache[i]
                grads[f"{branch}.W{i}"] = h.T @ delta
                grads[f"{branch}.b{i}"] = delta.sum(axis=0)
                delta = delta @ W.T
                if i > 0:
                    delta = delta * (h > 0)
            d_act[rows] = delta

        for j, a in enumerate(self.activations):
            if not a.params:
                continue
            _, g = a.backward(inputs[:, j], d_act[:, j])
            if localize and a.n > 1:
                g = act.localize(g, a.rank_by)
            for name, value in g.items():
                grads[f"act{j}.{name}"] = value
        return loss, grads

    def loss_and_gradients(
        self,
        features: np.ndarray,
        protocol,
        labels: np.ndarray,
        localize: bool = True,
        class_weights: np.ndarray | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy and its gradient for every named parameter.

        With ``localize`` (the training default) multi-step/peak activations
        keep the gradient of a single unit only.
        """
        return self.loss_and_gradients_inputs(self._inputs(features), protocol, labels, localize, class_weights)


def build(spec: ModelSpec, seed: int = 0, init_data=None) -> TWNet:
    return TWNet.build(spec, seed, init_data)


def dump_activation_curves(
    model: TWNet, path: str | Path, features: np.ndarray | None = None, points: int = 201
) -> None:
    """CSV of (input, feature, activation, x, y) over a grid per input.

    The grid spans the observed range of each input when ``features`` is
    given, otherwise the activation's positions padded by 3.
    """
    inputs = model._inputs(features) if features is not None and len(features) else None
    rows = []
    for j, (slot, a) in enumerate(zip(model.spec.inputs, model.activations)):
        if inputs is not None:
            lo, hi = float(inputs[:, j].min()), float(inputs[:, j].max())
        else:
            x0 = getattr(a, "x0", np.zeros(1))
            lo, hi = float(x0.min()) - 3.0, float(x0.max()) + 3.0
        xs = np.linspace(lo, hi, points)
        for x, y in zip(xs.tolist(), a.forward(xs).tolist()):
            rows.append((j, slot.feature, slot.activation, repr(x), repr(y)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("input,feature,activation,x,y\n")
        fh.writelines(",".join(map(str, r)) + "\n" for r in rows)


# ---- optimizer ---------------------------------------------------------------


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict,
    lr: float = DEFAULT_LR,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
    betas: tuple[float, float] = DEFAULT_BETAS,
    eps: float = DEFAULT_EPS,
    no_decay: set[str] = frozenset(),
    sparse: set[str] = frozenset(),
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    ``state`` holds ``m``, ``v`` (dicts of arrays) and the step count ``t``.
    Names in ``sparse`` only update entries whose gradient is non-zero;
    their other entries keep both value and moments. Names in
    ``no_decay`` skip weight decay.
    """
    b1, b2 = betas
    m, v = state.setdefault("m", {}), state.setdefault("v", {})
    state["t"] = t = state.get("t", 0) + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        if name in sparse:
            sel = g != 0
            if not sel.any():
                continue
            mp, vp, gs = m[name][sel], v[name][sel], g[sel]
            mp = b1 * mp + (1.0 - b1) * gs
            vp = b2 * vp + (1.0 - b2) * gs * gs
            m[name][sel], v[name][sel] = mp, vp
            ps = p[sel]
            if name not in no_decay:
                ps = ps - lr * weight_decay * ps
            p[sel] = ps - lr * (mp / c1) / (np.sqrt(vp / c2) + eps)
            continue
        if name not in no_decay and weight_decay:
            p -= lr * weight_decay * p
        m[name] *= b1
        m[name] += (1.0 - b1) * g
        v[name] *= b2
        v[name] += (1.0 - b2) * g * g
        p -= lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)


@dataclass
class AdamW:
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    betas: tuple[float, float] = DEFAULT_BETAS
    eps: float = DEFAULT_EPS
    state: dict = field(default_factory=dict)

    def step(self, model: TWNet, grads: dict[str, np.ndarray]) -> None:
        adamw_step(
            model.parameters(),
            grads,
            self.state,
            self.lr,
            self.weight_decay,
            self.betas,
            self.eps,
            no_decay=model.activation_names(),
            sparse=model.localized_names(),
        )
        model.constrain()

    @property
    def t(self) -> int:
        return self.state.get("t", 0)

    def copy(self) -> "AdamW":
        state = {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.state.get("m", {}).items()},
            "v": {k: v.copy() for k, v in self.state.get("v", {}).items()},
        }
        return AdamW(self.lr, self.weight_decay, tuple(self.betas), self.eps, state)


# ---- training ------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 8
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    betas: tuple[float, float] = DEFAULT_BETAS
    eps: float = DEFAULT_EPS
    seed: int = 0
    class_weights: tuple[float, ...] | None = None
    localize: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")
        self.betas = tuple(self.betas)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float
    wall_time: float


def split_indices(n: int, seed: int, fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled split into a training part and the remainder."""
    order = np.random.default_rng([seed, 80]).permutation(n)
    cut = int(round(fraction * n))
    return np.sort(order[:cut]), np.sort(order[cut:])


def accuracy(model: TWNet, data: FeatureSet) -> float:
    if len(data) == 0:
        return float("nan")
    return float((model.predict(data.features, data.protocol) == data.labels).mean())


def train(
    model: TWNet,
    dataset: FeatureSet,
    config: TrainConfig | None = None,
    eval_set: FeatureSet | None = None,
    callback: Callable[[int, TWNet], None] | None = None,
) -> tuple[TWNet, list[EpochMetrics]]:
    """Mini-batch AdamW training in place; returns the model and per-epoch metrics.

    Batches are reshuffled every epoch from a generator seeded by
    ``config.seed``. ``callback(step, model)`` runs after every optimizer step.
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.labels.max() >= model.spec.n_classes:
        raise ValueError("dataset has labels beyond the model's class count")
    if config.epochs == 0:
        return model, []
    absent = [c for i, c in enumerate(dataset.classes[: model.spec.n_classes]) if not np.any(dataset.labels == i)]
    if absent:
        logger.warning("classes absent from the training data: %s", ", ".join(absent))

    if model.optimizer is None:
        model.optimizer = AdamW(config.lr, config.weight_decay, config.betas, config.eps)
    opt = model.optimizer
    inputs = model._inputs(dataset.features)
    weights = None if config.class_weights is None else np.asarray(config.class_weights, dtype=np.float64)
    rng = np.random.default_rng([config.seed, 1])
    history = []
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        losses, sizes = [], []
        for b0 in range(0, len(order), config.batch_size):
            idx = order[b0 : b0 + config.batch_size]
            loss, grads = model.loss_and_gradients_inputs(
                inputs[idx], dataset.protocol[idx], dataset.labels[idx], config.localize, weights
            )
            opt.step(model, grads)
            losses.append(loss)
            sizes.append(len(idx))
            if callback is not None:
                callback(opt.t, model)
        train_loss = float(np.dot(losses, sizes) / np.sum(sizes))
        metrics = EpochMetrics(
            epoch,
            train_loss,
            accuracy(model, dataset),
            accuracy(model, eval_set) if eval_set is not None else float("nan"),
            time.perf_counter() - start,
        )
        logger.info("epoch %d loss %.5f train_acc %.4f eval_acc %.4f", epoch, train_loss, metrics.train_acc, metrics.eval_acc)
        history.append(metrics)
    return model, history


# ---- checkpoints -----------------------------------------------------------------


def _npy_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(array), allow_pickle=False)
    return buf.getvalue()


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    # fixed timestamp keeps identical checkpoints byte-identical
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def save_checkpoint(
    model: TWNet,
    path: str | Path,
    classes: Sequence[str] | None = None,
    window_length: float | None = None,
    seed: int | None = None,
    extra: dict | None = None,
) -> None:
    """Single zip file: ``header.json``, ``params/<name>.npy``, optimizer blocks."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "classes": list(classes) if classes is not None else None,
        "window_length": window_length,
        "seed": seed,
        "extra": extra or {},
    }
    opt = model.optimizer
    if opt is not None:
        header["optimizer"] = {
            "lr": opt.lr,
            "weight_decay": opt.weight_decay,
            "betas": list(opt.betas),
            "eps": opt.eps,
            "t": opt.t,
        }
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "header.json", json.dumps(header, indent=2, sort_keys=True).encode())
        for name, value in model.parameters().items():
            _write_entry(zf, f"params/{name}.npy", _npy_bytes(value))
        if opt is not None:
            for moment in ("m", "v"):
                for name, value in sorted(opt.state.get(moment, {}).items()):
                    _write_entry(zf, f"optimizer/{moment}/{name}.npy", _npy_bytes(value))


@dataclass
class Checkpoint:
    model: TWNet
    classes: tuple[str, ...] | None
    window_length: float | None
    seed: int | None
    extra: dict


def load_checkpoint(path: str | Path, expected_classes: Sequence[str] | None = None) -> Checkpoint:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
    with zf:
        try:
            header = json.loads(zf.read("header.json"))
        except KeyError:
            raise CheckpointError(f"{path}: missing header") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')!r}")

        def read(name: str) -> np.ndarray:
            return np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)

        spec = ModelSpec.from_dict(header["spec"])
        classes = tuple(header["classes"]) if header.get("classes") is not None else None
        if classes is not None and len(classes) != spec.n_classes:
            raise CheckpointError(f"{path}: class table has {len(classes)} entries, model has {spec.n_classes} outputs")
        if expected_classes is not None:
            expected = tuple(expected_classes)
            if len(expected) != spec.n_classes or (classes is not None and classes != expected):
                raise CheckpointError(
                    f"{path}: checkpoint classes {classes or spec.n_classes} do not match expected {expected}"
                )
        model = TWNet.build(spec, 0)
        prefix = "params/"
        arrays = {n[len(prefix) : -4]: read(n) for n in zf.namelist() if n.startswith(prefix)}
        model.load_arrays(arrays)
        if "optimizer" in header:
            o = header["optimizer"]
            state: dict = {"t": int(o["t"]), "m": {}, "v": {}}
            for n in zf.namelist():
                for moment in ("m", "v"):
                    p = f"optimizer/{moment}/"
                    if n.startswith(p):
                        state[moment][n[len(p) : -4]] = read(n)
            model.optimizer = AdamW(o["lr"], o["weight_decay"], tuple(o["betas"]), o["eps"], state)
    return Checkpoint(model, classes, header.get("window_length"), header.get("seed"), header.get("extra", {}))
