"""Feed-forward network: ReLU trunk, typed output heads, exact gradients, SGD."""

import logging
import math
import pathlib
import struct
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from safedagger.config import parse_settings
from safedagger.errors import ConfigError, ModelFormatError, TrainingError

log = logging.getLogger(__name__)

HEAD_KINDS = ("tanh", "sigmoid", "linear", "softmax")
LOSS_KINDS = ("mse", "bce", "nll")
PROB_FLOOR = 1e-12
MODEL_MAGIC = b"SDGMODL1"


@dataclass(frozen=True)
class Head:
    name: str
    size: int
    kind: str


@dataclass(frozen=True)
class NetSpec:
    """Layer widths input -> hidden... -> concatenated heads."""
    input_size: int
    hidden: tuple[int, ...]
    heads: tuple[Head, ...]
    seed: int = 0

    def __post_init__(self):
        if self.input_size < 1 or any(w < 1 for w in self.hidden):
            raise ValueError("layer widths must be >= 1")
        if not self.heads:
            raise ValueError("at least one head is required")
        names = [h.name for h in self.heads]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate head names: {names}")
        for h in self.heads:
            if h.size < 1:
                raise ValueError(f"head '{h.name}' must have size >= 1")
            if h.kind not in HEAD_KINDS:
                raise ValueError(f"head '{h.name}': unknown kind '{h.kind}'")
            if h.kind == "softmax" and h.size < 2:
                raise ValueError(f"softmax head '{h.name}' needs size >= 2")

    @property
    def output_size(self) -> int:
        return sum(h.size for h in self.heads)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_size, *self.hidden, self.output_size)

    @property
    def feature_size(self) -> int:
        return self.hidden[-1] if self.hidden else self.input_size

    def head_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for h in self.heads:
            out[h.name] = slice(start, start + h.size)
            start += h.size
        return out

    def head(self, name: str) -> Head:
        for h in self.heads:
            if h.name == name:
                return h
        raise KeyError(name)

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))

    def to_text(self) -> str:
        lines = [f"input = {self.input_size}"]
        if self.hidden:
            # trailing comma keeps a single width a list
            lines.append("hidden = " + ", ".join(str(w) for w in self.hidden) + ",")
        for h in self.heads:
            lines.append(f"head = {h.name} {h.size} {h.kind}")
        lines.append(f"seed = {self.seed}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetSpec":
        try:
            data = parse_settings(text)
            hidden = data.get("hidden", [])
            if not isinstance(hidden, list):
                hidden = [hidden]
            heads = data["head"]
            if not isinstance(heads, list):
                heads = [heads]
            parsed = []
            for h in heads:
                name, size, kind = str(h).split()
                parsed.append(Head(name, int(size), kind))
            return cls(int(data["input"]), tuple(int(w) for w in hidden), tuple(parsed), int(data.get("seed", 0)))
        except (ConfigError, KeyError, ValueError, TypeError) as e:
            raise ModelFormatError(f"bad network description: {e}") from e


@dataclass(frozen=True)
class Params:
    """Flat parameter vector; layer l stores W_l (fan_in x fan_out, row-major) then b_l."""
    spec: NetSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} parameters, got {values.shape}")
        object.__setattr__(self, "values", values)

    def layers(self, values: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views per layer into `values` (defaults to own values)."""
        v = self.values if values is None else values
        w = self.spec.widths
        slices = self.index_map()
        return [(v[slices[2 * l][2]].reshape(a, b), v[slices[2 * l + 1][2]])
                for l, (a, b) in enumerate(zip(w[:-1], w[1:]))]

    def index_map(self) -> list[tuple[int, str, slice]]:
        """(layer, 'W' | 'b', slice into values)."""
        out, pos = [], 0
        w = self.spec.widths
        for l, (a, b) in enumerate(zip(w[:-1], w[1:])):
            out.append((l, "W", slice(pos, pos + a * b)))
            pos += a * b
            out.append((l, "b", slice(pos, pos + b)))
            pos += b
        return out


def init_params(spec: NetSpec) -> Params:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    chunks = []
    w = spec.widths
    for a, b in zip(w[:-1], w[1:]):
        limit = math.sqrt(6.0 / (a + b))
        chunks.append(rng.uniform(-limit, limit, size=a * b))
        chunks.append(np.zeros(b))
    return Params(spec, np.concatenate(chunks))


def zero_params(spec: NetSpec) -> Params:
    return Params(spec, np.zeros(spec.n_params))


@dataclass
class Forward:
    outputs: dict[str, np.ndarray]
    logits: dict[str, np.ndarray]
    hidden: list[np.ndarray]
    inputs: np.ndarray

    @property
    def features(self) -> np.ndarray:
        """Activations of the last shared layer."""
        return self.hidden[-1] if self.hidden else self.inputs


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "softmax":
        return _softmax(z)
    return z


def forward(params: Params, inputs) -> Forward:
    """Batched forward pass; a 1-D input is treated as a batch of one."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_size:
        raise ValueError(f"input width {x.shape[-1]} does not match network input "
                         f"{params.spec.input_size}")
    layers = params.layers()
    hidden = []
    h = x
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        hidden.append(h)
    W, b = layers[-1]
    z = h @ W + b
    outputs, logits = {}, {}
    for head in params.spec.heads:
        zs = z[:, params.spec.head_slices()[head.name]]
        logits[head.name] = zs
        outputs[head.name] = _activate(head.kind, zs)
    return Forward(outputs, logits, hidden, x)


@dataclass(frozen=True)
class LossTerm:
    """One weighted loss on one head.

    mse: squared error summed over the head's outputs.
    bce: cross-entropy of a sigmoid head against targets in [0, 1], offset
         by the target entropy so that an exact match scores zero.
    nll: negative log-likelihood of integer class targets under a softmax head.
    """
    head: str
    kind: str
    weight: float = 1.0


def _bce_with_logits(z, t):
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -(np.where(t > 0, t * np.log(t), 0.0) + np.where(t < 1, (1 - t) * np.log1p(-t), 0.0))
    return softplus - t * z - ent


def per_example_loss(fwd: Forward, targets: dict[str, np.ndarray], term: LossTerm,
                     spec: NetSpec) -> np.ndarray:
    head = spec.head(term.head)
    y = fwd.outputs[term.head]
    n = y.shape[0]
    if term.kind == "mse":
        t = np.asarray(targets[term.head], dtype=np.float64).reshape(n, -1)
        return ((y - t) ** 2).sum(axis=1)
    if term.kind == "bce":
        if head.kind != "sigmoid":
            raise ValueError(f"bce needs a sigmoid head, '{head.name}' is {head.kind}")
        t = np.asarray(targets[term.head], dtype=np.float64).reshape(n, -1)
        return _bce_with_logits(fwd.logits[term.head], t).sum(axis=1)
    if term.kind == "nll":
        if head.kind != "softmax":
            raise ValueError(f"nll needs a softmax head, '{head.name}' is {head.kind}")
        cls = np.asarray(targets[term.head]).reshape(n).astype(int)
        return -np.log(np.maximum(y[np.arange(n), cls], PROB_FLOOR))
    raise ValueError(f"unknown loss kind '{term.kind}'")


def _head_grad(fwd: Forward, targets, term: LossTerm, spec: NetSpec) -> np.ndarray:
    """d(weighted mean loss) / d(head logits)."""
    head = spec.head(term.head)
    y = fwd.outputs[term.head]
    n = y.shape[0]
    scale = term.weight / n
    if term.kind == "mse":
        t = np.asarray(targets[term.head], dtype=np.float64).reshape(n, -1)
        dy = 2.0 * (y - t) * scale
        if head.kind == "tanh":
            return dy * (1.0 - y * y)
        if head.kind == "sigmoid":
            return dy * y * (1.0 - y)
        if head.kind == "linear":
            return dy
        raise ValueError(f"mse is not defined for {head.kind} head '{head.name}'")
    if term.kind == "bce":
        t = np.asarray(targets[term.head], dtype=np.float64).reshape(n, -1)
        return (y - t) * scale
    cls = np.asarray(targets[term.head]).reshape(n).astype(int)
    g = y.copy()
    g[np.arange(n), cls] -= 1.0
    return g * scale


def loss(params: Params, inputs, targets: dict[str, np.ndarray],
         terms: list[LossTerm]) -> tuple[float, dict[str, float]]:
    """Weighted mean batch loss and the unweighted mean of each term."""
    fwd = forward(params, inputs)
    total = 0.0
    parts = {}
    for term in terms:
        per = per_example_loss(fwd, targets, term, params.spec)
        parts[term.head] = float(per.mean())
        total += term.weight * parts[term.head]
    return total, parts


def backward(params: Params, inputs, targets: dict[str, np.ndarray],
             terms: list[LossTerm]) -> tuple[float, np.ndarray]:
    """Batch loss and its exact gradient with respect to every parameter."""
    spec = params.spec
    fwd = forward(params, inputs)
    n = fwd.inputs.shape[0]
    per = np.zeros(n)
    for term in terms:
        per += term.weight * per_example_loss(fwd, targets, term, spec)
    bad = np.flatnonzero(~np.isfinite(per))
    if bad.size:
        raise TrainingError(f"non-finite loss at example {int(bad[0])}", example_index=int(bad[0]))

    dz = np.zeros((n, spec.output_size))
    slices = spec.head_slices()
    for term in terms:
        dz[:, slices[term.head]] += _head_grad(fwd, targets, term, spec)

    grad = np.zeros(spec.n_params)
    grad_layers = params.layers(grad)
    layers = params.layers()
    acts = [fwd.inputs, *fwd.hidden]
    delta = dz
    for l in range(len(layers) - 1, -1, -1):
        gW, gb = grad_layers[l]
        gW[...] = acts[l].T @ delta
        gb[...] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ layers[l][0].T) * (acts[l] > 0)
    return float(per.mean()), grad


class TrainConfig(BaseModel):
    """SGD recipe: momentum, weight decay, lr drops on plateau, early stop."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    batch_size: int = Field(64, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.001, ge=0)
    lr: float = Field(0.001, gt=0)
    lr_drop_factor: float = Field(5.0, gt=1)
    patience: int = Field(3, gt=0)
    early_stop_tolerance: float = Field(0.05, gt=0)
    min_rel_improvement: float = Field(1e-4, ge=0)
    max_epochs: int = Field(40, gt=0)
    seed: int = 0


def sgd_step(params: Params, grads: np.ndarray, velocity: np.ndarray,
             cfg: TrainConfig, lr: float | None = None) -> tuple[Params, np.ndarray]:
    """Momentum SGD with L2 weight decay; returns new params and velocity."""
    lr = cfg.lr if lr is None else lr
    v = cfg.momentum * velocity - lr * (grads + cfg.weight_decay * params.values)
    return Params(params.spec, params.values + v), v


@dataclass
class Examples:
    """Inputs with per-head targets."""
    inputs: np.ndarray
    targets: dict[str, np.ndarray]

    def __len__(self):
        return len(self.inputs)

    def take(self, idx) -> "Examples":
        return Examples(self.inputs[idx], {k: v[idx] for k, v in self.targets.items()})


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    lr_drops: list[int] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_valid_loss(self) -> float:
        return self.valid_loss[self.best_epoch] if self.best_epoch >= 0 else math.inf


def fit(train_set: Examples, valid_set: Examples, net_spec: NetSpec, cfg: TrainConfig,
        terms: list[LossTerm]) -> tuple[Params, TrainingHistory]:
    """Train from a fresh initialization; return the best-validation parameters.

    The learning rate is divided by lr_drop_factor after `patience` epochs
    without a new best validation loss; training stops once validation
    loss exceeds the best by early_stop_tolerance (relative).
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ValueError("fit needs non-empty training and validation sets")
    params = init_params(net_spec)
    velocity = np.zeros(net_spec.n_params)
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.lr
    hist = TrainingHistory()
    best = params
    best_loss = math.inf
    stale = 0
    n = len(train_set)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = train_set.take(order[start:start + cfg.batch_size])
            try:
                value, grad = backward(params, batch.inputs, batch.targets, terms)
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}: {e}", example_index=e.example_index, epoch=epoch) from e
            params, velocity = sgd_step(params, grad, velocity, cfg, lr)
            total += value * len(batch)
        valid = loss(params, valid_set.inputs, valid_set.targets, terms)[0]
        if not (math.isfinite(valid) and np.isfinite(params.values).all()):
            raise TrainingError(f"training diverged at epoch {epoch}", epoch=epoch)
        hist.train_loss.append(total / n)
        hist.valid_loss.append(valid)
        hist.lr.append(lr)
        log.debug("epoch %d: train %.6g valid %.6g lr %.3g", epoch, total / n, valid, lr)

        if valid < best_loss * (1 - cfg.min_rel_improvement):
            best_loss, best, stale = valid, params, 0
            hist.best_epoch = epoch
            continue
        if valid > best_loss * (1 + cfg.early_stop_tolerance) + 1e-12:
            hist.stopped_early = True
            log.debug("early stop at epoch %d (valid %.6g, best %.6g)", epoch, valid, best_loss)
            break
        stale += 1
        if stale >= cfg.patience:
            lr /= cfg.lr_drop_factor
            stale = 0
            hist.lr_drops.append(epoch)
    return best, hist


def save_params(params: Params, path: pathlib.Path | str) -> None:
    """Write the model file: magic, u32-prefixed NetSpec text, u64 count, <f8 values."""
    text = params.spec.to_text().encode("utf-8")
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(text)))
        f.write(text)
        f.write(struct.pack("<Q", params.values.size))
        f.write(params.values.astype("<f8").tobytes())


def load_params(path: pathlib.Path | str, expected: NetSpec | None = None) -> Params:
    data = pathlib.Path(path).read_bytes()
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a safedagger model file")
    pos = len(MODEL_MAGIC)
    try:
        (text_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        spec = NetSpec.from_text(data[pos:pos + text_len].decode("utf-8"))
        pos += text_len
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
    except (struct.error, UnicodeDecodeError) as e:
        raise ModelFormatError(f"{path}: truncated header") from e
    if count != spec.n_params:
        raise ModelFormatError(f"{path}: {count} parameters stored, network needs {spec.n_params}")
    if len(data) - pos != 8 * count:
        raise ModelFormatError(f"{path}: expected {8 * count} parameter bytes, found {len(data) - pos}")
    if expected is not None and (expected.widths != spec.widths or expected.heads != spec.heads):
        raise ModelFormatError(f"{path}: network {spec.widths} does not match expected {expected.widths}")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
    return Params(spec, values)
