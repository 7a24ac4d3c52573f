"""Linear and MLP classifiers on top of the tape engine, plus checkpoint I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

# logits [0, s] turn a binary score into two-class cross-entropy
_BINARY_HEAD = np.array([[0.0, 1.0]])


def labels_to_classes(y) -> np.ndarray:
    """Map binary labels -1 -> 0 and +1 -> 1; other values are an error."""
    y = np.asarray(y)
    if not np.all((y == 1) | (y == -1)):
        bad = y[(y != 1) & (y != -1)]
        raise ValueError(f"binary labels must be -1 or +1, got {bad[:5].tolist()}")
    return (y > 0).astype(np.int64)


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LinearModel:
    """Score ``s = w . x (+ b)``; prediction is ``sign(s)`` with labels in {-1, +1}.

    ``predict_logits`` returns the per-sample score as a length-N tensor. A
    score of exactly 0 predicts -1 (class 0).
    """

    kind = "linear"
    binary = True

    def __init__(self, dim: int, include_bias: bool = False, seed: int | None = None, w=None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.include_bias = include_bias
        rng = np.random.default_rng(seed)
        init = _uniform_init(rng, dim, dim) if w is None else np.asarray(w, dtype=np.float64)
        if init.shape != (dim,):
            raise ValueError(f"weight shape {init.shape} does not match dim {dim}")
        self.w = Tensor(init, requires_grad=True, name="w")
        self.b = Tensor(np.zeros(1), requires_grad=True, name="b") if include_bias else None

    @property
    def input_dim(self) -> int:
        return self.dim

    def parameters(self) -> dict[str, Tensor]:
        params = {"w": self.w}
        if self.b is not None:
            params["b"] = self.b
        return params

    def predict_logits(self, x) -> Tensor:
        x = T._as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.dim:
            raise T.ShapeError(f"LinearModel: expected input (N, {self.dim}), got {x.shape}")
        s = x @ self.w
        if self.b is not None:
            s = T.add(T.reshape(s, (x.shape[0], 1)), self.b)
            s = T.reshape(s, (x.shape[0],))
        return s

    def class_logits(self, x) -> Tensor:
        s = self.predict_logits(x)
        return T.reshape(s, (s.shape[0], 1)) @ Tensor(_BINARY_HEAD)

    def predict(self, x) -> np.ndarray:
        s = self.predict_logits(x).data
        return np.where(s > 0, 1, -1)

    def topology(self) -> dict:
        return {"model": "linear", "dim": self.dim, "bias": self.include_bias}


class MlpModel:
    """Fully connected network; ``layer_sizes`` = [input, hidden..., classes].

    Two-class heads accept binary {-1, +1} labels as well as class ids.
    """

    kind = "mlp"

    def __init__(self, layer_sizes, activation: str = "relu", seed: int | None = None):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_sizes = layer_sizes
        self.activation = activation
        rng = np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            self.weights.append(Tensor(_uniform_init(rng, fan_in, (fan_in, fan_out)), True, f"fc{i}.weight"))
            self.biases.append(Tensor(_uniform_init(rng, fan_in, fan_out), True, f"fc{i}.bias"))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def binary(self) -> bool:
        return self.layer_sizes[-1] == 2

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for w, b in zip(self.weights, self.biases):
            params[w.name] = w
            params[b.name] = b
        return params

    def predict_logits(self, x) -> Tensor:
        h = T._as_tensor(x)
        if h.data.ndim != 2 or h.shape[1] != self.input_dim:
            raise T.ShapeError(f"MlpModel: expected input (N, {self.input_dim}), got {h.shape}")
        act = T.relu if self.activation == "relu" else T.tanh
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = T.add(h @ w, b)
            if i < last:
                h = act(h)
        return h

    class_logits = predict_logits

    def predict(self, x) -> np.ndarray:
        cls = np.argmax(self.predict_logits(x).data, axis=1)
        return np.where(cls == 1, 1, -1) if self.binary else cls

    def topology(self) -> dict:
        return {"model": "mlp", "layer_sizes": self.layer_sizes, "activation": self.activation}


def _class_targets(model, y) -> np.ndarray:
    y = np.asarray(y)
    if isinstance(model, LinearModel):
        return labels_to_classes(y)
    if model.binary and np.all((y == 1) | (y == -1)):
        return labels_to_classes(y)
    n_classes = model.layer_sizes[-1]
    if not np.all((y >= 0) & (y < n_classes) & (y == np.round(y))):
        raise ValueError(f"class labels must be integers in [0, {n_classes})")
    return y.astype(np.int64)


def loss(model, x, y, weight_decay: float = 0.0) -> Tensor:
    """Mean cross-entropy of ``model`` on ``(x, y)``.

    With ``weight_decay > 0`` the penalty ``weight_decay * sum ||p||^2`` over all
    parameters is added inside the recorded graph.
    """
    out = T.softmax_cross_entropy(model.class_logits(x), _class_targets(model, y))
    if weight_decay:
        for p in model.parameters().values():
            out = T.add(out, T.scale(T.sq_norm(p), weight_decay))
    return out


def per_sample_loss(model, x, y) -> np.ndarray:
    """Cross-entropy per row, evaluated without a tape."""
    z = model.class_logits(x).data
    t = _class_targets(model, y)
    shift = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    return lse - shift[np.arange(len(t)), t]


def accuracy(model, x, y) -> float:
    return float(np.mean(model.predict(x) == np.asarray(y)))


def build_model(topology: dict, seed: int | None = None):
    kind = topology.get("model")
    if kind == "linear":
        return LinearModel(int(topology["dim"]), bool(topology.get("bias", False)), seed=seed)
    if kind == "mlp":
        return MlpModel(topology["layer_sizes"], topology.get("activation", "relu"), seed=seed)
    raise ValueError(f"unknown model kind {kind!r}")


# --- checkpoints --------------------------------------------------------------

CHECKPOINT_HEADER = "# samlab checkpoint v1"


def save_checkpoint(model, path) -> None:
    """Plain-text checkpoint: topology header, then one shape line and one
    value line per parameter, numbers written with 17 significant digits."""
    lines = [CHECKPOINT_HEADER]
    for key, value in model.topology().items():
        if isinstance(value, list):
            value = " ".join(str(v) for v in value)
        lines.append(f"topology {key} {value}")
    for name, p in model.parameters().items():
        lines.append(f"param {name} {' '.join(str(s) for s in p.shape)}")
        lines.append(" ".join(format(v, ".17g") for v in p.data.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a samlab checkpoint")
    topology: dict = {}
    params: dict[str, np.ndarray] = {}
    i = 1
    while i < len(text):
        parts = text[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] == "topology":
            key, rest = parts[1], parts[2:]
            if key == "layer_sizes":
                topology[key] = [int(v) for v in rest]
            elif key in ("bias",):
                topology[key] = rest[0] == "True"
            elif key == "dim":
                topology[key] = int(rest[0])
            else:
                topology[key] = rest[0]
            i += 1
        elif parts[0] == "param":
            name, shape = parts[1], tuple(int(s) for s in parts[2:])
            values = np.array([float(v) for v in text[i + 1].split()], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise ValueError(f"{path}:{i + 2}: {name} expects {int(np.prod(shape))} values, got {values.size}")
            params[name] = values.reshape(shape)
            i += 2
        else:
            raise ValueError(f"{path}:{i + 1}: unrecognised line {text[i]!r}")
    model = build_model(topology, seed=0)
    own = model.parameters()
    if set(own) != set(params):
        raise ValueError(f"{path}: parameters {sorted(params)} do not match topology {sorted(own)}")
    for name, p in own.items():
        if p.shape != params[name].shape:
            raise ValueError(f"{path}: {name} has shape {params[name].shape}, expected {p.shape}")
        p.data = params[name]
    return model
