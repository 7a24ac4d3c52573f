"""FGSM and PGD (l-inf / l2) white-box attacks and robust accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models
from .tensor import NonFiniteError, Tape, Tensor, backward

NORMS = ("linf", "l2")


@dataclass(frozen=True)
class AttackBudget:
    """Perturbation budget.

    ``fixed_features`` lists input columns the attacker may not touch (e.g. a
    discrete feature); their perturbation is held at zero.
    """

    norm: str = "linf"
    epsilon: float = 0.0
    alpha: float = 0.0
    steps: int = 10
    random_start: bool = False
    clip: tuple[float, float] | None = None
    fixed_features: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.clip is not None:
            lo, hi = self.clip
            if not lo < hi:
                raise ValueError(f"clip bounds must satisfy lo < hi, got {self.clip}")
            object.__setattr__(self, "clip", (float(lo), float(hi)))
        object.__setattr__(self, "fixed_features", tuple(int(i) for i in self.fixed_features))

    def label(self) -> str:
        return f"{self.norm}:eps={self.epsilon:g}:steps={self.steps}"


@dataclass
class AttackResult:
    x_adv: np.ndarray
    delta: np.ndarray
    success_mask: np.ndarray


def sign(g: np.ndarray) -> np.ndarray:
    """``np.sign`` with sign(0) = 0, spelled out because it is load-bearing."""
    return np.sign(g)


def _row_norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a * a, axis=1, keepdims=True))


def project(delta: np.ndarray, norm: str, epsilon: float) -> np.ndarray:
    """Project per-sample perturbations (rows) onto the ``norm`` ball of radius ``epsilon``."""
    delta = np.asarray(delta, dtype=np.float64)
    if norm == "linf":
        return np.clip(delta, -epsilon, epsilon)
    if norm == "l2":
        rows = delta if delta.ndim == 2 else delta.reshape(1, -1)
        n = _row_norms(rows)
        factor = np.where(n > epsilon, epsilon / np.where(n > 0, n, 1.0), 1.0)
        out = rows * factor
        return out if delta.ndim == 2 else out.reshape(delta.shape)
    raise ValueError(f"unknown norm {norm!r}")


def input_gradient(model, x: np.ndarray, y) -> np.ndarray:
    """Gradient of the mean loss with respect to the inputs."""
    xt = Tensor(x, requires_grad=True, name="x")
    with Tape() as tape:
        out = models.loss(model, xt, y)
    g = backward(tape, out, wrt=[xt])[xt]
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("attack: non-finite input gradient")
    return g


def _step_direction(g: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return sign(g)
    return g / np.maximum(_row_norms(g), 1e-12)


def _random_start(rng: np.random.Generator, shape, budget: AttackBudget) -> np.ndarray:
    eps = budget.epsilon
    if budget.norm == "linf":
        return rng.uniform(-eps, eps, size=shape)
    direction = rng.standard_normal(shape)
    direction /= np.maximum(_row_norms(direction), 1e-12)
    radius = rng.uniform(0.0, 1.0, size=(shape[0], 1)) * eps
    return direction * radius


def pgd(model, x, y, budget: AttackBudget, rng: np.random.Generator | None = None,
        trace: list | None = None) -> AttackResult:
    """Projected gradient ascent on the loss inside the budget ball.

    ``trace``, when given, receives a copy of every iterate (used by tests to
    check ball containment along the path).
    """
    if budget.epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"pgd expects a 2-D batch, got shape {x.shape}")
    mask = np.ones(x.shape[1])
    if budget.fixed_features:
        mask[list(budget.fixed_features)] = 0.0

    delta = np.zeros_like(x)
    if budget.random_start and budget.epsilon > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        delta = project(_random_start(rng, x.shape, budget) * mask, budget.norm, budget.epsilon)
    x_adv = _clip(x + delta, budget.clip)
    if trace is not None:
        trace.append(x_adv.copy())

    if budget.epsilon > 0:
        for _ in range(budget.steps):
            g = input_gradient(model, x_adv, y)
            step = _step_direction(g * mask, budget.norm)
            delta = project(x_adv + budget.alpha * step - x, budget.norm, budget.epsilon)
            x_adv = _clip(x + delta, budget.clip)
            if trace is not None:
                trace.append(x_adv.copy())

    pred = model.predict(x_adv)
    return AttackResult(x_adv, x_adv - x, pred != np.asarray(y))


def fgsm(model, x, y, budget: AttackBudget) -> AttackResult:
    """Single signed-gradient step of size epsilon (l-inf only)."""
    if budget.norm != "linf":
        raise ValueError("FGSM is defined for the linf norm only")
    one_step = AttackBudget("linf", budget.epsilon, budget.epsilon, 1, False, budget.clip, budget.fixed_features)
    return pgd(model, x, y, one_step)


def _clip(x: np.ndarray, clip) -> np.ndarray:
    if clip is None:
        return x
    return np.clip(x, clip[0], clip[1])


def robust_accuracy(model, data, budget: AttackBudget, batch_size: int = 4096,
                    rng: np.random.Generator | None = None) -> float:
    """Fraction of samples still classified correctly after a PGD attack.

    ``data`` is a :class:`~samlab.data.Dataset` or an ``(x, y)`` pair.
    """
    x, y = (data.x, data.y) if hasattr(data, "x") else data
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("robust_accuracy needs a nonempty dataset")
    no_attack = budget.epsilon == 0 or (budget.steps == 0 and not budget.random_start)
    correct = 0
    for start in range(0, len(y), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        if no_attack:
            correct += int(np.sum(model.predict(xb) == yb))
        else:
            correct += int(np.sum(~pgd(model, xb, yb, budget, rng).success_mask))
    return correct / len(y)


def linear_worst_case(w: np.ndarray, x: np.ndarray, y: np.ndarray, budget: AttackBudget) -> np.ndarray:
    """Exact loss-maximising input for a bias-free linear scorer with labels in {-1, +1}.

    The loss decreases in the margin ``y * w.x``, so the optimum moves each
    input against ``y * w`` as far as the ball allows.
    """
    w = np.asarray(w, dtype=np.float64).copy()
    if budget.fixed_features:
        w[list(budget.fixed_features)] = 0.0
    y = np.asarray(y, dtype=np.float64)[:, None]
    if budget.norm == "linf":
        delta = -budget.epsilon * y * np.sign(w)[None, :]
    else:
        n = np.linalg.norm(w)
        delta = np.zeros_like(x) if n == 0 else -budget.epsilon * y * (w / n)[None, :]
    return np.asarray(x, dtype=np.float64) + delta
