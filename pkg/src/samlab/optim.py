"""SGD with momentum, Adam, and the two-pass SAM wrapper.

Weight decay is the gradient of an explicit ``weight_decay * ||w||^2`` term,
i.e. ``2 * weight_decay * w`` is added to the data gradient before the update
(coupled L2, not decoupled decay).

Optimizer steps replace ``param.data`` with a fresh array instead of writing
into it, so snapshots taken with ``param.data`` stay valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import models
from .tensor import NonFiniteError, Tape, Tensor, backward


@dataclass
class SgdConfig:
    lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if not self.eps_hat > 0:
            raise ValueError("eps_hat must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


@dataclass
class SamConfig:
    rho: float = 0.05
    base: SgdConfig | AdamConfig = field(default_factory=SgdConfig)
    grad_norm_floor: float = 1e-12

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")
        if not self.grad_norm_floor > 0:
            raise ValueError("grad_norm_floor must be positive")


def _check_grads(params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ValueError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.name or ''} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {p.name!r}")


def _assign(p: Tensor, value: np.ndarray, opt: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{opt}: update made parameter {p.name or '?'!r} non-finite")
    p.data = value


def _with_decay(params, grads, weight_decay):
    if not weight_decay:
        return list(grads)
    return [g + 2.0 * weight_decay * p.data for p, g in zip(params, grads)]


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: dict | None, cfg: SgdConfig,
             lr: float | None = None) -> dict:
    """One heavy-ball step: ``v = momentum * v + g``; ``p -= lr * v``.

    ``lr`` overrides ``cfg.lr`` (used by learning-rate schedules).
    Returns the new state.
    """
    _check_grads(params, grads)
    lr = cfg.lr if lr is None else lr
    state = {} if state is None else state
    velocity = state.get("velocity") or [np.zeros_like(p.data) for p in params]
    new_v = []
    for p, g, v in zip(params, _with_decay(params, grads, cfg.weight_decay), velocity):
        v = cfg.momentum * v + g if cfg.momentum else g
        with np.errstate(over="ignore", invalid="ignore"):
            _assign(p, p.data - lr * v, "sgd")
        new_v.append(v)
    return {"velocity": new_v}


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: dict | None, cfg: AdamConfig,
              lr: float | None = None) -> dict:
    _check_grads(params, grads)
    lr = cfg.lr if lr is None else lr
    state = {} if state is None else state
    t = state.get("t", 0) + 1
    m_prev = state.get("m") or [np.zeros_like(p.data) for p in params]
    v_prev = state.get("v") or [np.zeros_like(p.data) for p in params]
    b1, b2 = cfg.beta1, cfg.beta2
    ms, vs = [], []
    for p, g, m, v in zip(params, _with_decay(params, grads, cfg.weight_decay), m_prev, v_prev):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        with np.errstate(over="ignore", invalid="ignore"):
            _assign(p, p.data - lr * m_hat / (np.sqrt(v_hat) + cfg.eps_hat), "adam")
        ms.append(m)
        vs.append(v)
    return {"t": t, "m": ms, "v": vs}


def base_step(params, grads, state, cfg, lr=None) -> dict:
    if isinstance(cfg, SgdConfig):
        return sgd_step(params, grads, state, cfg, lr)
    if isinstance(cfg, AdamConfig):
        return adam_step(params, grads, state, cfg, lr)
    raise TypeError(f"unsupported optimizer config {type(cfg).__name__}")


def loss_and_grads(model, x, y, loss_fn: Callable | None = None) -> tuple[float, list[np.ndarray]]:
    """Data loss (no weight decay) and its gradient for every model parameter."""
    loss_fn = loss_fn or models.loss
    params = list(model.parameters().values())
    with Tape() as tape:
        out = loss_fn(model, x, y)
    grads = backward(tape, out, wrt=params)
    return out.item(), [grads[p] for p in params]


def _global_norm(grads) -> float:
    # rescale by the largest entry so squaring cannot overflow
    big = max((float(np.max(np.abs(g))) for g in grads if g.size), default=0.0)
    if big == 0.0:
        return 0.0
    return big * float(np.sqrt(sum(float(np.sum((g / big) ** 2)) for g in grads)))


@dataclass
class SamInfo:
    loss: float
    perturbed_loss: float
    grad_norm: float
    perturbed: bool


def sam_step(model, batch, cfg: SamConfig, base_state: dict | None, lr: float | None = None,
             loss_fn: Callable | None = None) -> tuple[dict, SamInfo]:
    """Sharpness-aware update on one mini-batch.

    1. ``g1`` = gradient of the data loss at ``w``;
    2. ``e = rho * g1 / ||g1||`` with the norm taken over all parameters jointly;
    3. ``g2`` = gradient of the data loss at ``w + e`` on the same batch;
    4. restore ``w`` and hand ``g2`` to the base optimizer (which adds decay).

    When ``||g1|| < grad_norm_floor`` the perturbation is skipped and ``g1``
    is used directly.
    """
    x, y = batch
    if len(y) == 0:
        raise ValueError("sam_step needs a nonempty batch")
    params = list(model.parameters().values())
    value, g1 = loss_and_grads(model, x, y, loss_fn)
    norm = _global_norm(g1)

    if cfg.rho == 0 or norm < cfg.grad_norm_floor:
        state = base_step(params, g1, base_state, cfg.base, lr)
        return state, SamInfo(value, value, norm, False)

    saved = [p.data for p in params]
    scale = cfg.rho / norm
    for p, g in zip(params, g1):
        p.data = p.data + scale * g
    try:
        perturbed, g2 = loss_and_grads(model, x, y, loss_fn)
    finally:
        for p, d in zip(params, saved):
            p.data = d
    if not np.isfinite(perturbed):
        raise NonFiniteError("SAM: non-finite loss at the perturbed weights")
    state = base_step(params, g2, base_state, cfg.base, lr)
    return state, SamInfo(value, perturbed, norm, True)
