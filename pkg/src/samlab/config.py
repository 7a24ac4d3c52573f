"""Flat ``key = value`` run configuration.

One entry per line, keys use dotted section names (``optim.rho``), values are
JSON literals (bare words are read as strings). ``#`` starts a comment line.
Unknown keys are errors. Any key can be overridden from the environment as
``SAMLAB_<SECTION>__<NAME>``, e.g. ``SAMLAB_OPTIM__RHO=0.1``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

ENV_PREFIX = "SAMLAB_"

DEFAULTS: dict = {
    "task": "train",
    "seed": 0,
    "out": "runs/default",
    "checkpoint": "",
    "data.kind": "feature_model",
    "data.p": 0.9,
    "data.eta": 0.1,
    "data.n": 10,
    "data.n_train": 20000,
    "data.n_test": 10000,
    "data.centers": [[-1.0, 0.0], [1.0, 0.0]],
    "data.center_labels": None,
    "data.center_weights": None,
    "data.spread": 0.5,
    "data.path": "",
    "data.test_path": "",
    "data.n_features": 2,
    "data.task": "binary",
    "data.n_classes": 2,
    "data.export": False,
    "model.kind": "linear",
    "model.bias": False,
    "model.hidden": [32, 32],
    "model.activation": "relu",
    "optim.mode": "plain",
    "optim.base": "sgd",
    "optim.lr": 0.1,
    "optim.momentum": 0.9,
    "optim.weight_decay": 5e-4,
    "optim.beta1": 0.9,
    "optim.beta2": 0.999,
    "optim.eps_hat": 1e-8,
    "optim.rho": 0.05,
    "optim.grad_norm_floor": 1e-12,
    "attack.norm": "linf",
    "attack.epsilon": 0.0,
    "attack.alpha": 0.0,
    "attack.steps": 10,
    "attack.random_start": False,
    "attack.clip": None,
    "attack.fixed_features": [],
    "train.epochs": 30,
    "train.batch_size": 128,
    "train.milestones": [20, 26],
    "train.decay": 0.1,
    "eval.budgets": [],
    "theory.p": [0.6, 0.75, 0.9],
    "theory.eta": [0.05, 0.1, 0.2],
    "theory.n": [5, 10, 50],
    "theory.eps": [0.01, 0.02, 0.04],
    "sweep.keys": [],
    "sweep.values": [],
    "sweep.task": "train",
}

TASKS = ("theory", "train", "attack", "sweep")
BUDGET_KEYS = {"norm", "epsilon", "alpha", "steps", "random_start", "clip", "fixed_features"}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems) if not isinstance(problems, str) else [problems]
        super().__init__("; ".join(self.problems))


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def format_value(value) -> str:
    return json.dumps(value)


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def dump_text(cfg: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in cfg.items())


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out[key] = parse_value(value)
    return out


def load(path=None, overrides: dict | None = None, environ=None) -> dict:
    """Defaults, then the file, then the environment, then explicit overrides."""
    cfg = dict(DEFAULTS)
    layers = []
    if path:
        layers.append(parse_text(Path(path).read_text(), str(path)))
    layers.append(env_overrides(environ))
    if overrides:
        layers.append(overrides)
    unknown = [k for layer in layers for k in layer if k not in DEFAULTS]
    if unknown:
        raise ConfigError([f"unknown config key {k!r}" for k in unknown])
    for layer in layers:
        cfg.update(layer)
    validate(cfg)
    return cfg


def _num(cfg, key, problems, lo=None, lo_strict=False, integer=False):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not float(v).is_integer()):
        problems.append(f"{key}: expected {'an integer' if integer else 'a number'}, got {v!r}")
        return
    if lo is not None and (v <= lo if lo_strict else v < lo):
        problems.append(f"{key}: must be {'>' if lo_strict else '>='} {lo}, got {v!r}")


def _choice(cfg, key, options, problems):
    if cfg[key] not in options:
        problems.append(f"{key}: expected one of {list(options)}, got {cfg[key]!r}")


def validate_budget(b, where: str, problems: list) -> None:
    if not isinstance(b, dict):
        problems.append(f"{where}: expected an object, got {b!r}")
        return
    extra = set(b) - BUDGET_KEYS
    if extra:
        problems.append(f"{where}: unknown budget keys {sorted(extra)}")
    if b.get("norm", "linf") not in ("linf", "l2"):
        problems.append(f"{where}.norm: expected linf or l2, got {b.get('norm')!r}")
    eps = b.get("epsilon", 0.0)
    if not isinstance(eps, (int, float)) or eps < 0:
        problems.append(f"{where}.epsilon: must be a nonnegative number, got {eps!r}")
    steps = b.get("steps", 10)
    if not isinstance(steps, int) or steps < 0:
        problems.append(f"{where}.steps: must be a nonnegative integer, got {steps!r}")
    clip = b.get("clip")
    if clip is not None and (not isinstance(clip, list) or len(clip) != 2 or not clip[0] < clip[1]):
        problems.append(f"{where}.clip: expected [lo, hi] with lo < hi, got {clip!r}")


def validate(cfg: dict) -> None:
    """Collect every problem before raising, so one run reports them all."""
    p: list[str] = []
    _choice(cfg, "task", TASKS, p)
    _num(cfg, "seed", p, lo=0, integer=True)
    _choice(cfg, "data.kind", ("feature_model", "mixture2d", "delimited"), p)
    _choice(cfg, "model.kind", ("linear", "mlp"), p)
    _choice(cfg, "model.activation", ("relu", "tanh"), p)
    _choice(cfg, "optim.mode", ("plain", "sam", "at"), p)
    _choice(cfg, "optim.base", ("sgd", "adam"), p)
    _choice(cfg, "data.task", ("binary", "multiclass"), p)
    _num(cfg, "optim.lr", p, lo=0, lo_strict=True)
    _num(cfg, "optim.momentum", p, lo=0)
    if isinstance(cfg["optim.momentum"], (int, float)) and cfg["optim.momentum"] >= 1:
        p.append("optim.momentum: must be < 1")
    _num(cfg, "optim.weight_decay", p, lo=0)
    _num(cfg, "optim.rho", p, lo=0)
    _num(cfg, "optim.grad_norm_floor", p, lo=0, lo_strict=True)
    _num(cfg, "train.epochs", p, lo=1, integer=True)
    _num(cfg, "train.batch_size", p, lo=1, integer=True)
    _num(cfg, "train.decay", p, lo=0, lo_strict=True)
    _num(cfg, "data.n_train", p, lo=1, integer=True)
    _num(cfg, "data.n_test", p, lo=1, integer=True)
    ms = cfg["train.milestones"]
    if not isinstance(ms, list) or not all(isinstance(m, int) for m in ms):
        p.append(f"train.milestones: expected a list of integers, got {ms!r}")
    else:
        if any(b <= a for a, b in zip(ms, ms[1:])):
            p.append(f"train.milestones: must be strictly increasing, got {ms}")
        if isinstance(cfg["train.epochs"], int) and any(m >= cfg["train.epochs"] or m < 0 for m in ms):
            p.append(f"train.milestones: must lie in [0, epochs={cfg['train.epochs']}), got {ms}")
    if cfg["data.kind"] == "feature_model":
        if not (isinstance(cfg["data.p"], (int, float)) and 0.5 < cfg["data.p"] < 1):
            p.append(f"data.p: must lie in (0.5, 1), got {cfg['data.p']!r}")
        _num(cfg, "data.eta", p, lo=0, lo_strict=True)
        _num(cfg, "data.n", p, lo=1, integer=True)
    if cfg["data.kind"] == "delimited" and not cfg["data.path"]:
        p.append("data.path: required when data.kind is delimited")
    hidden = cfg["model.hidden"]
    if not isinstance(hidden, list) or not all(isinstance(h, int) and h >= 1 for h in hidden):
        p.append(f"model.hidden: expected a list of positive integers, got {hidden!r}")
    attack = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("attack.")}
    validate_budget(attack, "attack", p)
    if cfg["optim.mode"] == "at" and not attack.get("epsilon"):
        p.append("attack.epsilon: adversarial training needs a positive budget")
    budgets = cfg["eval.budgets"]
    if not isinstance(budgets, list):
        p.append("eval.budgets: expected a list of budget objects")
    else:
        for i, b in enumerate(budgets):
            validate_budget(b, f"eval.budgets[{i}]", p)
    theory_ok = True
    for key in ("theory.p", "theory.eta", "theory.n", "theory.eps"):
        if not isinstance(cfg[key], list) or not cfg[key] or \
                not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in cfg[key]):
            p.append(f"{key}: expected a nonempty list of numbers")
            theory_ok = False
    if theory_ok and "theory" in (cfg["task"], cfg["sweep.task"]):
        # eps is also the adversarial budget, which must stay below every eta
        bad = [e for e in cfg["theory.eps"] if not 0 <= e < min(cfg["theory.eta"])]
        if bad:
            p.append(f"theory.eps: entries must lie in [0, min(theory.eta)={min(cfg['theory.eta'])}), got {bad}")
    keys, values = cfg["sweep.keys"], cfg["sweep.values"]
    if not isinstance(keys, list) or not isinstance(values, list) or len(keys) != len(values):
        p.append("sweep.keys and sweep.values must be lists of equal length")
    else:
        for k, v in zip(keys, values):
            if k not in DEFAULTS or k.startswith("sweep.") or k == "task":
                p.append(f"sweep.keys: {k!r} is not a sweepable config key")
            if not isinstance(v, list) or not v:
                p.append(f"sweep.values for {k!r}: expected a nonempty list")
    _choice(cfg, "sweep.task", ("train", "theory"), p)
    if p:
        raise ConfigError(p)
