"""Experiment runners: train, attack, theory tables and parameter sweeps.

Random streams per run (all derived from ``seed``):
  0 train data, 1 test data, 2 model init, 3 batch order, 4 attack starts.

Sweep children get ``seed = derive_seed(master, index)`` unless ``seed`` is
itself one of the sweep keys.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import attacks, config, data, models, optim, theory
from .attacks import AttackBudget

log = logging.getLogger(__name__)

RESULTS_HEADER = "# samlab-results v1"
DATA_HEADER = "samlab-data v1"


class TrainingError(RuntimeError):
    pass


def derive_seed(master: int, index: int) -> int:
    digest = hashlib.blake2b(f"{int(master)}:{int(index)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream,)))


# --- building blocks from config -------------------------------------------------

def feature_spec(cfg: dict) -> theory.FeatureModelSpec:
    return theory.FeatureModelSpec(cfg["data.p"], cfg["data.eta"], cfg["data.n"])


def build_data(cfg: dict) -> tuple[data.Dataset, data.Dataset]:
    kind, seed = cfg["data.kind"], cfg["seed"]
    if kind == "feature_model":
        spec = feature_spec(cfg)
        return (data.sample_feature_model(spec, cfg["data.n_train"], seed, stream=0),
                data.sample_feature_model(spec, cfg["data.n_test"], seed, stream=1))
    if kind == "mixture2d":
        kw = dict(center_labels=cfg["data.center_labels"], center_weights=cfg["data.center_weights"])
        return (data.sample_mixture2d(cfg["data.centers"], cfg["data.spread"], cfg["data.n_train"], seed,
                                      stream=0, **kw),
                data.sample_mixture2d(cfg["data.centers"], cfg["data.spread"], cfg["data.n_test"], seed,
                                      stream=1, **kw))
    schema = data.DelimitedSchema(cfg["data.n_features"], cfg["data.task"], cfg["data.n_classes"])
    train = data.load_delimited(cfg["data.path"], schema)
    test = data.load_delimited(cfg["data.test_path"], schema) if cfg["data.test_path"] else train
    return train, test


def build_model(cfg: dict, train: data.Dataset):
    init = np.random.SeedSequence(int(cfg["seed"]), spawn_key=(2,))
    if cfg["model.kind"] == "linear":
        if train.task != "binary":
            raise config.ConfigError("model.kind: linear models need binary labels")
        return models.LinearModel(train.dim, cfg["model.bias"], seed=init)
    sizes = [train.dim, *cfg["model.hidden"], train.n_classes]
    return models.MlpModel(sizes, cfg["model.activation"], seed=init)


def base_config(cfg: dict):
    if cfg["optim.base"] == "sgd":
        return optim.SgdConfig(cfg["optim.lr"], cfg["optim.momentum"], cfg["optim.weight_decay"])
    return optim.AdamConfig(cfg["optim.lr"], cfg["optim.beta1"], cfg["optim.beta2"], cfg["optim.eps_hat"],
                            cfg["optim.weight_decay"])


def make_budget(d: dict) -> AttackBudget:
    eps = float(d.get("epsilon", 0.0))
    alpha = float(d.get("alpha") or 0.0) or eps / 4
    clip = d.get("clip")
    return AttackBudget(d.get("norm", "linf"), eps, alpha, int(d.get("steps", 10)),
                        bool(d.get("random_start", False)), tuple(clip) if clip else None,
                        tuple(d.get("fixed_features") or ()))


def training_budget(cfg: dict) -> AttackBudget:
    return make_budget({k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("attack.")})


def lr_at(cfg: dict, epoch: int) -> float:
    drops = sum(1 for m in cfg["train.milestones"] if epoch >= m)
    return cfg["optim.lr"] * cfg["train.decay"] ** drops


# --- runs --------------------------------------------------------------------------

def train_model(cfg: dict, train: data.Dataset, model=None):
    """Fit a model per ``cfg`` and return it with the per-epoch mean losses."""
    model = build_model(cfg, train) if model is None else model
    params = list(model.parameters().values())
    base = base_config(cfg)
    mode = cfg["optim.mode"]
    sam_cfg = optim.SamConfig(cfg["optim.rho"], base, cfg["optim.grad_norm_floor"]) if mode == "sam" else None
    budget = training_budget(cfg) if mode == "at" else None
    order = data.Stream(cfg["seed"], 3)
    attack_rng = _rng(cfg["seed"], 4)
    bs = cfg["train.batch_size"]
    state = None
    epoch_losses = []
    for epoch in range(cfg["train.epochs"]):
        lr = lr_at(cfg, epoch)
        perm = order.permutation(len(train))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(train), bs)):
            idx = perm[start:start + bs]
            xb, yb = train.x[idx], train.y[idx]
            try:
                if mode == "sam":
                    state, info = optim.sam_step(model, (xb, yb), sam_cfg, state, lr=lr)
                    value = info.loss
                else:
                    if mode == "at":
                        xb = attacks.pgd(model, xb, yb, budget, attack_rng).x_adv
                    value, grads = optim.loss_and_grads(model, xb, yb)
                    state = optim.base_step(params, grads, state, base, lr)
            except ArithmeticError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            if not np.isfinite(value):
                raise TrainingError(f"epoch {epoch} batch {b}: non-finite loss {value!r}")
            total += value * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)
        log.debug("epoch %d lr %.3g loss %.6f", epoch, lr, epoch_losses[-1])
    return model, epoch_losses


def evaluate(model, test: data.Dataset, budgets: list[AttackBudget], seed: int) -> dict:
    clean = models.accuracy(model, test.x, test.y)
    robust = []
    for i, b in enumerate(budgets):
        acc = attacks.robust_accuracy(model, test, b, rng=_rng(seed, 100 + i))
        robust.append({"budget": b.label(), "accuracy": acc})
    return {"clean_accuracy": clean, "robust": robust}


def run_train(cfg: dict, out: str | Path | None = None, persist: bool = True) -> dict:
    """Train, evaluate every ``eval.budgets`` entry, and (optionally) persist
    ``checkpoint.txt``, ``record.json`` and ``results.csv`` under ``out``."""
    config.validate(cfg)
    t0 = time.perf_counter()
    train, test = build_data(cfg)
    model, losses = train_model(cfg, train)
    budgets = [make_budget(b) for b in cfg["eval.budgets"]]
    record = {"config": dict(cfg), "seed": cfg["seed"], "epoch_losses": losses}
    record.update(evaluate(model, test, budgets, cfg["seed"]))
    record["wr_estimate"] = None
    if isinstance(model, models.LinearModel) and cfg["data.kind"] == "feature_model":
        record["wr_estimate"] = theory.estimate_wr(model.w.data)
    record["wall_clock"] = time.perf_counter() - t0
    if persist:
        out = Path(out or cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        models.save_checkpoint(model, out / "checkpoint.txt")
        if cfg["data.export"]:
            data.write_delimited(out / "train.csv", train, header=f"{DATA_HEADER} train seed={cfg['seed']}")
            data.write_delimited(out / "test.csv", test, header=f"{DATA_HEADER} test seed={cfg['seed']}")
        (out / "record.json").write_text(json.dumps(record, indent=2) + "\n")
        write_csv(out / "results.csv", [record_row(record)])
    record["model"] = model
    return record


def record_row(record: dict, extra: dict | None = None) -> dict:
    cfg = record["config"]
    row = dict(extra or {})
    row.update({
        "seed": record["seed"],
        "mode": cfg["optim.mode"],
        "rho": cfg["optim.rho"] if cfg["optim.mode"] == "sam" else "",
        "at_epsilon": cfg["attack.epsilon"] if cfg["optim.mode"] == "at" else "",
        "final_loss": record["epoch_losses"][-1],
        "clean_accuracy": record["clean_accuracy"],
    })
    for r in record["robust"]:
        row[f"robust[{r['budget']}]"] = r["accuracy"]
    row["wr_estimate"] = "" if record.get("wr_estimate") is None else record["wr_estimate"]
    return row


def run_attack(cfg: dict, checkpoint: str | Path | None = None, out: str | Path | None = None,
               persist: bool = True) -> dict:
    config.validate(cfg)
    path = checkpoint or cfg["checkpoint"]
    if not path:
        raise config.ConfigError("checkpoint: the attack task needs a checkpoint path")
    model = models.load_checkpoint(path)
    _, test = build_data(cfg)
    if test.dim != model.input_dim:
        raise ValueError(f"checkpoint expects {model.input_dim} features, dataset has {test.dim}")
    budgets = [make_budget(b) for b in cfg["eval.budgets"]]
    record = {"config": dict(cfg), "seed": cfg["seed"], "checkpoint": str(path)}
    record.update(evaluate(model, test, budgets, cfg["seed"]))
    if persist:
        out = Path(out or cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "attack_record.json").write_text(json.dumps(record, indent=2) + "\n")
        row = {"checkpoint": str(path), "clean_accuracy": record["clean_accuracy"]}
        for r in record["robust"]:
            row[f"robust[{r['budget']}]"] = r["accuracy"]
        write_csv(out / "attack_results.csv", [row])
    return record


def run_theory(cfg: dict, out: str | Path | None = None, persist: bool = True) -> list[theory.TheoryReport]:
    """One report per (p, eta, n, eps); ``eps`` serves as both the AT and SAM budget."""
    config.validate(cfg)
    reports = []
    for p, eta, n, eps in itertools.product(cfg["theory.p"], cfg["theory.eta"], cfg["theory.n"],
                                            cfg["theory.eps"]):
        spec = theory.FeatureModelSpec(p, eta, n)
        reports.append(theory.theory_report(spec, eps, eps))
    if persist:
        out = Path(out or cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "theory.csv", [r.as_row() for r in reports])
        (out / "theory.txt").write_text("\n\n".join(r.to_text() for r in reports) + "\n")
    return reports


def sweep_points(cfg: dict) -> list[dict]:
    keys, values = cfg["sweep.keys"], cfg["sweep.values"]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _sweep_child(args):
    index, child, out = args
    try:
        if child["task"] == "theory":
            reports = run_theory(child, out, persist=True)
            return [{"status": "ok", **r.as_row()} for r in reports]
        record = run_train(child, out, persist=True)
        return [{"status": "ok", **record_row(record)}]
    except Exception as exc:  # recorded per row; the sweep goes on
        return [{"status": f"error: {type(exc).__name__}: {exc}"}]


def run_sweep(cfg: dict, parallel: int = 1, out: str | Path | None = None) -> list[dict]:
    """Run every grid point as an independent child and merge rows in grid order."""
    config.validate(cfg)
    out = Path(out or cfg["out"])
    points = sweep_points(cfg)
    jobs = []
    for index, point in enumerate(points):
        child = dict(cfg)
        child["task"] = cfg["sweep.task"]
        child.update(point)
        if "seed" not in point:
            child["seed"] = derive_seed(cfg["seed"], index)
        child["out"] = str(out / f"point_{index:04d}")
        jobs.append((index, child, child["out"]))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_sweep_child, jobs))
    else:
        results = [_sweep_child(job) for job in jobs]
    rows = []
    for (index, child, _), child_rows in zip(jobs, results):
        for r in child_rows:
            rows.append({"index": index, **{k: child[k] for k in cfg["sweep.keys"]},
                         "child_seed": child["seed"], **r})
    rows.sort(key=lambda r: r["index"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep.csv", rows)
    return rows


# --- results files --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v)
    return str(v)


def csv_text(rows: list[dict]) -> str:
    columns: list[str] = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    buf.write(RESULTS_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: list[dict]) -> None:
    Path(path).write_text(csv_text(rows))


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
