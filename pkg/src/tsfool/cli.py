"""Command-line harness: train, extract, attack, eval, retrain (plus ``synth`` for toy data).

Every command writes ``run.json`` into its output directory recording the
resolved configuration, versions, timing and the files it produced.
Exit codes: 0 success, 2 usage/config, 3 data/format, 4 numerical.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from . import attack, iwfa, metrics, rnn, synthetic
from .data import Dataset, load_dataset, save_dataset
from .errors import ConfigError, DataError, TsfoolError

log = logging.getLogger("tsfool")

METHODS = ("tsfool", "tsfool-ext", "fgsm", "pgd")

# Defaults for every configurable value; config files and flags override them in that order.
DEFAULTS = {
    "seed": 0,
    # train / retrain
    "hidden": 16,
    "epochs": 300,
    "lr": 0.01,
    "optimizer": "adam",
    "patience": None,
    # extract
    "k": 2,
    "t_res": 10,
    "f": 10.0,
    # attack
    "method": "tsfool",
    "eps": 0.01,
    "p": 0.9,
    "n": 20,
    "target": None,
    "max_sampling_iters": 100,
    "interior_points": 9,
    "eps_step": None,
    "max_iter": 100,
    "scope": "tps",
    "export": "all",
    "norm": "l2",
    "dtw_dist": "l2",
    # synth
    "kind": "ecg",
}


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__}


class Run:
    """Collects provenance for one command invocation."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.started = time.time()
        self.outputs: list[str] = []
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(name)
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=1))
        return p

    def finish(self) -> None:
        record = {
            "command": self.command,
            "argv": sys.argv[1:],
            "config": self.cfg,
            "seed": self.cfg.get("seed"),
            "versions": _versions(),
            "started_unix": self.started,
            "seconds": time.time() - self.started,
            "outputs": self.outputs,
            **self.extra,
        }
        (self.out / "run.json").write_text(json.dumps(record, indent=1, default=str))


# ---------------------------------------------------------------------------
# argument handling


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    # every option defaults to None so that "not given" is distinguishable from a value
    spec = {
        "dataset": dict(help="UCR-style dataset directory or split file"),
        "model": dict(help="model file written by `train`"),
        "automaton": dict(help="automaton JSON written by `extract` (extracted on the fly if omitted)"),
        "batch": dict(help="batch CSV written by `attack` (sidecar JSON next to it)"),
        "seed": dict(type=int),
        "hidden": dict(type=int, help="LSTM hidden size"),
        "epochs": dict(type=int),
        "lr": dict(type=float, help="learning rate"),
        "optimizer": dict(choices=["adam", "gd"]),
        "patience": dict(type=int, help="stop after this many epochs without loss improvement"),
        "k": dict(type=int, help="labels kept per abstract state (K)"),
        "t_res": dict(type=int, help="confidence quantization levels"),
        "f": dict(type=float, help="interval width divisor"),
        "method": dict(choices=METHODS),
        "eps": dict(type=float, help="noise magnitude as a fraction of each feature's test range"),
        "p": dict(type=float, help="per-step noise keep probability"),
        "n": dict(type=int, help="candidates per pair"),
        "target": dict(type=int, help="target class for a targeted attack"),
        "max_sampling_iters": dict(type=int),
        "interior_points": dict(type=int),
        "eps_step": dict(type=float, help="PGD step size (same units as --eps)"),
        "max_iter": dict(type=int, help="PGD iterations"),
        "scope": dict(choices=["tps", "all"], help="originals attacked by baselines / recorded in reports"),
        "export": dict(choices=["all", "successful"]),
        "norm": dict(choices=list(metrics.NORMS)),
        "dtw_dist": dict(choices=["l1", "l2"], help="DTW point distance"),
        "kind": dict(choices=["ecg", "toy"]),
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **spec[name])


ATTACK_OPTS = ("method", "eps", "p", "n", "target", "max_sampling_iters", "interior_points", "eps_step", "max_iter")
EXTRACT_OPTS = ("k", "t_res", "f")
TRAIN_OPTS = ("hidden", "epochs", "lr", "optimizer", "patience")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsfool", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_, *opts):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON file with option values (flags take precedence)")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        _common(p, "seed", *opts)
        return p

    command("synth", "write a seeded toy dataset in UCR TSV form", "kind")
    command("train", "train an LSTM classifier", "dataset", *TRAIN_OPTS)
    command("extract", "extract an i-WFA from a trained classifier", "dataset", "model", *EXTRACT_OPTS)
    command("attack", "craft adversarial samples", "dataset", "model", "automaton", *EXTRACT_OPTS,
            *ATTACK_OPTS, "scope", "export", "norm", "dtw_dist")
    command("eval", "recompute an attack report from a persisted batch", "dataset", "model", "batch",
            "scope", "norm", "dtw_dist")
    command("retrain", "adversarially retrain a classifier", "dataset", "model", "automaton",
            *EXTRACT_OPTS, *ATTACK_OPTS, *TRAIN_OPTS)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags (in increasing priority)."""
    cfg = {k: v for k, v in DEFAULTS.items() if hasattr(args, k)}
    for k in ("dataset", "model", "automaton", "batch"):
        if hasattr(args, k):
            cfg[k] = None
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r} for `{args.command}`")
            cfg[key] = value
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if "method" in cfg and cfg["method"] not in METHODS:
        raise ConfigError(f"unknown method {cfg['method']!r}; valid methods: {', '.join(METHODS)}")
    cfg["out"] = args.out
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        value = cfg.get(key)
        if value is None:
            raise ConfigError(f"--{key} is required")
        if not Path(value).exists():
            raise ConfigError(f"--{key} path does not exist: {value}")


# ---------------------------------------------------------------------------
# shared steps


def _load_model(cfg: dict, d: Dataset) -> rnn.LstmParams:
    p = rnn.load_params(cfg["model"])
    if p.D != d.feature_dim or p.k != d.num_classes:
        raise ConfigError(f"model expects D={p.D}, k={p.k} but dataset has D={d.feature_dim}, k={d.num_classes}")
    return p


def _extraction_config(cfg: dict) -> iwfa.ExtractionConfig:
    return iwfa.ExtractionConfig(K=int(cfg["k"]), T_res=int(cfg["t_res"]), F=float(cfg["f"]))


def _automaton(cfg: dict, p: rnn.LstmParams, d: Dataset) -> iwfa.IWfa:
    if cfg.get("automaton"):
        _require(cfg, "automaton")
        a = iwfa.IWfa.load(cfg["automaton"])
        if a.num_classes != d.num_classes:
            raise ConfigError("automaton and dataset disagree on the number of classes")
        return a
    return iwfa.extract(p, d, _extraction_config(cfg))


def _train_config(cfg: dict) -> rnn.TrainConfig:
    return rnn.TrainConfig(epochs=int(cfg["epochs"]), learning_rate=float(cfg["lr"]), seed=int(cfg["seed"]),
                           hidden_size=int(cfg["hidden"]), patience=cfg["patience"], optimizer=cfg["optimizer"])


def _attack_config(cfg: dict) -> attack.AttackConfig:
    return attack.AttackConfig(
        eps=float(cfg["eps"]), P=float(cfg["p"]), n=int(cfg["n"]),
        mode="extended" if cfg["method"] == "tsfool-ext" else "standard",
        target=cfg["target"], seed=int(cfg["seed"]),
        max_sampling_iters=int(cfg["max_sampling_iters"]), interior_points=int(cfg["interior_points"]),
    )


def run_attack(cfg: dict, p: rnn.LstmParams, d: Dataset, a: Optional[iwfa.IWfa]) -> attack.AdversarialBatch:
    method = cfg["method"]
    if method in ("tsfool", "tsfool-ext"):
        return attack.tsfool(p, a, d, _attack_config(cfg))
    indices = None
    if cfg.get("scope", "tps") == "tps":
        indices = attack.tps_indices(p, a, d, cfg["target"])
    eps = float(cfg["eps"])
    eps_step = eps if method == "fgsm" or cfg["eps_step"] is None else float(cfg["eps_step"])
    max_iter = 1 if method == "fgsm" else int(cfg["max_iter"])
    batch = attack.baseline_attack(p, d, method, eps, eps_step, max_iter, indices=indices, target=cfg["target"])
    batch.config["seed"] = cfg["seed"]
    return batch


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: dict, run: Run) -> None:
    seed = int(cfg["seed"])
    d = synthetic.ecg_like(seed) if cfg["kind"] == "ecg" else synthetic.separable_toy(seed=seed, noise=0.05)
    directory = save_dataset(d, run.out)
    run.outputs += [f.name for f in sorted(Path(directory).glob(f"{d.name}_*"))]
    run.extra["dataset"] = d.describe()


def cmd_train(cfg: dict, run: Run) -> None:
    _require(cfg, "dataset")
    d = load_dataset(cfg["dataset"])
    started = time.perf_counter()
    p = rnn.train(d, _train_config(cfg))
    seconds = time.perf_counter() - started
    rnn.save_params(p, run.path("model.bin"))
    report = {
        "dataset": d.describe(),
        "train_accuracy": rnn.evaluate(p, (d.X_train, d.y_train)),
        "test_accuracy": rnn.evaluate(p, (d.X_test, d.y_test)),
        "final_loss": rnn.loss(p, d.X_train, d.y_train),
        "train_seconds": seconds,
    }
    run.write_json("train_report.json", report)
    log.info("test accuracy %.4f", report["test_accuracy"])


def cmd_extract(cfg: dict, run: Run) -> None:
    _require(cfg, "dataset", "model")
    d = load_dataset(cfg["dataset"])
    p = _load_model(cfg, d)
    started = time.perf_counter()
    a = iwfa.extract(p, d, _extraction_config(cfg))
    seconds = time.perf_counter() - started
    a.save(run.path("automaton.json"))
    report = {
        "states": a.num_states,
        "intervals": len(a.intervals),
        "interval_width": a.interval_width,
        "fidelity": iwfa.fidelity(a, p, d.X_test),
        "extract_seconds": seconds,
    }
    run.write_json("extract_report.json", report)
    log.info("fidelity %.4f over %d states", report["fidelity"], report["states"])


def cmd_attack(cfg: dict, run: Run) -> None:
    _require(cfg, "dataset", "model")
    d = load_dataset(cfg["dataset"])
    p = _load_model(cfg, d)
    needs_automaton = cfg["method"].startswith("tsfool") or cfg["scope"] == "tps"
    a = _automaton(cfg, p, d) if needs_automaton else None
    batch = run_attack(cfg, p, d, a)
    attack.write_batch(batch, run.path("batch.csv"), run.path("batch.json"),
                       only_successful=cfg["export"] == "successful", extra={"dataset": d.describe()})
    report = metrics.build_report(batch, d, norm=cfg["norm"], scope=cfg["scope"], seed=cfg["seed"],
                                  point_dist=cfg["dtw_dist"])
    report.save(run.path("report.json"))
    metrics.append_summary(report, run.path("summary.csv"))
    run.extra["candidates"] = len(batch)
    for w in batch.warnings:
        log.warning(w)


def cmd_eval(cfg: dict, run: Run) -> None:
    _require(cfg, "dataset", "batch")
    d = load_dataset(cfg["dataset"])
    batch = attack.read_batch(cfg["batch"])
    T, D = d.series_length, d.feature_dim
    if batch.candidates[0].values.shape != (T, D):
        raise DataError(f"batch series have shape {batch.candidates[0].values.shape}, dataset expects {(T, D)}")
    if cfg.get("model"):
        _require(cfg, "model")
        p = _load_model(cfg, d)
        preds = rnn.predict(p, batch.values())
        changed = sum(int(c.rnn_pred != y) for c, y in zip(batch.candidates, preds))
        if changed:
            log.warning("%d stored predictions differ from the given model; using the model's", changed)
        for c, y in zip(batch.candidates, preds):
            c.rnn_pred = int(y)
    seed = batch.config.get("seed")
    report = metrics.build_report(batch, d, norm=cfg["norm"], scope=cfg["scope"], seed=seed,
                                  point_dist=cfg["dtw_dist"])
    report.save(run.path("report.json"))
    metrics.append_summary(report, run.path("summary.csv"))


def _adversarial_set(cfg, p, d, a):
    batch = run_attack(cfg, p, d, a)
    if not batch.candidates:
        return np.zeros((0, d.series_length, d.feature_dim)), np.zeros(0, dtype=int), batch
    return batch.values(), np.array([c.true_label for c in batch.candidates]), batch


def cmd_retrain(cfg: dict, run: Run) -> None:
    """Append adversarial samples crafted on the train split and keep training.

    Robust error is measured on a fixed set crafted on the test split against
    the original model.
    """
    _require(cfg, "dataset", "model")
    d = load_dataset(cfg["dataset"])
    p0 = _load_model(cfg, d)

    train_view = d.replace(X_test=d.X_train, y_test=d.y_train)
    a_train = iwfa.extract(p0, train_view, _extraction_config(cfg)) if cfg["method"].startswith("tsfool") else None
    scoped = {**cfg, "scope": "all"}
    X_adv, y_adv, train_batch = _adversarial_set(scoped, p0, train_view, a_train)
    successful = train_batch.successes() if len(train_batch) else np.zeros(0, bool)
    X_adv, y_adv = X_adv[successful], y_adv[successful]

    a_test = _automaton(cfg, p0, d) if cfg["method"].startswith("tsfool") else None
    X_rob, y_rob, _ = _adversarial_set(scoped, p0, d, a_test)

    degenerate = X_adv.shape[0] == 0
    if degenerate:
        log.warning("no successful adversarial training samples; retraining is plain training")
    augmented = d.replace(X_train=np.concatenate([d.X_train, X_adv]), y_train=np.concatenate([d.y_train, y_adv]))

    def error(params, X, y):
        return float(np.mean(rnn.predict(params, X) != y)) if len(y) else None

    history = {"train_error": [], "test_error": [], "robust_error": []}
    checkpoints: list = []

    def record(epoch, params):
        history["train_error"].append(error(params, d.X_train, d.y_train))
        history["test_error"].append(error(params, d.X_test, d.y_test))
        history["robust_error"].append(error(params, X_rob, y_rob))
        checkpoints.append(params)

    final = rnn.train(augmented, _train_config(cfg), init=p0, callback=record)
    key = "robust_error" if len(y_rob) else "test_error"
    best = int(np.argmin(history[key]))
    rnn.save_params(final, run.path("model_final.bin"))
    rnn.save_params(checkpoints[best], run.path("model_best.bin"))
    report = {
        "method": cfg["method"],
        "epochs": len(history["train_error"]),
        **history,
        "before": {"train_error": error(p0, d.X_train, d.y_train), "test_error": error(p0, d.X_test, d.y_test),
                   "robust_error": error(p0, X_rob, y_rob)},
        "best_epoch": best + 1,
        "best_selected_by": key,
        "adversarial_train_samples": int(X_adv.shape[0]),
        "robust_set_size": int(len(y_rob)),
        "degenerate": degenerate,
        "warnings": list(train_batch.warnings),
    }
    run.write_json("retrain_report.json", report)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "extract": cmd_extract,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "retrain": cmd_retrain,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory: {exc}") from None
        run = Run(args.command, cfg, out)
        COMMANDS[args.command](cfg, run)
        run.finish()
    except TsfoolError as exc:
        print(f"tsfool {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
