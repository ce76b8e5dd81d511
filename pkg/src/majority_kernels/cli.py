"""Experiment runner.

    majority-kernels run --config exp.json [--algo mk --topology A1 ...]
    majority-kernels tune --config exp.json
    majority-kernels diagnose {bea,sharpness,fallback,perturbation} [--checkpoint PATH]
    majority-kernels fetch-data [--dest DIR]
    majority-kernels report --out DIR

Config files are JSON objects; command-line flags override file values and
the fully resolved config is written to the output directory. Exit status
is 0 on success, 2 for invalid configuration or mismatched checkpoints, and
1 for runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import traceback
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, mk_layer
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DataError, default_data_dir, fetch_cifar10, load_cifar10, make_blob_splits, make_blobs
from .model import TOPOLOGIES, NetworkSpec, init_params
from .numeric import BACKEND, RngStream
from .optimizers import grid_rates
from .trainers import (
    ALGORITHMS,
    OPTIMIZERS,
    AdvConfig,
    ConfigError,
    DistillConfig,
    SubsetConfig,
    TrainConfig,
    train,
    train_ensemble,
    write_records_csv,
)

log = logging.getLogger("majority_kernels")


@dataclass
class ExperimentConfig:
    algorithms: list = field(default_factory=lambda: ["baseline"])
    dataset: str = "blobs"
    data_dir: str | None = None
    val_size: int = 5000
    strict_data: bool = True  # every CIFAR-10 file must hold 10,000 records
    blobs: dict = field(default_factory=dict)
    topology: str | None = "A1"
    hidden_dims: list | None = None  # custom topology, used when topology is null
    optimizer: str = "adam"
    learning_rate: float = 0.001
    expansion: int = 3
    batch_size: int = 256
    max_steps: int | None = None
    epochs: float = 30.0
    seed: int = 0
    eval_every: int | None = None
    eval_train_size: int = 5000
    uniform_probs: bool = False
    replicates: int = 1
    grid: bool = False
    out: str = "runs/experiment"
    distill: dict = field(default_factory=dict)
    adv: dict = field(default_factory=dict)
    subset: dict = field(default_factory=dict)

    BLOB_DEFAULTS = {"classes": 2, "dim": 10, "separation": 10.0,
                     "train_per_class": 200, "val_per_class": 50, "test_per_class": 50}

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        raw.pop("provenance", None)  # informational block written into resolved configs
        if "algorithm" in raw:
            algo = raw.pop("algorithm")
            raw.setdefault("algorithms", algo if isinstance(algo, list) else [algo])
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown field")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    FIELD_TYPES = {
        "algorithms": list, "dataset": str, "data_dir": (str, type(None)), "val_size": int,
        "strict_data": bool, "blobs": dict, "topology": (str, type(None)),
        "hidden_dims": (list, type(None)), "optimizer": str, "learning_rate": (int, float),
        "expansion": int, "batch_size": int, "max_steps": (int, type(None)), "epochs": (int, float),
        "seed": int, "eval_every": (int, type(None)), "eval_train_size": int,
        "uniform_probs": bool, "replicates": int, "grid": bool, "out": str,
        "distill": dict, "adv": dict, "subset": dict,
    }

    def validate(self):
        if isinstance(self.algorithms, str):
            self.algorithms = [self.algorithms]
        for name, kind in self.FIELD_TYPES.items():
            value = getattr(self, name)
            bad_bool = isinstance(value, bool) and kind in (int, (int, float), (int, type(None)))
            if not isinstance(value, kind) or bad_bool:
                raise ConfigError(name, f"wrong type {type(value).__name__}")
        if not self.algorithms:
            raise ConfigError("algorithm", "at least one algorithm is required")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError("algorithm", f"unknown algorithm {a!r}; choose from {list(ALGORITHMS)}")
        if self.dataset not in ("blobs", "cifar10"):
            raise ConfigError("dataset", f"unknown dataset {self.dataset!r}; choose blobs or cifar10")
        if self.topology is not None:
            if self.topology not in TOPOLOGIES:
                raise ConfigError("topology", f"unknown topology {self.topology!r}; choose from {list(TOPOLOGIES)}")
            if self.hidden_dims is not None and tuple(self.hidden_dims) != TOPOLOGIES[self.topology]:
                raise ConfigError("hidden_dims", f"does not match topology {self.topology}")
        elif not self.hidden_dims:
            raise ConfigError("hidden_dims", "required when topology is null")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError("optimizer", f"unknown optimizer {self.optimizer!r}")
        if self.replicates < 1:
            raise ConfigError("replicates", "must be >= 1")
        if self.expansion < 1:
            raise ConfigError("expansion", "must be >= 1")
        unknown_blob = set(self.blobs) - set(self.BLOB_DEFAULTS)
        if unknown_blob:
            raise ConfigError(f"blobs.{sorted(unknown_blob)[0]}", "unknown field")
        for name, sub in (("distill", DistillConfig), ("adv", AdvConfig), ("subset", SubsetConfig)):
            valid = {f.name for f in fields(sub)}
            for key in getattr(self, name):
                if key not in valid:
                    raise ConfigError(f"{name}.{key}", "unknown field")
        for algo in self.algorithms:
            self.train_config(algo, 10, 10, self.seed).validate()

    @property
    def dims(self) -> tuple:
        return TOPOLOGIES[self.topology] if self.topology else tuple(self.hidden_dims)

    def blob_params(self) -> dict:
        return {**self.BLOB_DEFAULTS, **self.blobs}

    def train_config(self, algorithm: str, input_dim: int, output_dim: int, seed: int,
                     learning_rate: float | None = None) -> TrainConfig:
        spec = NetworkSpec(input_dim, self.dims, output_dim, self.expansion)
        return TrainConfig(
            spec=spec,
            algorithm=algorithm,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate if learning_rate is None else learning_rate,
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            epochs=self.epochs,
            seed=seed,
            eval_every=self.eval_every,
            eval_train_size=self.eval_train_size,
            uniform_probs=self.uniform_probs,
            distill=DistillConfig(**self.distill),
            adv=AdvConfig(**self.adv),
            subset=SubsetConfig(**self.subset),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def replicate_seed(base_seed: int, replicate: int) -> int:
    return RngStream(base_seed).child("replicate").derive_seed(replicate)


def load_data(cfg: ExperimentConfig):
    if cfg.dataset == "cifar10":
        return load_cifar10(cfg.data_dir or default_data_dir(), val_size=cfg.val_size,
                            strict=cfg.strict_data)
    return make_blob_splits(cfg.seed, **cfg.blob_params())


def provenance(cfg: ExperimentConfig, **extra) -> dict:
    return {"config": cfg.to_dict(), "version": __version__, "backend": BACKEND, **extra}


class _Writer:
    """Serializes every artifact write of one invocation."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)

    def json(self, rel: str, obj):
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))
        return path

    def path(self, rel: str) -> Path:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        return path


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


class _Session:
    """One CLI invocation: data, teacher cache and artifact writer."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.data = load_data(cfg)
        self.writer = _Writer(Path(cfg.out))
        self.teachers = {}

    def train_config(self, algo, seed, lr=None) -> TrainConfig:
        return self.cfg.train_config(algo, self.data.input_dim, self.data.num_classes, seed, lr)

    def teacher_for(self, tc: TrainConfig):
        lr = tc.distill.teacher_learning_rate or tc.learning_rate
        key = (tc.seed, lr)
        if key not in self.teachers:
            ens_cfg = replace(tc, algorithm="ensemble", learning_rate=lr)
            self.teachers[key] = train_ensemble(ens_cfg, self.data).predictor
        return self.teachers[key]

    def fit(self, tc: TrainConfig):
        teacher = self.teacher_for(tc) if tc.algorithm == "distilled" else None
        result = train(tc, self.data, teacher)
        if tc.algorithm == "ensemble":
            self.teachers.setdefault((tc.seed, tc.learning_rate), result.predictor)
        return result

    def save_run(self, rel: str, result, extra: dict):
        tc = result.config
        prov = provenance(self.cfg, train_config=tc.to_dict(), seed=tc.seed, **extra)
        write_records_csv(self.writer.path(f"{rel}/records.csv"), result.records, json.dumps(prov, sort_keys=True))
        meta = {**prov, "standardization": "extras"}
        extras = {"mean": self.data.mean, "std": self.data.std}
        if result.params is not None:
            save_checkpoint(self.writer.path(f"{rel}/checkpoint.npz"), result.params,
                            result.params.spec(), meta, extras)
        if result.extended is not None and tc.algorithm != "subset":
            save_checkpoint(self.writer.path(f"{rel}/checkpoint_extended.npz"), result.extended,
                            result.extended.spec(), meta, extras)
        for k, member in enumerate(result.members):
            save_checkpoint(self.writer.path(f"{rel}/member{k}.npz"), member.params,
                            member.params.spec(), meta, extras)
        final = asdict(result.final)
        summary = {"provenance": prov, "final": final,
                   "test_acc": final["test_acc"], "val_acc": final["val_acc"]}
        self.writer.json(f"{rel}/result.json", summary)
        return summary


def tune(session: _Session, algo: str, seed: int, rel: str, rates=None) -> dict:
    """Train every grid rate, pick the best validation accuracy (ties: smaller
    rate), and report test accuracy for the chosen rate only."""
    rates = list(grid_rates(session.cfg.optimizer) if rates is None else rates)
    grid = []
    best = None
    for i, lr in enumerate(rates):
        tc = session.train_config(algo, seed, lr)
        result = session.fit(tc)
        val_acc = result.final.val_acc
        log.info("grid %s seed=%d lr=%.6g val_acc=%.4f", algo, seed, lr, val_acc)
        grid.append({"index": i, "learning_rate": lr, "val_acc": val_acc, "val_loss": result.final.val_loss})
        if best is None or val_acc > best[0] or (val_acc == best[0] and lr < best[1]):
            best = (val_acc, lr, result)
    _, chosen_lr, chosen = best
    summary = session.save_run(rel, chosen, {"grid": grid, "chosen_learning_rate": chosen_lr})
    with open(session.writer.path(f"{rel}/grid.csv"), "w") as fh:
        fh.write("index,learning_rate,val_acc,val_loss\n")
        for g in grid:
            fh.write(f"{g['index']},{g['learning_rate']!r},{g['val_acc']!r},{g['val_loss']!r}\n")
    return {"chosen_learning_rate": chosen_lr, "grid": grid, "test_acc": chosen.final.test_acc,
            "val_acc": chosen.final.val_acc, "summary": summary}


def summary_table(rows) -> list:
    """Mean test accuracy and standard error per (algorithm, topology, optimizer)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["algorithm"], r["topology"], r["optimizer"]), []).append(r["test_acc"])
    table = []
    for (algo, topo, opt), accs in sorted(groups.items()):
        accs = np.asarray(accs, dtype=np.float64)
        entry = {"algorithm": algo, "topology": topo, "optimizer": opt,
                 "replicates": len(accs), "mean_test_acc": float(accs.mean())}
        if len(accs) >= 2:
            entry["std_error"] = float(accs.std(ddof=1) / math.sqrt(len(accs)))
        table.append(entry)
    return table


def cmd_run(cfg: ExperimentConfig, force_grid: bool = False) -> int:
    session = _Session(cfg)
    session.writer.json("resolved_config.json", {**cfg.to_dict(), "provenance": {
        "version": __version__, "backend": BACKEND, "seed": cfg.seed}})
    topo = cfg.topology or "custom" + str(list(cfg.dims))
    rows = []
    for algo in cfg.algorithms:
        for r in range(cfg.replicates):
            seed = replicate_seed(cfg.seed, r)
            rel = f"{algo}/rep{r}"
            if cfg.grid or force_grid:
                out = tune(session, algo, seed, rel)
                lr, test_acc, val_acc = out["chosen_learning_rate"], out["test_acc"], out["val_acc"]
            else:
                result = session.fit(session.train_config(algo, seed))
                summ = session.save_run(rel, result, {})
                lr, test_acc, val_acc = cfg.learning_rate, summ["test_acc"], summ["val_acc"]
            log.info("%s rep%d seed=%d lr=%.6g test_acc=%.4f", algo, r, seed, lr, test_acc)
            rows.append({"algorithm": algo, "topology": topo, "optimizer": cfg.optimizer,
                         "replicate": r, "seed": seed, "learning_rate": lr,
                         "test_acc": test_acc, "val_acc": val_acc})
    session.writer.json("summary.json", {"provenance": provenance(cfg), "runs": rows,
                                         "table": summary_table(rows)})
    return 0


def cmd_report(out: Path) -> int:
    rows = []
    for path in sorted(Path(out).rglob("summary.json")):
        rows.extend(json.loads(path.read_text())["runs"])
    if not rows:
        print(f"no summary.json found under {out}", file=sys.stderr)
        return 1
    table = summary_table(rows)
    (Path(out) / "summary_table.json").write_text(json.dumps(table, indent=2))
    print(f"{'algorithm':<12}{'topology':<10}{'optimizer':<10}{'n':>3}  test accuracy")
    for t in table:
        se = f" +/- {100 * t['std_error']:.2f}" if "std_error" in t else ""
        print(f"{t['algorithm']:<12}{t['topology']:<10}{t['optimizer']:<10}{t['replicates']:>3}  "
              f"{100 * t['mean_test_acc']:.2f}{se}")
    return 0


# -- diagnose ---------------------------------------------------------------------

def _diagnose_model(args):
    """(params, spec) from a checkpoint, or a fresh initialization from flags."""
    if args.checkpoint:
        params, spec, _, _ = load_checkpoint(args.checkpoint)
        if args.topology and TOPOLOGIES[args.topology] != spec.hidden_dims:
            raise CheckpointError(
                f"checkpoint hidden dims {list(spec.hidden_dims)} do not match topology {args.topology}")
        if args.expansion is not None and args.expansion != spec.expansion:
            raise CheckpointError(
                f"checkpoint expansion {spec.expansion} does not match --expansion {args.expansion}")
        if args.input_dim is not None and args.input_dim != spec.input_dim:
            raise CheckpointError(f"checkpoint input dim {spec.input_dim} != --input-dim {args.input_dim}")
        return params, spec
    spec = NetworkSpec(args.input_dim or 3072, TOPOLOGIES[args.topology or "A1"],
                       args.output_dim or 10, args.expansion or 3)
    return init_params(spec, RngStream(args.seed).child("init")), spec


def _diagnose_data(args, spec):
    rng = RngStream(args.seed).child("diagnose-data")
    if args.dataset == "cifar10":
        splits = load_cifar10(args.data_dir or default_data_dir())
        n = min(args.examples, len(splits.train))
        if splits.input_dim != spec.input_dim:
            raise CheckpointError("CIFAR-10 features do not match the checkpoint input dim")
        return splits.train.features[:n], splits.train.labels[:n]
    blobs = make_blobs(rng, max(2, spec.output_dim), max(1, args.examples // max(2, spec.output_dim)),
                       spec.input_dim, 6.0)
    return blobs.features, blobs.labels


def cmd_diagnose(args) -> int:
    params, spec = _diagnose_model(args)
    rng = RngStream(args.seed)
    if args.kind == "fallback":
        if args.optimizer != "sgd":
            raise ConfigError("optimizer", "the uniform-fallback check requires plain sgd")
        dev = diagnostics.verify_uniform_fallback(spec, args.lr, args.steps, args.seed, args.optimizer)
        report = {"max_deviation": dev, "learning_rate": args.lr, "steps": args.steps,
                  "expansion": spec.expansion, "vanilla_learning_rate": args.lr / spec.expansion}
    elif args.kind == "bea":
        x, y = _diagnose_data(args, spec)
        probs = [mk_layer.sample_probability_tensor(rng.child(f"p{i}"), l.n, l.m, l.e)
                 for i, l in enumerate(params.layers)]
        report = diagnostics.bea_terms(params, x, y, probs, args.lr).to_dict()
    elif args.kind == "sharpness":
        x, y = _diagnose_data(args, spec)
        report = diagnostics.sharpness_delta(params, x, y, args.samples, rng.child("sharpness")).to_dict()
    else:
        stats = diagnostics.perturbation_stats(params.layers, args.samples, rng.child("perturbation"))
        report = {"layers": [
            {"shape": list(mean.shape), "max_abs_mean": float(np.abs(mean).max()),
             "mean_variance": float(var.mean()), "max_variance": float(var.max())}
            for mean, var in stats]}
    report = {"diagnostic": args.kind, "spec": spec.to_dict(), "seed": args.seed,
              "checkpoint": args.checkpoint, "version": __version__, "report": report}
    text = json.dumps(report, indent=2, default=_jsonable)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text)
    return 0


# -- argument parsing -------------------------------------------------------------

def _experiment_flags(p):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--algo", help="algorithm name, or comma-separated list")
    p.add_argument("--topology", help="A1, A2 or A3")
    p.add_argument("--optimizer", help="sgd or adam")
    p.add_argument("--expansion", type=int)
    p.add_argument("--replicates", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="majority-kernels", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _experiment_flags(sub.add_parser("run", help="train the configured algorithms"))
    _experiment_flags(sub.add_parser("tune", help="learning-rate grid search"))

    d = sub.add_parser("diagnose", help="theory diagnostics as JSON")
    d.add_argument("kind", choices=["bea", "sharpness", "fallback", "perturbation"])
    d.add_argument("--checkpoint")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--lr", type=float, default=0.01)
    d.add_argument("--steps", type=int, default=100)
    d.add_argument("--samples", type=int, default=1000)
    d.add_argument("--examples", type=int, default=256)
    d.add_argument("--optimizer", choices=list(OPTIMIZERS), default="sgd")
    d.add_argument("--dataset", choices=["blobs", "cifar10"], default="blobs")
    d.add_argument("--data-dir")
    d.add_argument("--topology", choices=sorted(TOPOLOGIES))
    d.add_argument("--expansion", type=int)
    d.add_argument("--input-dim", type=int)
    d.add_argument("--output-dim", type=int)
    d.add_argument("--out", help="write the report here as well as stdout")

    f = sub.add_parser("fetch-data", help="download CIFAR-10 (binary version)")
    f.add_argument("--dest", help="parent directory (default: parent of $MK_DATA_DIR)")

    r = sub.add_parser("report", help="summary table over finished runs")
    r.add_argument("--out", required=True)
    return parser


def resolve_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a JSON object")
    overrides = {
        "seed": args.seed, "out": args.out, "topology": args.topology,
        "optimizer": args.optimizer, "expansion": args.expansion, "replicates": args.replicates,
    }
    if args.algo:
        raw.pop("algorithm", None)
        overrides["algorithms"] = args.algo.split(",")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if args.topology:
        raw.pop("hidden_dims", None)
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.command in ("run", "tune"):
            cfg = resolve_config(args)
            return cmd_run(cfg, force_grid=args.command == "tune")
        if args.command == "diagnose":
            return cmd_diagnose(args)
        if args.command == "fetch-data":
            path = fetch_cifar10(args.dest)
            print(path)
            return 0
        if args.command == "report":
            return cmd_report(Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
