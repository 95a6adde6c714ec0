"""Config-driven command line: data generation, runs, metrics, theory checks.

Subcommands
-----------
``generate-data``  materialize per-node training shards and per-cluster
                   test sets as CSV files plus a manifest.
``run``            execute one protocol over a seed sweep, writing per-seed
                   round logs, prediction logs, and summary JSON.
``metrics``        recompute the headline fairness metrics from the saved
                   prediction logs and aggregate them across seeds.
``theory``         drive the quadratic-network contraction check and emit
                   its JSON report.

Configs are strict JSON: unknown keys anywhere are rejected, as are
values of the wrong type. Exit codes: 0 success, 1 bad config, 2 runtime
failure (including a failed theory check).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fairness, theory, tinynet
from .dataset import ClusterSpec, SamplePool, build_clustered_data, save_featurized
from .protocols import ALGORITHMS, ProtocolConfig, run

METRIC_NAMES = (
    "acc_majority",
    "acc_minority",
    "acc_all",
    "demographic_parity",
    "equalized_odds",
    "fair_acc",
)


class ConfigError(ValueError):
    """Raised for malformed or invalid configuration input (exit code 1)."""


# ----------------------------------------------------------- JSON schema

def _expect_object(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a JSON object")
    return value


def _reject_unknown(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _as_int(value, where: str) -> int:
    if type(value) is not int:  # bool is an int subclass; reject it too
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    return value


def _as_number(value, where: str) -> float:
    if type(value) is bool or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    return float(value)


def _as_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string, got {value!r}")
    return value


def _as_int_list(value, where: str) -> list[int]:
    if (
        not isinstance(value, list)
        or not value
        or any(type(v) is not int for v in value)
    ):
        raise ConfigError(f"{where} must be a non-empty list of integers")
    return list(value)


def _load_json(path) -> dict:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return _expect_object(data, str(path))


# ----------------------------------------------------- experiment config

_PROTOCOL_KEYS = {
    "k": 1,
    "eta": 0.05,
    "local_steps": 10,
    "batch_size": 8,
    "rounds": 300,
    "degree": 4,
    "warmup_rounds": 20,
    "eval_every": 20,
}
_DATA_DEFAULTS = {
    "classes": 4,
    "dim": 16,
    "train_per_node": 200,
    "test_per_cluster": 120,
    "seed": 0,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated contents of an experiment config file."""

    algorithm: str
    protocol_kwargs: dict
    spec: ClusterSpec
    classes: int
    dim: int
    train_per_node: int
    test_per_cluster: int
    data_seed: int
    arch: tinynet.Architecture
    seeds: tuple[int, ...]
    out: str | None

    def protocol(self, seed: int) -> ProtocolConfig:
        return ProtocolConfig(
            algorithm=self.algorithm, seed=seed, **self.protocol_kwargs
        )


def load_experiment_config(path) -> ExperimentConfig:
    data = _load_json(path)
    top_allowed = (
        {"algorithm", "clusters", "data", "model", "seeds", "out"}
        | set(_PROTOCOL_KEYS)
    )
    _reject_unknown(data, top_allowed, "config")
    if "algorithm" not in data:
        raise ConfigError("config is missing required key 'algorithm'")
    algorithm = _as_str(data["algorithm"], "algorithm")
    if algorithm not in ALGORITHMS:
        raise ConfigError(
            f"algorithm must be one of {', '.join(ALGORITHMS)}; got {algorithm!r}"
        )

    kwargs = {}
    for key, default in _PROTOCOL_KEYS.items():
        value = data.get(key, default)
        kwargs[key] = (
            _as_number(value, key) if key == "eta" else _as_int(value, key)
        )

    if "clusters" not in data:
        raise ConfigError("config is missing required key 'clusters'")
    clusters = _expect_object(data["clusters"], "clusters")
    _reject_unknown(clusters, {"sizes", "transform_seeds"}, "clusters")
    if "sizes" not in clusters:
        raise ConfigError("clusters is missing required key 'sizes'")
    sizes = _as_int_list(clusters["sizes"], "clusters.sizes")
    if "transform_seeds" in clusters:
        tseeds = _as_int_list(clusters["transform_seeds"], "clusters.transform_seeds")
    else:
        # seed 0 is the identity transform; later clusters get rotations
        tseeds = list(range(len(sizes)))

    dcfg = _expect_object(data.get("data", {}), "data")
    _reject_unknown(dcfg, set(_DATA_DEFAULTS), "data")
    dvals = {
        key: _as_int(dcfg.get(key, default), f"data.{key}")
        for key, default in _DATA_DEFAULTS.items()
    }

    mcfg = _expect_object(data.get("model", {}), "model")
    _reject_unknown(mcfg, {"hidden"}, "model")
    hidden = _as_int_list(mcfg.get("hidden", [32]), "model.hidden")

    seeds = tuple(_as_int_list(data["seeds"], "seeds")) if "seeds" in data else ()
    out = _as_str(data["out"], "out") if "out" in data else None

    try:
        spec = ClusterSpec(tuple(sizes), tuple(tseeds))
        arch = tinynet.Architecture(dvals["dim"], tuple(hidden), dvals["classes"])
        probe = ExperimentConfig(
            algorithm, kwargs, spec, dvals["classes"], dvals["dim"],
            dvals["train_per_node"], dvals["test_per_cluster"], dvals["seed"],
            arch, seeds, out,
        )
        probe.protocol(seed=0)  # surface ProtocolConfig range errors now
        if dvals["train_per_node"] % dvals["classes"] or (
            dvals["test_per_cluster"] % dvals["classes"]
        ):
            raise ValueError(
                "train_per_node and test_per_cluster must be divisible by classes"
            )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return probe


def _resolve_out(cfg_out: str | None, flag_out: str | None) -> Path:
    if flag_out is not None:
        return Path(flag_out)
    if cfg_out is not None:
        return Path(cfg_out)
    raise ConfigError("no output directory: pass --out or set 'out' in the config")


def _resolve_seeds(cfg_seeds, flag_seeds: str | None) -> tuple[int, ...]:
    if flag_seeds is not None:
        try:
            return tuple(int(s) for s in flag_seeds.split(","))
        except ValueError:
            raise ConfigError(f"--seeds must be comma-separated ints: {flag_seeds!r}")
    if cfg_seeds:
        return tuple(cfg_seeds)
    raise ConfigError("no seeds: pass --seeds or set 'seeds' in the config")


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# ------------------------------------------------------------- commands

def cmd_generate_data(cfg: ExperimentConfig, out_dir: Path, quiet: bool) -> None:
    """Write node shards, cluster test sets, and a manifest under out_dir."""
    datasets, test_sets = build_clustered_data(
        cfg.spec, cfg.classes, cfg.dim, cfg.train_per_node,
        cfg.test_per_cluster, cfg.data_seed,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    node_files = []
    for i, shard in enumerate(datasets):
        name = f"node_{i:02d}.csv"
        save_featurized(out_dir / name, SamplePool(shard.features, shard.labels))
        node_files.append(name)
    test_files = {}
    for j in range(cfg.spec.num_clusters):
        name = f"cluster_{j}_test.csv"
        save_featurized(out_dir / name, test_sets[j])
        test_files[str(j)] = name
    manifest = {
        "n": cfg.spec.num_nodes,
        "sizes": list(cfg.spec.sizes),
        "transform_seeds": list(cfg.spec.transform_seeds),
        "node_clusters": [cfg.spec.node_cluster(i) for i in range(cfg.spec.num_nodes)],
        "classes": cfg.classes,
        "dim": cfg.dim,
        "train_per_node": cfg.train_per_node,
        "test_per_cluster": cfg.test_per_cluster,
        "seed": cfg.data_seed,
        "node_files": node_files,
        "test_files": test_files,
    }
    _dump_json(out_dir / "manifest.json", manifest)
    if not quiet:
        print(f"wrote {len(node_files)} shards + {len(test_files)} test sets "
              f"to {out_dir}")


def run_one_seed(cfg: ExperimentConfig, datasets, test_sets, seed: int,
                 seed_dir: Path) -> dict:
    """Run one protocol instance and write its artifacts; returns the summary."""
    pconf = cfg.protocol(seed)
    records, states = run(pconf, cfg.spec, datasets, test_sets, cfg.arch)
    seed_dir.mkdir(parents=True, exist_ok=True)
    with open(seed_dir / "rounds.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    log = fairness.build_prediction_log(states, cfg.spec, test_sets, cfg.arch)
    fairness.save_prediction_log(seed_dir / "predictions.csv", log)
    report = fairness.report_from_log(log, cfg.spec)
    settle = None
    if cfg.algorithm == "facade" and pconf.rounds > 0:
        histories = [list(st.selection_history) for st in states]
        settle = fairness.settlement(histories, cfg.spec, num_heads=pconf.k).to_json()
    summary = {
        "algorithm": cfg.algorithm,
        "seed": seed,
        "rounds": pconf.rounds,
        "num_heads": pconf.k,
        "sizes": list(cfg.spec.sizes),
        "bytes_total": records[-1].bytes_cumulative,
        "fairness": report.to_json(),
        "settlement": settle,
        "final_per_cluster_acc": records[-1].per_cluster_acc,
    }
    _dump_json(seed_dir / "summary.json", summary)
    return summary


def cmd_run(cfg: ExperimentConfig, out_dir: Path, seeds, quiet: bool) -> None:
    datasets, test_sets = build_clustered_data(
        cfg.spec, cfg.classes, cfg.dim, cfg.train_per_node,
        cfg.test_per_cluster, cfg.data_seed,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        summary = run_one_seed(cfg, datasets, test_sets, seed,
                               out_dir / f"seed_{seed}")
        if not quiet:
            fair = summary["fairness"]
            print(f"seed {seed}: acc_all={fair['acc_all']:.4f} "
                  f"fair_acc={fair['fair_acc']:.4f}")


def cmd_metrics(results_dir: Path, quiet: bool) -> None:
    """Recompute metrics from saved prediction logs; aggregate across seeds."""
    seed_dirs = sorted(
        (p for p in results_dir.glob("seed_*") if p.is_dir()),
        key=lambda p: int(p.name.split("_", 1)[1]),
    )
    if not seed_dirs:
        raise RuntimeError(f"no seed_* result directories under {results_dir}")
    per_seed: dict[str, list[float]] = {name: [] for name in METRIC_NAMES}
    seeds = []
    algorithm = None
    for sd in seed_dirs:
        summary = json.loads((sd / "summary.json").read_text(encoding="utf-8"))
        algorithm = summary["algorithm"] if algorithm is None else algorithm
        if summary["algorithm"] != algorithm:
            raise RuntimeError(f"{sd} mixes algorithms in one results dir")
        seeds.append(summary["seed"])
        sizes = summary["sizes"]
        spec = ClusterSpec(tuple(sizes), tuple(range(len(sizes))))
        log = fairness.load_prediction_log(sd / "predictions.csv")
        report = fairness.report_from_log(log, spec)
        blob = report.to_json()
        for name in METRIC_NAMES:
            per_seed[name].append(blob[name])
    aggregated = {
        name: {
            "mean": float(np.mean(values)),
            "std": float(np.std(values)),  # population std: one seed -> 0
        }
        for name, values in per_seed.items()
    }
    _dump_json(results_dir / "summary.json", {
        "algorithm": algorithm,
        "seeds": seeds,
        "metrics": aggregated,
    })
    with open(results_dir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std"])
        for name in METRIC_NAMES:
            entry = aggregated[name]
            writer.writerow([name, repr(entry["mean"]), repr(entry["std"])])
    if not quiet:
        for name in METRIC_NAMES:
            entry = aggregated[name]
            print(f"{name}: {entry['mean']:.4f} ± {entry['std']:.4f}")


# --------------------------------------------------------- theory command

_THEORY_DEFAULTS = {
    "noise": 0.0,
    "dim": 8,
    "network_seed": 7,
    "eta": 0.2,
    "local_steps": 2,
    "rounds": 60,
    "degree": 3,
    "seed": 0,
    "alpha": 0.25,
    "eps": 0.25,
    "recovery_trials": 0,
}
_THEORY_INTS = {"dim", "network_seed", "local_steps", "rounds", "degree",
                "seed", "recovery_trials"}


def load_theory_config(path) -> dict:
    data = _load_json(path)
    allowed = {"k", "sizes", "Delta", "offset_norm", "out"} | set(_THEORY_DEFAULTS)
    _reject_unknown(data, allowed, "config")
    for key in ("k", "sizes", "Delta"):
        if key not in data:
            raise ConfigError(f"config is missing required key {key!r}")
    cfg = {
        "k": _as_int(data["k"], "k"),
        "sizes": _as_int_list(data["sizes"], "sizes"),
        "Delta": _as_number(data["Delta"], "Delta"),
        "offset_norm": None,
        "out": _as_str(data["out"], "out") if "out" in data else None,
    }
    if "offset_norm" in data and data["offset_norm"] is not None:
        cfg["offset_norm"] = _as_number(data["offset_norm"], "offset_norm")
    for key, default in _THEORY_DEFAULTS.items():
        value = data.get(key, default)
        cfg[key] = (
            _as_int(value, key) if key in _THEORY_INTS else _as_number(value, key)
        )
    return cfg


def cmd_theory(tcfg: dict, out_dir: Path | None, quiet: bool) -> int:
    """Run the contraction check (plus optional recovery trials). 0=PASS, 2=FAIL."""
    try:
        network = theory.build_quadratic_network(
            tcfg["k"], tcfg["sizes"], tcfg["Delta"], tcfg["noise"],
            tcfg["dim"], tcfg["network_seed"], offset_norm=tcfg["offset_norm"],
        )
        tparams = theory.TheoryParams(
            alpha=tcfg["alpha"],
            Delta=tcfg["Delta"],
            p=min(tcfg["sizes"]) / sum(tcfg["sizes"]),
            eps=tcfg["eps"],
            nu2=tcfg["noise"] ** 2,
        )
        pconf = ProtocolConfig(
            algorithm="facade", k=tcfg["k"], eta=tcfg["eta"],
            local_steps=tcfg["local_steps"], batch_size=1,
            rounds=tcfg["rounds"], degree=tcfg["degree"],
            warmup_rounds=0, eval_every=10**9, seed=tcfg["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = theory.contraction_check(network, pconf, tparams)
    payload = {"contraction": report.to_json()}
    if tcfg["recovery_trials"] > 0:
        recovery = theory.cluster_recovery_rate(
            network, pconf, tcfg["recovery_trials"], tparams
        )
        payload["recovery"] = recovery.to_json()
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _dump_json(out_dir / "theory_report.json", payload)
    if report.passed:
        if not quiet:
            print("PASS")
        return 0
    print("FAIL")
    for line in report.diagnostics:
        print(f"  {line}")
    return 2


# ------------------------------------------------------------------ main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusterdl",
        description="Clustered decentralized-learning simulator and checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, needs_config: bool = True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress")
        return p

    add("generate-data")
    run_p = add("run")
    run_p.add_argument("--seeds", help="comma-separated seed list override")
    add("metrics", needs_config=False)
    add("theory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "generate-data":
            cfg = load_experiment_config(args.config)
            cmd_generate_data(cfg, _resolve_out(cfg.out, args.out), args.quiet)
        elif args.command == "run":
            cfg = load_experiment_config(args.config)
            seeds = _resolve_seeds(cfg.seeds, args.seeds)
            cmd_run(cfg, _resolve_out(cfg.out, args.out), seeds, args.quiet)
        elif args.command == "metrics":
            if args.out is None:
                raise ConfigError("metrics needs --out pointing at a results dir")
            cmd_metrics(Path(args.out), args.quiet)
        else:  # theory
            tcfg = load_theory_config(args.config)
            out = args.out if args.out is not None else tcfg["out"]
            return cmd_theory(tcfg, Path(out) if out else None, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
