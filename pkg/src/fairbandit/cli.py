"""Command-line front end: convert, train, eval, sweep, multigroup, report.

Configs are TOML (JSON accepted); every command is deterministic given
its config, with wall-clock metadata confined to a sidecar
metadata.json so primary outputs are byte-identical across reruns.

Exit codes: 0 success, 1 internal error, 2 input/IO error, 3
data-validation error.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .dataset import (
    CsvSchema,
    GroupRule,
    GroupSpec,
    MixedLogging,
    RandomLogging,
    Tweak1Logging,
    convert_classification,
    load_csv,
    load_dataset_jsonl,
    save_dataset_jsonl,
    split,
)
from .errors import ConfigError, DataError, FairbanditError, IngestionError
from .estimators import estimate, group_value_summary
from .multigroup import train_multigroup
from .pareto import run_sweep, write_sweep_csv
from .policy import SoftmaxMlpPolicy
from .reports import Report, ReplicateResult, emit_report
from .reward_model import GbtConfig, GbtRewardModel, fit
from .rngutil import make_rng, replicate_seed
from .synthetic import env_from_config
from .trainer import TrainConfig, logging_disparity, train


def _load_config(path: Path) -> dict:
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out_dir", None) is not None:
        cfg["out_dir"] = args.out_dir
    if getattr(args, "replicates", None) is not None:
        cfg["replicates"] = args.replicates
    train_cfg = dict(cfg.get("train", {}))
    if getattr(args, "epsilon", None) is not None:
        train_cfg["epsilon"] = args.epsilon
    if getattr(args, "unconstrained", False):
        train_cfg["unconstrained"] = True
    if getattr(args, "sign_flip", False):
        train_cfg["sign_flip"] = True
    cfg["train"] = train_cfg
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg.get("out_dir", "fairbandit_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_path(cfg: dict, out: Path) -> Path:
    converted = cfg.get("dataset", {}).get("converted")
    return Path(converted) if converted else out / "dataset.jsonl"


def _logging_policy(cfg: dict):
    lp = cfg.get("logging_policy", {"kind": "random"})
    kind = lp.get("kind", "random")
    if kind == "random":
        return RandomLogging()
    if kind == "tweak1":
        return Tweak1Logging(
            rho=float(lp.get("rho", 0.9)), fixed_arm=int(lp.get("fixed_arm", 0))
        )
    if kind == "mixed":
        return MixedLogging(
            label_fraction=float(lp.get("label_fraction", 0.1)),
            temperature=float(lp.get("temperature", 2.0)),
            floor=float(lp.get("floor", 0.01)),
        )
    raise ConfigError(f"unknown logging policy kind {kind!r}")


def _gbt_config(cfg: dict, seed: int) -> GbtConfig:
    rm = dict(cfg.get("reward_model", {}))
    rm.setdefault("seed", seed)
    return GbtConfig(**rm)


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    tr = dict(cfg.get("train", {}))
    tr.pop("train_fraction", None)
    tr.setdefault("seed", seed)
    return TrainConfig(**tr)


def _train_fraction(cfg: dict) -> float:
    return float(cfg.get("train", {}).get("train_fraction", 0.7))


def _write_metadata(out: Path, command: str, seed: int, seeds: list, duration: float) -> None:
    meta = {
        "command": command,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "base_seed": seed,
        "replicate_seeds": seeds,
        "duration_seconds": duration,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
    }
    with open(out / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_convert(cfg: dict) -> int:
    started = time.monotonic()
    out = _out_dir(cfg)
    seed = int(cfg.get("seed", 0))
    ds_cfg = cfg.get("dataset", {})
    source = ds_cfg.get("source", "synthetic")
    kind = _logging_policy(cfg)
    if source == "synthetic":
        if isinstance(kind, MixedLogging):
            raise ConfigError(
                "the mixed logging policy needs a classification table; "
                "use random or tweak1 with synthetic data"
            )
        env = env_from_config(ds_cfg)
        n = int(ds_cfg.get("n", 4000))
        dataset = env.generate(n, kind, seed)
    else:
        schema = CsvSchema.from_config(ds_cfg)
        group_spec = GroupSpec(
            source=ds_cfg["group_source"],
            rule=GroupRule.from_config(ds_cfg["group_rule"]),
            keep_in_context=bool(ds_cfg.get("keep_in_context", True)),
        )
        table = load_csv(source, schema, group_spec)
        if isinstance(kind, MixedLogging):
            kind.fit(table.features, table.labels, table.num_classes, make_rng(seed, 1))
        dataset = convert_classification(table, kind, seed)
    path = _dataset_path(cfg, out)
    save_dataset_jsonl(dataset, path, seed=seed, logging_policy=kind)
    _write_metadata(out, "convert", seed, [seed], time.monotonic() - started)
    print(f"wrote {len(dataset)} samples to {path}")
    return 0


def _prepare_splits(cfg: dict, out: Path):
    path = _dataset_path(cfg, out)
    dataset, header = load_dataset_jsonl(path)
    seed = int(cfg.get("seed", 0))
    train_data, test_data = split(dataset, _train_fraction(cfg), seed)
    return dataset, header, train_data, test_data


def _require_groups(data, groups, where: str) -> None:
    counts = data.group_counts
    for g in groups:
        if counts[g] == 0:
            raise DataError(f"group {g} missing from the {where} split")


def _replicate_run(trainer, train_data, test_data, model, base_cfg, rep) -> tuple:
    cfg = replace(base_cfg, seed=replicate_seed(base_cfg.seed, rep))
    policy, trace = trainer(train_data, model, cfg)
    overall, per_group = group_value_summary(policy, model, test_data, "DR")
    return cfg.seed, policy, trace, overall, per_group


def cmd_train(cfg: dict, multigroup: bool = False) -> int:
    started = time.monotonic()
    out = _out_dir(cfg)
    seed = int(cfg.get("seed", 0))
    mode = cfg.get("mode", "multigroup" if multigroup else "two-group")
    replicates = int(cfg.get("replicates", 1))
    _dataset, header, train_data, test_data = _prepare_splits(cfg, out)

    groups_needed = range(train_data.num_groups) if multigroup else (0, 1)
    base_cfg = _train_config(cfg, seed)
    if mode == "unconstrained-baseline":
        base_cfg = replace(base_cfg, unconstrained=True)
    if not base_cfg.unconstrained:
        _require_groups(train_data, groups_needed, "train")
        _require_groups(test_data, groups_needed, "test")

    model = fit(train_data, _gbt_config(cfg, seed))
    model.save(out / "reward_model.json")

    trainer = train_multigroup if multigroup else train
    results = []
    seeds = []
    for rep in range(replicates):
        rep_seed, policy, trace, overall, per_group = _replicate_run(
            trainer, train_data, test_data, model, base_cfg, rep
        )
        seeds.append(rep_seed)
        policy.save(out / f"policy_seed{rep_seed}.json")
        trace.to_csv(out / f"trace_seed{rep_seed}.csv")
        finite = per_group[np.isfinite(per_group)]
        disp = float(finite.max() - finite.min())
        results.append(
            ReplicateResult(
                seed=rep_seed,
                overall=overall,
                per_group=tuple(float(v) for v in per_group),
                disparity=disp,
            )
        )
    lp = header.get("logging_policy") or {"kind": "unknown"}
    report = Report(
        dataset=cfg.get("name", "dataset"),
        group_label=cfg.get("group_label", "group"),
        off_policy=lp.get("kind", "unknown"),
        mode=mode,
        epsilon=None
        if base_cfg.unconstrained or base_cfg.epsilon == "logging"
        else float(base_cfg.epsilon),
        replicates=results,
        before_disparity=logging_disparity(test_data)
        if not multigroup
        else _max_logged_disparity(test_data),
    )
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    _write_metadata(
        out, "multigroup" if multigroup else "train", seed, seeds, time.monotonic() - started
    )
    print(
        f"{mode}: reward {report.reward_mean:.3f} ± {report.reward_std:.3f}, "
        f"disparity {report.disparity_mean:.3f} ± {report.disparity_std:.3f} "
        f"(before: {report.before_disparity:.3f})"
    )
    return 0


def _max_logged_disparity(data) -> float:
    means = []
    for g in range(data.num_groups):
        mask = data.groups == g
        if mask.any():
            means.append(float(data.rewards[mask].mean()))
    return max(means) - min(means) if len(means) > 1 else 0.0


def cmd_eval(args) -> int:
    policy = SoftmaxMlpPolicy.load(Path(args.checkpoint))
    dataset, _header = load_dataset_jsonl(Path(args.dataset))
    model = GbtRewardModel.load(Path(args.model)) if args.model else None
    methods = ("DM", "IPS", "DR") if model is not None else ("IPS",)
    out = {}
    for method in methods:
        records = [estimate(policy, model, dataset, method, None).to_record()]
        values = []
        for g in range(dataset.num_groups):
            if (dataset.groups == g).any():
                est = estimate(policy, model, dataset, method, g)
                records.append(est.to_record())
                values.append(est.value)
        out[method] = {
            "estimates": records,
            "disparity": max(values) - min(values) if len(values) > 1 else 0.0,
        }
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_sweep(cfg: dict) -> int:
    started = time.monotonic()
    out = _out_dir(cfg)
    seed = int(cfg.get("seed", 0))
    _dataset, _header, train_data, test_data = _prepare_splits(cfg, out)
    _require_groups(train_data, (0, 1), "train")
    _require_groups(test_data, (0, 1), "test")
    model = fit(train_data, _gbt_config(cfg, seed))
    model.save(out / "reward_model.json")
    grid = [float(e) for e in cfg.get("sweep", {}).get(
        "epsilon_grid", [0.01, 0.03, 0.05, 0.07, 0.1]
    )]
    result = run_sweep(
        train_data,
        test_data,
        model,
        grid,
        _train_config(cfg, seed),
        replicates=int(cfg.get("replicates", 1)),
        checkpoint_dir=out / "sweep_checkpoints",
    )
    write_sweep_csv(result, out / "sweep.csv")
    result.chosen_policy.save(out / "chosen_policy.json")
    _write_metadata(out, "sweep", seed, [seed], time.monotonic() - started)
    print(
        f"chosen epsilon={result.chosen.epsilon} "
        f"r0={result.chosen.r0:.3f} r1={result.chosen.r1:.3f} "
        f"disparity={result.chosen.disparity:.3f}"
    )
    return 0


def cmd_report(args) -> int:
    reports = []
    for frag in args.fragments:
        with open(frag, encoding="utf-8") as fh:
            reports.append(Report.from_json(fh.read()))
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    emit_report(reports, out / "report_table.csv", out / "report_table.txt")
    print((out / "report_table.txt").read_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairbandit",
        description="Group-constrained offline contextual bandit experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--unconstrained", action="store_true")
        p.add_argument("--sign-flip", action="store_true")

    for name in ("convert", "train", "sweep", "multigroup"):
        add_common(sub.add_parser(name))

    p_eval = sub.add_parser("eval")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--model", default=None, help="reward model JSON (enables DM/DR)")
    p_eval.add_argument("--out", default=None)

    p_rep = sub.add_parser("report")
    p_rep.add_argument("--fragments", nargs="+", required=True)
    p_rep.add_argument("--out-dir", default=None)
    return parser


def run(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "eval":
        return cmd_eval(args)
    if args.command == "report":
        return cmd_report(args)
    cfg = _apply_overrides(_load_config(Path(args.config)), args)
    if args.command == "convert":
        return cmd_convert(cfg)
    if args.command == "train":
        return cmd_train(cfg, multigroup=False)
    if args.command == "multigroup":
        return cmd_train(cfg, multigroup=True)
    if args.command == "sweep":
        return cmd_sweep(cfg)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    try:
        return run(argv)
    except (FileNotFoundError, ConfigError, tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FairbanditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
