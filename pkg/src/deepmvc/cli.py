"""Command-line experiment runner.

Subcommands: ``generate``, ``train``, ``evaluate``, ``verify-theory`` and
``sweep-views``. Configs are YAML mappings; command-line flags override
config values. Exit codes: 0 success, 2 configuration error, 3 data-format
error, 4 training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from .datasets import MVD_VERSION as FORMAT_VERSION, GeneratorSpec, MultiViewDataset, generate, load_mvd, save_mvd
from .errors import ConfigurationError, ContractViolation, DeepMVCError, FormatError, TrainingError
from .evaluation import DEFAULT_BOOTSTRAP, DEFAULT_RUNS, RunRecord, bootstrap_std, select_best_run, zscore_table
from .instances import InstanceSpec, ablate, make_spec, run_once, views_sweep
from .theory import monotonicity_report, simulate_min

log = logging.getLogger("deepmvc")

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_TRAINING = 0, 2, 3, 4


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=dict)
    instances: list = field(default_factory=list)
    runs: int = DEFAULT_RUNS
    bootstrap: int = DEFAULT_BOOTSTRAP
    out: str = "out"
    seed: int = 0
    jobs: int = 1
    theory: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    groups: dict | None = None

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset, "instances": self.instances, "runs": self.runs, "bootstrap": self.bootstrap,
            "out": self.out, "seed": self.seed, "theory": self.theory, "sweep": self.sweep, "groups": self.groups,
        }


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must be a mapping")
    return data


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = load_config(getattr(args, "config", None))
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known - {"instance"}
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if "instance" in raw:
        raw.setdefault("instances", []).append(raw.pop("instance"))
    cfg = ExperimentConfig(**raw)
    for name in ("seed", "runs", "bootstrap", "out"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    jobs = getattr(args, "jobs", None)
    if jobs is None:
        env = os.environ.get("DEEPMVC_JOBS")
        try:
            jobs = int(env) if env else cfg.jobs
        except ValueError as exc:
            raise ConfigurationError(f"DEEPMVC_JOBS must be an integer, got {env!r}") from exc
    cfg.jobs = int(jobs)
    if cfg.runs < 1 or cfg.bootstrap < 2 or cfg.jobs < 1:
        raise ConfigurationError("runs >= 1, bootstrap >= 2 and jobs >= 1 are required")
    return cfg


# -- config pieces -------------------------------------------------------------------


def dataset_from_config(section: dict, seed: int) -> MultiViewDataset:
    if not section:
        raise ConfigurationError("config needs a 'dataset' section")
    section = dict(section)
    if "path" in section:
        return load_mvd(section["path"])
    section.setdefault("seed", seed)
    try:
        spec = GeneratorSpec(**section)
    except TypeError as exc:
        raise ConfigurationError(f"bad dataset section: {exc}") from exc
    return generate(spec)


def generator_spec(section: dict, seed: int) -> GeneratorSpec:
    section = dict(section)
    if "path" in section:
        raise ConfigurationError("generate needs a generator spec, not a path")
    section.setdefault("seed", seed)
    try:
        return GeneratorSpec(**section)
    except TypeError as exc:
        raise ConfigurationError(f"bad dataset section: {exc}") from exc


def instance_from_config(entry) -> InstanceSpec:
    """``"CAE-DDC"`` or ``{name: CAE-DDC, ablate: {mv_ssl: none}, epochs: 50, ...}``."""
    if isinstance(entry, str):
        return make_spec(entry)
    if not isinstance(entry, dict) or "name" not in entry:
        raise ConfigurationError(f"instance entry needs a name: {entry!r}")
    entry = dict(entry)
    name = entry.pop("name")
    ablations = entry.pop("ablate", {}) or {}
    label = entry.pop("label", None)
    if "hidden_dims" in entry:
        entry["hidden_dims"] = tuple(entry["hidden_dims"])
    try:
        spec = make_spec(name, **entry)
    except TypeError as exc:
        raise ConfigurationError(f"bad instance entry for {name}: {exc}") from exc
    for slot, value in ablations.items():
        spec = ablate(spec, slot, value)
    if label is None and spec.ablations:
        label = f"{name}[{','.join(spec.ablations)}]"
    return replace(spec, name=label) if label else spec


def instances_from_config(cfg: ExperimentConfig) -> list[InstanceSpec]:
    if not cfg.instances:
        raise ConfigurationError("config needs at least one instance")
    return [instance_from_config(e) for e in cfg.instances]


def _jobs_for(cfg: ExperimentConfig) -> int:
    return max(1, cfg.jobs)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from exc
    return out


# -- commands ------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig) -> int:
    spec = generator_spec(cfg.dataset, cfg.seed)
    ds = generate(spec)
    out = _out_dir(cfg)
    path = out / f"{ds.name}.mvd"
    try:
        save_mvd(ds, path)
        _write_json(path.with_suffix(".json"), {
            "generator": spec.to_dict(), "seed": spec.seed, "format_version": FORMAT_VERSION,
            "n": ds.n, "V": ds.n_views, "k": ds.k, "dims": ds.dims, "package_version": __version__,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        })
    except OSError as exc:
        raise ConfigurationError(f"cannot write {path}: {exc}") from exc
    print(f"wrote {path} (n={ds.n}, V={ds.n_views}, k={ds.k})")
    return EXIT_OK


def _train_task(args) -> dict:
    spec, ds = args
    try:
        return {"ok": run_once(spec, ds).record(ds).to_json()}
    except TrainingError as exc:
        return {"failed": {"model": spec.name, "dataset": ds.name, "seed": spec.seed, "error": str(exc),
                           "epoch": exc.epoch, "components": exc.components}}


def train_records(specs: Sequence[InstanceSpec], ds: MultiViewDataset, runs: int, seed: int, jobs: int):
    """All (instance, seed) runs; results are merged in (instance, seed) order."""
    tasks = [(replace(s, seed=seed + r), ds) for s in specs for r in range(runs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_task, tasks))
    else:
        results = [_train_task(t) for t in tasks]
    rows = [r["ok"] for r in results if "ok" in r]
    failures = [r["failed"] for r in results if "failed" in r]
    return rows, failures


def cmd_train(cfg: ExperimentConfig) -> int:
    ds = dataset_from_config(cfg.dataset, cfg.seed)
    specs = instances_from_config(cfg)
    rows, failures = train_records(specs, ds, cfg.runs, cfg.seed, _jobs_for(cfg))
    out = _out_dir(cfg)
    with open(out / "runs.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if failures:
        with open(out / "failures.jsonl", "w") as fh:
            for row in failures:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        for row in failures:
            print(f"run failed: {row['model']} seed {row['seed']}: {row['error']}", file=sys.stderr)
    print(f"wrote {len(rows)} run(s) to {out / 'runs.jsonl'}")
    return EXIT_TRAINING if failures else EXIT_OK


def read_records(paths: Sequence[str]) -> tuple[list[RunRecord], int]:
    records, skipped = [], 0
    for path in paths:
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise ConfigurationError(f"cannot read results file {path}: {exc}") from exc
        for line in lines:
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError, DeepMVCError):
                skipped += 1
    return records, skipped


def aggregate(records: Sequence[RunRecord], B: int, seed: int, groups=None) -> dict:
    cells: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        cells.setdefault((r.model, r.dataset), []).append(r)
    selected = []
    results: dict[str, dict[str, dict[str, float]]] = {}
    for (model, dataset), runs in sorted(cells.items()):
        best = select_best_run(runs)
        est = bootstrap_std(runs, B, seed)
        selected.append({"model": model, "dataset": dataset, "runs": len(runs), "seed": best.seed,
                         "acc": best.acc, "nmi": best.nmi, "acc_std_hat": est["acc"].std_hat,
                         "nmi_std_hat": est["nmi"].std_hat})
        results.setdefault(model, {})[dataset] = {"acc": best.acc, "nmi": best.nmi}
    report: dict[str, Any] = {"selected": selected, "zscores": None, "notice": None}
    if len(results) < 2:
        report["notice"] = "Z-score table omitted: fewer than two models"
        return report
    datasets = {d for per in results.values() for d in per}
    complete = [d for d in sorted(datasets) if all(d in per for per in results.values())]
    if not complete:
        report["notice"] = "Z-score table omitted: no dataset shared by all models"
        return report
    trimmed = {m: {d: per[d] for d in complete} for m, per in results.items()}
    table = zscore_table(trimmed, groups)
    stds = {m: {"acc": [], "nmi": []} for m in results}
    for row in selected:
        if row["dataset"] in complete:
            stds[row["model"]]["acc"].append(row["acc_std_hat"])
            stds[row["model"]]["nmi"].append(row["nmi_std_hat"])
    report["zscores"] = [
        {"model": m, "group": g, "mean_z": z,
         "acc_std_hat": float(sum(stds[m]["acc"]) / len(stds[m]["acc"])),
         "nmi_std_hat": float(sum(stds[m]["nmi"]) / len(stds[m]["nmi"]))}
        for m, row in sorted(table.items()) for g, z in row.items()
    ]
    return report


def _fmt(value) -> str:
    if isinstance(value, float):
        # shortest round-trip form, so the text table parses back to the JSON values
        return repr(value)
    return str(value)


def text_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    cells = [[_fmt(row[c]) for c in columns] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def render_report(report: dict) -> str:
    parts = [text_table(report["selected"], ["model", "dataset", "runs", "seed", "acc", "acc_std_hat",
                                             "nmi", "nmi_std_hat"])]
    if report["zscores"]:
        parts.append(text_table(report["zscores"], ["model", "group", "mean_z", "acc_std_hat", "nmi_std_hat"]))
    if report["notice"]:
        parts.append(report["notice"])
    if report.get("skipped"):
        parts.append(f"skipped {report['skipped']} malformed row(s)")
    return "\n\n".join(parts) + "\n"


def cmd_evaluate(cfg: ExperimentConfig, paths: Sequence[str]) -> int:
    if not paths:
        raise ConfigurationError("evaluate needs at least one results file")
    records, skipped = read_records(paths)
    if not records:
        raise ConfigurationError(f"no valid run records in {list(paths)} ({skipped} malformed)")
    report = aggregate(records, cfg.bootstrap, cfg.seed, cfg.groups)
    report["skipped"] = skipped
    out = _out_dir(cfg)
    _write_json(out / "report.json", report)
    text = render_report(report)
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def parse_pmf(value) -> list[float]:
    """``[0.2, 0.8]`` or ``"1/3,1/3,1/3"``."""
    if isinstance(value, str):
        try:
            return [float(Fraction(p.strip())) for p in value.split(",") if p.strip()]
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigurationError(f"cannot parse pmf {value!r}") from exc
    try:
        return [float(p) for p in value]
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"cannot parse pmf {value!r}") from exc


def theory_report(pmf: Sequence[float], V_max: int, trials: int, seed: int) -> dict:
    mono = monotonicity_report(pmf, V_max)
    rows = []
    violations = 0
    for V, exact in enumerate(mono.values, start=1):
        stat = simulate_min(pmf, V, trials, seed)
        violations += stat.nesting_violations
        rows.append({"V": V, "exact": exact, "empirical": stat.empirical_mean, "std_error": stat.std_error,
                     "within_3se": abs(stat.empirical_mean - exact) <= 3 * stat.std_error + 1e-12})
    return {"pmf": list(mono.pmf), "V_max": V_max, "trials": trials, "seed": seed, "rows": rows,
            "nesting_violations": violations, "non_increasing": mono.non_increasing, "constant": mono.constant}


def cmd_verify_theory(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    section = dict(cfg.theory)
    if args.pmf is not None:
        section["pmf"] = args.pmf
    if args.v_max is not None:
        section["V_max"] = args.v_max
    if args.trials is not None:
        section["trials"] = args.trials
    if "pmf" not in section:
        raise ConfigurationError("verify-theory needs a pmf (--pmf or theory.pmf)")
    try:
        report = theory_report(parse_pmf(section["pmf"]), int(section.get("V_max", 6)),
                               int(section.get("trials", 100_000)), cfg.seed)
    except ContractViolation as exc:
        raise ConfigurationError(str(exc)) from exc
    out = _out_dir(cfg)
    _write_json(out / "theory.json", report)
    columns = ["V", "exact", "empirical", "std_error", "within_3se"]
    with open(out / "theory.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(report["rows"])
    print(text_table(report["rows"], columns))
    print(f"nesting violations: {report['nesting_violations']}; non-increasing: {report['non_increasing']}; "
          f"constant: {report['constant']}")
    ok = report["nesting_violations"] == 0 and report["non_increasing"]
    return EXIT_OK if ok else EXIT_TRAINING


def cmd_sweep_views(cfg: ExperimentConfig) -> int:
    ds = dataset_from_config(cfg.dataset, cfg.seed)
    if ds.n_views < 2:
        raise ConfigurationError("sweep-views needs a dataset with at least two views")
    specs = instances_from_config(cfg)
    counts = [int(c) for c in cfg.sweep.get("view_counts", range(2, ds.n_views + 1))]
    if not counts or max(counts) > ds.n_views or min(counts) < 1:
        raise ConfigurationError(f"view_counts {counts} must lie in [1, {ds.n_views}]")
    rows = []
    for spec in specs:
        for p in views_sweep(ds, spec, counts, cfg.runs, cfg.seed, cfg.bootstrap, _jobs_for(cfg)):
            rows.append({"V": p.V, "model": p.model, "acc": p.acc, "acc_std": p.acc_std})
    out = _out_dir(cfg)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["V", "model", "acc", "acc_std"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    summary = {"dataset": ds.name, "view_counts": counts, "models": [s.name for s in specs], "rows": rows}
    if len(specs) >= 2:
        a, b = specs[0].name, specs[1].name
        acc = {(r["model"], r["V"]): r["acc"] for r in rows}
        summary["gap"] = {"minuend": a, "subtrahend": b,
                          "values": [{"V": v, "gap": acc[(a, v)] - acc[(b, v)]} for v in counts]}
    _write_json(out / "sweep_summary.json", summary)
    print(text_table(rows, ["V", "model", "acc", "acc_std"]))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepmvc", description="Deep multi-view clustering experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="global seed (runs use seed .. seed + R - 1)")
    common.add_argument("--runs", type=int, help="seeded runs per instance")
    common.add_argument("--bootstrap", type=int, help="bootstrap resamples B")
    common.add_argument("--jobs", type=int, help="parallel runs (fallback: $DEEPMVC_JOBS)")
    common.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset as MVD + JSON sidecar")
    sub.add_parser("train", parents=[common], help="train instances, one JSONL row per run")
    ev = sub.add_parser("evaluate", parents=[common], help="aggregate JSONL results")
    ev.add_argument("results", nargs="+", help="runs.jsonl files")
    th = sub.add_parser("verify-theory", parents=[common], help="check the expected-minimum results")
    th.add_argument("--pmf", help="comma-separated pmf over 1..k, fractions allowed")
    th.add_argument("--v-max", type=int, dest="v_max")
    th.add_argument("--trials", type=int)
    sub.add_parser("sweep-views", parents=[common], help="accuracy against the number of views")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.results)
        if args.command == "verify-theory":
            return cmd_verify_theory(cfg, args)
        return cmd_sweep_views(cfg)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ConfigurationError, ContractViolation, DeepMVCError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
