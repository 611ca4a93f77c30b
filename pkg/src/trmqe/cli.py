"""Command-line front door.

Commands: ``synth``, ``extract-check``, ``train``, ``evaluate``, ``sweep``,
``report``. Training and sweeps are driven by a single TOML config file;
any config key can be overridden on the command line with repeated
``--set section.key=value`` flags. Relative output directories resolve
under ``$TRMQE_OUT_ROOT`` when it is set.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import EmbeddedExample
from .embfile import group_examples, read_embedding_file, write_embedding_file
from .errors import ConfigError, TrmQeError
from .metrics import evaluate_model
from .model import QeModel, TrmConfig, count_trainable
from .svd import SvdProjector, collect_token_rows, fit_svd, load_projector, project_examples, save_projector
from .synth import synth_task
from .train import TrainConfig, train

logger = logging.getLogger(__name__)

OUT_ROOT_ENV = "TRMQE_OUT_ROOT"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

ARTIFACTS = {
    "checkpoint": "model.trmckpt",
    "trainlog": "trainlog.jsonl",
    "report_json": "eval_report.json",
    "report_md": "eval_report.md",
    "predictions": "predictions.tsv",
    "projector": "svd_projector.npz",
}


def resolve_out(path_str: str) -> Path:
    path = Path(path_str)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


# ---------------------------------------------------------------------------
# config plumbing


def _load_toml(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc


def _apply_overrides(raw: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        keys = dotted.split(".")
        node = raw
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {dotted!r} walks through a non-table value")
        node[keys[-1]] = _parse_literal(value)
    return raw


def _parse_literal(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if "," in text:
        return [_parse_literal(t) for t in text.split(",") if t]
    return text


def _pick(table: dict, keys) -> dict:
    unknown = set(table) - set(keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)} (allowed: {sorted(keys)})")
    return dict(table)


_MODEL_KEYS = (
    "hidden_dim",
    "n_heads",
    "ffn_mult",
    "l_cycles",
    "external_steps",
    "head_type",
    "max_seq_len",
    "dropout",
    "seed",
    "architecture",
    "standard_depth",
)
_TRAIN_KEYS = (
    "lr",
    "weight_decay",
    "batch_size",
    "max_epochs",
    "patience",
    "loss",
    "per_step_loss_weight",
    "freeze_spec",
    "seed",
    "eval_every",
    "grad_clip",
    "warmup_steps",
)
_DATA_KEYS = ("train", "val", "test", "svd_to", "eval_resamples", "eval_seed")


class RunConfig:
    """Validated train/evaluate run configuration from one TOML document."""

    def __init__(self, raw: dict, base_dir: Path):
        data = _pick(raw.get("data", {}), _DATA_KEYS)
        for key in ("train", "val", "test"):
            if key not in data:
                raise ConfigError(f"[data].{key} embedding file is required")
        self.train_path = (base_dir / data["train"]).resolve() if not Path(data["train"]).is_absolute() else Path(data["train"])
        self.val_path = (base_dir / data["val"]).resolve() if not Path(data["val"]).is_absolute() else Path(data["val"])
        self.test_path = (base_dir / data["test"]).resolve() if not Path(data["test"]).is_absolute() else Path(data["test"])
        self.svd_to = int(data.get("svd_to", 0))
        self.eval_resamples = int(data.get("eval_resamples", 1000))
        self.eval_seed = int(data.get("eval_seed", 0))

        model_table = _pick(raw.get("model", {}), _MODEL_KEYS)
        self.architecture = model_table.pop("architecture", "trm")
        self.standard_depth = int(model_table.pop("standard_depth", 8))
        self.model_table = model_table
        if self.architecture not in ("trm", "standard"):
            raise ConfigError(f"architecture must be 'trm' or 'standard', got {self.architecture!r}")
        if self.architecture == "standard" and self.standard_depth < 1:
            raise ConfigError(f"standard_depth must be >= 1, got {self.standard_depth}")
        # architecture fields fail fast; input_dim is data-dependent and checked later
        self.model_config(input_dim=8)

        train_table = _pick(raw.get("train", {}), _TRAIN_KEYS)
        if "freeze_spec" in train_table and isinstance(train_table["freeze_spec"], str):
            train_table["freeze_spec"] = (train_table["freeze_spec"],) if train_table["freeze_spec"] else ()
        if "freeze_spec" in train_table and isinstance(train_table["freeze_spec"], list):
            train_table["freeze_spec"] = tuple(train_table["freeze_spec"])
        self.train_cfg = TrainConfig(**train_table)
        self.train_cfg.validate()

        out = raw.get("out", {})
        self.out_dir = resolve_out(str(out.get("dir", "runs/default")))

    def model_config(self, input_dim: int) -> TrmConfig:
        cfg = TrmConfig(input_dim=input_dim, **self.model_table)
        cfg.validate()
        return cfg


def load_run_config(path: Path, overrides: list[str]) -> RunConfig:
    raw = _apply_overrides(_load_toml(path), overrides)
    return RunConfig(raw, path.parent)


def _require_file(path: Path, what: str) -> None:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _load_split(path: Path) -> list[EmbeddedExample]:
    _require_file(path, "embedding file")
    _, examples = read_embedding_file(path)
    return examples


def _prepare_data(cfg: RunConfig):
    """Load splits and apply the optional SVD projection fitted on train rows."""
    train_ex = _load_split(cfg.train_path)
    val_ex = _load_split(cfg.val_path)
    test_ex = _load_split(cfg.test_path)
    if not train_ex:
        raise ConfigError(f"train embedding file {cfg.train_path} is empty")
    projector = None
    if cfg.svd_to > 0:
        rows = collect_token_rows(train_ex, seed=cfg.train_cfg.seed)
        projector = fit_svd(rows, cfg.svd_to)
        train_ex = project_examples(train_ex, projector)
        val_ex = project_examples(val_ex, projector)
        test_ex = project_examples(test_ex, projector)
    return train_ex, val_ex, test_ex, projector


def run_training(cfg: RunConfig) -> dict:
    """Train + evaluate one configuration; writes the artifact set."""
    train_ex, val_ex, test_ex, projector = _prepare_data(cfg)
    d_in = train_ex[0].d_in
    model_cfg = cfg.model_config(input_dim=d_in)
    model = QeModel(model_cfg, architecture=cfg.architecture, standard_depth=cfg.standard_depth)

    t0 = time.perf_counter()
    log = train(model, train_ex, val_ex, cfg.train_cfg)
    wall = time.perf_counter() - t0

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if projector is not None:
        save_projector(cfg.out_dir / ARTIFACTS["projector"], projector)
    save_checkpoint(cfg.out_dir / ARTIFACTS["checkpoint"], model)
    (cfg.out_dir / ARTIFACTS["trainlog"]).write_text(log.to_jsonl(), encoding="utf-8")

    report = evaluate_model(
        model,
        group_examples(test_ex),
        resamples=cfg.eval_resamples,
        seed=cfg.eval_seed,
        predictions_path=cfg.out_dir / ARTIFACTS["predictions"],
    )
    (cfg.out_dir / ARTIFACTS["report_json"]).write_text(report.to_json(), encoding="utf-8")
    (cfg.out_dir / ARTIFACTS["report_md"]).write_text(report.to_markdown(), encoding="utf-8")
    return {
        "trainable_params": count_trainable(model.params, cfg.train_cfg.freeze_spec),
        "report": report,
        "train_wall_clock_s": wall,
        "selected_epoch": log.selected_epoch,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    examples = synth_task(
        n_examples=args.n,
        seq_lens=(args.seq_min, args.seq_max),
        d_in=args.dim,
        noise_sigma=args.noise,
        seed=args.seed,
        n_pairs=args.pairs,
    )
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_file(
        out,
        examples,
        d_in=args.dim,
        metadata={
            "tokenizer_note": "synthetic task, no tokenizer",
            "creation_params": {
                "n": args.n,
                "seq_lens": [args.seq_min, args.seq_max],
                "noise_sigma": args.noise,
                "seed": args.seed,
                "n_pairs": args.pairs,
            },
        },
    )
    print(f"wrote {len(examples)} examples to {out}")
    return EXIT_OK


def cmd_extract_check(args) -> int:
    path = Path(args.file)
    _require_file(path, "embedding file")
    meta, examples = read_embedding_file(path)
    by_pair = group_examples(examples)
    print(f"{path}: OK")
    print(f"  encoder_id: {meta.get('encoder_id')}")
    print(f"  d_in: {meta['d_in']}, examples: {meta['count']}")
    for pair_id, group in sorted(by_pair.items()):
        lens = [len(ex.source_emb) + len(ex.translation_emb) for ex in group]
        print(f"  {pair_id}: n={len(group)}, mean tokens/example={np.mean(lens):.1f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(Path(args.config), args.set or [])
    result = run_training(cfg)
    print(f"artifacts in {cfg.out_dir}")
    overall = result["report"].overall
    print(
        f"test pearson={overall.pearson if overall.pearson is None else round(overall.pearson, 4)} "
        f"spearman={overall.spearman if overall.spearman is None else round(overall.spearman, 4)} "
        f"mae={round(overall.mae, 4)} trainable={result['trainable_params']}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    _require_file(ckpt, "checkpoint")
    test_path = Path(args.test)
    model = load_checkpoint(ckpt)
    examples = _load_split(test_path)
    if args.projector:
        projector = load_projector(Path(args.projector))
        examples = project_examples(examples, projector)
    out_dir = resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate_model(
        model,
        group_examples(examples),
        resamples=args.resamples,
        seed=args.seed,
        predictions_path=out_dir / ARTIFACTS["predictions"],
    )
    (out_dir / ARTIFACTS["report_json"]).write_text(report.to_json(), encoding="utf-8")
    (out_dir / ARTIFACTS["report_md"]).write_text(report.to_markdown(), encoding="utf-8")
    print(f"eval report in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweeps


SWEEP_AXES = ("external_steps", "l_cycles", "embeddings", "freeze", "architecture")

CSV_COLUMNS = [
    "cell_id",
    "phase",
    "embedding",
    "architecture",
    "external_steps",
    "l_cycles",
    "freeze",
    "trainable_params",
    "pearson",
    "spearman",
    "mae",
    "pearson_ci_low",
    "pearson_ci_high",
    "spearman_ci_low",
    "spearman_ci_high",
    "mae_ci_low",
    "mae_ci_high",
    "wall_clock_s",
    "error",
]


def _freeze_tag(pattern) -> str:
    pats = pattern if isinstance(pattern, (list, tuple)) else [pattern]
    pats = [p for p in pats if p]
    if not pats:
        return "ft"
    cleaned = "".join(c if c.isalnum() else "" for c in "".join(pats))
    return f"frz-{cleaned or 'all'}"


def expand_cells(spec: dict, base_dir: Path) -> list[dict]:
    grid = spec.get("grid", {})
    unknown = set(grid) - set(SWEEP_AXES)
    if unknown:
        raise ConfigError(f"unknown grid axes: {sorted(unknown)} (allowed: {SWEEP_AXES})")
    steps = grid.get("external_steps", [None])
    cycles = grid.get("l_cycles", [None])
    freezes = grid.get("freeze", [None])
    archs = grid.get("architecture", [None])
    embeddings = grid.get("embeddings", [None])
    for emb in embeddings:
        if emb is not None and not isinstance(emb, dict):
            raise ConfigError("grid.embeddings entries must be tables with name/train/val/test")
    cells = []
    for emb in embeddings:
        for arch in archs:
            for frz in freezes:
                for n in steps:
                    for l in cycles:
                        parts = []
                        if emb is not None:
                            parts.append(f"emb-{emb['name']}")
                        if arch is not None:
                            parts.append(arch)
                        if frz is not None:
                            parts.append(_freeze_tag(frz))
                        if n is not None:
                            parts.append(f"n{n}")
                        if l is not None:
                            parts.append(f"l{l}")
                        cells.append(
                            {
                                "cell_id": "_".join(parts) or "cell",
                                "embedding": emb,
                                "architecture": arch,
                                "external_steps": n,
                                "l_cycles": l,
                                "freeze": frz,
                            }
                        )
    if not cells:
        raise ConfigError("sweep grid is empty")
    return cells


def _cell_run_config(spec: dict, cell: dict, base_dir: Path, cell_dir: Path) -> RunConfig:
    raw = json.loads(json.dumps(spec.get("base", {})))  # deep copy
    raw.setdefault("model", {})
    raw.setdefault("train", {})
    raw.setdefault("data", {})
    if cell["external_steps"] is not None:
        raw["model"]["external_steps"] = cell["external_steps"]
    if cell["l_cycles"] is not None:
        raw["model"]["l_cycles"] = cell["l_cycles"]
    if cell["architecture"] is not None:
        raw["model"]["architecture"] = cell["architecture"]
    if cell["freeze"] is not None:
        raw["train"]["freeze_spec"] = cell["freeze"]
    if cell["embedding"] is not None:
        emb = dict(cell["embedding"])
        emb.pop("name", None)
        raw["data"].update(emb)
    raw["out"] = {"dir": str(cell_dir)}
    return RunConfig(raw, base_dir)


def run_cell(spec: dict, cell: dict, base_dir: str, out_dir: str) -> dict:
    """One sweep cell: train, evaluate, write row.json + DONE marker."""
    cell_dir = Path(out_dir) / "cells" / cell["cell_id"]
    row_path = cell_dir / "row.json"
    done_path = cell_dir / "DONE"
    if done_path.exists() and row_path.exists():
        return json.loads(row_path.read_text())
    cell_dir.mkdir(parents=True, exist_ok=True)
    row = {
        "cell_id": cell["cell_id"],
        "phase": spec.get("phase"),
        "embedding": (cell["embedding"] or {}).get("name"),
        "architecture": cell["architecture"],
        "external_steps": cell["external_steps"],
        "l_cycles": cell["l_cycles"],
        "freeze": ",".join(cell["freeze"]) if isinstance(cell["freeze"], (list, tuple)) else cell["freeze"],
        "trainable_params": None,
        "pearson": None,
        "spearman": None,
        "mae": None,
        "pearson_ci_low": None,
        "pearson_ci_high": None,
        "spearman_ci_low": None,
        "spearman_ci_high": None,
        "mae_ci_low": None,
        "mae_ci_high": None,
        "wall_clock_s": None,
        "error": None,
    }
    try:
        cfg = _cell_run_config(spec, cell, Path(base_dir), cell_dir)
        result = run_training(cfg)
        overall = result["report"].overall
        row.update(
            trainable_params=result["trainable_params"],
            pearson=overall.pearson,
            spearman=overall.spearman,
            mae=overall.mae,
            wall_clock_s=result["train_wall_clock_s"],
        )
        for name in ("pearson", "spearman", "mae"):
            ci = getattr(overall, f"{name}_ci")
            if ci is not None:
                row[f"{name}_ci_low"], row[f"{name}_ci_high"] = ci
    except TrmQeError as exc:
        row["error"] = str(exc)
        logger.error("cell %s failed: %s", cell["cell_id"], exc)
    row_path.write_text(json.dumps(row, sort_keys=True, indent=2), encoding="utf-8")
    done_path.write_text("done\n", encoding="utf-8")
    return row


def write_results(rows: list[dict], out_dir: Path) -> None:
    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in CSV_COLUMNS})
    md_path = out_dir / "results.md"
    md_path.write_text(_rows_to_markdown(rows), encoding="utf-8")


def _rows_to_markdown(rows: list[dict]) -> str:
    cols = [c for c in CSV_COLUMNS if any(row.get(c) not in (None, "") for row in rows)]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("" if v in (None, "") else (f"{v:.4f}" if isinstance(v, float) else str(v)))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    spec_path = Path(args.spec)
    spec = _apply_overrides(_load_toml(spec_path), args.set or [])
    phase = spec.get("phase")
    if phase not in (1, 2, 3, None):
        raise ConfigError(f"phase must be 1, 2 or 3, got {phase!r}")
    out_dir = resolve_out(str(spec.get("out_dir", "runs/sweep")))
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = expand_cells(spec, spec_path.parent)
    # validate every cell's config before any training starts
    for cell in cells:
        _cell_run_config(spec, cell, spec_path.parent, out_dir / "cells" / cell["cell_id"])

    rows = []
    if args.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(run_cell, spec, cell, str(spec_path.parent), str(out_dir)) for cell in cells]
            rows = [f.result() for f in futures]
    else:
        for cell in cells:
            rows.append(run_cell(spec, cell, str(spec_path.parent), str(out_dir)))
    write_results(rows, out_dir)
    n_failed = sum(1 for r in rows if r["error"])
    print(f"sweep complete: {len(rows)} cells, {n_failed} failed; results in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _read_results(results_dir: Path) -> list[dict]:
    csv_path = results_dir / "results.csv"
    _require_file(csv_path, "results.csv")
    rows = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    if not rows:
        raise ConfigError(f"{csv_path} has no result rows")
    return rows


def _pivot(rows: list[dict], axis: str) -> list[tuple[str, dict]]:
    groups: dict[str, list[dict]] = {}
    for row in rows:
        key = row.get(axis) or ""
        if key == "" or row.get("error"):
            continue
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: (len(k), k)):
        vals = {}
        for metric in ("pearson", "spearman", "mae"):
            nums = [float(r[metric]) for r in groups[key] if r.get(metric)]
            vals[metric] = float(np.mean(nums)) if nums else None
        out.append((key, vals))
    return out


def _pivot_table(title: str, axis: str, pivoted: list[tuple[str, dict]]) -> str:
    if not pivoted:
        return ""
    lines = [f"### {title}", "", f"| {axis} | Pearson | Spearman | MAE |", "|---|---|---|---|"]
    best = {}
    for metric, better_high in (("pearson", True), ("spearman", True), ("mae", False)):
        vals = [v[metric] for _, v in pivoted if v[metric] is not None]
        if vals:
            best[metric] = max(vals) if better_high else min(vals)
    for key, vals in pivoted:
        cells = [key]
        for metric in ("pearson", "spearman", "mae"):
            v = vals[metric]
            if v is None:
                cells.append("--")
            else:
                text = f"{v:.4f}"
                # ties on the best value are all bolded
                cells.append(f"**{text}**" if metric in best and v == best[metric] else text)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _model_table(rows: list[dict]) -> str:
    usable = [r for r in rows if not r.get("error")]
    if not any(r.get("architecture") for r in usable):
        return ""
    lines = [
        "### Models",
        "",
        "| Model | Trainable | Pearson | Spearman |",
        "|---|---|---|---|",
    ]
    spearmen = [float(r["spearman"]) for r in usable if r.get("spearman")]
    best_s = max(spearmen) if spearmen else None
    for r in usable:
        label_bits = [r.get("architecture") or "trm"]
        if r.get("freeze"):
            label_bits.append("frozen")
        if r.get("l_cycles"):
            label_bits.append(f"L={r['l_cycles']}")
        if r.get("external_steps"):
            label_bits.append(f"N={r['external_steps']}")
        s = f"{float(r['spearman']):.4f}" if r.get("spearman") else "--"
        if best_s is not None and r.get("spearman") and float(r["spearman"]) == best_s:
            s = f"**{s}**"
        p = f"{float(r['pearson']):.4f}" if r.get("pearson") else "--"
        lines.append(f"| {' '.join(label_bits)} | {r.get('trainable_params') or '--'} | {p} | {s} |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    results_dir = resolve_out(args.results)
    rows = _read_results(results_dir)
    sections = []
    steps = _pivot(rows, "external_steps")
    cycles = _pivot(rows, "l_cycles")
    if steps:
        sections.append(_pivot_table("External refinement steps", "steps", steps))
    if cycles:
        sections.append(_pivot_table("Internal recursion (L-cycles)", "L", cycles))
    model_section = _model_table(rows)
    if model_section:
        sections.append(model_section)
    text = "\n".join(s for s in sections if s)
    out_path = results_dir / "report.md"
    out_path.write_text(text, encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trmqe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding file")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seq-min", type=int, default=4)
    p.add_argument("--seq-max", type=int, default=8)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("extract-check", help="validate an embedding file")
    p.add_argument("file")
    p.set_defaults(fn=cmd_extract_check)

    p = sub.add_parser("train", help="train + evaluate from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a test embedding file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--projector", default=None, help="optional svd_projector.npz")
    p.add_argument("--out", required=True)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="run an ablation grid from a TOML spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="pivot sweep results into Markdown tables")
    p.add_argument("--results", required=True, help="sweep output directory")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TRMQE_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrmQeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
