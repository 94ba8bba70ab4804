"""
Command line front-end.

    curing gen-model    --out-dir teacher/
    curing calibrate    --model-dir teacher/ --out-dir stats/
    curing compress     --model-dir teacher/ --stats-dir stats/ --out-dir run/ --layers 2 --r-max 8
    curing heal         --model-dir teacher/ --student-dir run/model --out-dir healed/
    curing eval         --model-dir teacher/ --student-dir healed/model
    curing ablate       --axis strategy --seeds 20
    curing size-report  --preset llama3.1-8b --layers 10 --r-max 256

Settings come from built-in defaults, then an optional ``--config`` JSON file,
then command line flags (flags win). Reports are canonical JSON of the form
``{run_id, config, metrics, reports}`` with a CSV copy of ``metrics``.
Failures print a JSON object to stderr and exit with 2 (configuration),
3 (numerical) or 4 (I/O).
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .ablation import AXES, ToySetup, format_table, model_ablation, strategy_ablation
from .calibration import calibrate, rank_layers, select_layers
from .corpus import data_split
from .errors import ConfigError, ConflictingFlags, CuringError, IoFailure
from .healing import HealConfig, heal, output_mse, perplexity
from .model import ModelConfig, ToyTransformer, train_teacher
from .pipeline import (
    PRESETS, ArchDims, CompressionPlan, activation_diff_report, compress_model, get_preset,
    model_size_report, size_report,
)
from .selection import STRATEGIES
from .store import canonical_json, load_model, load_stats, save_model, save_stats

__all__ = ["main", "build_parser", "DEFAULTS"]

_SHARED = {"config": None, "seed": 0}

DEFAULTS = {
    "gen-model": {
        "out_dir": None, "n_layers": 4, "d_model": 32, "n_heads": 4, "n_kv_heads": 4,
        "d_inter": 64, "vocab": 32, "max_seq": 128, "train_steps": 300, "train_lr": 3e-3,
        "train_size": 512, "context_len": 16,
    },
    "calibrate": {"model_dir": None, "out_dir": None, "calib_size": 128, "context_len": 128},
    "compress": {
        "model_dir": None, "stats_dir": None, "out_dir": None, "calib_size": 128,
        "context_len": 128, "layers": 1, "layer_ids": None, "layer_selection": "angular",
        "targets": "q,k,gate", "r_max": 256, "strategy": "wanda-deim", "rank": None,
    },
    "heal": {
        "model_dir": None, "student_dir": None, "out_dir": None, "steps": 100,
        "batch_size": 16, "lr": 3e-4, "warmup_steps": 100, "alpha": 0.1, "temperature": 10.0,
        "weight_decay": 0.01, "match": "block", "heal_size": 512, "eval_size": 64,
        "context_len": 128, "eval_every": 0,
    },
    "eval": {"model_dir": None, "student_dir": None, "out_dir": None, "eval_size": 64, "context_len": 128},
    "ablate": {
        "axis": "strategy", "seeds": 20, "model_dir": None, "out_dir": None, "values": None,
        "layers": 1, "r_max": 8, "strategy": "wanda-deim", "targets": "q,k,gate", "rank": 8,
        "calib_size": 128, "context_len": 16,
    },
    "size-report": {
        "preset": None, "layers": 10, "r_max": 256, "targets": "q,k,gate", "out_dir": None,
        "d_model": None, "d_inter": None, "d_kv": None, "n_layers": None, "base_params": None,
    },
}

HELP = {
    "config": "JSON file of settings; flags override it",
    "seed": "seed for every random choice",
    "out_dir": "output directory",
    "model_dir": "directory of the (teacher) model",
    "student_dir": "directory of the compressed student model",
    "stats_dir": "directory of saved calibration statistics (computed on the fly if omitted)",
    "n_layers": "number of transformer blocks",
    "d_model": "model width",
    "n_heads": "attention heads",
    "n_kv_heads": "key/value heads (grouped-query attention)",
    "d_inter": "feed-forward width",
    "vocab": "vocabulary size",
    "max_seq": "maximum sequence length",
    "train_steps": "teacher pre-training steps (0 keeps the random init)",
    "train_lr": "teacher pre-training learning rate",
    "train_size": "teacher pre-training sequences",
    "calib_size": "calibration sequences",
    "context_len": "tokens per sequence (capped at the model's max_seq)",
    "layers": "number of layers to compress",
    "layer_ids": "explicit comma-separated layer indices (overrides --layers)",
    "layer_selection": "angular, last-n or random",
    "targets": "comma-separated weights to decompose (q,k,v,o,gate,up,down)",
    "r_max": "rank cap",
    "strategy": "row/column selection: " + ", ".join(STRATEGIES),
    "steps": "healing steps",
    "batch_size": "healing batch size",
    "lr": "healing learning rate",
    "warmup_steps": "linear warmup steps before cosine decay",
    "alpha": "weight of the ground-truth cross-entropy term",
    "temperature": "logit distillation temperature",
    "weight_decay": "AdamW decoupled weight decay",
    "match": "layer-wise MSE on block outputs, projection outputs or both",
    "heal_size": "healing sequences",
    "eval_size": "held-out evaluation sequences",
    "eval_every": "evaluate every N healing steps (0 = only at the end)",
    "axis": "ablation axis: " + ", ".join(AXES),
    "seeds": "number of seeds (trials) to sweep",
    "values": "comma-separated values for the ablation axis (axis default if omitted)",
    "rank": "fixed rank: for compress it replaces the rank formula, for ablate it is the strategy-ablation rank",
    "preset": "architecture preset: " + ", ".join(sorted(PRESETS)),
    "base_params": "total parameters of a custom architecture",
    "d_kv": "key/value projection width of a custom architecture",
}

_TYPES = {
    "seed": int, "n_layers": int, "d_model": int, "n_heads": int, "n_kv_heads": int, "d_inter": int,
    "vocab": int, "max_seq": int, "train_steps": int, "train_lr": float, "train_size": int,
    "calib_size": int, "context_len": int, "layers": int, "r_max": int, "steps": int,
    "batch_size": int, "lr": float, "warmup_steps": int, "alpha": float, "temperature": float,
    "weight_decay": float, "heal_size": int, "eval_size": int, "eval_every": int, "seeds": int,
    "rank": int, "d_kv": int, "base_params": int,
}

_CHOICES = {
    "strategy": STRATEGIES, "layer_selection": ("angular", "last-n", "random"),
    "axis": AXES, "match": ("block", "proj", "both"), "preset": tuple(sorted(PRESETS)),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        self.exit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="curing", description="CUR-based transformer compression toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, defaults in DEFAULTS.items():
        p = sub.add_parser(command, help=f"{command} command")
        for key, default in {**_SHARED, **defaults}.items():
            flag = "--" + key.replace("_", "-")
            kwargs = {"dest": key, "default": None,
                      "help": f"{HELP[key]} (default: {default})"}
            if key in _TYPES:
                kwargs["type"] = _TYPES[key]
            if key in _CHOICES:
                kwargs["choices"] = _CHOICES[key]
            p.add_argument(flag, **kwargs)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags (in that order)."""
    cfg = {**_SHARED, **DEFAULTS[command]}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in cfg:
                raise ConfigError(f"unknown setting {key!r} for {command}")
            if value is not None and key in _TYPES:
                value = _TYPES[key](value)
            cfg[key] = value
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg.pop("config", None)
    return cfg


def _require(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _targets(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _run_id(command: str, cfg: dict) -> str:
    return hashlib.sha256(canonical_json({"command": command, "config": cfg}).encode()).hexdigest()[:12]


def _metrics_csv(metrics: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "value"])
    for m in metrics:
        writer.writerow([m["name"], m["value"]])
    return buf.getvalue()


def write_report(out_dir, command: str, cfg: dict, metrics: list, reports: list) -> dict:
    doc = {"run_id": _run_id(command, cfg), "config": {"command": command, **cfg},
           "metrics": metrics, "reports": reports}
    if out_dir:
        root = Path(out_dir)
        try:
            root.mkdir(parents=True, exist_ok=True)
            (root / "report.json").write_text(canonical_json(doc), encoding="utf-8", newline="\n")
            (root / "metrics.csv").write_text(_metrics_csv(metrics), encoding="utf-8", newline="\n")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    return doc


def _seq_len(model: ToyTransformer, cfg: dict) -> int:
    return max(1, min(int(cfg["context_len"]), model.config.max_seq))


def cmd_gen_model(cfg: dict) -> dict:
    _require(cfg, "out_dir")
    config = ModelConfig(
        n_layers=cfg["n_layers"], d_model=cfg["d_model"], n_heads=cfg["n_heads"],
        n_kv_heads=cfg["n_kv_heads"], d_inter=cfg["d_inter"], vocab=cfg["vocab"], max_seq=cfg["max_seq"],
    )
    model = ToyTransformer.random(config, cfg["seed"])
    if cfg["train_steps"]:
        seq = min(cfg["context_len"], config.max_seq)
        data = data_split("heal", cfg["train_size"], seq, config.vocab, cfg["seed"])
        model = train_teacher(model, data, steps=cfg["train_steps"], lr=cfg["train_lr"], seed=cfg["seed"])
    save_model(model, cfg["out_dir"])
    metrics = [{"name": "n_params", "value": model.n_params()}]
    return {"metrics": metrics, "reports": [{"model_config": config.as_dict()}], "out_dir": cfg["out_dir"]}


def _calibration(model: ToyTransformer, cfg: dict):
    data = data_split("calib", cfg["calib_size"], _seq_len(model, cfg), model.config.vocab, cfg["seed"])
    return calibrate(model, data)


def cmd_calibrate(cfg: dict) -> dict:
    _require(cfg, "model_dir", "out_dir")
    model = load_model(cfg["model_dir"])
    stats = _calibration(model, cfg)
    save_stats(stats, Path(cfg["out_dir"]) / "stats")
    ranking = [{"layer": n, "mean_distance": d} for n, d in rank_layers(stats)]
    return {"metrics": [{"name": "n_examples", "value": stats.n_examples}],
            "reports": [{"layer_ranking": ranking}], "out_dir": cfg["out_dir"]}


def cmd_compress(cfg: dict) -> dict:
    _require(cfg, "model_dir", "out_dir")
    model = load_model(cfg["model_dir"])
    stats = load_stats(Path(cfg["stats_dir"]) / "stats") if cfg["stats_dir"] else _calibration(model, cfg)
    n_total = model.config.n_layers
    if cfg["layer_ids"] not in (None, ""):
        layers = [int(x) for x in str(cfg["layer_ids"]).split(",") if x.strip()]
    else:
        layers = select_layers(cfg["layer_selection"], cfg["layers"], n_total, stats=stats, seed=cfg["seed"])
    plan = CompressionPlan(layers=layers, targets=_targets(cfg["targets"]), r_max=cfg["r_max"],
                           strategy=cfg["strategy"], seed=cfg["seed"], rank=cfg["rank"])
    res = compress_model(model, plan, stats)
    out = Path(cfg["out_dir"])
    save_model(res.model, out / "model")
    size = model_size_report(model, plan)
    try:
        (out / "timing.json").write_text(canonical_json({"wall_time_s": res.wall_time}), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    metrics = [
        {"name": "saved_params", "value": size.saved_params},
        {"name": "total_params", "value": size.total_params},
        {"name": "verification_holds", "value": all(r.verification.holds for r in res.records)},
        {"name": "sum_frobenius_diff", "value": float(sum(r.frobenius_diff for r in res.records))},
    ]
    reports = [{"plan": plan.as_dict()}, {"size": size.as_dict()},
               {"weights": [r.as_dict() for r in res.records]}]
    return {"metrics": metrics, "reports": reports, "out_dir": cfg["out_dir"]}


def cmd_heal(cfg: dict) -> dict:
    _require(cfg, "model_dir", "student_dir", "out_dir")
    teacher = load_model(cfg["model_dir"])
    student = load_model(cfg["student_dir"])
    seq = _seq_len(teacher, cfg)
    data = data_split("heal", cfg["heal_size"], seq, teacher.config.vocab, cfg["seed"])
    held = data_split("eval", cfg["eval_size"], seq, teacher.config.vocab, cfg["seed"])
    hcfg = HealConfig(
        steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"], warmup_steps=cfg["warmup_steps"],
        alpha=cfg["alpha"], temperature=cfg["temperature"], weight_decay=cfg["weight_decay"],
        seed=cfg["seed"], eval_every=cfg["eval_every"], match=cfg["match"],
    )
    before = output_mse(teacher, student, held)
    healed, trace = heal(teacher, student, data, hcfg)
    after = output_mse(teacher, healed, held)
    out = Path(cfg["out_dir"])
    save_model(healed, out / "model")
    try:
        (out / "trace.jsonl").write_text(trace.to_jsonl(), encoding="utf-8", newline="\n")
        (out / "trace.csv").write_text(trace.to_csv(), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    acts = [{"before": a, "after": b} for a, b in zip(
        activation_diff_report(teacher, student, held), activation_diff_report(teacher, healed, held))]
    metrics = [{"name": "output_mse_before", "value": before}, {"name": "output_mse_after", "value": after}]
    return {"metrics": metrics, "reports": [{"activation_diff": acts}], "out_dir": cfg["out_dir"]}


def cmd_eval(cfg: dict) -> dict:
    _require(cfg, "model_dir", "student_dir")
    teacher = load_model(cfg["model_dir"])
    student = load_model(cfg["student_dir"])
    held = data_split("eval", cfg["eval_size"], _seq_len(teacher, cfg), teacher.config.vocab, cfg["seed"])
    metrics = [
        {"name": "output_mse", "value": output_mse(teacher, student, held)},
        {"name": "teacher_perplexity", "value": perplexity(teacher, held)},
        {"name": "student_perplexity", "value": perplexity(student, held)},
    ]
    reports = [{"activation_diff": activation_diff_report(teacher, student, held)}]
    return {"metrics": metrics, "reports": reports, "out_dir": cfg["out_dir"]}


def _axis_values(axis: str, text):
    if text in (None, ""):
        return None
    if axis == "targets":
        return [v.strip().replace("+", ",") for v in str(text).split(";")]
    items = [v.strip() for v in str(text).split(",") if v.strip()]
    return [int(v) for v in items] if axis in ("r-max", "calib-size") else items


def cmd_ablate(cfg: dict) -> dict:
    axis = cfg["axis"]
    if axis == "strategy":
        strategies = _axis_values(axis, cfg["values"]) or list(STRATEGIES)
        rows = strategy_ablation(seeds=cfg["seeds"], r=cfg["rank"], strategies=strategies)
    else:
        if cfg["model_dir"]:
            teacher = load_model(cfg["model_dir"])
        else:
            gen = {**_SHARED, **DEFAULTS["gen-model"], "seed": cfg["seed"]}
            teacher = ToyTransformer.random(ModelConfig(
                n_layers=gen["n_layers"], d_model=gen["d_model"], n_heads=gen["n_heads"],
                n_kv_heads=gen["n_kv_heads"], d_inter=gen["d_inter"], vocab=gen["vocab"],
                max_seq=gen["max_seq"]), cfg["seed"])
            data = data_split("heal", gen["train_size"], gen["context_len"], gen["vocab"], cfg["seed"])
            teacher = train_teacher(teacher, data, steps=gen["train_steps"], lr=gen["train_lr"], seed=cfg["seed"])
        rows = []
        seq = _seq_len(teacher, cfg)
        for s in range(cfg["seeds"]):
            seed = cfg["seed"] + s
            setup = ToySetup(
                teacher=teacher,
                calib=data_split("calib", cfg["calib_size"], seq, teacher.config.vocab, seed),
                heal=np.zeros((0, seq), dtype=np.int64),
                held=data_split("eval", 64, seq, teacher.config.vocab, seed),
                seed=seed,
            )
            for row in model_ablation(setup, axis, _axis_values(axis, cfg["values"]), n_layers=cfg["layers"],
                                      targets=_targets(cfg["targets"]), r_max=cfg["r_max"],
                                      strategy=cfg["strategy"]):
                rows.append({"seed": seed, **row})
    table = format_table(rows)
    metrics = [{"name": f"{axis}={r[axis]}" + (f"/seed={r['seed']}" if "seed" in r else ""),
                "value": r.get("mean_frobenius_diff", r.get("output_mse"))} for r in rows]
    return {"metrics": metrics, "reports": [{"table": rows}], "out_dir": cfg["out_dir"], "text": table}


def cmd_size_report(cfg: dict) -> dict:
    custom = [k for k in ("d_model", "d_inter", "d_kv", "n_layers", "base_params") if cfg.get(k) is not None]
    if cfg["preset"] and custom:
        raise ConflictingFlags("--preset cannot be combined with custom dimensions: " + ", ".join(custom))
    if cfg["preset"]:
        dims = get_preset(cfg["preset"])
    elif len(custom) == 5:
        dims = ArchDims("custom", cfg["d_model"], cfg["d_inter"], cfg["d_kv"], cfg["n_layers"], cfg["base_params"])
    else:
        raise ConfigError("size-report needs --preset or all of --d-model --d-inter --d-kv --n-layers --base-params")
    rep = size_report(dims, cfg["layers"], targets=_targets(cfg["targets"]), r_max=cfg["r_max"])
    metrics = [
        {"name": "base_params", "value": rep.base_params},
        {"name": "total_params", "value": rep.total_params},
        {"name": "total_params_b", "value": f"{rep.total_params / 1e9:.2f}B"},
        {"name": "saved_params", "value": rep.saved_params},
        {"name": "saved_gib", "value": f"{rep.saved_gib:.2f}"},
        {"name": "base_gib", "value": f"{rep.base_gib:.2f}"},
    ]
    return {"metrics": metrics, "reports": [rep.as_dict()], "out_dir": cfg["out_dir"], "text": rep.summary() + "\n"}


COMMANDS = {
    "gen-model": cmd_gen_model,
    "calibrate": cmd_calibrate,
    "compress": cmd_compress,
    "heal": cmd_heal,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "size-report": cmd_size_report,
}


def run(command: str, cfg: dict) -> dict:
    result = COMMANDS[command](cfg)
    doc = write_report(result.get("out_dir"), command, cfg, result["metrics"], result["reports"])
    doc["text"] = result.get("text")
    return doc


def main(argv=None) -> int:
    threads = os.environ.get("CURLIB_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        doc = run(args.command, cfg)
    except CuringError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return exc.exit_code
    except ValueError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    if doc.get("text"):
        sys.stdout.write(doc["text"])
    sys.stdout.write(canonical_json({k: doc[k] for k in ("run_id", "metrics")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
