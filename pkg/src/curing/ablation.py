"""
Comparison sweeps: selection strategy on synthetic matrices, and target set,
rank cap, calibration size and layer-selection method on a toy model.
"""

from dataclasses import dataclass

import numpy as np

from .calibration import calibrate, candidate_layers, select_layers
from .corpus import data_split
from .cur import cur_decompose
from .healing import output_mse
from .model import ModelConfig, ToyTransformer, train_teacher
from .pipeline import TARGET_COMBINATIONS, CompressionPlan, compress_model, model_size_report
from .selection import STRATEGIES

__all__ = [
    "AXES",
    "synthetic_problem",
    "strategy_ablation",
    "ToySetup",
    "make_setup",
    "model_ablation",
    "format_table",
]

AXES = ("strategy", "targets", "r-max", "calib-size", "layer-selection")

DEFAULT_VALUES = {
    "targets": list(TARGET_COMBINATIONS),
    "r-max": [2, 4, 8],
    "calib-size": [8, 32, 128],
    "layer-selection": ["angular", "last-n", "random"],
}


def synthetic_problem(seed: int, m: int = 64, n: int = 48, n_tokens: int = 256,
                      decay: float = 6.0) -> tuple[np.ndarray, np.ndarray]:
    """
    A weight with exponentially decaying spectrum plus small noise, and the
    per-feature norms of correlated, heteroscedastic synthetic activations.
    """
    rng = np.random.default_rng(seed)
    k = min(m, n)
    P, _ = np.linalg.qr(rng.standard_normal((m, k)))
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    W = (P * np.exp(-np.arange(k) / decay)) @ Q.T + 0.01 * rng.standard_normal((m, n)) / np.sqrt(n)
    scales = np.exp(rng.standard_normal(m))
    mix = np.eye(m) + 0.3 * rng.standard_normal((m, m)) / np.sqrt(m)
    X = (rng.standard_normal((n_tokens, m)) @ mix) * scales
    return W, np.linalg.norm(X, axis=0)


def strategy_ablation(seeds: int = 20, m: int = 64, n: int = 48, r: int = 8,
                      strategies=STRATEGIES) -> list[dict]:
    """Mean/std of ``||W - CUR||_F`` per selection strategy over seeded problems."""
    diffs = {s: [] for s in strategies}
    for seed in range(seeds):
        W, act = synthetic_problem(seed, m, n)
        for s in strategies:
            f = cur_decompose(W, r, s, act_norms=act, seed=seed)
            diffs[s].append(float(np.linalg.norm(W - f.reconstruct())))
    return [{"strategy": s, "mean_frobenius_diff": float(np.mean(v)),
             "std_frobenius_diff": float(np.std(v)), "trials": len(v)}
            for s, v in diffs.items()]


@dataclass
class ToySetup:
    teacher: ToyTransformer
    calib: np.ndarray
    heal: np.ndarray
    held: np.ndarray
    seed: int


def make_setup(config: ModelConfig, seed: int, n_calib: int = 128, n_heal: int = 512,
               n_held: int = 64, seq_len: int = 16, teacher_steps: int = 300) -> ToySetup:
    """Seeded teacher trained on the healing split, plus calibration and held-out splits."""
    seq_len = min(seq_len, config.max_seq)
    calib = data_split("calib", n_calib, seq_len, config.vocab, seed)
    heal = data_split("heal", n_heal, seq_len, config.vocab, seed)
    held = data_split("eval", n_held, seq_len, config.vocab, seed)
    teacher = ToyTransformer.random(config, seed)
    if teacher_steps:
        teacher = train_teacher(teacher, heal, steps=teacher_steps, seed=seed)
    return ToySetup(teacher=teacher, calib=calib, heal=heal, held=held, seed=seed)


def _evaluate(setup: ToySetup, plan: CompressionPlan, stats) -> dict:
    res = compress_model(setup.teacher, plan, stats, check_bounds=False)
    size = model_size_report(setup.teacher, plan)
    return {
        "layers": list(plan.layers),
        "saved_params": size.saved_params,
        "frobenius_diff": float(sum(rec.frobenius_diff for rec in res.records)),
        "output_mse": output_mse(setup.teacher, res.model, setup.held),
    }


def model_ablation(setup: ToySetup, axis: str, values=None, n_layers: int = 1,
                   targets=("q", "k", "gate"), r_max: int = 8, strategy: str = "wanda-deim") -> list[dict]:
    """
    Compress the toy teacher once per value of ``axis`` (all other settings
    fixed) and report parameter savings, summed ``||W - CUR||_F`` and
    held-out output MSE against the teacher.
    """
    values = list(DEFAULT_VALUES[axis] if values is None else values)
    n_total = setup.teacher.config.n_layers
    n_layers = min(n_layers, len(candidate_layers(n_total)))
    full_stats = calibrate(setup.teacher, setup.calib)
    rows = []
    for value in values:
        stats, tg, rm, method = full_stats, tuple(targets), r_max, "angular"
        if axis == "targets":
            tg = TARGET_COMBINATIONS[value] if isinstance(value, str) else tuple(value)
        elif axis == "r-max":
            rm = int(value)
        elif axis == "calib-size":
            stats = calibrate(setup.teacher, setup.calib[: int(value)])
        elif axis == "layer-selection":
            method = value
        else:
            raise ValueError(f"axis {axis!r} is not a model ablation")
        layers = select_layers(method, n_layers, n_total, stats=stats, seed=setup.seed)
        plan = CompressionPlan(layers=layers, targets=tg, r_max=rm, strategy=strategy, seed=setup.seed)
        rows.append({axis: value if isinstance(value, (int, str)) else ",".join(value),
                     **_evaluate(setup, plan, stats)})
    return rows


def format_table(rows: list[dict], columns=None) -> str:
    """Fixed-width text table, one row per dict."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())

    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        if isinstance(v, (list, tuple)):
            return ",".join(str(x) for x in v)
        return str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[k]) for b in body)) for k, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"
