"""Whole-model compression, parameter/size accounting and activation reports."""

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .calibration import CalibrationStats
from .cur import BoundReport, cur_decompose, error_bound_check, param_count, select_rank
from .errors import ArchitectureMismatch, EmptyDataset, PlanLayerProtected, UnknownPreset
from .model import TARGETS, ToyTransformer, as_tokens, run, to_torch
from .selection import wanda_importance

__all__ = [
    "PRESETS",
    "ArchDims",
    "CompressionPlan",
    "CompressResult",
    "SizeReport",
    "compress_model",
    "size_report",
    "model_size_report",
    "activation_diff_report",
]

BYTES_PER_PARAM = 4
GIB = 2**30

DEFAULT_TARGETS = ("q", "k", "gate")
TARGET_COMBINATIONS = {
    "q,k,gate": ("q", "k", "gate"),
    "gate": ("gate",),
    "q,k": ("q", "k"),
    "q,gate": ("q", "gate"),
    "k,gate": ("k", "gate"),
}


@dataclass(frozen=True)
class ArchDims:
    """Architecture dimensions needed for parameter accounting only."""

    name: str
    d_model: int
    d_inter: int
    d_kv: int
    n_layers: int
    base_params: int

    def target_shape(self, target: str) -> tuple[int, int]:
        d, kv, f = self.d_model, self.d_kv, self.d_inter
        return {
            "q": (d, d), "k": (d, kv), "v": (d, kv), "o": (d, d),
            "gate": (d, f), "up": (d, f), "down": (f, d),
        }[target]


# exact parameter totals of the public checkpoints
PRESETS = {
    "llama3.1-8b": ArchDims("llama3.1-8b", 4096, 14336, 1024, 32, 8_030_261_248),
    "llama2-7b": ArchDims("llama2-7b", 4096, 11008, 4096, 32, 6_738_415_616),
    "mistral-7b": ArchDims("mistral-7b", 4096, 14336, 1024, 32, 7_241_732_096),
    "orca2-7b": ArchDims("orca2-7b", 4096, 11008, 4096, 32, 6_738_415_616),
}


def get_preset(name: str) -> ArchDims:
    try:
        return PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class CompressionPlan:
    layers: tuple = ()
    targets: tuple = DEFAULT_TARGETS
    r_max: int = 256
    strategy: str = "wanda-deim"
    seed: int = 0
    rank: int | None = None  # fixed rank (clamped to min(m, n)) instead of the formula

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(i) for i in self.layers))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.targets:
            raise ValueError("plan targets must be non-empty")
        bad = set(self.targets) - set(TARGETS)
        if bad:
            raise ValueError(f"unknown targets {sorted(bad)}")
        if len(set(self.layers)) != len(self.layers):
            raise ValueError("plan lists a layer twice")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be >= 1")

    def as_dict(self) -> dict:
        return {"layers": list(self.layers), "targets": list(self.targets),
                "r_max": self.r_max, "strategy": self.strategy, "seed": self.seed,
                "rank": self.rank}


@dataclass
class WeightRecord:
    layer: int
    target: str
    shape: tuple
    r: int
    params: dict
    bound: BoundReport | None = None
    verification: BoundReport | None = None
    frobenius_diff: float = 0.0

    def as_dict(self) -> dict:
        return {
            "layer": self.layer, "target": self.target, "shape": list(self.shape), "r": self.r,
            "params": self.params, "frobenius_diff": self.frobenius_diff,
            "bound": self.bound.as_dict() if self.bound else None,
            "verification": self.verification.as_dict() if self.verification else None,
        }


@dataclass
class CompressResult:
    model: ToyTransformer
    records: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def bounds(self) -> list:
        return [rec.bound for rec in self.records]


def _check_layers(plan: CompressionPlan, n_layers: int, protect_ends: bool) -> None:
    for i in plan.layers:
        if not 0 <= i < n_layers:
            raise ValueError(f"layer {i} out of range for a {n_layers}-layer model")
        if protect_ends and i in (0, n_layers - 1):
            raise PlanLayerProtected(f"layer {i} is the first or last layer and is never compressed")


def compress_model(model: ToyTransformer, plan: CompressionPlan, stats: CalibrationStats | None,
                   check_bounds: bool = True, protect_ends: bool = True) -> CompressResult:
    """
    Replace each planned (layer, target) weight of a copy of ``model`` by its
    CUR factors. ``model`` itself is left untouched.

    With ``check_bounds`` each weight also gets a spectral error-bound report
    for the factors actually used (eta constants from the singular vectors of
    the importance matrix for WANDA strategies) plus a verification pass that
    recomputes a DEIM-only factorisation at the same rank and checks the bound
    with the singular vectors of ``W``, where it is guaranteed.
    """
    _check_layers(plan, model.config.n_layers, protect_ends)
    start = time.perf_counter()
    out = model.copy()
    records = []
    for i in plan.layers:
        for t in plan.targets:
            W = model.layers[i].w[t]
            if not isinstance(W, np.ndarray):
                raise ValueError(f"layer {i} target {t} is already decomposed")
            m, n = W.shape
            r = select_rank(m, n, plan.r_max) if plan.rank is None else min(plan.rank, m, n)
            if check_bounds:
                r = min(r, max(1, min(m, n) - 1))
            act = stats.norms(i, t) if stats is not None and (i, t) in stats.act_sq else None
            f = cur_decompose(W, r, plan.strategy, act_norms=act, seed=plan.seed + 1000 * i + TARGETS.index(t))
            pc = param_count(m, n, r)
            rec = WeightRecord(
                layer=i, target=t, shape=(m, n), r=r,
                params={"original": pc.original, "compressed": pc.compressed, "saved": pc.saved},
                frobenius_diff=float(np.linalg.norm(W - f.reconstruct())),
            )
            if check_bounds:
                if plan.strategy in ("wanda-deim", "wanda-only"):
                    rec.bound = error_bound_check(W, f, "S", S=wanda_importance(W, act))
                else:
                    rec.bound = error_bound_check(W, f, "W")
                ref = cur_decompose(W, r, "deim-only")
                rec.verification = error_bound_check(W, ref, "W")
            out.layers[i].w[t] = f
            records.append(rec)
    return CompressResult(model=out, records=records, wall_time=time.perf_counter() - start)


@dataclass
class SizeReport:
    name: str
    base_params: int
    layers: list  # per-layer dicts
    r_max: int
    targets: tuple

    @property
    def saved_params(self) -> int:
        return sum(row["saved_params"] for row in self.layers)

    @property
    def original_params(self) -> int:
        return sum(row["original_params"] for row in self.layers)

    @property
    def compressed_params(self) -> int:
        return sum(row["compressed_params"] for row in self.layers)

    @property
    def total_params(self) -> int:
        return self.base_params - self.saved_params

    @property
    def saved_bytes(self) -> int:
        return self.saved_params * BYTES_PER_PARAM

    @property
    def saved_gib(self) -> float:
        return self.saved_bytes / GIB

    @property
    def base_gib(self) -> float:
        return self.base_params * BYTES_PER_PARAM / GIB

    def summary(self) -> str:
        return (f"{self.name}: {len(self.layers)} layers, targets {','.join(self.targets)}, "
                f"r_max {self.r_max}: {self.base_params / 1e9:.2f}B -> {self.total_params / 1e9:.2f}B "
                f"params, {self.base_gib:.2f} GiB, ▼{self.saved_gib:.2f} GiB")

    def as_dict(self) -> dict:
        return {
            "name": self.name, "base_params": self.base_params, "r_max": self.r_max,
            "targets": list(self.targets), "layers": self.layers,
            "total_params": self.total_params, "saved_params": self.saved_params,
            "saved_bytes": self.saved_bytes, "saved_gib": self.saved_gib, "base_gib": self.base_gib,
        }


def size_report(dims: ArchDims, n_layers: int | None = None, targets=DEFAULT_TARGETS,
                r_max: int = 256, layers=None, rank: int | None = None) -> SizeReport:
    """
    Parameter and byte savings of compressing ``n_layers`` layers (or the
    explicit ``layers``) of an architecture, without touching any weights.
    """
    if layers is None:
        layers = list(range(n_layers or 0))
    rows = []
    for i in layers:
        row = {"layer": int(i), "original_params": 0, "compressed_params": 0, "saved_params": 0}
        for t in targets:
            m, n = dims.target_shape(t)
            r = select_rank(m, n, r_max) if rank is None else min(rank, m, n)
            pc = param_count(m, n, r)
            row["original_params"] += pc.original
            row["compressed_params"] += pc.compressed
            row["saved_params"] += pc.saved
        row["saved_bytes"] = row["saved_params"] * BYTES_PER_PARAM
        rows.append(row)
    return SizeReport(name=dims.name, base_params=dims.base_params, layers=rows,
                      r_max=r_max, targets=tuple(targets))


def model_size_report(model: ToyTransformer, plan: CompressionPlan) -> SizeReport:
    cfg = model.config
    dims = ArchDims("toy", cfg.d_model, cfg.d_inter, cfg.d_kv, cfg.n_layers, model.n_params())
    return size_report(dims, targets=plan.targets, r_max=plan.r_max, layers=plan.layers, rank=plan.rank)


def _projections(model: ToyTransformer, dataset, keys) -> dict:
    params = to_torch(model)
    acc = {key: [] for key in keys}
    with torch.no_grad():
        for seq in dataset:
            cap = {}
            run(params, model.config, as_tokens(model.config, seq), capture=cap)
            for key in keys:
                out = cap[key][1]
                acc[key].append(out.reshape(-1, out.shape[-1]).numpy())
    return {key: np.concatenate(v) for key, v in acc.items()}


def activation_diff_report(original: ToyTransformer, compressed: ToyTransformer, dataset,
                           keys=None) -> list[dict]:
    """
    Frobenius norms of each weight's output activations over ``dataset`` in
    both models, and of their difference. ``keys`` defaults to every weight
    decomposed in ``compressed``.
    """
    original.check_compatible(compressed)
    data = list(dataset)
    if not data:
        raise EmptyDataset("activation report needs a non-empty dataset")
    keys = list(keys) if keys is not None else compressed.decomposed()
    a = _projections(original, data, keys)
    b = _projections(compressed, data, keys)
    rows = []
    for layer, target in keys:
        x, y = a[(layer, target)], b[(layer, target)]
        if x.shape != y.shape:
            raise ArchitectureMismatch(f"activation shapes differ for {(layer, target)}")
        rows.append({
            "layer": layer, "target": target,
            "orig_norm": float(np.linalg.norm(x)),
            "cur_norm": float(np.linalg.norm(y)),
            "diff_norm": float(np.linalg.norm(x - y)),
        })
    return rows
