"""Calibration pass: activation norms for WANDA and layer angular distances."""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import EmptyDataset, TooFewLayers, ZeroVector
from .model import TARGETS, ToyTransformer, as_tokens, run, to_torch

__all__ = [
    "CalibrationStats",
    "angular_distance",
    "calibrate",
    "rank_layers",
    "candidate_layers",
    "select_layers",
]


@dataclass
class CalibrationStats:
    """
    ``act_sq[(layer, target)]`` holds the per-input-feature sum of squares over
    every calibration token; ``act_norms`` is its square root.
    ``last_token_hidden[layer]`` is ``(n_examples, d_model)``.
    """

    act_sq: dict = field(default_factory=dict)
    last_token_hidden: list = field(default_factory=list)
    n_examples: int = 0

    @property
    def act_norms(self) -> dict:
        return {key: np.sqrt(v) for key, v in self.act_sq.items()}

    def norms(self, layer: int, target: str) -> np.ndarray:
        return np.sqrt(self.act_sq[(layer, target)])


def angular_distance(h_prev, h_next) -> float:
    """``arccos(cosine similarity) / pi``, in ``[0, 1]``."""
    a = np.asarray(h_prev, dtype=np.float64).ravel()
    b = np.asarray(h_next, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("angular distance is undefined for a zero vector")
    cos = float(np.clip((a @ b) / (na * nb), -1.0, 1.0))
    return math.acos(cos) / math.pi


def calibrate(model: ToyTransformer, dataset) -> CalibrationStats:
    """One forward pass per example; accumulate squared inputs in float64."""
    data = [np.asarray(seq, dtype=np.int64) for seq in dataset]
    if not data:
        raise EmptyDataset("calibration dataset is empty")
    cfg = model.config
    params = to_torch(model)
    act_sq = {}
    last = [[] for _ in range(cfg.n_layers)]
    with torch.no_grad():
        for seq in data:
            cap = {}
            _, hidden = run(params, cfg, as_tokens(cfg, seq), capture=cap)
            for key, (inp, _) in cap.items():
                sq = (inp * inp).reshape(-1, inp.shape[-1]).sum(0).numpy()
                if key in act_sq:
                    act_sq[key] += sq
                else:
                    act_sq[key] = sq.copy()
            for i, hs in enumerate(hidden):
                last[i].append(hs[0, -1].numpy().copy())
    return CalibrationStats(
        act_sq=act_sq,
        last_token_hidden=[np.stack(rows) for rows in last],
        n_examples=len(data),
    )


def candidate_layers(n_layers: int) -> list[int]:
    if n_layers < 3:
        raise TooFewLayers(f"need at least 3 layers to protect first and last, got {n_layers}")
    return list(range(1, n_layers - 1))


def rank_layers(stats: CalibrationStats) -> list[tuple[int, float]]:
    """
    Candidate layers sorted by mean angular distance between their last-token
    output and the previous layer's, ascending. The first and last layers are
    never candidates.
    """
    hs = stats.last_token_hidden
    out = []
    for n in candidate_layers(len(hs)):
        d = [angular_distance(a, b) for a, b in zip(hs[n - 1], hs[n])]
        out.append((n, float(np.mean(d))))
    return sorted(out, key=lambda item: (item[1], item[0]))


def select_layers(method: str, n_select: int, n_layers: int,
                  stats: CalibrationStats | None = None, seed: int | None = None) -> list[int]:
    """Pick ``n_select`` layers by ``angular``, ``last-n`` or ``random``."""
    cands = candidate_layers(n_layers)
    if not 0 <= n_select <= len(cands):
        raise ValueError(f"cannot select {n_select} of {len(cands)} candidate layers")
    if method == "angular":
        if stats is None:
            raise ValueError("angular selection needs calibration stats")
        return [n for n, _ in rank_layers(stats)[:n_select]]
    if method == "last-n":
        return cands[::-1][:n_select]
    if method == "random":
        rng = np.random.default_rng(seed)
        return sorted(int(i) for i in rng.choice(cands, size=n_select, replace=False))
    raise ValueError(f"unknown layer selection method {method!r}")
