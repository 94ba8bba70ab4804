"""
Healing: retrain only the ``dU`` part of each CUR core by knowledge
distillation from the uncompressed teacher, plus the weight-level Frobenius
objective and its analytic gradient.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .cur import CurFactors
from .errors import ArchitectureMismatch, EmptyDataset
from .model import ToyTransformer, as_tokens, next_token_ce, run, to_torch

__all__ = [
    "HealConfig",
    "HealTrace",
    "frobenius_loss_and_grad",
    "finite_diff_check",
    "two_layer_mse_bound",
    "KDTrainer",
    "kd_step",
    "heal",
    "output_mse",
    "perplexity",
]

SILU_LIPSCHITZ = 1.1


@dataclass(frozen=True)
class HealConfig:
    steps: int = 100
    batch_size: int = 16
    lr: float = 3e-4
    warmup_steps: int = 100
    alpha: float = 0.1
    temperature: float = 10.0
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 0
    match: str = "block"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.steps < 0 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("steps/warmup must be >= 0 and batch_size >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.match not in ("block", "proj", "both"):
            raise ValueError("match must be 'block', 'proj' or 'both'")


def frobenius_loss_and_grad(W, f: CurFactors) -> tuple[float, np.ndarray]:
    """``||W - C (U0 + dU) R||_F^2`` and its gradient ``2 C^T (C U R - W) R^T``."""
    M = f.reconstruct() - np.asarray(W, dtype=np.float64)
    return float(np.sum(M * M)), 2.0 * f.C.T @ M @ f.R.T


def finite_diff_check(W, f: CurFactors, epsilon: float = 1e-6) -> float:
    """
    Largest relative discrepancy between the analytic gradient and central
    differences over every entry of ``dU``. The denominator is floored at 1
    so stationary points report absolute error.
    """
    if not 1e-8 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-8, 1e-3]")
    _, grad = frobenius_loss_and_grad(W, f)
    probe = f.copy()
    fd = np.empty_like(grad)
    for idx in np.ndindex(grad.shape):
        base = probe.dU[idx]
        probe.dU[idx] = base + epsilon
        plus, _ = frobenius_loss_and_grad(W, probe)
        probe.dU[idx] = base - epsilon
        minus, _ = frobenius_loss_and_grad(W, probe)
        probe.dU[idx] = base
        fd[idx] = (plus - minus) / (2 * epsilon)
    scale = max(1.0, float(np.max(np.abs(grad))))
    return float(np.max(np.abs(fd - grad)) / scale)


def two_layer_mse_bound(X, W, W2, f: CurFactors, lipschitz: float = SILU_LIPSCHITZ):
    """
    For ``g(X) = silu(X W) W2`` return ``(mse, bound)`` where
    ``mse = ||g_W(X) - g_CUR(X)||_F^2 / b`` and
    ``bound = L^2 ||X||_F^2 ||W2||_F^2 ||W - CUR||_F^2 / b``.
    """
    X = np.asarray(X, dtype=np.float64)
    b = X.shape[0]

    def g(weight):
        z = X @ weight
        return (z / (1.0 + np.exp(-z))) @ W2

    diff = g(W) - g(f.reconstruct())
    mse = float(np.sum(diff * diff)) / b
    loss, _ = frobenius_loss_and_grad(W, f)
    bound = lipschitz**2 * float(np.sum(X * X)) * float(np.sum(W2 * W2)) * loss / b
    return mse, bound


@dataclass
class HealTrace:
    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.steps)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["step", "lr", "kd_loss", "mse_loss", "kl_loss", "ce_loss", "total_loss"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.steps:
            writer.writerow({c: row[c] for c in cols})
        return buf.getvalue()


def _lr_factor(step: int, warmup: int, total: int) -> float:
    if warmup and step < warmup:
        return (step + 1) / warmup
    span = max(1, total - warmup)
    progress = min(1.0, (step - warmup) / span)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def _trainable(params: dict, keys) -> list:
    return [params[f"{i}.{t}"][2] for i, t in keys]


class KDTrainer:
    """
    AdamW over the ``dU`` tensors of ``student`` with warmup + cosine decay.

    The loss mixes a distillation part and a ground-truth part::

        (1 - alpha) * (layer_mse + T^2 * KL(teacher_T || student_T)) + alpha * CE

    ``layer_mse`` averages the squared error of block outputs over the
    compressed layers (``match="block"``), of the compressed projections'
    outputs (``"proj"``) or of both; the KL term compares temperature-``T``
    softened logits.
    """

    def __init__(self, teacher: ToyTransformer, student: ToyTransformer, cfg: HealConfig,
                 total_steps: int | None = None):
        teacher.check_compatible(student)
        self.keys = student.decomposed()
        if not self.keys:
            raise ArchitectureMismatch("student has no decomposed weights to heal")
        self.cfg = cfg
        self.config = student.config
        self.student = student
        self.layers = sorted({i for i, _ in self.keys})
        self.t_params = to_torch(teacher)
        self.s_params = to_torch(student, train="dU")
        self.leaves = _trainable(self.s_params, self.keys)
        self.opt = torch.optim.AdamW(self.leaves, lr=cfg.lr, weight_decay=cfg.weight_decay)
        total = cfg.steps if total_steps is None else total_steps
        self.sched = torch.optim.lr_scheduler.LambdaLR(
            self.opt, lambda s: _lr_factor(s, cfg.warmup_steps, total))
        self.step_count = 0

    def losses(self, tok: torch.Tensor) -> dict:
        cfg = self.cfg
        t_cap, s_cap = {}, {}
        with torch.no_grad():
            t_logits, t_hidden = run(self.t_params, self.config, tok, capture=t_cap)
        s_logits, s_hidden = run(self.s_params, self.config, tok, capture=s_cap)
        terms = []
        if cfg.match in ("block", "both"):
            terms += [F.mse_loss(s_hidden[i], t_hidden[i]) for i in self.layers]
        if cfg.match in ("proj", "both"):
            terms += [F.mse_loss(s_cap[key][1], t_cap[key][1]) for key in self.keys]
        mse = torch.stack(terms).mean()
        V = s_logits.shape[-1]
        T = cfg.temperature
        kl = F.kl_div(
            F.log_softmax(s_logits.reshape(-1, V) / T, dim=-1),
            F.log_softmax(t_logits.reshape(-1, V) / T, dim=-1),
            reduction="batchmean", log_target=True,
        ) * T * T
        ce = next_token_ce(s_logits, tok)
        kd = mse + kl
        total = (1 - cfg.alpha) * kd + cfg.alpha * ce
        return {"mse": mse, "kl": kl, "kd": kd, "ce": ce, "total": total}

    def step(self, batch) -> dict:
        tok = as_tokens(self.config, batch)
        parts = self.losses(tok)
        self.opt.zero_grad()
        parts["total"].backward()
        lr = self.opt.param_groups[0]["lr"]
        self.opt.step()
        self.sched.step()
        rec = {
            "step": self.step_count, "lr": lr,
            "kd_loss": parts["kd"].item(), "mse_loss": parts["mse"].item(),
            "kl_loss": parts["kl"].item(), "ce_loss": parts["ce"].item(),
            "total_loss": parts["total"].item(),
        }
        self.step_count += 1
        return rec

    def write_back(self) -> ToyTransformer:
        """Copy the trained ``dU`` tensors into the student's factors."""
        for (i, t), leaf in zip(self.keys, self.leaves):
            self.student.layers[i].w[t].dU = leaf.detach().numpy().copy()
        return self.student


def kd_step(teacher: ToyTransformer, student: ToyTransformer, batch, cfg: HealConfig) -> dict:
    """One optimiser step from a fresh AdamW state; ``student`` is updated in place."""
    trainer = KDTrainer(teacher, student, cfg, total_steps=max(cfg.steps, 1))
    rec = trainer.step(batch)
    trainer.write_back()
    rec["dU"] = {f"{i}.{t}": student.layers[i].w[t].dU.copy() for i, t in trainer.keys}
    return rec


def heal(teacher: ToyTransformer, student: ToyTransformer, dataset, cfg: HealConfig,
         eval_data=None) -> tuple[ToyTransformer, HealTrace]:
    """
    Run ``cfg.steps`` distillation steps on batches drawn (seeded) from
    ``dataset``. Returns a healed copy of ``student``; the input is untouched.
    """
    data = np.asarray(dataset, dtype=np.int64)
    if data.ndim != 2 or len(data) == 0:
        raise EmptyDataset("healing dataset must be a non-empty batch of sequences")
    healed = student.copy()
    trace = HealTrace()
    if cfg.steps == 0:
        return healed, trace
    torch.manual_seed(cfg.seed)
    trainer = KDTrainer(teacher, healed, cfg)
    rng = np.random.default_rng(cfg.seed)
    bs = min(cfg.batch_size, len(data))
    for s in range(cfg.steps):
        idx = rng.choice(len(data), size=bs, replace=False)
        trace.steps.append(trainer.step(data[idx]))
        if eval_data is not None and cfg.eval_every and (s + 1) % cfg.eval_every == 0:
            trace.evals.append(_evaluate(teacher, trainer.write_back().copy(), eval_data, s + 1))
    trainer.write_back()
    if eval_data is not None and cfg.eval_every:
        trace.evals.append(_evaluate(teacher, healed, eval_data, cfg.steps))
    return healed, trace


def _evaluate(teacher, student, eval_data, step: int) -> dict:
    from .pipeline import activation_diff_report

    frob = {}
    for i, t in student.decomposed():
        W = teacher.layers[i].w[t]
        frob[f"{i}.{t}"] = float(np.linalg.norm(W - student.layers[i].w[t].reconstruct()))
    act = {f"{r['layer']}.{r['target']}": r["diff_norm"]
           for r in activation_diff_report(teacher, student, eval_data)}
    return {"step": step, "output_mse": output_mse(teacher, student, eval_data),
            "frobenius_diff": frob, "activation_diff": act}


def output_mse(teacher: ToyTransformer, student: ToyTransformer, dataset) -> float:
    """Mean over held-out tokens of the squared logit difference (per-token MSE)."""
    teacher.check_compatible(student)
    tok = as_tokens(teacher.config, np.asarray(dataset, dtype=np.int64))
    with torch.no_grad():
        a, _ = run(to_torch(teacher), teacher.config, tok)
        b, _ = run(to_torch(student), student.config, tok)
    return float(((a - b) ** 2).mean())


def perplexity(model: ToyTransformer, dataset) -> float:
    tok = as_tokens(model.config, np.asarray(dataset, dtype=np.int64))
    with torch.no_grad():
        logits, _ = run(to_torch(model), model.config, tok)
    return float(torch.exp(next_token_ce(logits, tok)))


def config_dict(cfg: HealConfig) -> dict:
    return asdict(cfg)
