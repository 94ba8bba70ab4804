"""
A small Llama-shaped decoder used as the compression target.

Pre-norm residual blocks with RMSNorm, causal multi-head attention (with
optional grouped key/value heads) and a SiLU-gated feed-forward network.
Positions come from a learned absolute embedding added to the token embedding.

Weights live in numpy float64 arrays laid out ``(d_in, d_out)`` (``y = x @ W``).
Any of the seven projection matrices in a block may instead be a
:class:`~curing.cur.CurFactors`, which is evaluated as ``((x @ C) @ U) @ R``.
The forward pass itself runs in torch (float64) so that the same code serves
plain inference, teacher pre-training and healing.
"""

import copy
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .cur import CurFactors
from .errors import ArchitectureMismatch, TokenOutOfRange

__all__ = [
    "TARGETS",
    "ModelConfig",
    "LayerWeights",
    "ToyTransformer",
    "ForwardOutput",
    "to_torch",
    "run",
    "forward",
    "train_teacher",
]

TARGETS = ("q", "k", "v", "o", "gate", "up", "down")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    d_model: int = 32
    n_heads: int = 4
    n_kv_heads: int = 4
    d_inter: int = 64
    vocab: int = 32
    max_seq: int = 32
    norm_eps: float = 1e-5

    def __post_init__(self):
        if min(self.n_layers, self.d_model, self.n_heads, self.n_kv_heads,
               self.d_inter, self.vocab, self.max_seq) < 1:
            raise ValueError("all model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be a multiple of n_heads")
        if self.n_heads % self.n_kv_heads:
            raise ValueError("n_kv_heads must divide n_heads")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_kv(self) -> int:
        return self.n_kv_heads * self.d_k

    def target_shape(self, target: str) -> tuple[int, int]:
        d, kv, f = self.d_model, self.d_kv, self.d_inter
        return {
            "q": (d, d), "k": (d, kv), "v": (d, kv), "o": (d, d),
            "gate": (d, f), "up": (d, f), "down": (f, d),
        }[target]

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class LayerWeights:
    w: dict  # target name -> ndarray or CurFactors
    attn_norm: np.ndarray
    ffn_norm: np.ndarray

    def is_decomposed(self, target: str) -> bool:
        return isinstance(self.w[target], CurFactors)

    def dense(self, target: str) -> np.ndarray:
        """The weight as a dense matrix (``C @ U @ R`` for decomposed ones)."""
        w = self.w[target]
        return w.reconstruct() if isinstance(w, CurFactors) else w

    def n_params(self) -> int:
        total = self.attn_norm.size + self.ffn_norm.size
        for w in self.w.values():
            total += w.n_params if isinstance(w, CurFactors) else w.size
        return total


@dataclass
class ToyTransformer:
    config: ModelConfig
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    layers: list = field(default_factory=list)
    final_norm: np.ndarray | None = None
    lm_head: np.ndarray | None = None

    @classmethod
    def random(cls, config: ModelConfig, seed: int) -> "ToyTransformer":
        """Gaussian init with ``1/sqrt(fan_in)`` scaling, unit norm gains."""
        rng = np.random.default_rng(seed)
        d = config.d_model

        def mat(shape):
            return rng.standard_normal(shape) / np.sqrt(shape[0])

        layers = []
        for _ in range(config.n_layers):
            w = {t: mat(config.target_shape(t)) for t in TARGETS}
            layers.append(LayerWeights(w=w, attn_norm=np.ones(d), ffn_norm=np.ones(d)))
        return cls(
            config=config,
            tok_emb=rng.standard_normal((config.vocab, d)),
            pos_emb=0.1 * rng.standard_normal((config.max_seq, d)),
            layers=layers,
            final_norm=np.ones(d),
            lm_head=mat((d, config.vocab)),
        )

    def copy(self) -> "ToyTransformer":
        return copy.deepcopy(self)

    def decomposed(self) -> list[tuple[int, str]]:
        return [(i, t) for i, layer in enumerate(self.layers)
                for t in TARGETS if layer.is_decomposed(t)]

    def n_params(self) -> int:
        return (self.tok_emb.size + self.pos_emb.size + self.final_norm.size
                + self.lm_head.size + sum(layer.n_params() for layer in self.layers))

    def check_compatible(self, other: "ToyTransformer") -> None:
        if self.config != other.config:
            raise ArchitectureMismatch(f"{self.config} != {other.config}")


@dataclass
class ForwardOutput:
    logits: np.ndarray  # (seq, vocab) or (batch, seq, vocab)
    hidden: list  # per layer post-residual states, same leading dims


def _t(a) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float64))


def to_torch(model: ToyTransformer, train: str = "none") -> dict:
    """
    Wrap model weights as float64 tensors.

    ``train`` selects which tensors get ``requires_grad``: ``"none"``,
    ``"dU"`` (only the trainable cores of decomposed weights) or ``"all"``
    (every dense tensor; used for teacher pre-training).
    """
    everything = train == "all"

    def leaf(a, grad=False):
        x = _t(a).clone()
        if grad:
            x.requires_grad_(True)
        return x

    params = {
        "tok_emb": leaf(model.tok_emb, everything),
        "pos_emb": leaf(model.pos_emb, everything),
        "final_norm": leaf(model.final_norm, everything),
        "lm_head": leaf(model.lm_head, everything),
    }
    for i, layer in enumerate(model.layers):
        params[f"{i}.attn_norm"] = leaf(layer.attn_norm, everything)
        params[f"{i}.ffn_norm"] = leaf(layer.ffn_norm, everything)
        for t in TARGETS:
            w = layer.w[t]
            if isinstance(w, CurFactors):
                params[f"{i}.{t}"] = (_t(w.C), _t(w.U0), leaf(w.dU, train in ("dU", "all")), _t(w.R))
            else:
                params[f"{i}.{t}"] = leaf(w, everything)
    return params


def _lin(x, w):
    if isinstance(w, tuple):
        C, U0, dU, R = w
        return ((x @ C) @ (U0 + dU)) @ R
    return x @ w


def _rms(x, g, eps):
    return x * torch.rsqrt((x * x).mean(-1, keepdim=True) + eps) * g


def run(params: dict, config: ModelConfig, tokens: torch.Tensor, capture: dict | None = None):
    """
    Batched forward pass on ``tokens`` of shape ``(batch, seq)``.

    Returns ``(logits, hidden)`` with ``hidden`` the list of per-layer block
    outputs. When ``capture`` is a dict it is filled with
    ``(layer, target) -> (input, output)`` for every projection.
    """
    B, L = tokens.shape
    h, kvh, dk = config.n_heads, config.n_kv_heads, config.d_k
    eps = config.norm_eps
    x = params["tok_emb"][tokens] + params["pos_emb"][:L]
    mask = torch.ones(L, L, dtype=torch.bool).tril()
    hidden = []

    def proj(i, t, inp):
        out = _lin(inp, params[f"{i}.{t}"])
        if capture is not None:
            capture[(i, t)] = (inp, out)
        return out

    for i in range(config.n_layers):
        a = _rms(x, params[f"{i}.attn_norm"], eps)
        q = proj(i, "q", a).view(B, L, h, dk).transpose(1, 2)
        k = proj(i, "k", a).view(B, L, kvh, dk).transpose(1, 2)
        v = proj(i, "v", a).view(B, L, kvh, dk).transpose(1, 2)
        if kvh != h:
            k = k.repeat_interleave(h // kvh, dim=1)
            v = v.repeat_interleave(h // kvh, dim=1)
        scores = (q @ k.transpose(-1, -2)) / dk**0.5
        scores = scores.masked_fill(~mask, float("-inf"))
        heads = torch.softmax(scores, dim=-1) @ v
        x = x + proj(i, "o", heads.transpose(1, 2).reshape(B, L, h * dk))
        b = _rms(x, params[f"{i}.ffn_norm"], eps)
        gated = F.silu(proj(i, "gate", b)) * proj(i, "up", b)
        x = x + proj(i, "down", gated)
        hidden.append(x)
    logits = _rms(x, params["final_norm"], eps) @ params["lm_head"]
    return logits, hidden


def as_tokens(config: ModelConfig, tokens) -> torch.Tensor:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise TokenOutOfRange("tokens must be a non-empty sequence or batch of sequences")
    if arr.shape[1] > config.max_seq:
        raise TokenOutOfRange(f"sequence length {arr.shape[1]} exceeds max_seq {config.max_seq}")
    if arr.min() < 0 or arr.max() >= config.vocab:
        raise TokenOutOfRange(f"token ids must lie in [0, {config.vocab})")
    return torch.from_numpy(arr)


def forward(model: ToyTransformer, tokens) -> ForwardOutput:
    """Inference on one sequence ``(seq,)`` or a batch ``(batch, seq)``."""
    single = np.ndim(tokens) == 1
    tok = as_tokens(model.config, tokens)
    with torch.no_grad():
        logits, hidden = run(to_torch(model), model.config, tok)
    if single:
        return ForwardOutput(logits[0].numpy(), [hs[0].numpy() for hs in hidden])
    return ForwardOutput(logits.numpy(), [hs.numpy() for hs in hidden])


def next_token_ce(logits: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
    V = logits.shape[-1]
    return F.cross_entropy(logits[:, :-1].reshape(-1, V), tokens[:, 1:].reshape(-1))


def train_teacher(model: ToyTransformer, corpus: np.ndarray, steps: int = 200,
                  lr: float = 3e-3, batch_size: int = 16, seed: int = 0) -> ToyTransformer:
    """Briefly fit a dense model to next-token prediction on ``corpus`` with Adam."""
    if model.decomposed():
        raise ValueError("teacher pre-training expects an undecomposed model")
    torch.manual_seed(seed)
    params = to_torch(model, train="all")
    leaves = [p for p in params.values() if isinstance(p, torch.Tensor) and p.requires_grad]
    opt = torch.optim.Adam(leaves, lr=lr)
    rng = np.random.default_rng(seed)
    corpus = np.asarray(corpus, dtype=np.int64)
    for _ in range(steps):
        idx = rng.choice(len(corpus), size=min(batch_size, len(corpus)), replace=False)
        tok = as_tokens(model.config, corpus[idx])
        logits, _ = run(params, model.config, tok)
        loss = next_token_ce(logits, tok)
        opt.zero_grad()
        loss.backward()
        opt.step()

    out = model.copy()
    with torch.no_grad():
        out.tok_emb = params["tok_emb"].numpy().copy()
        out.pos_emb = params["pos_emb"].numpy().copy()
        out.final_norm = params["final_norm"].numpy().copy()
        out.lm_head = params["lm_head"].numpy().copy()
        for i, layer in enumerate(out.layers):
            layer.attn_norm = params[f"{i}.attn_norm"].numpy().copy()
            layer.ffn_norm = params[f"{i}.ffn_norm"].numpy().copy()
            for t in TARGETS:
                layer.w[t] = params[f"{i}.{t}"].numpy().copy()
    return out
