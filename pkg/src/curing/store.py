"""
On-disk format for models and calibration statistics.

A model directory holds ``manifest.json`` (canonical JSON: sorted keys, two
space indent, LF newlines) and ``tensors/<name>.bin`` files of raw
little-endian float32 in row-major order. Decomposed weights store ``C``,
``U0``, ``dU`` and ``R`` as separate tensors; their row/column indices are
written inline in the manifest.

Calibration statistics use the same layout (``stats.json`` + ``tensors/``)
but keep float64 so compression from saved statistics matches compression
from in-memory ones bit for bit.
"""

import json
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .calibration import CalibrationStats
from .cur import CurFactors
from .errors import CorruptManifest, IoFailure, ShapeMismatch, UnsupportedVersion
from .model import TARGETS, LayerWeights, ModelConfig, ToyTransformer

__all__ = ["FORMAT_VERSION", "save_model", "load_model", "save_stats", "load_stats", "canonical_json"]

FORMAT_VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


@contextmanager
def _exclusive(directory: Path):
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise IoFailure(f"{directory} is locked by another writer") from None
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


class _Writer:
    def __init__(self, root: Path, dtype: str):
        self.root = root
        self.dtype = dtype
        self.entries = []
        (root / "tensors").mkdir(parents=True, exist_ok=True)

    def add(self, name: str, role: str, array) -> str:
        arr = np.ascontiguousarray(array, dtype=np.float64)
        rel = f"tensors/{name}.bin"
        (self.root / rel).write_bytes(arr.astype(_DTYPES[self.dtype]).tobytes())
        self.entries.append({
            "name": name, "role": role, "shape": list(arr.shape), "dtype": self.dtype,
            "file": rel, "byte_order": "little-endian", "layout": "row-major",
        })
        return name


def _prepare(directory) -> Path:
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return root


def save_model(model: ToyTransformer, directory) -> dict:
    """Write ``model`` under ``directory`` and return the manifest."""
    root = _prepare(directory)
    with _exclusive(root):
        try:
            stale = root / "tensors"
            if stale.is_dir():
                for old in stale.glob("*.bin"):
                    old.unlink()
            w = _Writer(root, "f32")
            w.add("tok_emb", "embedding", model.tok_emb)
            w.add("pos_emb", "position", model.pos_emb)
            w.add("final_norm", "norm", model.final_norm)
            w.add("lm_head", "head", model.lm_head)
            factors = []
            for i, layer in enumerate(model.layers):
                w.add(f"layers.{i}.attn_norm", "norm", layer.attn_norm)
                w.add(f"layers.{i}.ffn_norm", "norm", layer.ffn_norm)
                for t in TARGETS:
                    name = f"layers.{i}.{t}"
                    weight = layer.w[t]
                    if isinstance(weight, CurFactors):
                        entry = {"name": name, "layer": i, "target": t, "rank": weight.r,
                                 "shape": list(weight.shape),
                                 "p": [int(x) for x in weight.p], "q": [int(x) for x in weight.q]}
                        for part in ("C", "U0", "dU", "R"):
                            entry[part] = w.add(f"{name}.{part}", f"cur.{part}", getattr(weight, part))
                        factors.append(entry)
                    else:
                        w.add(name, "weight", weight)
            manifest = {
                "format_version": FORMAT_VERSION,
                "config": model.config.as_dict(),
                "tensors": w.entries,
                "factors": factors,
            }
            (root / "manifest.json").write_text(canonical_json(manifest), encoding="utf-8", newline="\n")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    return manifest


def _read_manifest(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptManifest(f"{path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise CorruptManifest(f"{path}: manifest must be an object")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format_version {manifest.get('format_version')!r}")
    return manifest


def _read_tensors(root: Path, entries) -> dict:
    out = {}
    for e in entries:
        try:
            name, shape, dtype, rel = e["name"], tuple(e["shape"]), e["dtype"], e["file"]
        except (KeyError, TypeError) as exc:
            raise CorruptManifest(f"bad tensor entry {e!r}") from exc
        if dtype not in _DTYPES or e.get("byte_order") != "little-endian" or e.get("layout") != "row-major":
            raise CorruptManifest(f"tensor {name}: unsupported encoding")
        try:
            raw = (root / rel).read_bytes()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        need = int(np.prod(shape, dtype=np.int64)) * _DTYPES[dtype].itemsize
        if len(raw) != need:
            raise ShapeMismatch(f"tensor {name}: {len(raw)} bytes on disk, expected {need}")
        out[name] = np.frombuffer(raw, dtype=_DTYPES[dtype]).astype(np.float64).reshape(shape)
    return out


def load_model(directory) -> ToyTransformer:
    root = Path(directory)
    manifest = _read_manifest(root / "manifest.json")
    try:
        config = ModelConfig.from_dict(manifest["config"])
        tensors = _read_tensors(root, manifest["tensors"])
        factors = {f["name"]: f for f in manifest.get("factors", [])}
    except (KeyError, TypeError) as exc:
        raise CorruptManifest(f"manifest missing field: {exc}") from exc

    def get(name, shape=None):
        if name not in tensors:
            raise CorruptManifest(f"tensor {name} missing from manifest")
        arr = tensors[name]
        if shape is not None and arr.shape != tuple(shape):
            raise ShapeMismatch(f"tensor {name} has shape {arr.shape}, expected {tuple(shape)}")
        return arr

    d = config.d_model
    layers = []
    for i in range(config.n_layers):
        w = {}
        for t in TARGETS:
            name = f"layers.{i}.{t}"
            m, n = config.target_shape(t)
            if name in factors:
                fe = factors[name]
                try:
                    r = int(fe["rank"])
                    p = np.asarray(fe["p"], dtype=np.int64)
                    q = np.asarray(fe["q"], dtype=np.int64)
                    parts = {k: fe[k] for k in ("C", "U0", "dU", "R")}
                except (KeyError, TypeError, ValueError) as exc:
                    raise CorruptManifest(f"bad factor entry for {name}") from exc
                if len(p) != r or len(q) != r:
                    raise CorruptManifest(f"{name}: index arrays do not match rank {r}")
                if r and (p.min() < 0 or p.max() >= m or q.min() < 0 or q.max() >= n):
                    raise CorruptManifest(f"{name}: row/column index out of range")
                w[t] = CurFactors(
                    C=get(parts["C"], (m, r)), U0=get(parts["U0"], (r, r)),
                    dU=get(parts["dU"], (r, r)), R=get(parts["R"], (r, n)), p=p, q=q,
                )
            else:
                w[t] = get(name, (m, n))
        layers.append(LayerWeights(
            w=w, attn_norm=get(f"layers.{i}.attn_norm", (d,)), ffn_norm=get(f"layers.{i}.ffn_norm", (d,)),
        ))
    return ToyTransformer(
        config=config,
        tok_emb=get("tok_emb", (config.vocab, d)),
        pos_emb=get("pos_emb", (config.max_seq, d)),
        layers=layers,
        final_norm=get("final_norm", (d,)),
        lm_head=get("lm_head", (d, config.vocab)),
    )


def save_stats(stats: CalibrationStats, directory) -> dict:
    root = _prepare(directory)
    with _exclusive(root):
        try:
            w = _Writer(root, "f64")
            act = []
            for (i, t) in sorted(stats.act_sq):
                act.append({"layer": i, "target": t,
                            "tensor": w.add(f"act_sq.{i}.{t}", "act_sq", stats.act_sq[(i, t)])})
            hidden = [w.add(f"last_token_hidden.{i}", "hidden", h)
                      for i, h in enumerate(stats.last_token_hidden)]
            manifest = {
                "format_version": FORMAT_VERSION,
                "kind": "calibration",
                "n_examples": stats.n_examples,
                "act_sq": act,
                "last_token_hidden": hidden,
                "tensors": w.entries,
            }
            (root / "stats.json").write_text(canonical_json(manifest), encoding="utf-8", newline="\n")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    return manifest


def load_stats(directory) -> CalibrationStats:
    root = Path(directory)
    manifest = _read_manifest(root / "stats.json")
    try:
        tensors = _read_tensors(root, manifest["tensors"])
        act_sq = {(int(a["layer"]), a["target"]): tensors[a["tensor"]] for a in manifest["act_sq"]}
        hidden = [tensors[name] for name in manifest["last_token_hidden"]]
        n = int(manifest["n_examples"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptManifest(f"bad calibration manifest: {exc}") from exc
    return CalibrationStats(act_sq=act_sq, last_token_hidden=hidden, n_examples=n)
