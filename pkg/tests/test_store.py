import json
import os

import numpy as np
import pytest

from curing.calibration import calibrate
from curing.corpus import data_split
from curing.errors import CorruptManifest, IoFailure, ShapeMismatch, UnsupportedVersion
from curing.model import TARGETS, forward
from curing.pipeline import CompressionPlan, compress_model
from curing.store import FORMAT_VERSION, load_model, load_stats, save_model, save_stats


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


@pytest.fixture
def compressed(tiny_model):
    stats = calibrate(tiny_model, data_split("calib", 8, 8, tiny_model.config.vocab, 0))
    model = compress_model(tiny_model, CompressionPlan(layers=[1, 2], r_max=4), stats).model
    f = model.layers[1].w["q"]
    f.dU = np.random.default_rng(0).standard_normal(f.dU.shape)
    return model


def test_round_trip_dense(tiny_model, tmp_path):
    save_model(tiny_model, tmp_path)
    back = load_model(tmp_path)
    assert back.config == tiny_model.config
    for t in TARGETS:
        np.testing.assert_array_equal(back.layers[2].w[t], tiny_model.layers[2].w[t].astype(np.float32))
    np.testing.assert_array_equal(back.tok_emb, tiny_model.tok_emb.astype(np.float32))


def test_round_trip_compressed(compressed, tmp_path):
    manifest = save_model(compressed, tmp_path)
    back = load_model(tmp_path)
    assert back.decomposed() == compressed.decomposed()
    by_name = {e["name"]: e for e in manifest["factors"]}
    for i, t in compressed.decomposed():
        f, g = compressed.layers[i].w[t], back.layers[i].w[t]
        entry = by_name[f"layers.{i}.{t}"]
        assert entry["p"] == f.p.tolist() and entry["q"] == f.q.tolist() and entry["rank"] == f.r
        assert g.p.tolist() == f.p.tolist() and g.q.tolist() == f.q.tolist()
        for part in ("C", "U0", "dU", "R"):
            np.testing.assert_array_equal(getattr(g, part), getattr(f, part).astype(np.float32))
    g = back.layers[1].w["q"]
    assert g.dU.any() and not np.array_equal(g.U0, g.core)
    tokens = data_split("eval", 3, 8, compressed.config.vocab, 0)
    a, b = forward(compressed, tokens).logits, forward(back, tokens).logits
    assert np.max(np.abs(a - b)) < 1e-5 * max(1.0, np.max(np.abs(a)))


def test_save_is_byte_deterministic_and_idempotent(compressed, tmp_path):
    save_model(compressed, tmp_path / "a")
    save_model(compressed, tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    save_model(load_model(tmp_path / "a"), tmp_path / "c")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "c")


def test_manifest_format(compressed, tmp_path):
    save_model(compressed, tmp_path)
    text = (tmp_path / "manifest.json").read_bytes()
    assert b"\r\n" not in text and text.endswith(b"\n")
    manifest = json.loads(text)
    assert manifest["format_version"] == FORMAT_VERSION
    assert text.decode() == json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    for e in manifest["tensors"]:
        assert e["dtype"] == "f32" and e["byte_order"] == "little-endian" and e["layout"] == "row-major"
        size = (tmp_path / e["file"]).stat().st_size
        assert size == int(np.prod(e["shape"])) * 4
    raw = np.frombuffer((tmp_path / "tensors" / "tok_emb.bin").read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(raw.reshape(compressed.tok_emb.shape), compressed.tok_emb.astype("<f4"))
    assert not (tmp_path / ".lock").exists()


def test_resave_removes_stale_tensors(compressed, tiny_model, tmp_path):
    save_model(compressed, tmp_path)
    save_model(tiny_model, tmp_path)
    assert not list((tmp_path / "tensors").glob("*.U0.bin"))


def test_truncated_tensor(tiny_model, tmp_path):
    save_model(tiny_model, tmp_path)
    path = tmp_path / "tensors" / "lm_head.bin"
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ShapeMismatch):
        load_model(tmp_path)


def edit_manifest(root, fn):
    path = root / "manifest.json"
    manifest = json.loads(path.read_text())
    fn(manifest)
    path.write_text(json.dumps(manifest))


def test_out_of_range_index(compressed, tmp_path):
    save_model(compressed, tmp_path)
    edit_manifest(tmp_path, lambda m: m["factors"][0]["q"].__setitem__(0, 10**6))
    with pytest.raises(CorruptManifest):
        load_model(tmp_path)


def test_wrong_version(tiny_model, tmp_path):
    save_model(tiny_model, tmp_path)
    edit_manifest(tmp_path, lambda m: m.__setitem__("format_version", 2))
    with pytest.raises(UnsupportedVersion):
        load_model(tmp_path)


def test_garbage_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(CorruptManifest):
        load_model(tmp_path)


def test_missing_tensor_entry(tiny_model, tmp_path):
    save_model(tiny_model, tmp_path)
    edit_manifest(tmp_path, lambda m: m.__setitem__("tensors", [e for e in m["tensors"] if e["name"] != "pos_emb"]))
    with pytest.raises(CorruptManifest):
        load_model(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(IoFailure):
        load_model(tmp_path / "nope")


def test_lock_blocks_concurrent_writer(tiny_model, tmp_path):
    (tmp_path / ".lock").write_text("")
    with pytest.raises(IoFailure):
        save_model(tiny_model, tmp_path)


def test_stats_round_trip_exact(tiny_model, tmp_path):
    stats = calibrate(tiny_model, data_split("calib", 6, 8, tiny_model.config.vocab, 0))
    save_stats(stats, tmp_path)
    back = load_stats(tmp_path)
    assert back.n_examples == stats.n_examples
    assert all(back.act_sq[k].tobytes() == stats.act_sq[k].tobytes() for k in stats.act_sq)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(back.last_token_hidden, stats.last_token_hidden))
