import numpy as np
import pytest

from curing.ablation import AXES, ToySetup, format_table, model_ablation, strategy_ablation, synthetic_problem
from curing.corpus import data_split
from curing.model import ModelConfig, ToyTransformer
from curing.selection import STRATEGIES


def test_synthetic_problem_is_seeded():
    a, b = synthetic_problem(3), synthetic_problem(3)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    assert a[0].shape == (64, 48) and a[1].shape == (64,) and np.all(a[1] > 0)


def test_strategy_ablation_structure():
    rows = strategy_ablation(seeds=3)
    assert [r["strategy"] for r in rows] == list(STRATEGIES)
    assert all(r["trials"] == 3 and r["mean_frobenius_diff"] > 0 for r in rows)


@pytest.fixture(scope="module")
def setup():
    cfg = ModelConfig(n_layers=4, d_model=16, n_heads=4, n_kv_heads=2, d_inter=24, vocab=20, max_seq=8)
    teacher = ToyTransformer.random(cfg, 0)
    return ToySetup(teacher=teacher, calib=data_split("calib", 16, 8, 20, 0), heal=data_split("heal", 4, 8, 20, 0),
                    held=data_split("eval", 8, 8, 20, 0), seed=0)


@pytest.mark.parametrize("axis", [a for a in AXES if a != "strategy"])
def test_model_axes(setup, axis):
    rows = model_ablation(setup, axis, n_layers=1, r_max=4)
    assert len(rows) >= 3
    for row in rows:
        assert axis in row and row["saved_params"] > 0 and row["output_mse"] > 0
        assert row["layers"][0] in (1, 2)


def test_r_max_axis_orders_savings(setup):
    rows = model_ablation(setup, "r-max", values=[2, 4], n_layers=1)
    assert rows[0]["saved_params"] > rows[1]["saved_params"]


def test_unknown_axis(setup):
    with pytest.raises(ValueError):
        model_ablation(setup, "strategy", values=["x"])


def test_format_table():
    text = format_table([{"a": 1, "b": 0.5}, {"a": 22, "b": [1, 2]}])
    lines = text.splitlines()
    assert lines[0].split() == ["a", "b"] and set(lines[1]) <= {"-", " "}
    assert lines[3].split() == ["22", "1,2"] and format_table([]) == ""
