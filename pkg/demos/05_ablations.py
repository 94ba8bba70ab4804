"""
The comparison sweeps: selection strategy on synthetic matrices, then rank
cap and layer-selection method on a toy model.
"""

from curing import ModelConfig
from curing.ablation import format_table, make_setup, model_ablation, strategy_ablation

print("selection strategy, 20 seeds, 64x48 weights, r = 8")
print(format_table(strategy_ablation(seeds=20)))

setup = make_setup(ModelConfig(n_layers=6, d_model=32, n_heads=4, d_inter=64, vocab=32, max_seq=16),
                   seed=0, teacher_steps=200)
for axis in ("r-max", "layer-selection", "targets"):
    print(f"\n{axis} sweep (one layer compressed)")
    print(format_table(model_ablation(setup, axis)))
