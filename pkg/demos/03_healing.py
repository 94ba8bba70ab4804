"""
Healing: only the r x r correction dU of each core is trained, by distilling
the teacher's block outputs and softened logits into the student. C, R and
U0 stay frozen, so every update lives in the span of the selected columns
and rows.
"""

import numpy as np

from curing import CompressionPlan, HealConfig, ModelConfig, calibrate, compress_model, heal
from curing.ablation import make_setup
from curing.healing import output_mse, perplexity
from curing.pipeline import activation_diff_report

cfg = ModelConfig(n_layers=2, d_model=32, n_heads=4, d_inter=64, vocab=32, max_seq=16)
setup = make_setup(cfg, seed=1)
stats = calibrate(setup.teacher, setup.calib)
student = compress_model(setup.teacher, CompressionPlan(layers=[0, 1], r_max=8), stats, protect_ends=False).model

before = output_mse(setup.teacher, student, setup.held)
healed, trace = heal(setup.teacher, student, setup.heal, HealConfig(steps=300, eval_every=100), eval_data=setup.held)
after = output_mse(setup.teacher, healed, setup.held)

print("step   lr        kd_loss   ce_loss   total")
for row in trace.steps[::50] + trace.steps[-1:]:
    print(f"{row['step']:4d}   {row['lr']:.2e}  {row['kd_loss']:.4f}    {row['ce_loss']:.4f}    {row['total_loss']:.4f}")

print(f"\nheld-out output MSE vs teacher: {before:.4f} -> {after:.4f}")
print(f"perplexity teacher {perplexity(setup.teacher, setup.held):.2f}, "
      f"student {perplexity(student, setup.held):.2f}, healed {perplexity(healed, setup.held):.2f}")

print("\nactivation differences per compressed weight (unhealed -> healed):")
for a, b in zip(activation_diff_report(setup.teacher, student, setup.held),
                activation_diff_report(setup.teacher, healed, setup.held)):
    print(f"  {a['layer']}.{a['target']:4s} {a['diff_norm']:.3f} -> {b['diff_norm']:.3f}")

f0, f1 = student.layers[0].w["q"], healed.layers[0].w["q"]
print(f"\nC unchanged: {np.array_equal(f0.C, f1.C)}, R unchanged: {np.array_equal(f0.R, f1.R)}, "
      f"U0 unchanged: {np.array_equal(f0.U0, f1.U0)}, |dU|_F = {np.linalg.norm(f1.dU):.4f}")
