"""
End-to-end compression of a small Llama-shaped model.

1. train a toy teacher briefly on a synthetic corpus
2. calibrate: collect input-activation norms and last-token hidden states
3. rank layers by how little they rotate the hidden state
4. replace the q, k and gate weights of the chosen layers with CUR factors
"""

from curing import CompressionPlan, ModelConfig, calibrate, compress_model, rank_layers, select_layers
from curing.ablation import make_setup
from curing.healing import output_mse, perplexity
from curing.pipeline import activation_diff_report, model_size_report

cfg = ModelConfig(n_layers=6, d_model=32, n_heads=4, n_kv_heads=2, d_inter=64, vocab=32, max_seq=16)
setup = make_setup(cfg, seed=0, teacher_steps=200)
teacher = setup.teacher
print(f"teacher: {teacher.n_params()} parameters, held-out perplexity {perplexity(teacher, setup.held):.2f}")

stats = calibrate(teacher, setup.calib)
print("\nlayer ranking (mean angular distance between a layer's output and its input):")
for layer, dist in rank_layers(stats):
    print(f"  layer {layer}: {dist:.4f}")

layers = select_layers("angular", 2, cfg.n_layers, stats=stats)
plan = CompressionPlan(layers=layers, r_max=8)
res = compress_model(teacher, plan, stats)
student = res.model

print(f"\ncompressed layers {layers}; decomposed weights: {student.decomposed()}")
size = model_size_report(teacher, plan)
print(f"parameters {teacher.n_params()} -> {student.n_params()} (saved {size.saved_params})")
for rec in res.records:
    print(f"  layer {rec.layer} {rec.target:4s} r={rec.r}  ||W-CUR||_F={rec.frobenius_diff:.3f}  "
          f"deim-only bound holds: {rec.verification.holds}")

print(f"\nstudent perplexity {perplexity(student, setup.held):.2f}, "
      f"output MSE vs teacher {output_mse(teacher, student, setup.held):.4f}")
print("\nper-weight activation differences:")
for row in activation_diff_report(teacher, student, setup.held):
    print(f"  {row['layer']}.{row['target']:4s} |A|={row['orig_norm']:.1f}  |A-A_cur|={row['diff_norm']:.2f}")
