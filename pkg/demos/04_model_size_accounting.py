"""
Parameter and memory savings for real architectures, computed from their
dimensions alone (4 bytes per parameter, GiB = 2^30 bytes).
"""

from curing import get_preset, size_report
from curing.pipeline import PRESETS

for name in PRESETS:
    dims = get_preset(name)
    for layers in (10, 30):
        print(size_report(dims, layers, r_max=256).summary())

rep = size_report(get_preset("llama3.1-8b"), 1, r_max=256)
print("\none Llama3.1-8B layer, per target:")
for t in ("q", "k", "gate"):
    single = size_report(get_preset("llama3.1-8b"), 1, targets=(t,), r_max=256)
    print(f"  {t:4s} saves {single.saved_params:,} parameters")
print(f"  total {rep.saved_params:,}")
