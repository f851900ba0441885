# Sum energy of the four designs as the per-user task grows.
#
# secure-oma gives every user its own time slot, fixed-sic decodes in
# descending channel gain order, no-eve drops the secrecy requirement.

import numpy as np

from nomasec import SystemConfig, draw_instance
from nomasec.benchmarks import SOLVERS, run_scheme

loads = np.arange(1, 7) * 1e5
seeds = range(5)
schemes = list(SOLVERS)

mean = {s: [] for s in schemes}
for L in loads:
    E = {s: [] for s in schemes}
    for seed in seeds:
        cfg, ch = draw_instance(SystemConfig(L=L), seed)
        for s in schemes:
            E[s].append(run_scheme(s, cfg, ch).total)
    for s in schemes:
        mean[s].append(np.mean(E[s]))

print(f"{'L [bits]':>9}" + "".join(f"{s:>13}" for s in schemes))
for i, L in enumerate(loads):
    print(f"{L:9.0f}" + "".join(f"{mean[s][i]:13.5g}" for s in schemes))

# what secrecy costs, and what NOMA saves over time sharing
gap = np.array(mean["proposed"]) / np.array(mean["no-eve"]) - 1
save = 1 - np.array(mean["proposed"]) / np.array(mean["secure-oma"])
print("\nsecrecy overhead:", np.array2string(100 * gap, precision=1), "%")
print("saving over OMA: ", np.array2string(100 * save, precision=1), "%")
