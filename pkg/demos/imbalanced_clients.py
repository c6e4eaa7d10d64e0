"""One dominant client, nine small ones: who does the shared model serve?

FedAvg weights clients by sample count, so the big client dominates.  The
compositional objective up-weights whoever is currently doing worst.  This
is a one-seed, shortened version of the acceptance comparison and takes
about fifteen seconds.
"""

from dataclasses import replace
from pathlib import Path

import numpy as np

from comfedl import apply_overrides, build_task, parse_config, run

cfg = parse_config((Path(__file__).resolve().parents[1] / "configs" / "imbalanced.ini").read_text())
cfg = apply_overrides(cfg, ["S=200"])
task = build_task(cfg)
print("shard sizes:", task.shard_sizes(), "dominant client:", task.dominant_client)

results = {algo: run(task, replace(cfg, algorithm=algo)) for algo in ("comfedl", "fedavg")}

for algo, res in results.items():
    fin = res.final
    losses = np.array(fin.client_losses)
    print(f"\n{algo}")
    print("  per-client loss :", np.round(losses, 3))
    print("  worst / mean    :", round(fin.worst_loss, 4), round(losses.mean(), 4))
    print("  dominant client :", round(losses[task.dominant_client], 4))

# The implied weights in the last record say who the robust objective is
# protecting: the largest weight always sits on the largest loss.
w = np.array(results["comfedl"].final.weights)
print("\nimplied weights:", np.round(w, 3), "-> argmax", int(np.argmax(w)))
