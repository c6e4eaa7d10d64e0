"""The numerical checks behind the runtime.

Gradients are compared with central differences; the local iterates are
watched against the drift bound built from running smoothness estimates.
"""

import numpy as np

from comfedl import (
    ExperimentConfig,
    check_task_gradients,
    derive_stream,
    drift_check,
    make_logistic_dro,
    make_quadratic_dro,
    mc_bias_probe,
    run,
)

rng = derive_stream(0, 0, 0, 0, "task-data")

task = make_quadratic_dro(n=4, d=5, gamma=0.5, rng=rng)
rep = check_task_gradients(task, points=20, rng=derive_stream(1, 0, 0, 0, "demo"))
print(f"full-batch estimator vs finite differences: max relative error {rep.max_rel_error:.2e}")

# With small batches the exp outer makes the estimator biased; full batches are exact.
w = np.full(task.d, 0.3)
for b in (1, None):
    probe = mc_bias_probe(task, 0, w, b=b, b1=b, reps=2000, rng=derive_stream(2, 0, 0, 0, "demo"))
    print(f"batch={b!s:<4}  |E[u] - grad|={probe.deviation:.2e}  Monte-Carlo band={probe.mc_band:.2e}")

task = make_logistic_dro(n=10, d=10, gamma=1.0, rng=rng)
cfg = ExperimentConfig(n=10, m=5, tau=5, S=200, eta=0.01, b=10, b1=10, gamma=1.0)
res = run(task, cfg)
rep = drift_check(res.records, res.estimate, cfg)
print(f"\nestimates G_f={res.estimate.G_f:.3f} G_g={res.estimate.G_g:.3f}")
print(f"worst drift / bound = {rep.worst_ratio:.3f}  passed={rep.passed}")
