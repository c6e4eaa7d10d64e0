"""Compositional federated learning simulator.

Clients hold compositional objectives ``g_i(f_i(w))``; the package provides
the tasks, the federated runtime (ComFedL and a FedAvg baseline), the
log-sum-exp robust weighting, verification oracles and file I/O.
"""

from .core import DimensionError, SmoothnessEstimate, derive_stream, update_smoothness, vec_axpy
from .oracles import (
    check_task_gradients,
    finite_diff_grad,
    grad_check,
    mc_bias_probe,
    rate_fit,
    reference_composition_gd,
    theorem1_bound,
)
from .robust import kl_to_uniform, lse_value, minimax_value, softmax_weights, verify_lemma1
from .runtime import (
    ConfigError,
    ExperimentConfig,
    RoundRecord,
    RunResult,
    drift_check,
    run,
    run_comfedl,
    run_fedavg,
    sample_clients,
)
from .tasks import (
    CompositionTask,
    Samples,
    client_grad_estimator,
    make_imbalanced_classification,
    make_logistic_dro,
    make_logistic_maml,
    make_quadratic_dro,
    make_quadratic_maml,
    make_task,
)
from .telemetry import (
    MetricsSink,
    apply_overrides,
    build_task,
    checkpoint_model,
    config_hash,
    load_checkpoint,
    parse_config,
    read_metrics,
)

__version__ = "0.1.0"
