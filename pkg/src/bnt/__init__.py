"""Transformer classification of complete weighted connectivity graphs.

Library layout:

- ``bnt.rng``      deterministic counter-based random streams
- ``bnt.linalg``   dense float64 kernels (orthonormalization, eigensolver)
- ``bnt.model``    attention stack, readouts, analytic gradients
- ``bnt.data``     synthetic correlation graphs, dataset file, splits
- ``bnt.training`` Adam loop, checkpoints, train reports
- ``bnt.metrics``  AUROC, threshold metrics, assignment difference score
- ``bnt.theory``   variance-functional and VIF verification suite
- ``bnt.cli``      command line entry points
"""

__version__ = "0.1.0"

from .rng import Rng
from .linalg import (
    DegenerateBasisError,
    gram_schmidt,
    matmul,
    softmax_rows,
    symmetric_eigendecomposition,
    xavier_uniform,
)
from .model import (
    CentersMode,
    FeatureMode,
    ForwardTrace,
    ModelConfig,
    ModelParams,
    Readout,
    baseline_readout,
    forward,
    init_params,
    loss_and_grad,
    mhsa_layer,
    node_feature,
    ocread,
)
from .data import (
    ConnectivityGraph,
    GeneratorSpec,
    SplitPlan,
    generate_dataset,
    random_split,
    read_dataset,
    stratified_split,
    write_dataset,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .metrics import EvalResult, auroc, difference_score, threshold_metrics
from .theory import (
    VarianceFunctionalEstimate,
    VifReport,
    correlated_unit_centers,
    orthonormal_centers,
    variance_functional_2d,
    variance_functional_mc,
    vif,
)
