"""Koopman embeddings with invertible coupling flows.

The forward direction of a coupling-flow network serves as the observable
map, a rank-truncated spectral fit advances the observables linearly, and
the exact inverse of the same network reconstructs states from spectral
predictions.
"""

__version__ = "0.1.0"

from .autodiff import Var, backward, no_grad
from .config import ExperimentConfig, default_config, load_config
from .dmd import (
    DMDModel,
    SnapshotPair,
    dense_dmd_oracle,
    export_model,
    fit_dmd,
    parse_model,
    reconstruct_state,
)
from .errors import (
    ConfigError,
    DeserializationError,
    FlowDmdError,
    NumericError,
    RankDeficiencyError,
    ShapeError,
    SingularScaleError,
    SolverError,
    SpectralInconsistencyWarning,
    TrainingDivergenceError,
    UsageError,
    ZeroReferenceError,
)
from .flows import CouplingLayer, FlowNetwork, build_flow, default_split
from .metrics import ErrorReport, error_report, mse, rl2e, trl2e
from .nncore import Adam, Fnn, PlateauScheduler, xavier_init
from .systems import (
    Dataset,
    Trajectory,
    load_dataset,
    make_dataset,
    save_dataset,
    simulate_fixed_point,
    solve_allen_cahn,
    solve_burgers,
)
from .training import (
    AutoencoderDemo,
    FlowDmdConfig,
    TrainedModel,
    exact_dmd_baseline,
    linearity_loss,
    reconstruction_loss,
    reconstruct_with_flow,
    train_ae_baseline,
    train_flowdmd,
    trajectory_losses,
)
