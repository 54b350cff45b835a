"""Conditional adversarial generative models for stochastic systems.

An adversarially trained conditional sampler with an entropy
regularizer, plus the synthetic benchmarks it is evaluated on: noisy
1-d regression, a correlated two-fidelity Gaussian process, and the
viscous Burgers equation with random initial conditions.
"""

from .autodiff import DiffNode, Tape, backward, grad_check
from .burgers import (
    BurgersData,
    BurgersSpec,
    burgers_dataset,
    burgers_solve,
    conditional_gp_ic,
    conditional_ic_moments,
    normalize_time,
)
from .datasets import (
    GpSpec,
    MultiFidelityData,
    MultiFidelitySpec,
    NoiseCase,
    base_signal,
    hetero_envelope,
    mean_high,
    mean_low,
    mf_joint_moments,
    multifidelity_dataset,
    noisy_regression_dataset,
    rbf_kernel,
    sample_gp,
    signal_std,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateDistributionError,
    DimensionError,
    DivergenceError,
    EvaluationError,
    IllConditionedError,
    NotPsdError,
    SchemaError,
)
from .gp import GpRegressor, gp_fit, gp_predict
from .metrics import (
    Gaussian1D,
    MarginalReport,
    avg_marginal_kl,
    coverage_fraction,
    fit_gaussian,
    gauss_kl,
    pearson_r,
    relative_l2,
)
from .model import (
    CagmModel,
    LossHistory,
    PairedDataset,
    PredictiveStats,
    TrainConfig,
    build_model,
    discriminator_loss,
    generate,
    generator_loss,
    moments_from_samples,
    predict_moments,
    predict_samples,
    sample_latent,
    train,
)
from .nn import MLP, AdamState, adam_step, forward, forward_graph, wrap_params, xavier_init
from .rng import DATA, HOLDOUT, INIT, METRIC, PREDICT, SPLIT, TRAIN, stream
from .storage import (
    load_checkpoint,
    load_dataset,
    load_train_config,
    read_checkpoint,
    save_checkpoint,
    save_dataset,
    write_csv,
)
from .version import VERSION as __version__
from .experiments import (
    EXPERIMENT_NAMES,
    ExperimentConfig,
    MetricSpec,
    ModelSpec,
    SweepSpec,
    load_config,
    multifidelity_predict,
    preset,
    run,
    save_config,
    sweep,
)
