"""Desk-scale laboratory for contrastive continual learning: exact
population losses over finite supports, provable test-loss bounds,
adaptive distillation coefficients, and toy-scale training runs."""

__version__ = "0.1.0"

from .core import (
    ConstantModel,
    EmbeddingModel,
    MixtureWeights,
    TableModel,
    TaskDistribution,
    TupleOutcome,
    enumerate_tuples,
    mixture,
    normalize,
    random_table_model,
)
from .losses import (
    BatchEmbeddings,
    decomposition_residual,
    empirical_contrastive,
    empirical_distillation,
    logistic_link,
    population_contrastive,
    population_distillation,
    population_test_loss,
    population_train_loss,
    similarity_prob,
)
from .bounds import (
    BoundConstants,
    BoundReport,
    ScheduleState,
    compute_U,
    constants,
    gamma,
    lemma1_slack,
    min_con_surrogate,
    theorem1_lower,
    theorem1_upper,
    theorem2_step,
    turning_point,
)
from .trainer import (
    Encoder,
    SgdConfig,
    Temperatures,
    finite_diff_check,
    grad_total,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .continual import (
    ExperimentTrace,
    LambdaSchedule,
    ReplayBuffer,
    RunConfig,
    adaptive_lambda,
    linear_probe,
    run_sequence,
    run_task,
)
from .data import (
    IdxImageSet,
    ScenarioSpec,
    TaskData,
    example_weights,
    idx_read,
    idx_write,
    make_blob_sequence,
    make_rotated_sequence,
    monte_carlo_contrastive,
    scenario_train_losses,
    scenario_weights,
)
