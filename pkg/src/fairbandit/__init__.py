"""Group-constrained offline contextual bandit policy optimization."""

__version__ = "0.1.0"

from .dataset import (
    BanditDataset,
    ClassificationTable,
    CsvSchema,
    GroupRule,
    GroupSpec,
    LoggedSample,
    MixedLogging,
    RandomLogging,
    Tweak1Logging,
    convert_classification,
    load_csv,
    load_dataset_jsonl,
    logging_propensities,
    save_dataset_jsonl,
    split,
)
from .estimators import (
    DrPerSampleReward,
    MseBoundCheck,
    ValueEstimate,
    VarianceBreakdown,
    disparity,
    dr_per_sample_reward,
    group_value_summary,
    mse_bound_check,
    value_dm,
    value_dr,
    value_ips,
    variance_breakdown,
)
from .multigroup import most_violated_pair, multigroup_weight, train_multigroup
from .pareto import SweepPoint, pareto_frontier, run_sweep, select_fairest
from .policy import (
    GradientBuffer,
    SoftmaxMlpPolicy,
    accumulate_score_gradient,
    accumulate_score_gradient_batch,
    apply_update,
)
from .reward_model import GbtConfig, GbtRewardModel, fit
from .synthetic import PlantedAdvantageEnv, three_group_env, two_group_env
from .trainer import (
    DualState,
    TrainConfig,
    TrainTrace,
    dual_step,
    group_weight,
    policy_step,
    train,
    train_vanilla,
)

__all__ = [name for name in dir() if not name.startswith("_")]
