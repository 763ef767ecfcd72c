"""Off-policy value estimation: direct method, IPS, and doubly robust.

All estimators are pure functions of (policy, reward model, dataset) and
support group filtering, so per-group values and the reward disparity
come from the same code path. The doubly robust estimator combines the
model-based value with an importance-weighted correction of the model's
residual on the logged action.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dataset import BanditDataset, LoggedSample
from .errors import ConfigError, DataError

METHODS = ("DM", "IPS", "DR")


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    method: str
    group: Optional[int]  # None means overall
    sample_count: int

    def to_record(self) -> dict:
        return {
            "method": self.method,
            "group": "overall" if self.group is None else self.group,
            "value": self.value,
            "sample_count": self.sample_count,
        }


@dataclass(frozen=True)
class VarianceBreakdown:
    """Empirical versions of the three doubly-robust variance terms.

    term_if_error: mean of xi^2, xi = (r - r_hat) * pi_theta / pi_beta
    term_dm_variance: variance across contexts of the model-based value
    term_weight_penalty: mean of ((1 - pi_theta) / pi_theta) * Delta^2
    total_bound: their sum divided by the number of samples
    """

    term_if_error: float
    term_dm_variance: float
    term_weight_penalty: float
    total_bound: float

    def to_record(self) -> dict:
        return {
            "term_if_error": self.term_if_error,
            "term_dm_variance": self.term_dm_variance,
            "term_weight_penalty": self.term_weight_penalty,
            "total_bound": self.total_bound,
        }


@dataclass(frozen=True)
class DrPerSampleReward:
    value: float


def _group_indices(dataset: BanditDataset, group_filter: Optional[int]) -> np.ndarray:
    if group_filter is None:
        return np.arange(len(dataset))
    idx = np.nonzero(dataset.groups == group_filter)[0]
    if idx.size == 0:
        raise DataError(f"group {group_filter} has no samples")
    return idx


def _reward_matrix(model, dataset: BanditDataset, rhat: Optional[np.ndarray]):
    if rhat is not None:
        return rhat
    return model.predict_matrix(dataset.contexts)


def value_dm(
    policy,
    model,
    dataset: BanditDataset,
    group_filter: Optional[int] = None,
    *,
    rhat: Optional[np.ndarray] = None,
) -> ValueEstimate:
    """Model-based value: mean over contexts of sum_a pi(a|x) r_hat(x, a).

    The expectation over arms is exact (finite action set), not a single
    sampled action.
    """
    idx = _group_indices(dataset, group_filter)
    rhat = _reward_matrix(model, dataset, rhat)
    probs = policy.action_probs_batch(dataset.contexts[idx])
    dm = (probs * rhat[idx]).sum(axis=1)
    return ValueEstimate(float(dm.mean()), "DM", group_filter, idx.size)


def value_dr(
    policy,
    model,
    dataset: BanditDataset,
    group_filter: Optional[int] = None,
    *,
    rhat: Optional[np.ndarray] = None,
) -> ValueEstimate:
    """Doubly robust value: DM plus the importance-weighted residual
    correction on logged actions."""
    idx = _group_indices(dataset, group_filter)
    rhat = _reward_matrix(model, dataset, rhat)
    probs = policy.action_probs_batch(dataset.contexts[idx])
    dm = (probs * rhat[idx]).sum(axis=1)
    logged_a = dataset.actions[idx]
    ratio = probs[np.arange(idx.size), logged_a] / dataset.propensities[idx]
    correction = ratio * (dataset.rewards[idx] - rhat[idx, logged_a])
    if not np.all(np.isfinite(correction)):
        raise DataError("non-finite importance correction (zero propensity?)")
    return ValueEstimate(float((dm + correction).mean()), "DR", group_filter, idx.size)


def value_ips(
    policy,
    dataset: BanditDataset,
    group_filter: Optional[int] = None,
) -> ValueEstimate:
    """Importance-weighted value: mean of (pi_theta / pi_beta) * reward."""
    idx = _group_indices(dataset, group_filter)
    probs = policy.action_probs_batch(dataset.contexts[idx])
    logged_a = dataset.actions[idx]
    ratio = probs[np.arange(idx.size), logged_a] / dataset.propensities[idx]
    if not np.all(np.isfinite(ratio)):
        raise DataError("non-finite importance ratio (zero propensity?)")
    return ValueEstimate(
        float((ratio * dataset.rewards[idx]).mean()), "IPS", group_filter, idx.size
    )


def per_sample_values(
    policy,
    model,
    dataset: BanditDataset,
    method: str = "DR",
    *,
    rhat: Optional[np.ndarray] = None,
    probs: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-sample value contributions; their filtered means are the
    DM/IPS/DR estimates. One policy forward pass serves every group."""
    rhat = _reward_matrix(model, dataset, rhat) if method != "IPS" else rhat
    if probs is None:
        probs = policy.action_probs_batch(dataset.contexts)
    rows = np.arange(len(dataset))
    if method == "DM":
        return (probs * rhat).sum(axis=1)
    ratio = probs[rows, dataset.actions] / dataset.propensities
    if not np.all(np.isfinite(ratio)):
        raise DataError("non-finite importance ratio (zero propensity?)")
    if method == "IPS":
        return ratio * dataset.rewards
    if method == "DR":
        dm = (probs * rhat).sum(axis=1)
        return dm + ratio * (dataset.rewards - rhat[rows, dataset.actions])
    raise ConfigError(f"unknown estimator method {method!r}")


def group_value_summary(
    policy,
    model,
    dataset: BanditDataset,
    method: str = "DR",
    *,
    rhat: Optional[np.ndarray] = None,
    probs: Optional[np.ndarray] = None,
) -> tuple:
    """(overall value, per-group value array); empty groups get NaN."""
    contrib = per_sample_values(policy, model, dataset, method, rhat=rhat, probs=probs)
    per_group = np.full(dataset.num_groups, np.nan)
    for g in range(dataset.num_groups):
        mask = dataset.groups == g
        if mask.any():
            per_group[g] = contrib[mask].mean()
    return float(contrib.mean()), per_group


def estimate(
    policy,
    model,
    dataset: BanditDataset,
    method: str,
    group_filter: Optional[int] = None,
    *,
    rhat: Optional[np.ndarray] = None,
) -> ValueEstimate:
    if method == "DM":
        return value_dm(policy, model, dataset, group_filter, rhat=rhat)
    if method == "DR":
        return value_dr(policy, model, dataset, group_filter, rhat=rhat)
    if method == "IPS":
        return value_ips(policy, dataset, group_filter)
    raise ConfigError(f"unknown estimator method {method!r}")


def disparity(
    policy,
    model,
    dataset: BanditDataset,
    method: str = "DR",
    group_a: int = 0,
    group_b: int = 1,
    *,
    rhat: Optional[np.ndarray] = None,
) -> float:
    """Absolute per-group value gap |V_a - V_b| under the chosen estimator."""
    va = estimate(policy, model, dataset, method, group_a, rhat=rhat)
    vb = estimate(policy, model, dataset, method, group_b, rhat=rhat)
    return abs(va.value - vb.value)


def dr_per_sample_reward(model, sample: LoggedSample, simulated_action: int) -> DrPerSampleReward:
    """Doubly robust reward for one simulated action on one logged sample.

    r_hat(x, a_sim) plus, when the simulated action happens to be the
    logged one, the model residual reweighted by 1 / propensity. Its
    expectation over a_sim ~ pi recovers the sample's DR value summand.
    """
    if not sample.propensity > 0.0:
        raise DataError("sample propensity must be strictly positive")
    value = model.predict(sample.context, simulated_action)
    if simulated_action == sample.action:
        value += (sample.reward - model.predict(sample.context, sample.action)) / (
            sample.propensity
        )
    return DrPerSampleReward(float(value))


def dr_rewards_for_actions(
    rhat: np.ndarray,
    logged_actions: np.ndarray,
    rewards: np.ndarray,
    propensities: np.ndarray,
    simulated_actions: np.ndarray,
) -> np.ndarray:
    """Vectorized dr_per_sample_reward over rows of a prediction matrix."""
    n = rhat.shape[0]
    rows = np.arange(n)
    base = rhat[rows, simulated_actions]
    match = simulated_actions == logged_actions
    corr = np.where(match, (rewards - rhat[rows, logged_actions]) / propensities, 0.0)
    return base + corr


def variance_breakdown(
    policy,
    model,
    dataset: BanditDataset,
    *,
    rhat: Optional[np.ndarray] = None,
    max_weight: float = 100.0,
    prob_floor: float = 1e-6,
) -> VarianceBreakdown:
    """Empirical doubly-robust variance terms.

    Importance ratios are capped at ``max_weight`` and the policy
    probability in the weight-penalty denominator is floored at
    ``prob_floor``; both keep the diagnostic finite and apply only here,
    never inside the value estimators themselves.
    """
    rhat = _reward_matrix(model, dataset, rhat)
    probs = policy.action_probs_batch(dataset.contexts)
    n = len(dataset)
    rows = np.arange(n)
    logged_a = dataset.actions
    pi_logged = probs[rows, logged_a]
    ratio = np.minimum(pi_logged / dataset.propensities, max_weight)
    resid = dataset.rewards - rhat[rows, logged_a]
    xi = resid * ratio
    term_if_error = float((xi * xi).mean())
    dm = (probs * rhat).sum(axis=1)
    term_dm_variance = float(dm.var())
    delta = rhat[rows, logged_a] - dataset.rewards
    term_weight_penalty = float(
        (((1.0 - pi_logged) / np.maximum(pi_logged, prob_floor)) * delta * delta).mean()
    )
    total = (term_if_error + term_dm_variance + term_weight_penalty) / n
    return VarianceBreakdown(term_if_error, term_dm_variance, term_weight_penalty, total)


@dataclass(frozen=True)
class MseBoundCheck:
    empirical_mse: float
    bound: float
    holds: bool


def mse_bound_check(
    policy,
    model,
    dataset: BanditDataset,
    true_reward_fn: Optional[Callable[[np.ndarray], np.ndarray]],
    rng,
    *,
    rhat: Optional[np.ndarray] = None,
) -> MseBoundCheck:
    """Empirical MSE of per-sample DR rewards against the true rewards of
    simulated actions, compared to the variance bound plus 3 R_max^2.

    Only callable on synthetic environments that expose the true
    expected reward for every (context, arm).
    """
    if true_reward_fn is None:
        raise ConfigError("mse_bound_check requires a true-reward oracle")
    rhat = _reward_matrix(model, dataset, rhat)
    a_sim = policy.sample_actions_batch(dataset.contexts, rng)
    dr = dr_rewards_for_actions(
        rhat, dataset.actions, dataset.rewards, dataset.propensities, a_sim
    )
    truth = np.asarray(true_reward_fn(dataset.contexts), dtype=np.float64)
    true_sim = truth[np.arange(len(dataset)), a_sim]
    empirical_mse = float(((dr - true_sim) ** 2).mean())
    breakdown = variance_breakdown(policy, model, dataset, rhat=rhat)
    bound = breakdown.total_bound + 3.0 * dataset.reward_upper_bound**2
    return MseBoundCheck(empirical_mse, bound, empirical_mse <= bound)
