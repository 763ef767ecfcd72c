"""Group-constrained off-policy policy gradient for two groups.

Each iteration performs one score-function ascent step on a mini-batch
(simulated actions scored with per-sample doubly robust rewards, scaled
by the group's Lagrangian weight), then re-estimates the per-group
values on the full training set and runs projected gradient descent on
the dual variables. With both duals at zero the step is exactly the
vanilla off-policy policy gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from .dataset import BanditDataset
from .errors import ConfigError, DataError
from .estimators import dr_rewards_for_actions, group_value_summary
from .policy import (
    GradientBuffer,
    SoftmaxMlpPolicy,
    accumulate_score_gradient_batch,
    apply_update,
)
from .rngutil import make_rng


@dataclass(frozen=True)
class TrainConfig:
    epsilon: Union[float, str] = 0.05  # disparity tolerance, or "logging"
    alpha: float = 1e-3
    beta: float = 0.1
    dual_bound: float = 0.5
    iterations: int = 200
    batch_size: int = 256
    seed: int = 0
    constraint_estimator: str = "DR"  # DR | DM
    unconstrained: bool = False
    sign_flip: bool = False
    hidden: tuple = (256, 256)

    def __post_init__(self):
        if isinstance(self.epsilon, str):
            if self.epsilon != "logging":
                raise ConfigError("epsilon must be a nonnegative number or 'logging'")
        elif self.epsilon < 0.0:
            raise ConfigError("epsilon must be nonnegative")
        if self.alpha <= 0.0 or self.beta <= 0.0:
            raise ConfigError("learning rates alpha and beta must be positive")
        if self.dual_bound <= 0.0:
            raise ConfigError("dual_bound must be positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.constraint_estimator not in ("DR", "DM"):
            raise ConfigError("constraint_estimator must be DR or DM")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class DualState:
    """Lagrange multipliers, always inside [0, bound] by projection."""

    lam: float = 0.0
    eta: float = 0.0
    bound: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.lam <= self.bound and 0.0 <= self.eta <= self.bound):
            raise ConfigError("dual variables must lie in [0, bound]")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    value: float
    v0: float
    v1: float
    disparity: float
    lam: float
    eta: float
    grad_norm: float


@dataclass
class TrainTrace:
    """Per-iteration observability; values use the constraint estimator
    configured for the run (DR by default)."""

    rows: List[TraceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["iteration", "value", "v0", "v1", "disparity", "lambda", "eta", "grad_norm"]
            )
            for r in self.rows:
                w.writerow(
                    [r.iteration, r.value, r.v0, r.v1, r.disparity, r.lam, r.eta, r.grad_norm]
                )


def group_weight(group: int, duals: DualState, sign_flip: bool = False) -> float:
    """Lagrangian gradient weight for a sample of the given group.

    Group 1 takes 1 - lam + eta and group 0 takes 1 + lam - eta;
    ``sign_flip`` swaps the convention. Projection of the duals keeps
    every weight inside [1 - bound, 1 + bound].
    """
    if group not in (0, 1):
        raise DataError(f"two-group weight asked for group {group}")
    high_role = (group == 1) != sign_flip
    if high_role:
        return 1.0 - duals.lam + duals.eta
    return 1.0 + duals.lam - duals.eta


def dual_step(
    duals: DualState,
    v0: float,
    v1: float,
    epsilon: float,
    beta: float,
    bound: float,
) -> DualState:
    """Projected dual descent on (lam, eta) given per-group values."""
    g_lam = epsilon - (v1 - v0)
    g_eta = epsilon - (v0 - v1)
    lam = float(np.clip(duals.lam - beta * g_lam, 0.0, bound))
    eta = float(np.clip(duals.eta - beta * g_eta, 0.0, bound))
    return DualState(lam=lam, eta=eta, bound=bound)


def _slice(dataset: BanditDataset, idx: np.ndarray) -> BanditDataset:
    return BanditDataset(
        contexts=dataset.contexts[idx].copy(),
        actions=dataset.actions[idx].copy(),
        rewards=dataset.rewards[idx].copy(),
        propensities=dataset.propensities[idx].copy(),
        groups=dataset.groups[idx].copy(),
        num_arms=dataset.num_arms,
        num_groups=dataset.num_groups,
        reward_upper_bound=dataset.reward_upper_bound,
    )


def _weighted_step(
    policy: SoftmaxMlpPolicy,
    batch: BanditDataset,
    rhat: np.ndarray,
    weights: np.ndarray,
    alpha: float,
    rng,
) -> float:
    """Simulate actions, score them with weighted DR rewards, ascend."""
    a_sim = policy.sample_actions_batch(batch.contexts, rng)
    dr = dr_rewards_for_actions(
        rhat, batch.actions, batch.rewards, batch.propensities, a_sim
    )
    buffer = GradientBuffer.for_policy(policy)
    accumulate_score_gradient_batch(policy, buffer, batch.contexts, a_sim, dr * weights)
    return apply_update(policy, buffer, alpha)


def policy_step(
    policy: SoftmaxMlpPolicy,
    model,
    batch: BanditDataset,
    duals: DualState,
    alpha: float,
    rng,
    *,
    rhat: Optional[np.ndarray] = None,
    sign_flip: bool = False,
) -> float:
    """One Lagrangian-weighted policy-gradient step; returns the norm of
    the averaged gradient."""
    if len(batch) == 0:
        raise DataError("policy_step needs a nonempty batch")
    if rhat is None:
        rhat = model.predict_matrix(batch.contexts)
    w1 = group_weight(1, duals, sign_flip)
    w0 = group_weight(0, duals, sign_flip)
    weights = np.where(batch.groups == 1, w1, w0)
    return _weighted_step(policy, batch, rhat, weights, alpha, rng)


class _BatchSampler:
    """Without-replacement mini-batches, reshuffled each epoch."""

    def __init__(self, n: int, batch_size: int, rng):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return out


def logging_disparity(train_data: BanditDataset, group_a: int = 0, group_b: int = 1) -> float:
    """Empirical per-group mean logged reward gap: F(pi_beta) on this data."""
    means = []
    for g in (group_a, group_b):
        mask = train_data.groups == g
        if not mask.any():
            raise DataError(f"group {g} has no samples")
        means.append(train_data.rewards[mask].mean())
    return abs(float(means[1] - means[0]))


def _resolve_epsilon(config: TrainConfig, train_data: BanditDataset) -> float:
    if config.epsilon == "logging":
        return logging_disparity(train_data)
    return float(config.epsilon)


def train(
    train_data: BanditDataset,
    model,
    config: TrainConfig,
    *,
    iteration_hook: Optional[Callable[[int, SoftmaxMlpPolicy], None]] = None,
) -> Tuple[SoftmaxMlpPolicy, TrainTrace]:
    """Alternating policy ascent and projected dual descent.

    Per-group values for the dual update are recomputed on the full
    training set each iteration with the configured estimator.
    """
    counts = train_data.group_counts
    if not config.unconstrained and (counts[0] == 0 or counts[1] == 0):
        raise DataError(
            "constrained training needs samples from both groups 0 and 1; "
            "use unconstrained=True for single-group data"
        )
    epsilon = _resolve_epsilon(config, train_data) if not config.unconstrained else 0.0
    policy = SoftmaxMlpPolicy(
        train_data.context_dim,
        train_data.num_arms,
        hidden=config.hidden,
        seed=config.seed,
    )
    rng = make_rng(config.seed, 6)
    sampler = _BatchSampler(len(train_data), config.batch_size, rng)
    rhat_full = model.predict_matrix(train_data.contexts)
    duals = DualState(bound=config.dual_bound)
    trace = TrainTrace()
    for t in range(config.iterations):
        idx = sampler.next_batch()
        grad_norm = policy_step(
            policy,
            model,
            _slice(train_data, idx),
            duals,
            config.alpha,
            rng,
            rhat=rhat_full[idx],
            sign_flip=config.sign_flip,
        )
        overall, per_group = group_value_summary(
            policy, model, train_data, config.constraint_estimator, rhat=rhat_full
        )
        v0, v1 = float(per_group[0]), float(per_group[1])
        if not config.unconstrained:
            duals = dual_step(
                duals, v0, v1, epsilon, config.beta, config.dual_bound
            )
        trace.rows.append(
            TraceRow(
                iteration=t,
                value=overall,
                v0=v0,
                v1=v1,
                disparity=abs(v1 - v0),
                lam=duals.lam,
                eta=duals.eta,
                grad_norm=grad_norm,
            )
        )
        if iteration_hook is not None:
            iteration_hook(t, policy)
    return policy, trace


def train_vanilla(
    train_data: BanditDataset,
    model,
    config: TrainConfig,
    *,
    iteration_hook: Optional[Callable[[int, SoftmaxMlpPolicy], None]] = None,
) -> SoftmaxMlpPolicy:
    """Plain off-policy policy gradient with the fairness machinery
    removed; consumes the same random stream as :func:`train` so the two
    coincide bitwise when the duals are frozen at zero."""
    policy = SoftmaxMlpPolicy(
        train_data.context_dim,
        train_data.num_arms,
        hidden=config.hidden,
        seed=config.seed,
    )
    rng = make_rng(config.seed, 6)
    sampler = _BatchSampler(len(train_data), config.batch_size, rng)
    rhat_full = model.predict_matrix(train_data.contexts)
    for t in range(config.iterations):
        idx = sampler.next_batch()
        batch = _slice(train_data, idx)
        a_sim = policy.sample_actions_batch(batch.contexts, rng)
        dr = dr_rewards_for_actions(
            rhat_full[idx], batch.actions, batch.rewards, batch.propensities, a_sim
        )
        buffer = GradientBuffer.for_policy(policy)
        accumulate_score_gradient_batch(policy, buffer, batch.contexts, a_sim, dr)
        apply_update(policy, buffer, config.alpha)
        if iteration_hook is not None:
            iteration_hook(t, policy)
    return policy
