"""Built-in synthetic bandit environments with known true rewards.

The planted-advantage environment draws standard-normal base features,
appends the group label to the context, and defines the true expected
reward as a logistic function whose intercept depends on (group, arm).
One group's best arm has a higher ceiling than the others, so reward
maximization widens the group gap unless constrained. Knowing
r(x, a) exactly enables the unbiasedness and MSE-bound suites.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .dataset import BanditDataset, LoggingPolicyKind, logging_propensities
from .errors import ConfigError
from .rngutil import make_rng


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class PlantedAdvantageEnv:
    """Synthetic environment exposing the true expected reward r(x, a).

    base_logits[g, a] sets the group/arm intercept; the context enters
    through arm-specific directions so the reward model has real signal
    to fit. Groups are encoded in the context as a single flag column
    when there are two groups, one-hot columns otherwise.
    """

    base_logits: np.ndarray  # (G, K)
    base_dim: int = 8
    slope: float = 0.5
    group_fractions: Optional[np.ndarray] = None

    def __post_init__(self):
        logits = np.asarray(self.base_logits, dtype=np.float64)
        object.__setattr__(self, "base_logits", logits)
        if logits.ndim != 2 or logits.shape[0] < 2 or logits.shape[1] < 2:
            raise ConfigError("base_logits must be (num_groups>=2, num_arms>=2)")
        fractions = self.group_fractions
        if fractions is None:
            fractions = np.full(logits.shape[0], 1.0 / logits.shape[0])
        fractions = np.asarray(fractions, dtype=np.float64)
        if fractions.shape != (logits.shape[0],) or not np.isclose(fractions.sum(), 1.0):
            raise ConfigError("group_fractions must sum to 1, one per group")
        object.__setattr__(self, "group_fractions", fractions)

    @property
    def num_groups(self) -> int:
        return self.base_logits.shape[0]

    @property
    def num_arms(self) -> int:
        return self.base_logits.shape[1]

    @property
    def context_dim(self) -> int:
        return self.base_dim + (1 if self.num_groups == 2 else self.num_groups)

    def _arm_direction(self, arm: int) -> np.ndarray:
        u = np.zeros(self.base_dim)
        u[arm % self.base_dim] = 1.0
        return u

    def _group_columns(self, groups: np.ndarray) -> np.ndarray:
        n = groups.shape[0]
        if self.num_groups == 2:
            return groups.astype(np.float64)[:, None]
        onehot = np.zeros((n, self.num_groups))
        onehot[np.arange(n), groups] = 1.0
        return onehot

    def groups_from_contexts(self, contexts: np.ndarray) -> np.ndarray:
        if self.num_groups == 2:
            return np.rint(contexts[:, self.base_dim]).astype(np.int64)
        return contexts[:, self.base_dim :].argmax(axis=1).astype(np.int64)

    def true_reward_matrix(self, contexts: np.ndarray) -> np.ndarray:
        """(n, K) matrix of true expected rewards r(x, a)."""
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        z = contexts[:, : self.base_dim]
        groups = self.groups_from_contexts(contexts)
        out = np.empty((contexts.shape[0], self.num_arms))
        for a in range(self.num_arms):
            lin = self.base_logits[groups, a] + self.slope * (z @ self._arm_direction(a))
            out[:, a] = _sigmoid(lin)
        return out

    def sample_contexts(self, n: int, rng) -> Tuple[np.ndarray, np.ndarray]:
        groups = rng.choice(self.num_groups, size=n, p=self.group_fractions)
        z = rng.standard_normal((n, self.base_dim))
        contexts = np.hstack([z, self._group_columns(groups)])
        return contexts, groups.astype(np.int64)

    def generate(self, n: int, kind: LoggingPolicyKind, seed: int) -> BanditDataset:
        """Logged dataset of n interactions under the given logging policy."""
        rng = make_rng(seed, 4)
        contexts, groups = self.sample_contexts(n, rng)
        actions = np.empty(n, dtype=np.int64)
        propensities = np.empty(n)
        u = rng.random(n)
        for i in range(n):
            probs = logging_propensities(kind, contexts[i], self.num_arms)
            a = int(np.searchsorted(np.cumsum(probs), u[i], side="right"))
            a = min(a, self.num_arms - 1)
            actions[i] = a
            propensities[i] = probs[a]
        p_true = self.true_reward_matrix(contexts)[np.arange(n), actions]
        rewards = (rng.random(n) < p_true).astype(np.float64)
        return BanditDataset(
            contexts=contexts,
            actions=actions,
            rewards=rewards,
            propensities=propensities,
            groups=groups,
            num_arms=self.num_arms,
            num_groups=self.num_groups,
            reward_upper_bound=1.0,
        )

    def true_value(
        self,
        policy,
        n_mc: int = 400_000,
        seed: int = 123,
        group: Optional[int] = None,
    ) -> float:
        """Monte-Carlo ground-truth V(pi) over fresh contexts (exact over arms)."""
        rng = make_rng(seed, 5)
        total = 0.0
        count = 0
        chunk = 100_000
        remaining = n_mc
        while remaining > 0:
            m = min(chunk, remaining)
            contexts, groups = self.sample_contexts(m, rng)
            if group is not None:
                keep = groups == group
                contexts = contexts[keep]
            if contexts.shape[0]:
                probs = policy.action_probs_batch(contexts)
                truth = self.true_reward_matrix(contexts)
                total += float((probs * truth).sum(axis=1).sum())
                count += contexts.shape[0]
            remaining -= m
        return total / count


def two_group_env() -> PlantedAdvantageEnv:
    """Two groups, two arms; group 1's best arm has the higher ceiling.

    Under uniform logging both groups earn about the same, so the
    logging disparity is tiny while reward maximization opens a gap.
    """
    means = np.array([[0.70, 0.45], [0.30, 0.85]])
    return PlantedAdvantageEnv(base_logits=_logit(means))


def three_group_env() -> PlantedAdvantageEnv:
    """Three groups, three arms; group 2 is the advantaged one.

    The advantage is kept moderate so the bounded Lagrangian weights
    (B = 0.5 -> weights in [0.5, 1.5]) retain enough authority to
    equalize per-group learning speed.
    """
    means = np.array(
        [
            [0.68, 0.45, 0.42],
            [0.42, 0.68, 0.45],
            [0.39, 0.36, 0.80],
        ]
    )
    return PlantedAdvantageEnv(base_logits=_logit(means))


ENV_PRESETS = {
    "two-group": two_group_env,
    "three-group": three_group_env,
}


def env_from_config(cfg: dict) -> PlantedAdvantageEnv:
    name = cfg.get("env", "two-group")
    if name not in ENV_PRESETS:
        raise ConfigError(
            f"unknown synthetic env {name!r}; options: {sorted(ENV_PRESETS)}"
        )
    return ENV_PRESETS[name]()
