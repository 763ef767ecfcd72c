"""Offline bandit datasets built from tabular classification data.

A classification table is turned into logged bandit feedback by sampling
actions from a configurable logging policy and rewarding label matches.
Sensitive-group labels come from a :class:`GroupSpec` rule. Everything is
deterministic given (inputs, seed), and datasets are immutable once built.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from sklearn.linear_model import LogisticRegression

from .errors import ConfigError, DataError, IngestionError, SchemaError, StateError
from .rngutil import make_rng

logger = logging.getLogger(__name__)

DEFAULT_MISSING_MARKERS = frozenset({"", "?", "NA"})


@dataclass(frozen=True)
class LoggedSample:
    """One offline interaction: (context, action, reward, propensity, group)."""

    context: np.ndarray
    action: int
    reward: float
    propensity: float
    group: int

    def __post_init__(self):
        if not self.propensity > 0.0:
            raise DataError(
                f"propensity must be strictly positive, got {self.propensity}"
            )
        if self.action < 0:
            raise DataError(f"action must be nonnegative, got {self.action}")
        if self.group < 0:
            raise DataError(f"group must be nonnegative, got {self.group}")


@dataclass(frozen=True)
class BanditDataset:
    """Immutable collection of logged samples stored as dense arrays.

    Arrays are locked after construction so a dataset can be shared
    across threads. ``samples`` views are materialized on demand.
    """

    contexts: np.ndarray  # (n, context_dim) float64
    actions: np.ndarray  # (n,) int64
    rewards: np.ndarray  # (n,) float64
    propensities: np.ndarray  # (n,) float64
    groups: np.ndarray  # (n,) int64
    num_arms: int
    num_groups: int
    reward_upper_bound: float = 1.0

    def __post_init__(self):
        n = self.contexts.shape[0]
        for name in ("actions", "rewards", "propensities", "groups"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"{name} must have shape ({n},)")
        if self.num_arms < 1:
            raise DataError("num_arms must be positive")
        if self.num_groups < 2:
            raise DataError("num_groups must be at least 2")
        if n > 0:
            if self.propensities.min() <= 0.0:
                raise DataError("all propensities must be strictly positive")
            if self.rewards.min() < 0.0 or self.rewards.max() > self.reward_upper_bound:
                raise DataError(
                    f"rewards must lie in [0, {self.reward_upper_bound}]"
                )
            if self.actions.min() < 0 or self.actions.max() >= self.num_arms:
                raise DataError("actions must lie in [0, num_arms)")
            if self.groups.min() < 0 or self.groups.max() >= self.num_groups:
                raise DataError("groups must lie in [0, num_groups)")
        for arr in (
            self.contexts,
            self.actions,
            self.rewards,
            self.propensities,
            self.groups,
        ):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.contexts.shape[0]

    @property
    def context_dim(self) -> int:
        return self.contexts.shape[1]

    @property
    def group_counts(self) -> np.ndarray:
        return np.bincount(self.groups, minlength=self.num_groups)

    def sample_at(self, i: int) -> LoggedSample:
        return LoggedSample(
            context=self.contexts[i],
            action=int(self.actions[i]),
            reward=float(self.rewards[i]),
            propensity=float(self.propensities[i]),
            group=int(self.groups[i]),
        )

    @property
    def samples(self) -> Iterator[LoggedSample]:
        return (self.sample_at(i) for i in range(len(self)))

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[LoggedSample],
        num_arms: int,
        num_groups: int,
        reward_upper_bound: float = 1.0,
    ) -> "BanditDataset":
        if not samples:
            raise DataError("cannot build a dataset from an empty sample list")
        return cls(
            contexts=np.stack([np.asarray(s.context, dtype=np.float64) for s in samples]),
            actions=np.array([s.action for s in samples], dtype=np.int64),
            rewards=np.array([s.reward for s in samples], dtype=np.float64),
            propensities=np.array([s.propensity for s in samples], dtype=np.float64),
            groups=np.array([s.group for s in samples], dtype=np.int64),
            num_arms=num_arms,
            num_groups=num_groups,
            reward_upper_bound=reward_upper_bound,
        )


# ---------------------------------------------------------------------------
# Group assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupRule:
    """Maps a raw column value (or context feature) to a group index.

    kind "threshold": numeric value >= threshold -> group 1, else 0.
    kind "membership": raw category in ``members`` -> group 1, else 0.
    kind "mapping": explicit category -> group index map; unmapped
    categories are ingestion errors.
    """

    kind: str
    threshold: Optional[float] = None
    members: Optional[frozenset] = None
    mapping: Optional[dict] = None

    def __post_init__(self):
        if self.kind == "threshold":
            if self.threshold is None:
                raise ConfigError("threshold rule requires a threshold value")
        elif self.kind == "membership":
            if not self.members:
                raise ConfigError("membership rule requires a nonempty category set")
        elif self.kind == "mapping":
            if not self.mapping:
                raise ConfigError("mapping rule requires a nonempty mapping")
            idx = sorted(set(self.mapping.values()))
            if idx != list(range(len(idx))):
                raise ConfigError(
                    "mapping rule must use contiguous group indices starting at 0"
                )
        else:
            raise ConfigError(f"unknown group rule kind {self.kind!r}")

    @property
    def num_groups(self) -> int:
        if self.kind == "mapping":
            return max(self.mapping.values()) + 1
        return 2

    def assign(self, value, row_index: int) -> int:
        if self.kind == "threshold":
            return 1 if float(value) >= self.threshold else 0
        if self.kind == "membership":
            return 1 if value in self.members else 0
        try:
            return self.mapping[value]
        except KeyError:
            raise IngestionError(
                f"row {row_index}: group value {value!r} not covered by the mapping rule"
            ) from None

    @classmethod
    def from_config(cls, cfg: dict) -> "GroupRule":
        kind = cfg.get("kind")
        if kind == "threshold":
            return cls(kind="threshold", threshold=float(cfg["value"]))
        if kind == "membership":
            return cls(kind="membership", members=frozenset(cfg["members"]))
        if kind == "mapping":
            return cls(kind="mapping", mapping=dict(cfg["mapping"]))
        raise ConfigError(f"unknown group rule kind {kind!r}")


@dataclass(frozen=True)
class GroupSpec:
    """Where sensitive-group labels come from and whether the source stays
    inside the context vector."""

    source: Union[str, int]  # raw CSV column name, or context index
    rule: GroupRule
    keep_in_context: bool = True


# ---------------------------------------------------------------------------
# Logging policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomLogging:
    """Uniform-at-random logging policy."""

    kind: str = field(default="random", init=False)

    def propensity_vector(self, context: np.ndarray, num_arms: int) -> np.ndarray:
        return np.full(num_arms, 1.0 / num_arms)

    def descriptor(self) -> dict:
        return {"kind": "random"}


@dataclass(frozen=True)
class Tweak1Logging:
    """Probability ``rho`` on one fixed arm, remainder spread evenly."""

    rho: float
    fixed_arm: int = 0
    kind: str = field(default="tweak1", init=False)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must lie in (0, 1), got {self.rho}")
        if self.fixed_arm < 0:
            raise ConfigError("fixed_arm must be nonnegative")

    def propensity_vector(self, context: np.ndarray, num_arms: int) -> np.ndarray:
        # rho below uniform would make the "fixed" arm the least likely one.
        if self.rho < 1.0 / num_arms:
            raise ConfigError(
                f"rho={self.rho} must be at least 1/K = {1.0 / num_arms:.6g}"
            )
        if self.fixed_arm >= num_arms:
            raise ConfigError(
                f"fixed_arm={self.fixed_arm} out of range for {num_arms} arms"
            )
        probs = np.full(num_arms, (1.0 - self.rho) / (num_arms - 1))
        probs[self.fixed_arm] = self.rho
        return probs

    def descriptor(self) -> dict:
        return {"kind": "tweak1", "rho": self.rho, "fixed_arm": self.fixed_arm}


class MixedLogging:
    """Learned logging policy: a multinomial logistic-regression classifier
    fit on a fraction of the labels, temperature-softened, with a
    propensity floor so importance weights stay bounded.
    """

    kind = "mixed"

    def __init__(
        self,
        label_fraction: float = 0.1,
        temperature: float = 2.0,
        floor: float = 0.01,
    ):
        if not 0.0 < label_fraction <= 1.0:
            raise ConfigError("label_fraction must lie in (0, 1]")
        if temperature <= 0.0:
            raise ConfigError("temperature must be positive")
        if not 0.0 < floor < 0.5:
            raise ConfigError("floor must lie in (0, 0.5)")
        self.label_fraction = label_fraction
        self.temperature = temperature
        self.floor = floor
        self._coef: Optional[np.ndarray] = None  # (num_arms, dim)
        self._intercept: Optional[np.ndarray] = None  # (num_arms,)
        self._num_arms: Optional[int] = None

    @property
    def is_fit(self) -> bool:
        return self._coef is not None

    def fit(self, features: np.ndarray, labels: np.ndarray, num_arms: int, rng) -> None:
        n = features.shape[0]
        size = max(1, int(round(self.label_fraction * n)))
        idx = np.sort(rng.choice(n, size=size, replace=False))
        sub_x, sub_y = features[idx], labels[idx]
        if np.unique(sub_y).size < 2:
            logger.info("mixed-policy subsample had <2 classes; using full table")
            sub_x, sub_y = features, labels
        clf = LogisticRegression(max_iter=1000)
        clf.fit(sub_x, sub_y)
        # Arms never seen by the classifier keep -inf logits; the floor
        # step below still gives them positive propensity.
        coef = np.full((num_arms, features.shape[1]), -np.inf)
        intercept = np.full(num_arms, -np.inf)
        classes = clf.classes_.astype(int)
        if classes.size == 2 and clf.coef_.shape[0] == 1:
            coef[classes[0]], intercept[classes[0]] = 0.0, 0.0
            coef[classes[1]], intercept[classes[1]] = clf.coef_[0], clf.intercept_[0]
        else:
            for row, cls_label in enumerate(classes):
                coef[cls_label] = clf.coef_[row]
                intercept[cls_label] = clf.intercept_[row]
        self._coef, self._intercept, self._num_arms = coef, intercept, num_arms

    def _from_logits(self, logits: np.ndarray) -> np.ndarray:
        soft = logits / self.temperature
        soft = soft - soft.max()
        with np.errstate(invalid="ignore"):
            probs = np.exp(soft)
        probs[~np.isfinite(probs)] = 0.0
        probs = probs / probs.sum()
        probs = np.maximum(probs, self.floor)
        return probs / probs.sum()

    def propensity_vector(self, context: np.ndarray, num_arms: int) -> np.ndarray:
        if not self.is_fit:
            raise StateError("mixed logging policy used before fitting")
        if num_arms != self._num_arms:
            raise ConfigError(
                f"mixed policy was fit for {self._num_arms} arms, asked for {num_arms}"
            )
        finite = np.isfinite(self._intercept)
        logits = np.full(num_arms, -np.inf)
        logits[finite] = self._coef[finite] @ context + self._intercept[finite]
        return self._from_logits(logits)

    def descriptor(self) -> dict:
        d = {
            "kind": "mixed",
            "label_fraction": self.label_fraction,
            "temperature": self.temperature,
            "floor": self.floor,
        }
        if self.is_fit:
            d["coef"] = self._coef.tolist()
            d["intercept"] = self._intercept.tolist()
        return d

    @classmethod
    def from_descriptor(cls, d: dict) -> "MixedLogging":
        out = cls(
            label_fraction=d.get("label_fraction", 0.1),
            temperature=d.get("temperature", 2.0),
            floor=d.get("floor", 0.01),
        )
        if "coef" in d:
            out._coef = np.array(d["coef"], dtype=np.float64)
            out._intercept = np.array(d["intercept"], dtype=np.float64)
            out._num_arms = out._coef.shape[0]
        return out


LoggingPolicyKind = Union[RandomLogging, Tweak1Logging, MixedLogging]


def logging_policy_from_descriptor(d: dict) -> LoggingPolicyKind:
    kind = d.get("kind")
    if kind == "random":
        return RandomLogging()
    if kind == "tweak1":
        return Tweak1Logging(rho=float(d["rho"]), fixed_arm=int(d.get("fixed_arm", 0)))
    if kind == "mixed":
        return MixedLogging.from_descriptor(d)
    raise ConfigError(f"unknown logging policy kind {kind!r}")


def logging_propensities(
    kind: LoggingPolicyKind, context: np.ndarray, num_arms: int
) -> np.ndarray:
    """Probability vector the logging policy assigns to the arms at ``context``."""
    if num_arms < 2:
        raise ConfigError("need at least 2 arms")
    probs = kind.propensity_vector(np.asarray(context, dtype=np.float64), num_arms)
    total = probs.sum()
    if abs(total - 1.0) > 1e-12:
        raise DataError(f"propensities sum to {total}, expected 1")
    return probs


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for a classification CSV.

    ``categorical`` maps column name -> declared category list; those
    columns are one-hot encoded in lexicographic category order. All
    other non-label columns are parsed as numeric features.
    """

    label: str
    categorical: dict = field(default_factory=dict)
    missing_markers: frozenset = DEFAULT_MISSING_MARKERS

    @classmethod
    def from_config(cls, cfg: dict) -> "CsvSchema":
        return cls(
            label=cfg["label"],
            categorical={k: list(v) for k, v in cfg.get("categorical", {}).items()},
            missing_markers=frozenset(cfg.get("missing_markers", DEFAULT_MISSING_MARKERS)),
        )


@dataclass(frozen=True)
class ClassificationTable:
    """Numeric feature matrix with integer labels and group indices."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    groups: np.ndarray  # (n,) int64
    num_classes: int
    num_groups: int
    feature_names: tuple

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def context_dim(self) -> int:
        return self.features.shape[1]


def load_csv(path, schema: CsvSchema, group_spec: GroupSpec) -> ClassificationTable:
    """Read a header CSV into a classification table.

    Categorical columns one-hot encode in sorted category order so the
    context layout is deterministic. Rows containing missing markers are
    dropped (with a logged count); a category outside its declared
    encoding is an ingestion error naming the row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: file is empty") from None
        rows = list(reader)
    if not rows:
        raise IngestionError(f"{path}: no data rows")

    header = [h.strip() for h in header]
    col_index = {name: i for i, name in enumerate(header)}
    if schema.label not in col_index:
        raise SchemaError(f"label column {schema.label!r} not in CSV header")
    for col in schema.categorical:
        if col not in col_index:
            raise SchemaError(f"categorical column {col!r} not in CSV header")
    group_col = group_spec.source if isinstance(group_spec.source, str) else None
    if group_col is not None and group_col not in col_index:
        raise SchemaError(f"group column {group_col!r} not in CSV header")

    feature_cols = [
        c
        for c in header
        if c != schema.label
        and not (c == group_col and not group_spec.keep_in_context)
    ]

    kept_rows = []
    kept_indices = []
    dropped = 0
    used_cols = set(feature_cols) | {schema.label} | ({group_col} if group_col else set())
    for i, row in enumerate(rows):
        cells = {c: row[col_index[c]].strip() for c in used_cols}
        if any(cells[c] in schema.missing_markers for c in used_cols):
            dropped += 1
            continue
        kept_rows.append(cells)
        kept_indices.append(i)
    if dropped:
        logger.info("dropped %d rows with missing values from %s", dropped, path)
    if not kept_rows:
        raise IngestionError(f"{path}: all rows had missing values")

    # Label encoding: sorted distinct raw values -> [0, K).
    label_values = sorted({c[schema.label] for c in kept_rows})
    label_map = {v: k for k, v in enumerate(label_values)}

    columns = []
    names = []
    for col in feature_cols:
        if col in schema.categorical:
            cats = sorted(schema.categorical[col])
            cat_pos = {c: j for j, c in enumerate(cats)}
            block = np.zeros((len(kept_rows), len(cats)))
            for r, cells in enumerate(kept_rows):
                v = cells[col]
                if v not in cat_pos:
                    raise IngestionError(
                        f"row {kept_indices[r]}: category {v!r} not declared for "
                        f"column {col!r}"
                    )
                block[r, cat_pos[v]] = 1.0
            columns.append(block)
            names.extend(f"{col}={c}" for c in cats)
        else:
            vals = np.empty(len(kept_rows))
            for r, cells in enumerate(kept_rows):
                try:
                    vals[r] = float(cells[col])
                except ValueError:
                    raise IngestionError(
                        f"row {kept_indices[r]}: non-numeric value "
                        f"{cells[col]!r} in column {col!r}"
                    ) from None
            columns.append(vals[:, None])
            names.append(col)
    features = np.hstack(columns)
    labels = np.array([label_map[c[schema.label]] for c in kept_rows], dtype=np.int64)

    if group_col is not None:
        raw = [c[group_col] for c in kept_rows]
        if group_spec.rule.kind == "threshold":
            raw = [float(v) for v in raw]
        groups = np.array(
            [group_spec.rule.assign(v, kept_indices[r]) for r, v in enumerate(raw)],
            dtype=np.int64,
        )
    else:
        idx = int(group_spec.source)
        if idx >= features.shape[1]:
            raise SchemaError(f"group context index {idx} out of range")
        groups = np.array(
            [
                group_spec.rule.assign(features[r, idx], kept_indices[r])
                for r in range(features.shape[0])
            ],
            dtype=np.int64,
        )

    return ClassificationTable(
        features=features,
        labels=labels,
        groups=groups,
        num_classes=len(label_values),
        num_groups=group_spec.rule.num_groups,
        feature_names=tuple(names),
    )


# ---------------------------------------------------------------------------
# Conversion and splitting
# ---------------------------------------------------------------------------


def convert_classification(
    table: ClassificationTable, kind: LoggingPolicyKind, seed: int
) -> BanditDataset:
    """Turn a k-class table into k-armed logged bandit feedback.

    For each row an arm is drawn from the logging policy; the reward is 1
    when the arm matches the true label. The recorded propensity is the
    exact probability the arm was drawn with.
    """
    n = len(table)
    if n == 0:
        raise DataError("cannot convert an empty table")
    K = table.num_classes
    rng = make_rng(seed, 0)
    u = rng.random(n)
    actions = np.empty(n, dtype=np.int64)
    propensities = np.empty(n)
    for i in range(n):
        probs = logging_propensities(kind, table.features[i], K)
        a = int(np.searchsorted(np.cumsum(probs), u[i], side="right"))
        a = min(a, K - 1)
        actions[i] = a
        propensities[i] = probs[a]
    rewards = (actions == table.labels).astype(np.float64)
    return BanditDataset(
        contexts=table.features.copy(),
        actions=actions,
        rewards=rewards,
        propensities=propensities,
        groups=table.groups.copy(),
        num_arms=K,
        num_groups=table.num_groups,
        reward_upper_bound=1.0,
    )


def split(
    dataset: BanditDataset, train_fraction: float = 0.7, seed: int = 0
) -> tuple:
    """Disjoint, exhaustive, seed-shuffled (train, test) partition.

    A group present in the dataset may be absent from one side; callers
    that need both sides populated must check ``group_counts``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n < 10:
        raise DataError(f"need at least 10 samples to split, got {n}")
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    perm = make_rng(seed, 2).permutation(n)
    parts = []
    for idx in (perm[:n_train], perm[n_train:]):
        parts.append(
            BanditDataset(
                contexts=dataset.contexts[idx].copy(),
                actions=dataset.actions[idx].copy(),
                rewards=dataset.rewards[idx].copy(),
                propensities=dataset.propensities[idx].copy(),
                groups=dataset.groups[idx].copy(),
                num_arms=dataset.num_arms,
                num_groups=dataset.num_groups,
                reward_upper_bound=dataset.reward_upper_bound,
            )
        )
    return parts[0], parts[1]


# ---------------------------------------------------------------------------
# JSON-lines serialization
# ---------------------------------------------------------------------------


def save_dataset_jsonl(
    dataset: BanditDataset,
    path,
    seed: Optional[int] = None,
    logging_policy: Optional[LoggingPolicyKind] = None,
) -> None:
    """One header record, then one record per sample."""
    header = {
        "record": "header",
        "num_arms": dataset.num_arms,
        "context_dim": dataset.context_dim,
        "num_groups": dataset.num_groups,
        "reward_upper_bound": dataset.reward_upper_bound,
        "seed": seed,
        "logging_policy": logging_policy.descriptor() if logging_policy else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(len(dataset)):
            rec = {
                "context": dataset.contexts[i].tolist(),
                "action": int(dataset.actions[i]),
                "reward": float(dataset.rewards[i]),
                "propensity": float(dataset.propensities[i]),
                "group": int(dataset.groups[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def load_dataset_jsonl(path) -> tuple:
    """Returns (dataset, header dict)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise IngestionError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("record") != "header":
        raise IngestionError(f"{path}: first record is not a header")
    recs = [json.loads(ln) for ln in lines[1:]]
    if not recs:
        raise IngestionError(f"{path}: dataset has no samples")
    dataset = BanditDataset(
        contexts=np.array([r["context"] for r in recs], dtype=np.float64),
        actions=np.array([r["action"] for r in recs], dtype=np.int64),
        rewards=np.array([r["reward"] for r in recs], dtype=np.float64),
        propensities=np.array([r["propensity"] for r in recs], dtype=np.float64),
        groups=np.array([r["group"] for r in recs], dtype=np.int64),
        num_arms=int(header["num_arms"]),
        num_groups=int(header["num_groups"]),
        reward_upper_bound=float(header["reward_upper_bound"]),
    )
    return dataset, header
