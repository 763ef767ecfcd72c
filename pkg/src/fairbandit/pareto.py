"""Tolerance sweep with Pareto-frontier policy selection.

Training is repeated over a grid of disparity tolerances (plus one
unconstrained run); each policy becomes a point in the per-group reward
plane. The non-dominated subset is computed with a sort-and-sweep pass,
and the fairest frontier point (smallest disparity) is selected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import BanditDataset
from .errors import ConfigError, DataError
from .estimators import group_value_summary
from .trainer import TrainConfig, train

UNCONSTRAINED = "unconstrained"


@dataclass(frozen=True)
class SweepPoint:
    epsilon: Union[float, str]  # tolerance, or "unconstrained"
    r0: float
    r1: float
    overall: float
    disparity: float
    checkpoint: Optional[str] = None
    seed: int = 0

    @classmethod
    def make(
        cls,
        epsilon,
        r0: float,
        r1: float,
        overall: float,
        checkpoint: Optional[str] = None,
        seed: int = 0,
    ) -> "SweepPoint":
        return cls(
            epsilon=epsilon,
            r0=float(r0),
            r1=float(r1),
            overall=float(overall),
            disparity=abs(float(r0) - float(r1)),
            checkpoint=checkpoint,
            seed=seed,
        )

    @property
    def epsilon_order(self) -> float:
        return float("inf") if self.epsilon == UNCONSTRAINED else float(self.epsilon)


def pareto_frontier(points: Sequence[SweepPoint]) -> List[SweepPoint]:
    """Points not strictly dominated in the (r0, r1) plane.

    q dominates p when q is >= p in both coordinates and > in at least
    one, so exact duplicates never dominate each other and are all kept.
    """
    if not points:
        raise DataError("pareto_frontier needs at least one point")
    order = sorted(range(len(points)), key=lambda k: (-points[k].r0, -points[k].r1))
    keep = [False] * len(points)
    best_prev = -np.inf  # max r1 among points with strictly larger r0
    pos = 0
    while pos < len(order):
        block_end = pos
        r0 = points[order[pos]].r0
        while block_end < len(order) and points[order[block_end]].r0 == r0:
            block_end += 1
        block = order[pos:block_end]
        block_max = max(points[k].r1 for k in block)
        for k in block:
            if points[k].r1 == block_max and points[k].r1 > best_prev:
                keep[k] = True
        best_prev = max(best_prev, block_max)
        pos = block_end
    return [p for k, p in enumerate(points) if keep[k]]


def select_fairest(frontier: Sequence[SweepPoint]) -> SweepPoint:
    """Frontier point with the smallest disparity; ties go to the higher
    overall reward, then to the smaller tolerance."""
    if not frontier:
        raise DataError("select_fairest needs a nonempty frontier")
    return min(frontier, key=lambda p: (p.disparity, -p.overall, p.epsilon_order))


@dataclass
class SweepResult:
    points: List[SweepPoint]
    frontier: List[SweepPoint]
    chosen: SweepPoint
    chosen_policy: object


def _evaluate_point(policy, model, test_data) -> Tuple[float, float, float]:
    overall, per_group = group_value_summary(policy, model, test_data, "DR")
    return float(per_group[0]), float(per_group[1]), overall


def run_sweep(
    train_data: BanditDataset,
    test_data: BanditDataset,
    model,
    epsilon_grid: Sequence[float],
    base_config: TrainConfig,
    *,
    replicates: int = 1,
    checkpoint_dir=None,
) -> SweepResult:
    """Train one policy per tolerance plus one unconstrained run, score
    each on held-out data with the DR estimator, then pick the fairest
    non-dominated point.

    With ``replicates`` > 1 the per-group rewards are averaged across
    seeds (seed + i) before the frontier is computed.
    """
    if not epsilon_grid:
        raise ConfigError("epsilon grid must be nonempty")
    if replicates < 1:
        raise ConfigError("replicates must be at least 1")
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    settings = [(UNCONSTRAINED, True)] + [(float(e), False) for e in epsilon_grid]
    points: List[SweepPoint] = []
    policies = []
    for eps, unconstrained in settings:
        r0s, r1s, overalls = [], [], []
        first_policy = None
        checkpoint = None
        for rep in range(replicates):
            cfg = replace(
                base_config,
                epsilon=0.0 if unconstrained else eps,
                unconstrained=unconstrained,
                seed=base_config.seed + rep,
            )
            policy, _trace = train(train_data, model, cfg)
            r0, r1, overall = _evaluate_point(policy, model, test_data)
            r0s.append(r0)
            r1s.append(r1)
            overalls.append(overall)
            if rep == 0:
                first_policy = policy
                if checkpoint_dir is not None:
                    name = f"policy_eps_{eps}_seed_{cfg.seed}.json"
                    policy.save(checkpoint_dir / name)
                    checkpoint = name
        points.append(
            SweepPoint.make(
                epsilon=eps,
                r0=float(np.mean(r0s)),
                r1=float(np.mean(r1s)),
                overall=float(np.mean(overalls)),
                checkpoint=checkpoint,
                seed=base_config.seed,
            )
        )
        policies.append(first_policy)

    frontier = pareto_frontier(points)
    chosen = select_fairest(frontier)
    chosen_policy = policies[points.index(chosen)]
    return SweepResult(points=points, frontier=frontier, chosen=chosen, chosen_policy=chosen_policy)


def write_sweep_csv(result: SweepResult, path) -> None:
    """Plottable per-policy scatter: one row per sweep point."""
    frontier_ids = {id(p) for p in result.frontier}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "r0", "r1", "overall", "disparity", "dominated", "chosen"])
        for p in result.points:
            w.writerow(
                [
                    p.epsilon,
                    p.r0,
                    p.r1,
                    p.overall,
                    p.disparity,
                    id(p) not in frontier_ids,
                    p is result.chosen,
                ]
            )
