"""Replicate aggregation and table emission.

A report fragment captures one experiment cell (dataset, sensitive
feature, logging policy, mode) across replicates; emit_report renders a
CSV plus an aligned-text table with mean +/- std columns.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ReplicateResult:
    seed: int
    overall: float
    per_group: tuple
    disparity: float

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "overall": self.overall,
            "per_group": list(self.per_group),
            "disparity": self.disparity,
        }


@dataclass
class Report:
    """Aggregates for one experiment cell; std is population std and is
    exactly 0 with a single replicate."""

    dataset: str
    group_label: str
    off_policy: str
    mode: str
    epsilon: Optional[float]
    replicates: List[ReplicateResult] = field(default_factory=list)
    before_disparity: Optional[float] = None

    def _require_replicates(self) -> None:
        if not self.replicates:
            raise DataError("report has no replicates")

    @property
    def reward_mean(self) -> float:
        self._require_replicates()
        return float(np.mean([r.overall for r in self.replicates]))

    @property
    def reward_std(self) -> float:
        self._require_replicates()
        return float(np.std([r.overall for r in self.replicates]))

    @property
    def disparity_mean(self) -> float:
        self._require_replicates()
        return float(np.mean([r.disparity for r in self.replicates]))

    @property
    def disparity_std(self) -> float:
        self._require_replicates()
        return float(np.std([r.disparity for r in self.replicates]))

    def to_json(self) -> str:
        payload = {
            "dataset": self.dataset,
            "group_label": self.group_label,
            "off_policy": self.off_policy,
            "mode": self.mode,
            "epsilon": self.epsilon,
            "before_disparity": self.before_disparity,
            "replicates": [r.to_record() for r in self.replicates],
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        d = json.loads(text)
        return cls(
            dataset=d["dataset"],
            group_label=d["group_label"],
            off_policy=d["off_policy"],
            mode=d["mode"],
            epsilon=d["epsilon"],
            before_disparity=d.get("before_disparity"),
            replicates=[
                ReplicateResult(
                    seed=r["seed"],
                    overall=r["overall"],
                    per_group=tuple(r["per_group"]),
                    disparity=r["disparity"],
                )
                for r in d["replicates"]
            ],
        )


def emit_report(reports: Sequence[Report], csv_path, text_path) -> None:
    """Write the aggregate table as CSV and as an aligned text table."""
    if not reports:
        raise DataError("emit_report needs at least one report")
    for rep in reports:
        rep._require_replicates()

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "dataset",
                "group",
                "off_policy",
                "mode",
                "epsilon",
                "reward_mean",
                "reward_std",
                "disparity_mean",
                "disparity_std",
                "before_disparity",
                "replicates",
            ]
        )
        for rep in reports:
            w.writerow(
                [
                    rep.dataset,
                    rep.group_label,
                    rep.off_policy,
                    rep.mode,
                    rep.epsilon,
                    rep.reward_mean,
                    rep.reward_std,
                    rep.disparity_mean,
                    rep.disparity_std,
                    rep.before_disparity,
                    len(rep.replicates),
                ]
            )

    header = ["Dataset", "Group", "Off-policy", "Reward", "Disparity"]
    rows = [
        [
            rep.dataset,
            rep.group_label,
            rep.off_policy,
            f"{rep.reward_mean:.3f} ± {rep.reward_std:.3f}",
            f"{rep.disparity_mean:.3f} ± {rep.disparity_std:.3f}",
        ]
        for rep in reports
    ]
    widths = [max(len(header[c]), *(len(r[c]) for r in rows)) for c in range(len(header))]
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write("  ".join(h.ljust(widths[c]) for c, h in enumerate(header)).rstrip() + "\n")
        fh.write("  ".join("-" * widths[c] for c in range(len(header))) + "\n")
        for r in rows:
            fh.write("  ".join(r[c].ljust(widths[c]) for c in range(len(header))).rstrip() + "\n")
