"""Cost-benefit accounting over the operator log.

Asset-oriented operators are cost-neutral; feature-oriented invocations
carry an (unknown) per-invocation cost t, late invocations a surcharge, and
clone/propagate invocations save feature-location and clone-detection work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import NoFeatureOps
from .workspace import OperatorApplication

FEATURE_ORIENTED_OPERATORS = (
    "MapAssetToFeature",
    "AddFeature",
    "AddFeatureModelToAsset",
    "RemoveFeature",
    "MoveFeature",
    "MakeFeatureOptional",
    "CloneFeature",
    "PropagateFeature",
)


@dataclass(frozen=True)
class CostModel:
    """Estimated absolute costs, in seconds, plus the omission surcharge."""

    cost_per_invocation_seconds: float
    omission_factor: float = 10.0
    feature_location_seconds: float = 900.0
    clone_detection_seconds: float = 900.0

    def __post_init__(self) -> None:
        for name in ("cost_per_invocation_seconds", "omission_factor",
                     "feature_location_seconds", "clone_detection_seconds"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class UsageCounts:
    per_operator: dict[str, int] = field(default_factory=dict)
    late_invocations: int = 0
    saved_feature_locations: int = 0
    saved_clone_detections: int = 0

    @property
    def feature_op_total(self) -> int:
        return sum(self.per_operator.get(op, 0)
                   for op in FEATURE_ORIENTED_OPERATORS)


def tally(log: Iterable[OperatorApplication]) -> UsageCounts:
    """Pure counting: per-operator totals, late invocations, and the two
    savings counters (clone/propagate applications without late fixes)."""
    counts = UsageCounts()
    for app in log:
        counts.per_operator[app.operator] = \
            counts.per_operator.get(app.operator, 0) + 1
        if app.operator == "MapAssetToFeature" and app.late:
            counts.late_invocations += 1
        if app.operator == "CloneFeature" and not app.late:
            counts.saved_feature_locations += 1
        if app.operator == "PropagateFeature":
            counts.saved_clone_detections += 1
            if not app.late:
                counts.saved_feature_locations += 1
    return counts


def cost_feat(counts: UsageCounts, model: CostModel) -> float:
    """Base maintenance cost: every feature-oriented invocation at t."""
    return counts.feature_op_total * model.cost_per_invocation_seconds


def cost_miss(counts: UsageCounts, model: CostModel) -> float:
    """Omission surcharge on top of the base cost of late invocations."""
    return (counts.late_invocations * model.omission_factor
            * model.cost_per_invocation_seconds)


def total_benefit(counts: UsageCounts, model: CostModel) -> float:
    saved = (counts.saved_feature_locations * model.feature_location_seconds
             + counts.saved_clone_detections * model.clone_detection_seconds)
    return -(cost_feat(counts, model) + cost_miss(counts, model)) + saved


def break_even_seconds(counts: UsageCounts, model: CostModel) -> float:
    """The per-invocation cost t at which the total benefit is zero."""
    denominator = (counts.feature_op_total
                   + counts.late_invocations * model.omission_factor)
    if denominator == 0:
        raise NoFeatureOps("no feature-oriented invocations to amortize")
    saved = (counts.saved_feature_locations * model.feature_location_seconds
             + counts.saved_clone_detections * model.clone_detection_seconds)
    return saved / denominator
