"""Wrapper search for the smallest antenna / tagged-part subset meeting an accuracy bar.

Subsets are evaluated by masking full-layout feature vectors rather than
re-extracting, so every candidate keeps the same dimension and fingerprint.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from . import svm
from .evaluation import kfold_cv
from .features import N_TEMPORAL, empty_series_features, feature_dim
from .model import DEFAULT_LAYOUT, RSS_FLOOR_DBM, BodyLayout

log = logging.getLogger(__name__)

GRANULARITIES = ("part", "tag")

# Hand-picked configurations for comparison runs (names refer to the default layout).
MANUAL_ANTENNAS = {
    "upper": ("back", "chest"),
    "lower": ("left_foot", "right_foot"),
    "mixed": ("chest", "left_foot"),
}
MANUAL_PARTS = {
    "upper": ("left_wrist", "right_wrist", "left_arm", "right_arm", "body"),
    "lower": ("left_leg", "right_leg", "left_ankle", "right_ankle"),
    "mixed": ("right_wrist", "right_arm", "body", "left_leg", "left_ankle"),
}


@dataclass(frozen=True)
class SubsetSpec:
    """Kept antennas and kept units; a unit is a body part or a single tag."""

    antennas: tuple[int, ...]
    parts: tuple[int, ...]
    granularity: str = "part"

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")
        object.__setattr__(self, "antennas", tuple(sorted(set(int(a) for a in self.antennas))))
        object.__setattr__(self, "parts", tuple(sorted(set(int(p) for p in self.parts))))
        if not self.antennas or not self.parts:
            raise ValueError("a subset needs at least one antenna and one part")

    @classmethod
    def full(cls, layout: BodyLayout, granularity: str = "part") -> "SubsetSpec":
        n = layout.num_parts if granularity == "part" else layout.num_tags
        return cls(tuple(range(layout.num_antennas)), tuple(range(n)), granularity)

    @classmethod
    def from_names(cls, layout: BodyLayout, antennas: Iterable[str], parts: Iterable[str]
                   ) -> "SubsetSpec":
        try:
            return cls(tuple(layout.antennas.index(a) for a in antennas),
                       tuple(layout.body_parts.index(p) for p in parts))
        except ValueError as e:
            raise ValueError(f"unknown antenna or part name: {e}") from None

    def validate(self, layout: BodyLayout) -> None:
        n_units = layout.num_parts if self.granularity == "part" else layout.num_tags
        if self.antennas[0] < 0 or self.antennas[-1] >= layout.num_antennas:
            raise ValueError(f"antenna ids {self.antennas} outside 0..{layout.num_antennas - 1}")
        if self.parts[0] < 0 or self.parts[-1] >= n_units:
            raise ValueError(f"{self.granularity} ids {self.parts} outside 0..{n_units - 1}")

    def tag_ids(self, layout: BodyLayout) -> tuple[int, ...]:
        if self.granularity == "tag":
            return self.parts
        return tuple(sorted(t for p in self.parts for t in layout.tags_of_part(p)))

    def names(self, layout: BodyLayout) -> tuple[str, str]:
        ants = "+".join(layout.antennas[a] for a in self.antennas)
        if self.granularity == "part":
            units = "+".join(layout.body_parts[p] for p in self.parts)
        else:
            units = "+".join(f"tag{t}" for t in self.parts)
        return ants, units


@dataclass
class SelectionResult:
    rho: float
    subsets: list[tuple[SubsetSpec, float]] = field(default_factory=list)
    best_accuracy: float = 0.0
    evaluations: int = 0
    protocol: str = ""

    @property
    def level(self) -> tuple[int, int] | None:
        if not self.subsets:
            return None
        spec = self.subsets[0][0]
        return len(spec.antennas), len(spec.parts)

    def report_lines(self, layout: BodyLayout) -> list[str]:
        lines = ["n_ant,n_parts,antennas,parts,accuracy"]
        for spec, acc in self.subsets:
            ants, units = spec.names(layout)
            lines.append(f"{len(spec.antennas)},{len(spec.parts)},{ants},{units},{acc:.4f}")
        return lines


def feature_mask(spec: SubsetSpec, layout: BodyLayout = DEFAULT_LAYOUT
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks over the feature vector: (excluded temporal entries, zeroed correlations)."""
    spec.validate(layout)
    n_a, n_t = layout.num_antennas, layout.num_tags
    keep_ant = np.zeros(n_a, dtype=bool)
    keep_ant[list(spec.antennas)] = True
    keep_tag = np.zeros(n_t, dtype=bool)
    keep_tag[list(spec.tag_ids(layout))] = True
    series_kept = keep_ant[:, None] & keep_tag[None, :]  # (a, t) order matches the vector
    temporal_drop = np.repeat(~series_kept.ravel(), N_TEMPORAL)
    ti, tj = np.triu_indices(n_t, 1)
    ai, aj = np.triu_indices(n_a, 1)
    corr_drop = np.concatenate([~(keep_tag[ti] & keep_tag[tj]), ~(keep_ant[ai] & keep_ant[aj])])
    drop = np.zeros(feature_dim(n_a, n_t), dtype=bool)
    zero = np.zeros_like(drop)
    drop[:len(temporal_drop)] = temporal_drop
    zero[len(temporal_drop):] = corr_drop
    return drop, zero


def mask_dataset(instances: svm.InstanceSet, spec: SubsetSpec,
                 layout: BodyLayout = DEFAULT_LAYOUT, floor: float = RSS_FLOOR_DBM
                 ) -> svm.InstanceSet:
    """Replace excluded series with the empty-series sentinel and their correlations with 0."""
    dim = feature_dim(layout.num_antennas, layout.num_tags)
    if instances.X.shape[1] != dim:
        raise ValueError(f"instances have dimension {instances.X.shape[1]}, layout needs {dim}")
    drop, zero = feature_mask(spec, layout)
    n_temporal = N_TEMPORAL * layout.num_antennas * layout.num_tags
    sentinel = np.tile(empty_series_features(floor), n_temporal // N_TEMPORAL)
    X = instances.X.copy()
    X[:, drop] = sentinel[drop[:n_temporal]]
    X[:, zero] = 0.0
    return instances.with_X(X)


def subset_accuracy(instances: svm.InstanceSet, spec: SubsetSpec,
                    layout: BodyLayout = DEFAULT_LAYOUT, k: int = 10, seed: int = 0,
                    params: svm.SvmParams = svm.SvmParams()) -> float:
    return kfold_cv(mask_dataset(instances, spec, layout), k, seed, params).accuracy


def enumerate_level(layout: BodyLayout, n_ant: int, n_units: int, granularity: str = "part"
                    ) -> list[SubsetSpec]:
    """All subsets with the given sizes, antennas major, both in lexicographic order."""
    total = layout.num_parts if granularity == "part" else layout.num_tags
    return [SubsetSpec(a, p, granularity)
            for a in combinations(range(layout.num_antennas), n_ant)
            for p in combinations(range(total), n_units)]


def select_min(instances: svm.InstanceSet, rho: float, layout: BodyLayout = DEFAULT_LAYOUT,
               k: int = 10, seed: int = 0, granularity: str = "part",
               params: svm.SvmParams = svm.SvmParams()) -> SelectionResult:
    """Smallest (n_ant, n_units) level, n_ant minimised first, with a subset reaching ``rho``.

    Every qualifying subset of that level is returned.  If no level
    qualifies the result is empty and ``best_accuracy`` holds the best seen.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if granularity not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES}")
    total = layout.num_parts if granularity == "part" else layout.num_tags
    result = SelectionResult(rho, protocol=f"stratified {k}-fold CV, seed {seed}, "
                                           f"{granularity} granularity")
    for n_ant in range(1, layout.num_antennas + 1):
        for n_units in range(1, total + 1):
            hits = []
            for spec in enumerate_level(layout, n_ant, n_units, granularity):
                acc = subset_accuracy(instances, spec, layout, k, seed, params)
                result.evaluations += 1
                result.best_accuracy = max(result.best_accuracy, acc)
                if acc >= rho:
                    hits.append((spec, acc))
            if hits:
                result.subsets = hits
                log.info("level (%d, %d): %d qualifying subsets after %d evaluations",
                         n_ant, n_units, len(hits), result.evaluations)
                return result
    log.info("no subset reaches rho=%.3f after %d evaluations (best %.3f)",
             rho, result.evaluations, result.best_accuracy)
    return result


def manual_configurations(layout: BodyLayout = DEFAULT_LAYOUT) -> dict[str, SubsetSpec]:
    """Named antenna and part configurations, each paired with the full set of the other."""
    out = {}
    all_parts = layout.body_parts
    for name, ants in MANUAL_ANTENNAS.items():
        out[f"antennas_{name}"] = SubsetSpec.from_names(layout, ants, all_parts)
    for name, parts in MANUAL_PARTS.items():
        out[f"parts_{name}"] = SubsetSpec.from_names(layout, layout.antennas, parts)
    return out


def evaluate_subsets(instances: svm.InstanceSet, specs: Sequence[SubsetSpec] | dict,
                     layout: BodyLayout = DEFAULT_LAYOUT, k: int = 10, seed: int = 0,
                     params: svm.SvmParams = svm.SvmParams()) -> list[dict]:
    items = specs.items() if isinstance(specs, dict) else enumerate(specs)
    rows = []
    for name, spec in items:
        ants, units = spec.names(layout)
        rows.append({"name": name, "antennas": ants, "parts": units,
                     "accuracy": subset_accuracy(instances, spec, layout, k, seed, params)})
    return rows
