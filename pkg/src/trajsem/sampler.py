"""trajsem.sampler

Group-based sampling of POI categories: per-group softmax over the TF-IDF
weights of the categories present in a region, then K categorical draws
with replacement. Every (trajectory, region, group) gets its own PCG64
stream derived from the seed so samples are reproducible.
"""

import logging
from enum import StrEnum
from hashlib import sha256
from typing import Any, Sequence, Tuple

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence
from pydantic import Field, root_validator, validator

from pyutils import JSONExportable

from .errors import EmptyGroup
from .poi import FunctionGroup
from .profile import GroupedWeights

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

DEFAULT_K: int = 3
DEFAULT_SEED: int = 42
SEED_MAX: int = 2**64
# stream index of the ungrouped strategy, after the five group streams
UNGROUPED_STREAM: int = len(FunctionGroup)


class SamplingStrategy(StrEnum):
    grouped = "grouped"
    ungrouped = "ungrouped"

    def __str__(self) -> str:
        return self.value


###########################################
#
# SamplerConfig()
#
###########################################


class SamplerConfig(JSONExportable):
    # fmt: off
    K           : int                   = Field(default=DEFAULT_K)
    seed        : int                   = Field(default=DEFAULT_SEED)
    group_order : list[FunctionGroup]   = Field(default_factory=FunctionGroup.ordered)
    strategy    : SamplingStrategy      = Field(default=SamplingStrategy.grouped)
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("K")
    def check_K(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"K must be >= 1: {v}")
        return v

    @validator("seed")
    def check_seed(cls, v: int) -> int:
        if v < 0 or v >= SEED_MAX:
            raise ValueError(f"seed must be a 64-bit unsigned integer: {v}")
        return v

    @validator("group_order")
    def check_group_order(cls, v: list[FunctionGroup]) -> list[FunctionGroup]:
        if len(v) != len(FunctionGroup) or len(set(v)) != len(v):
            raise ValueError(
                f"group_order must list each of the {len(FunctionGroup)} groups once"
            )
        return v

    @property
    def N(self) -> int:
        return len(self.group_order)


###########################################
#
# RegionSample()
#
###########################################


class RegionSample(JSONExportable):
    """Sampled category ids of a region, per group and concatenated"""

    # fmt: off
    region_id   : int
    per_group   : dict[FunctionGroup, list[int]]    = Field(default_factory=dict)
    empty_groups: list[FunctionGroup]               = Field(default_factory=list)
    dominant    : dict[FunctionGroup, int]          = Field(default_factory=dict)
    flat        : list[int]                         = Field(default_factory=list)
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def _concat(cls, values: dict[str, Any]) -> dict[str, Any]:
        flat: list[int] = list()
        for ids in values["per_group"].values():
            flat.extend(ids)
        if len(values["flat"]) == 0:
            values["flat"] = flat
        elif values["flat"] != flat:
            raise ValueError("flat must be the concatenation of per_group")
        return values

    def group(self, group: FunctionGroup) -> list[int]:
        return self.per_group.get(group, [])

    def is_empty(self, group: FunctionGroup) -> bool:
        return group in self.empty_groups


###########################################
#
# sampling
#
###########################################


def softmax_group(weights: Sequence[float]) -> np.ndarray:
    """Softmax of the weights, shifted by their maximum"""
    if len(weights) == 0:
        raise EmptyGroup("cannot apply softmax to an empty group")
    w = np.asarray(weights, dtype=np.float64)
    e = np.exp(w - w.max())
    return e / e.sum()


def trajectory_key(trajectory_id: str) -> int:
    """Stable 64-bit integer of a trajectory id"""
    return int.from_bytes(sha256(trajectory_id.encode("utf8")).digest()[:8], "big")


def stream_rng(
    seed: int, trajectory_id: str, region_id: int, group_index: int
) -> Generator:
    """PCG64 generator keyed by (seed, trajectory, region, group).

    The seed is the SeedSequence entropy and the other three form its
    spawn key, so streams never depend on evaluation order.
    """
    ss = SeedSequence(
        entropy=seed,
        spawn_key=(trajectory_key(trajectory_id), region_id, group_index),
    )
    return Generator(PCG64(ss))


def sample_group(
    probs: Sequence[float] | np.ndarray,
    category_ids: Sequence[int],
    K: int,
    rng: Generator,
) -> list[int]:
    """K categorical draws with replacement, duplicates kept in draw order"""
    if K < 1:
        raise ValueError(f"K must be >= 1: {K}")
    if len(probs) != len(category_ids):
        raise ValueError(
            f"probs ({len(probs)}) and category_ids ({len(category_ids)}) differ in length"
        )
    p = np.asarray(probs, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities must sum to 1: {p.sum()}")
    draws = rng.choice(len(category_ids), size=K, replace=True, p=p)
    return [int(category_ids[i]) for i in draws]


def _sample_grouped(
    grouped: GroupedWeights, config: SamplerConfig, trajectory_id: str
) -> Tuple[dict[FunctionGroup, list[int]], list[FunctionGroup]]:
    per_group: dict[FunctionGroup, list[int]] = dict()
    empty: list[FunctionGroup] = list()
    for group in config.group_order:
        entries = grouped.present(group)
        try:
            probs = softmax_group([e.weight for e in entries])
        except EmptyGroup:
            debug(f"region {grouped.region_id}: no {group} categories")
            per_group[group] = []
            empty.append(group)
            continue
        rng = stream_rng(config.seed, trajectory_id, grouped.region_id, group.index)
        per_group[group] = sample_group(
            probs, [e.category_id for e in entries], config.K, rng
        )
    return per_group, empty


def _sample_ungrouped(
    grouped: GroupedWeights, config: SamplerConfig, trajectory_id: str
) -> Tuple[dict[FunctionGroup, list[int]], list[FunctionGroup]]:
    group_of: dict[int, FunctionGroup] = dict()
    for group in config.group_order:
        for entry in grouped.present(group):
            group_of[entry.category_id] = group
    per_group: dict[FunctionGroup, list[int]] = {g: [] for g in config.group_order}
    if len(group_of) > 0:
        ids: list[int] = sorted(group_of.keys())
        weights: dict[int, float] = {
            e.category_id: e.weight
            for entries in grouped.per_group.values()
            for e in entries
        }
        rng = stream_rng(
            config.seed, trajectory_id, grouped.region_id, UNGROUPED_STREAM
        )
        draws = sample_group(
            softmax_group([weights[c] for c in ids]), ids, config.N * config.K, rng
        )
        for cid in draws:
            per_group[group_of[cid]].append(cid)
    empty: list[FunctionGroup] = [g for g in config.group_order if len(per_group[g]) == 0]
    return per_group, empty


def sample_region(
    grouped: GroupedWeights,
    config: SamplerConfig,
    context: Tuple[str, int],
) -> RegionSample:
    """Sample a region within one trajectory. context is (trajectory_id, region_id)"""
    trajectory_id, region_id = context
    if region_id != grouped.region_id:
        raise ValueError(
            f"context region {region_id} does not match weights of region {grouped.region_id}"
        )
    if config.strategy == SamplingStrategy.ungrouped:
        per_group, empty = _sample_ungrouped(grouped, config, trajectory_id)
    else:
        per_group, empty = _sample_grouped(grouped, config, trajectory_id)

    dominant: dict[FunctionGroup, int] = dict()
    for group in config.group_order:
        if (cid := grouped.dominant(group)) is not None:
            dominant[group] = cid
    return RegionSample(
        region_id=region_id,
        per_group=per_group,
        empty_groups=empty,
        dominant=dominant,
    )
