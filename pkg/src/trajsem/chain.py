"""trajsem.chain

Spatio-temporal trajectory chains: slotted trajectories enriched with the
sampled POI categories of each visited region and the travel distance
between consecutive slots, plus their text rendering for the prompt.
"""

import logging
from collections import Counter
from typing import Any, Mapping

from pydantic import Field, root_validator, validator

from pyutils import JSONExportable

from .poi import CategoryTaxonomy, FunctionGroup
from .profile import GroupedWeights
from .region import RegionRegistry, region_distance
from .sampler import RegionSample, SamplerConfig, sample_region
from .trajectory import Date, SlottedTrajectory
from .utils import Provenance

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

UNPROFILED: str = "unprofiled"


###########################################
#
# ChainRecord()
#
###########################################


class ChainRecord(JSONExportable):
    # fmt: off
    slot_index              : int                   = Field(default=...)
    weekday                 : int                   = Field(default=...)
    region_id               : int                   = Field(default=...)
    sample                  : RegionSample | None   = Field(default=None)
    distance_from_prev_km   : float | None          = Field(default=None)
    unprofiled              : bool                  = Field(default=False)
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("weekday")
    def check_weekday(cls, v: int) -> int:
        if v < 1 or v > 7:
            raise ValueError(f"weekday must be within 1-7: {v}")
        return v

    @root_validator(skip_on_failure=True)
    def check_record(cls, values: dict[str, Any]) -> dict[str, Any]:
        distance: float | None = values["distance_from_prev_km"]
        if values["slot_index"] == 0:
            if distance is not None:
                raise ValueError("first record has no distance")
        elif distance is None or distance < 0:
            raise ValueError(
                f"slot {values['slot_index']}: distance must be a non-negative number"
            )
        if values["unprofiled"] == (values["sample"] is not None):
            raise ValueError("a record has a sample or is unprofiled, not both")
        return values


###########################################
#
# TrajectoryChain()
#
###########################################


class TrajectoryChain(JSONExportable):
    # fmt: off
    user_pseudo_id  : str               = Field(default=...)
    date            : Date              = Field(default=...)
    records         : list[ChainRecord] = Field(default_factory=list)
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("records")
    def check_records(cls, v: list[ChainRecord]) -> list[ChainRecord]:
        if len(v) == 0:
            raise ValueError("chain has no records")
        for ndx, record in enumerate(v):
            if record.slot_index != ndx:
                raise ValueError(f"record {ndx} has slot_index {record.slot_index}")
        return v

    @property
    def L(self) -> int:
        return len(self.records)

    @property
    def trajectory_id(self) -> str:
        return f"{self.user_pseudo_id}:{self.date.isoformat()}"

    @property
    def regions(self) -> list[int]:
        return [r.region_id for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


class ChainLine(JSONExportable):
    """Persisted chain with its trajectory and rendered mobility info"""

    trajectory: SlottedTrajectory
    chain: TrajectoryChain
    mobility_info: str
    provenance: Provenance = Field(default_factory=Provenance)

    _exclude_defaults = False

    @property
    def trajectory_id(self) -> str:
        return self.trajectory.trajectory_id


###########################################
#
# build & render
#
###########################################


def build_chain(
    traj: SlottedTrajectory,
    profiles: Mapping[int, GroupedWeights],
    sampler: SamplerConfig,
    registry: RegionRegistry,
) -> TrajectoryChain:
    """One record per slot. Each distinct region is sampled once and the
    sample reused on every visit. Regions without a profile get an
    unprofiled record."""
    samples: dict[int, RegionSample | None] = dict()
    for region_id in traj.distinct_regions():
        if (grouped := profiles.get(region_id)) is None:
            message(f"{traj.trajectory_id}: region {region_id} is {UNPROFILED}")
            samples[region_id] = None
        else:
            samples[region_id] = sample_region(
                grouped, sampler, (traj.trajectory_id, region_id)
            )

    records: list[ChainRecord] = list()
    prev: int | None = None
    for slot, region_id in enumerate(traj.regions):
        records.append(
            ChainRecord(
                slot_index=slot,
                weekday=traj.weekday,
                region_id=region_id,
                sample=samples[region_id],
                distance_from_prev_km=None
                if prev is None
                else region_distance(prev, region_id, registry),
                unprofiled=samples[region_id] is None,
            )
        )
        prev = region_id
    return TrajectoryChain(
        user_pseudo_id=traj.user_pseudo_id, date=traj.date, records=records
    )


def _render_group(
    sample: RegionSample,
    group: FunctionGroup,
    taxonomy: CategoryTaxonomy,
    show_dominant: bool,
) -> str:
    ids: list[int] = sample.group(group)
    if len(ids) == 0:
        text = "none"
    else:
        # Counter keeps first-appearance order
        text = ", ".join(
            taxonomy.name(cid) if n == 1 else f"{taxonomy.name(cid)} ×{n}"
            for cid, n in Counter(ids).items()
        )
    if show_dominant and (cid := sample.dominant.get(group)) is not None:
        text += f" (main: {taxonomy.name(cid)})"
    return f"{group}: {text}"


def render_record(
    record: ChainRecord, taxonomy: CategoryTaxonomy, show_dominant: bool = False
) -> str:
    parts: list[str] = [
        f"slot {record.slot_index:02d}",
        f"weekday {record.weekday}",
        f"region {record.region_id}",
    ]
    if record.sample is None:
        parts.append(f"POI: {UNPROFILED}")
    else:
        groups = list(record.sample.per_group.keys()) or FunctionGroup.ordered()
        parts.extend(
            _render_group(record.sample, g, taxonomy, show_dominant) for g in groups
        )
    if record.distance_from_prev_km is not None:
        parts.append(f"distance {record.distance_from_prev_km:.2f} km")
    return " | ".join(parts)


def render_mobility_info(
    chain: TrajectoryChain, taxonomy: CategoryTaxonomy, show_dominant: bool = False
) -> str:
    """One line per slot:

    slot 00 | weekday 1 | region 161 | Home: Residential ×2, Hotel | ... | Other: none

    followed by '| distance 1.23 km' from the second slot on. Repeated draws
    are collapsed with a ×n multiplicity. No trailing newline.
    """
    return "\n".join(render_record(r, taxonomy, show_dominant) for r in chain)
