"""trajsem.profile

TF-IDF POI profiles of regions and their split into function-group weights
"""

import logging
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Tuple

import numpy as np
from pydantic import Field, root_validator, validator

from pyutils import JSONExportable

from .errors import DataError, EmptyRegion
from .poi import CategoryTaxonomy, FunctionGroup
from .utils import Provenance, read_jsonl, write_jsonl

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug


###########################################
#
# PoiHistogram()
#
###########################################


class PoiHistogram(JSONExportable):
    """POI counts per category and their total for one region"""

    counts: list[int] = Field(default_factory=list)
    total: int = Field(default=0)

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("counts")
    def check_counts(cls, v: list[int]) -> list[int]:
        if any(n < 0 for n in v):
            raise ValueError("POI counts must be >= 0")
        return v

    @root_validator(skip_on_failure=True)
    def check_total(cls, values: dict[str, Any]) -> dict[str, Any]:
        if values["total"] != sum(values["counts"]):
            raise ValueError(
                f"total ({values['total']}) != sum of counts ({sum(values['counts'])})"
            )
        return values

    @property
    def M(self) -> int:
        return len(self.counts)

    @property
    def is_empty(self) -> bool:
        return self.total == 0


###########################################
#
# RegionProfile()
#
###########################################


class RegionProfile(JSONExportable):
    """TF-IDF weight per POI category. Counts are kept to tell
    categories present in the region from absent ones"""

    region_id: int
    weights: list[float] = Field(default_factory=list)
    counts: list[int] = Field(default_factory=list)

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def check_weights(cls, values: dict[str, Any]) -> dict[str, Any]:
        weights: list[float] = values["weights"]
        counts: list[int] = values["counts"]
        if len(weights) != len(counts):
            raise ValueError("weights and counts must have equal length")
        for w, n in zip(weights, counts):
            if w < 0:
                raise ValueError(f"negative weight: {w}")
            if n == 0 and w != 0:
                raise ValueError("weight must be 0 for categories without POIs")
        return values

    @property
    def index(self) -> int:
        return self.region_id

    @property
    def M(self) -> int:
        return len(self.weights)


class ProfileWeight(JSONExportable):
    category_id: int
    w: float
    n: int

    _exclude_defaults = False


class ProfileLine(JSONExportable):
    """Persisted RegionProfile: categories without POIs are omitted"""

    region_id: int
    total: int
    weights: list[ProfileWeight] = Field(default_factory=list)
    provenance: Provenance = Field(default_factory=Provenance)

    _exclude_defaults = False

    @classmethod
    def from_profile(cls, profile: RegionProfile, provenance: Provenance) -> "ProfileLine":
        return cls(
            region_id=profile.region_id,
            total=sum(profile.counts),
            weights=[
                ProfileWeight(category_id=ndx, w=w, n=n)
                for ndx, (w, n) in enumerate(zip(profile.weights, profile.counts))
                if n > 0
            ],
            provenance=provenance,
        )

    def as_profile(self, categories: int) -> RegionProfile:
        weights: list[float] = [0.0] * categories
        counts: list[int] = [0] * categories
        for pw in self.weights:
            if pw.category_id >= categories:
                raise ValueError(
                    f"region {self.region_id}: category_id {pw.category_id} not in taxonomy"
                )
            weights[pw.category_id] = pw.w
            counts[pw.category_id] = pw.n
        return RegionProfile(region_id=self.region_id, weights=weights, counts=counts)


###########################################
#
# GroupedWeights()
#
###########################################


class GroupEntry(JSONExportable):
    category_id: int
    weight: float
    count: int

    _exclude_defaults = False

    @property
    def present(self) -> bool:
        return self.count > 0


class GroupedWeights(JSONExportable):
    """Region profile split by function group"""

    region_id: int
    per_group: dict[FunctionGroup, list[GroupEntry]] = Field(default_factory=dict)

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    def present(self, group: FunctionGroup) -> list[GroupEntry]:
        """Categories of the group that have POIs in the region"""
        return [e for e in self.per_group.get(group, []) if e.present]

    def dominant(self, group: FunctionGroup) -> int | None:
        """Highest-weight present category of the group, lowest id on ties"""
        best: GroupEntry | None = None
        for entry in self.present(group):
            if best is None or entry.weight > best.weight:
                best = entry
        return None if best is None else best.category_id


###########################################
#
# TF-IDF
#
###########################################


def compute_document_frequency(
    histograms: Mapping[int, PoiHistogram], R: int
) -> list[int]:
    """Number of regions with at least one POI, per category"""
    if R < 1:
        raise ValueError("R must be >= 1")
    if R != len(histograms):
        raise ValueError(f"R ({R}) != number of regions ({len(histograms)})")
    q: np.ndarray | None = None
    for hist in histograms.values():
        present = np.asarray(hist.counts, dtype=np.int64) > 0
        q = present.astype(np.int64) if q is None else q + present
    assert q is not None
    return q.tolist()


def compute_tfidf(
    histogram: PoiHistogram, q: Sequence[int], R: int, region_id: int = -1
) -> RegionProfile:
    """weight = (count / total) * ln(R / regions with the category),
    exactly 0 for categories without POIs"""
    if histogram.is_empty:
        raise EmptyRegion(region_id)
    if len(q) != histogram.M:
        raise ValueError(f"q has length {len(q)}, histogram has {histogram.M}")
    counts = np.asarray(histogram.counts, dtype=np.int64)
    qs = np.asarray(q, dtype=np.float64)
    present = counts > 0
    if np.any(qs[present] <= 0):
        raise ValueError("document frequency must be > 0 for every category present in the region")
    weights = np.zeros(histogram.M, dtype=np.float64)
    weights[present] = (counts[present] / histogram.total) * np.log(R / qs[present])
    return RegionProfile(
        region_id=region_id, weights=weights.tolist(), counts=counts.tolist()
    )


def group_weights(profile: RegionProfile, taxonomy: CategoryTaxonomy) -> GroupedWeights:
    """Split a profile into per-group entries following the taxonomy"""
    if profile.M != taxonomy.M:
        raise ValueError(
            f"profile has {profile.M} categories, taxonomy has {taxonomy.M}"
        )
    per_group: dict[FunctionGroup, list[GroupEntry]] = dict()
    for group, members in taxonomy.group_members().items():
        per_group[group] = [
            GroupEntry(
                category_id=cid,
                weight=profile.weights[cid],
                count=profile.counts[cid],
            )
            for cid in members
        ]
    return GroupedWeights(region_id=profile.region_id, per_group=per_group)


def build_profiles(
    histograms: Mapping[int, PoiHistogram],
) -> Tuple[dict[int, RegionProfile], list[int]]:
    """Profiles of all non-empty regions. All regions form the IDF corpus.
    Returns (profiles, empty region ids)"""
    R: int = len(histograms)
    q: list[int] = compute_document_frequency(histograms, R)
    profiles: dict[int, RegionProfile] = dict()
    empty: list[int] = list()
    for region_id in sorted(histograms.keys()):
        try:
            profiles[region_id] = compute_tfidf(histograms[region_id], q, R, region_id)
        except EmptyRegion as err:
            verbose(f"{err}")
            empty.append(region_id)
    if len(empty) > 0:
        message(f"{len(empty)} of {R} regions have no POIs")
    return profiles, empty


async def save_profiles(
    filename: Path | str,
    profiles: Iterable[RegionProfile],
    provenance: Provenance = Provenance(),
) -> int:
    return await write_jsonl(
        filename,
        (
            ProfileLine.from_profile(p, provenance)
            for p in sorted(profiles, key=lambda p: p.region_id)
        ),
    )


async def load_profiles(filename: Path | str, categories: int) -> dict[int, RegionProfile]:
    path = Path(filename)
    if not path.is_file():
        raise DataError(f"profiles file not found: {path}")
    res: dict[int, RegionProfile] = dict()
    try:
        async for line in read_jsonl(path, ProfileLine):
            res[line.region_id] = line.as_profile(categories)
    except ValueError as err:
        raise DataError(f"invalid profiles file {path}: {err}") from err
    return res
