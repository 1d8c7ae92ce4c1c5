"""trajsem.poi

POI records, the POI category taxonomy and the five function groups
"""

import csv
import logging
from enum import StrEnum
from io import StringIO
from pathlib import Path
from typing import Any, Iterable, Tuple

import aiofiles
from pydantic import Field, ValidationError, root_validator, validator

from pyutils import JSONExportable

from .errors import DataError

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

# what undecodable input bytes are read as
REPLACEMENT_CHAR: str = "\ufffd"


###########################################
#
# FunctionGroup()
#
###########################################


class FunctionGroup(StrEnum):
    # fmt: off
    home    = "Home"
    work    = "Work"
    school  = "School"
    leisure = "Leisure"
    other   = "Other"
    # fmt: on

    def __str__(self) -> str:
        return self.value

    @property
    def index(self) -> int:
        """Position in the fixed group order"""
        return list(FunctionGroup).index(self)

    @classmethod
    def ordered(cls) -> list["FunctionGroup"]:
        return list(cls)

    @classmethod
    def from_str(cls, group: str) -> "FunctionGroup":
        """Case-insensitive lookup by value or name"""
        key: str = group.strip().lower()
        for g in cls:
            if key == g.name:
                return g
        raise ValueError(f"unknown function group: '{group}'")


###########################################
#
# CategoryTaxonomy()
#
###########################################


class CategoryEntry(JSONExportable):
    # fmt: off
    category_id : int           = Field(default=..., alias="id")
    name        : str           = Field(default=...)
    group       : FunctionGroup = Field(default=...)
    # fmt: on

    class Config:
        allow_mutation = False
        allow_population_by_field_name = True

    @validator("group", pre=True)
    def validate_group(cls, v: Any) -> Any:
        if isinstance(v, str):
            return FunctionGroup.from_str(v)
        return v

    @validator("name")
    def validate_name(cls, v: str) -> str:
        v = v.strip()
        if len(v) == 0:
            raise ValueError("category name cannot be empty")
        return v


class CategoryTaxonomy(JSONExportable):
    """POI categories, dense ids 0..M-1, each mapped to one function group"""

    categories: list[CategoryEntry] = Field(default_factory=list)

    _exclude_defaults = False

    class Config:
        allow_mutation = False
        allow_population_by_field_name = True

    @root_validator(skip_on_failure=True)
    def _dense_ids(cls, values: dict[str, Any]) -> dict[str, Any]:
        entries: list[CategoryEntry] = sorted(
            values["categories"], key=lambda c: c.category_id
        )
        if len(entries) == 0:
            raise ValueError("taxonomy has no categories")
        for ndx, entry in enumerate(entries):
            if entry.category_id != ndx:
                raise ValueError(
                    f"category ids must be dense 0..M-1: expected {ndx}, got {entry.category_id}"
                )
        names: set[str] = {entry.name for entry in entries}
        if len(names) != len(entries):
            raise ValueError("category names must be unique")
        values["categories"] = entries
        return values

    @property
    def M(self) -> int:
        return len(self.categories)

    def __len__(self) -> int:
        return len(self.categories)

    def __iter__(self):
        return iter(self.categories)

    def __getitem__(self, category_id: int) -> CategoryEntry:
        return self.categories[category_id]

    def name(self, category_id: int) -> str:
        return self.categories[category_id].name

    def group(self, category_id: int) -> FunctionGroup:
        return self.categories[category_id].group

    def name_index(self) -> dict[str, int]:
        """Map category name to category_id"""
        return {entry.name: entry.category_id for entry in self.categories}

    def group_members(self) -> dict[FunctionGroup, list[int]]:
        """Category ids per function group in ascending id order"""
        res: dict[FunctionGroup, list[int]] = {g: list() for g in FunctionGroup}
        for entry in self.categories:
            res[entry.group].append(entry.category_id)
        return res


async def load_taxonomy(filename: Path | str) -> CategoryTaxonomy:
    """Load taxonomy JSON: {"categories": [{"id", "name", "group"}]}"""
    path = Path(filename)
    if not path.is_file():
        raise DataError(f"taxonomy file not found: {path}")
    try:
        async with aiofiles.open(path, mode="r", encoding="utf8") as f:
            taxonomy = CategoryTaxonomy.parse_raw(await f.read())
        verbose(f"loaded {taxonomy.M} POI categories from {path.name}")
        return taxonomy
    except ValidationError as err:
        raise DataError(f"invalid taxonomy file {path}: {err}") from err
    except ValueError as err:
        raise DataError(f"could not parse taxonomy file {path}: {err}") from err


###########################################
#
# PoiRecord()
#
###########################################


class PoiRecord(JSONExportable):
    # fmt: off
    poi_id      : str   = Field(default=...)
    category_id : int   = Field(default=...)
    lat         : float = Field(default=...)
    lon         : float = Field(default=...)
    # fmt: on

    class Config:
        allow_mutation = False
        allow_population_by_field_name = True

    @validator("poi_id")
    def check_id(cls, v: str) -> str:
        if len(v.strip()) == 0:
            raise ValueError("poi_id cannot be empty")
        return v

    @validator("lat")
    def check_lat(cls, v: float) -> float:
        if v < -90 or v > 90:
            raise ValueError(f"lat has to be within [-90, 90]: {v}")
        return v

    @validator("lon")
    def check_lon(cls, v: float) -> float:
        if v < -180 or v > 180:
            raise ValueError(f"lon has to be within [-180, 180]: {v}")
        return v

    @validator("category_id")
    def check_category(cls, v: int) -> int:
        if v < 0:
            raise ValueError("category_id must be >= 0")
        return v


class RejectedRow(JSONExportable):
    row: int
    reason: str

    def __str__(self) -> str:
        return f"row {self.row}: {self.reason}"


class LoadSummary(JSONExportable):
    """Outcome of loading a row-oriented input file"""

    filename: str = Field(default="")
    loaded: int = Field(default=0)
    rejected: list[RejectedRow] = Field(default_factory=list)

    _exclude_defaults = False

    class Config:
        allow_mutation = True
        validate_assignment = False

    @property
    def rejected_count(self) -> int:
        return len(self.rejected)

    def reject(self, row: int, reason: str) -> None:
        debug(f"{self.filename}: row {row} rejected: {reason}")
        self.rejected.append(RejectedRow(row=row, reason=reason))

    def reject_undecodable(self, row: int, values: Iterable[Any]) -> bool:
        """Reject a row holding bytes that were not valid UTF-8"""
        if any(isinstance(v, str) and REPLACEMENT_CHAR in v for v in values):
            self.reject(row, "invalid UTF-8")
            return True
        return False

    def __str__(self) -> str:
        return f"{self.filename}: {self.loaded} loaded, {self.rejected_count} rejected"


POI_COLUMNS: set[str] = {"poi_id", "lat", "lon"}


async def load_pois(
    filename: Path | str, taxonomy: CategoryTaxonomy
) -> Tuple[list[PoiRecord], LoadSummary]:
    """Load POI CSV with columns poi_id, category_name, lat, lon.

    A category_id column may be given instead of category_name.
    Invalid rows are rejected and listed in the summary with their
    line number (header is line 1).
    """
    path = Path(filename)
    if not path.is_file():
        raise DataError(f"POI file not found: {path}")
    summary = LoadSummary(filename=path.name)
    pois: list[PoiRecord] = list()
    names: dict[str, int] = taxonomy.name_index()

    async with aiofiles.open(
        path, mode="r", encoding="utf8", errors="replace", newline=""
    ) as f:
        reader = csv.DictReader(StringIO(await f.read()))
    fields: set[str] = set(reader.fieldnames or [])
    if not POI_COLUMNS <= fields or not (
        "category_name" in fields or "category_id" in fields
    ):
        raise DataError(
            f"{path}: POI CSV must have columns poi_id, category_name, lat, lon: got {sorted(fields)}"
        )

    for row in reader:
        lineno: int = reader.line_num
        if summary.reject_undecodable(lineno, row.values()):
            continue
        try:
            category_id: int
            if (name := row.get("category_name")) is not None and name != "":
                if (cid := names.get(name.strip())) is None:
                    summary.reject(lineno, f"unknown category '{name}'")
                    continue
                category_id = cid
            else:
                category_id = int(row["category_id"])
                if category_id >= taxonomy.M:
                    summary.reject(lineno, f"unknown category_id {category_id}")
                    continue
            pois.append(
                PoiRecord(
                    poi_id=row["poi_id"],
                    category_id=category_id,
                    lat=row["lat"],
                    lon=row["lon"],
                )
            )
        except ValidationError as err:
            reasons: str = "; ".join(str(e["msg"]) for e in err.errors())
            summary.reject(lineno, reasons)
        except (ValueError, TypeError) as err:
            summary.reject(lineno, f"malformed row: {err}")
    summary.loaded = len(pois)
    if summary.rejected_count > 0:
        message(str(summary))
    else:
        verbose(str(summary))
    return pois, summary
