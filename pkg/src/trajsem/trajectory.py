"""trajsem.trajectory

Stay records and their conversion into slotted day trajectories
"""

import csv
import json
import logging
from datetime import date, datetime, time, timedelta, timezone, tzinfo
from io import StringIO
from pathlib import Path
from typing import Any, Iterable, Tuple
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import aiofiles
from pydantic import Field, ValidationError, root_validator, validator
from sortedcollections import SortedDict  # type: ignore

from pyutils import JSONExportable

from .errors import ConfigError, DataError, EmptyDay
from .poi import LoadSummary
from .region import RegionRegistry

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

Date = date

DAY_SECONDS: int = 24 * 3600
DEFAULT_SLOTS: int = 24
DEFAULT_MIN_COVERAGE: float = 0.5


def get_timezone(tz: str | tzinfo | None) -> tzinfo:
    """IANA zone name or tzinfo to tzinfo. None means UTC"""
    if tz is None:
        return ZoneInfo("UTC")
    if isinstance(tz, tzinfo):
        return tz
    try:
        return ZoneInfo(tz)
    except (ZoneInfoNotFoundError, ValueError) as err:
        raise ConfigError(f"unknown timezone: {tz}") from err


###########################################
#
# StayRecord()
#
###########################################


class StayRecord(JSONExportable):
    # fmt: off
    user_pseudo_id  : str       = Field(default=...)
    region_id       : int       = Field(default=...)
    start           : datetime  = Field(default=..., alias="start_iso8601")
    end             : datetime  = Field(default=..., alias="end_iso8601")
    # fmt: on

    class Config:
        allow_mutation = False
        allow_population_by_field_name = True

    @validator("user_pseudo_id")
    def check_user(cls, v: str) -> str:
        v = v.strip()
        if len(v) == 0:
            raise ValueError("user_pseudo_id cannot be empty")
        return v

    @validator("start", "end")
    def check_tz(cls, v: datetime) -> datetime:
        if v.tzinfo is None or v.utcoffset() is None:
            raise ValueError(f"timestamp must be timezone-aware: {v.isoformat()}")
        return v

    @root_validator(skip_on_failure=True)
    def check_order(cls, values: dict[str, Any]) -> dict[str, Any]:
        if values["start"] >= values["end"]:
            raise ValueError(
                f"stay must start before it ends: {values['start'].isoformat()} >= {values['end'].isoformat()}"
            )
        return values

    def __str__(self) -> str:
        return f"{self.user_pseudo_id}: region {self.region_id} {self.start.isoformat()} - {self.end.isoformat()}"

    def local_dates(self, tz: tzinfo) -> list[date]:
        """Local calendar days the stay overlaps"""
        first: date = self.start.astimezone(tz).date()
        last: date = (self.end - timedelta(microseconds=1)).astimezone(tz).date()
        return [first + timedelta(days=n) for n in range((last - first).days + 1)]


###########################################
#
# SlottedTrajectory()
#
###########################################


class SlottedTrajectory(JSONExportable):
    """One user-day as L region ids, one per equal time slot"""

    # fmt: off
    user_pseudo_id  : str           = Field(default=...)
    date            : Date          = Field(default=...)
    weekday         : int           = Field(default=...)
    regions         : list[int]     = Field(default_factory=list)
    coverage        : list[float]   = Field(default_factory=list)
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False
        allow_population_by_field_name = True

    @root_validator(skip_on_failure=True)
    def check_slots(cls, values: dict[str, Any]) -> dict[str, Any]:
        regions: list[int] = values["regions"]
        coverage: list[float] = values["coverage"]
        if len(regions) == 0:
            raise ValueError("trajectory has no slots")
        if len(coverage) != len(regions):
            raise ValueError(
                f"coverage has {len(coverage)} slots, regions has {len(regions)}"
            )
        if values["weekday"] != values["date"].isoweekday():
            raise ValueError(
                f"weekday {values['weekday']} does not match date {values['date']}"
            )
        slot_minutes: float = DAY_SECONDS / 60 / len(regions)
        for c in coverage:
            if c < 0 or c > slot_minutes:
                raise ValueError(f"slot coverage out of range [0, {slot_minutes}]: {c}")
        return values

    @property
    def L(self) -> int:
        return len(self.regions)

    @property
    def trajectory_id(self) -> str:
        return f"{self.user_pseudo_id}:{self.date.isoformat()}"

    @property
    def slot_minutes(self) -> float:
        return DAY_SECONDS / 60 / self.L

    @property
    def coverage_fraction(self) -> float:
        return sum(self.coverage) / (DAY_SECONDS / 60)

    def distinct_regions(self) -> list[int]:
        """Region ids in order of first appearance"""
        return list(dict.fromkeys(self.regions))

    def sequence(self) -> str:
        """Bracketed region id list, e.g. [161, 161, 365]"""
        return "[" + ", ".join(str(r) for r in self.regions) + "]"

    def __str__(self) -> str:
        return f"{self.trajectory_id} {self.sequence()}"


class TrajectoryCheck(JSONExportable):
    trajectory_id: str
    accepted: bool
    coverage_fraction: float
    reason: str = Field(default="")

    _exclude_defaults = False

    def __bool__(self) -> bool:
        return self.accepted


###########################################
#
# slotting
#
###########################################


def _union_length(intervals: list[Tuple[float, float]]) -> float:
    total: float = 0
    cur_start: float | None = None
    cur_end: float = 0
    for s, e in sorted(intervals):
        if cur_start is None or s > cur_end:
            if cur_start is not None:
                total += cur_end - cur_start
            cur_start, cur_end = s, e
        else:
            cur_end = max(cur_end, e)
    if cur_start is not None:
        total += cur_end - cur_start
    return total


def slot_trajectory(
    stays: Iterable[StayRecord],
    day: date,
    L: int = DEFAULT_SLOTS,
    tz: str | tzinfo | None = None,
) -> SlottedTrajectory:
    """Slot a user's stays into L equal slots of the local day.

    Slot l covers [l, l+1) * D/L from local midnight, D being the length of
    the local day. Its region is the one with the most overlap; ties go to
    the region whose overlapping stay starts first, then to the lower
    region_id. Empty slots carry the previous slot's region forward;
    leading empty slots take the first observed region.

    The day runs from local midnight to the next local midnight, so on days
    with a daylight-saving change the slots are 23h/L or 25h/L long.
    Coverage is reported in nominal slot minutes (1440/L per full slot).
    """
    if L < 1 or DAY_SECONDS % L != 0:
        raise ValueError(f"L must divide a day into equal whole-second slots: {L}")
    zone: tzinfo = get_timezone(tz)
    records: list[StayRecord] = sorted(
        stays, key=lambda s: (s.start, s.region_id, s.end)
    )
    users: set[str] = {s.user_pseudo_id for s in records}
    if len(users) > 1:
        raise ValueError(f"stays of several users given: {sorted(users)}")
    user: str = users.pop() if len(users) == 1 else ""

    day_start: datetime = datetime.combine(day, time(0), tzinfo=zone).astimezone(
        timezone.utc
    )
    day_end: datetime = datetime.combine(
        day + timedelta(days=1), time(0), tzinfo=zone
    ).astimezone(timezone.utc)
    day_seconds: float = (day_end - day_start).total_seconds()
    # offsets in seconds from local midnight, clipped to the day
    spans: list[Tuple[float, float, int]] = list()
    for stay in records:
        s = max((stay.start - day_start).total_seconds(), 0)
        e = min((stay.end - day_start).total_seconds(), day_seconds)
        if s < e:
            spans.append((s, e, stay.region_id))
    if len(spans) == 0:
        raise EmptyDay(f"{user}: no stays on {day.isoformat()}")

    slot_len: float = day_seconds / L
    nominal: float = DAY_SECONDS / L
    regions: list[int | None] = list()
    coverage: list[float] = list()
    for slot in range(L):
        s0, s1 = slot * slot_len, (slot + 1) * slot_len
        dwell: dict[int, float] = dict()
        first_start: dict[int, float] = dict()
        parts: list[Tuple[float, float]] = list()
        for s, e, region_id in spans:
            if (overlap := min(e, s1) - max(s, s0)) > 0:
                dwell[region_id] = dwell.get(region_id, 0) + overlap
                first_start.setdefault(region_id, s)
                parts.append((max(s, s0), min(e, s1)))
        coverage.append(min(_union_length(parts) / (s1 - s0), 1) * nominal / 60)
        if len(dwell) == 0:
            regions.append(None)
        else:
            regions.append(
                min(dwell, key=lambda r: (-dwell[r], first_start[r], r))
            )

    filled: list[int] = list()
    first: int = next(r for r in regions if r is not None)
    prev: int = first
    for r in regions:
        if r is not None:
            prev = r
        filled.append(prev)

    return SlottedTrajectory(
        user_pseudo_id=user,
        date=day,
        weekday=day.isoweekday(),
        regions=filled,
        coverage=coverage,
    )


def validate_trajectory(
    traj: SlottedTrajectory, min_coverage_fraction: float = DEFAULT_MIN_COVERAGE
) -> TrajectoryCheck:
    """Reject trajectories observed for less than the given fraction of the day"""
    frac: float = traj.coverage_fraction
    if frac < min_coverage_fraction:
        return TrajectoryCheck(
            trajectory_id=traj.trajectory_id,
            accepted=False,
            coverage_fraction=frac,
            reason=f"coverage {frac:.3f} < {min_coverage_fraction:g}",
        )
    return TrajectoryCheck(
        trajectory_id=traj.trajectory_id, accepted=True, coverage_fraction=frac
    )


###########################################
#
# input
#
###########################################


def group_user_days(
    stays: Iterable[StayRecord], tz: str | tzinfo | None = None
) -> SortedDict:
    """Stays by (user_pseudo_id, local date). A stay crossing midnight
    belongs to both days"""
    zone: tzinfo = get_timezone(tz)
    res: SortedDict = SortedDict()
    for stay in stays:
        for day in stay.local_dates(zone):
            key = (stay.user_pseudo_id, day)
            if key not in res:
                res[key] = list()
            res[key].append(stay)
    return res


STAY_COLUMNS: set[str] = {"user_pseudo_id", "region_id", "start_iso8601", "end_iso8601"}


def _parse_ts(value: Any, zone: tzinfo) -> datetime:
    ts: datetime = datetime.fromisoformat(str(value).strip())
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=zone)
    return ts


async def load_stays(
    filename: Path | str,
    tz: str | tzinfo | None = None,
    registry: RegionRegistry | None = None,
) -> Tuple[list[StayRecord], LoadSummary]:
    """Load stays from CSV or JSON lines (.jsonl) with fields
    user_pseudo_id, region_id, start_iso8601, end_iso8601.

    Naive timestamps are read as local time of tz. Rows with region ids
    unknown to the registry are rejected.
    """
    path = Path(filename)
    if not path.is_file():
        raise DataError(f"stay file not found: {path}")
    zone: tzinfo = get_timezone(tz)
    summary = LoadSummary(filename=path.name)
    stays: list[StayRecord] = list()

    async with aiofiles.open(
        path, mode="r", encoding="utf8", errors="replace", newline=""
    ) as f:
        content: str = await f.read()

    rows: list[Tuple[int, dict[str, Any]]] = list()
    if path.suffix.lower() in [".jsonl", ".ndjson"]:
        for lineno, line in enumerate(content.splitlines(), start=1):
            if len(line.strip()) == 0 or summary.reject_undecodable(lineno, [line]):
                continue
            try:
                rows.append((lineno, json.loads(line)))
            except ValueError as err:
                summary.reject(lineno, f"malformed JSON: {err}")
    else:
        reader = csv.DictReader(StringIO(content))
        if not STAY_COLUMNS <= set(reader.fieldnames or []):
            raise DataError(
                f"{path}: stay CSV must have columns {', '.join(sorted(STAY_COLUMNS))}"
            )
        for row in reader:
            rows.append((reader.line_num, row))

    for lineno, row in rows:
        if summary.reject_undecodable(lineno, row.values()):
            continue
        try:
            stay = StayRecord(
                user_pseudo_id=row["user_pseudo_id"],
                region_id=row["region_id"],
                start=_parse_ts(row["start_iso8601"], zone),
                end=_parse_ts(row["end_iso8601"], zone),
            )
            if registry is not None and stay.region_id not in registry:
                summary.reject(lineno, f"unknown region_id {stay.region_id}")
                continue
            stays.append(stay)
        except ValidationError as err:
            summary.reject(lineno, "; ".join(str(e["msg"]) for e in err.errors()))
        except (KeyError, ValueError, TypeError) as err:
            summary.reject(lineno, f"malformed row: {err}")
    summary.loaded = len(stays)
    if summary.rejected_count > 0:
        message(str(summary))
    else:
        verbose(str(summary))
    return stays, summary
