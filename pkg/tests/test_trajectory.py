import sys
import pytest  # type: ignore
import random
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
import logging

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

sys.path.insert(0, str(Path(__file__).parent.parent.resolve() / "src"))

from trajsem import (
    ConfigError,
    DataError,
    EmptyDay,
    SlottedTrajectory,
    StayRecord,
    load_regions,
    load_stays,
    slot_trajectory,
    validate_trajectory,
)
from trajsem.trajectory import get_timezone, group_user_days


########################################################
#
# Test Plan
#
########################################################

# 1) Slot a day of stays: dwell-time winner, tie-breaks, carry-forward
# 2) Coverage and rejection of sparse days
# 3) Days split at local midnight
# 4) Load stays from CSV and JSON lines, rows that are not UTF-8
# 5) Minute-by-minute oracle on random days
# 6) Days with a daylight-saving change

########################################################
#
# Fixtures
#
########################################################

FIXTURE_DIR = Path(__file__).parent

REGIONS: str = "03_Regions.geojson"
STAYS: str = "04_Stays.csv"
TZ: str = "Asia/Shanghai"

STAY_FILES = pytest.mark.datafiles(
    FIXTURE_DIR / REGIONS,
    FIXTURE_DIR / STAYS,
)

UTC8 = timezone(timedelta(hours=8))
MONDAY = date(2024, 3, 4)
TUESDAY = date(2024, 3, 5)


def stay(user: str, region_id: int, start: str, end: str) -> StayRecord:
    """Stay from local 'YYYY-MM-DD HH:MM' times in UTC+8"""
    return StayRecord(
        user_pseudo_id=user,
        region_id=region_id,
        start=datetime.fromisoformat(start).replace(tzinfo=UTC8),
        end=datetime.fromisoformat(end).replace(tzinfo=UTC8),
    )


@pytest.fixture
def commuter() -> list[StayRecord]:
    return [
        stay("u001", 10, "2024-03-04 00:00", "2024-03-04 08:00"),
        stay("u001", 11, "2024-03-04 08:30", "2024-03-04 17:30"),
        stay("u001", 10, "2024-03-04 18:00", "2024-03-05 00:00"),
    ]


@pytest.fixture
def commuter_regions() -> list[int]:
    return [10, 10, 10, 11, 11, 11, 10, 10]


########################################################
#
# Tests
#
########################################################


def test_1_slot_trajectory(
    commuter: list[StayRecord], commuter_regions: list[int]
) -> None:
    traj: SlottedTrajectory = slot_trajectory(commuter, MONDAY, L=8, tz=TZ)
    assert traj.regions == commuter_regions
    assert traj.L == 8
    assert traj.weekday == 1, "2024-03-04 is a Monday"
    assert traj.trajectory_id == "u001:2024-03-04"
    assert traj.sequence() == "[10, 10, 10, 11, 11, 11, 10, 10]"
    assert traj.distinct_regions() == [10, 11]
    assert traj.coverage == pytest.approx([180, 180, 150, 180, 180, 150, 180, 180])
    assert traj.coverage_fraction == pytest.approx(1380 / 1440)

    hourly = slot_trajectory(commuter, MONDAY, L=24, tz=TZ)
    assert hourly.L == 24
    assert hourly.regions[8] == 11, "only 08:30-09:00 is observed in slot 8"
    assert hourly.regions[17] == 11
    assert hourly.regions[18] == 10


def test_2_tie_breaks() -> None:
    # equal dwell: the region whose stay starts first wins
    stays = [
        stay("u003", 12, "2024-03-05 00:00", "2024-03-05 07:00"),
        stay("u003", 13, "2024-03-05 08:00", "2024-03-05 16:00"),
        stay("u003", 12, "2024-03-05 17:00", "2024-03-06 00:00"),
    ]
    traj = slot_trajectory(stays, TUESDAY, L=8, tz=TZ)
    assert traj.regions == [12, 12, 12, 13, 13, 13, 12, 12]
    assert traj.weekday == 2

    # equal dwell and equal start: lower region id wins
    stays = [
        stay("u005", 21, "2024-03-05 00:00", "2024-03-05 01:30"),
        stay("u005", 20, "2024-03-05 00:00", "2024-03-05 01:30"),
    ]
    traj = slot_trajectory(stays, TUESDAY, L=8, tz=TZ)
    assert traj.regions[0] == 20


def test_3_carry_forward() -> None:
    stays = [
        stay("u006", 5, "2024-03-04 06:00", "2024-03-04 09:00"),
        stay("u006", 6, "2024-03-04 15:00", "2024-03-04 18:00"),
    ]
    traj = slot_trajectory(stays, MONDAY, L=8, tz=TZ)
    # leading empty slots take the first observed region
    assert traj.regions == [5, 5, 5, 5, 5, 6, 6, 6]
    assert traj.coverage == pytest.approx([0, 0, 180, 0, 0, 180, 0, 0])
    check = validate_trajectory(traj, 0.5)
    assert not check.accepted
    assert check.reason == "coverage 0.250 < 0.5"
    assert validate_trajectory(traj, 0.25).accepted


def test_4_midnight(commuter: list[StayRecord]) -> None:
    overnight = [
        stay("u007", 1, "2024-03-04 20:00", "2024-03-05 08:00"),
        stay("u007", 2, "2024-03-05 08:00", "2024-03-05 20:00"),
    ]
    days = group_user_days(overnight, TZ)
    assert list(days.keys()) == [("u007", MONDAY), ("u007", TUESDAY)]
    assert len(days[("u007", TUESDAY)]) == 2
    monday = slot_trajectory(days[("u007", MONDAY)], MONDAY, L=8, tz=TZ)
    assert monday.regions == [1] * 8
    assert monday.coverage[5] == 0
    assert monday.coverage[6] == pytest.approx(60)
    assert monday.coverage[7] == pytest.approx(180)

    # the commuter's last stay ends at midnight and does not spill over
    assert list(group_user_days(commuter, TZ).keys()) == [("u001", MONDAY)]
    with pytest.raises(EmptyDay):
        slot_trajectory(commuter, TUESDAY, L=8, tz=TZ)


def test_5_invalid() -> None:
    with pytest.raises(ValueError):
        stay("u001", 1, "2024-03-04 10:00", "2024-03-04 09:00")
    with pytest.raises(ValueError):
        StayRecord(
            user_pseudo_id="u001",
            region_id=1,
            start=datetime(2024, 3, 4, 9),
            end=datetime(2024, 3, 4, 10),
        )
    stays = [
        stay("u001", 1, "2024-03-04 00:00", "2024-03-04 10:00"),
        stay("u002", 1, "2024-03-04 00:00", "2024-03-04 10:00"),
    ]
    with pytest.raises(ValueError):
        slot_trajectory(stays, MONDAY, L=8, tz=TZ)
    with pytest.raises(ValueError):
        slot_trajectory(stays[:1], MONDAY, L=7, tz=TZ)
    with pytest.raises(ConfigError):
        get_timezone("Mars/Olympus_Mons")
    with pytest.raises(ValueError):
        SlottedTrajectory(
            user_pseudo_id="u001",
            date=MONDAY,
            weekday=3,
            regions=[1, 1],
            coverage=[0, 0],
        )


@pytest.mark.asyncio
@STAY_FILES
async def test_6_load_stays(datafiles: Path) -> None:
    registry = await load_regions(datafiles / REGIONS)
    stays, summary = await load_stays(datafiles / STAYS, TZ, registry)
    assert len(stays) == 7, f"incorrect number of stays: {len(stays)}"
    assert summary.rejected_count == 2
    reasons: dict[int, str] = {r.row: r.reason for r in summary.rejected}
    assert "unknown region_id 99" in reasons[9]
    assert 10 in reasons, "stay ending before it starts must be rejected"

    days = group_user_days(stays, TZ)
    assert list(days.keys()) == [
        ("u001", MONDAY),
        ("u002", MONDAY),
        ("u003", TUESDAY),
    ]
    sparse = slot_trajectory(days[("u002", MONDAY)], MONDAY, L=8, tz=TZ)
    check = validate_trajectory(sparse, 0.5)
    assert not check
    assert check.reason == "coverage 0.083 < 0.5"

    # without a registry unknown regions are kept
    stays, summary = await load_stays(datafiles / STAYS, TZ)
    assert len(stays) == 8


@pytest.mark.asyncio
async def test_7_load_jsonl(tmp_path: Path) -> None:
    fn: Path = tmp_path / "stays.jsonl"
    fn.write_text(
        '{"user_pseudo_id": "u1", "region_id": 3, "start_iso8601": "2024-03-04T09:00:00", "end_iso8601": "2024-03-04T12:00:00"}\n'
        "\n"
        "{not json}\n"
        '{"user_pseudo_id": "u1", "region_id": 4, "start_iso8601": "2024-03-04T12:00:00+08:00"}\n'
    )
    stays, summary = await load_stays(fn, TZ)
    assert len(stays) == 1
    assert stays[0].start.utcoffset() == timedelta(hours=8), "naive times are local"
    assert summary.rejected_count == 2

    fn = tmp_path / "stays.csv"
    fn.write_bytes(
        b"user_pseudo_id,region_id,start_iso8601,end_iso8601\n"
        b"u\xe9,3,2024-03-04T09:00:00,2024-03-04T12:00:00\n"
        b"u2,3,2024-03-04T09:00:00,2024-03-04T12:00:00\n"
    )
    stays, summary = await load_stays(fn, TZ)
    assert [s.user_pseudo_id for s in stays] == ["u2"]
    assert str(summary.rejected[0]) == "row 2: invalid UTF-8"
    with pytest.raises(DataError):
        await load_stays(tmp_path / "missing.csv", TZ)


def minute_oracle(stays: list[StayRecord], L: int) -> list[int]:
    """Dwell minutes per slot counted minute by minute"""
    midnight = datetime.combine(MONDAY, datetime.min.time(), tzinfo=UTC8)
    spans = [
        (
            int((s.start - midnight).total_seconds()) // 60,
            int((s.end - midnight).total_seconds()) // 60,
            s.region_id,
        )
        for s in stays
    ]
    slot_minutes: int = 1440 // L
    res: list[int | None] = list()
    for slot in range(L):
        dwell: dict[int, int] = dict()
        first: dict[int, int] = dict()
        for minute in range(slot * slot_minutes, (slot + 1) * slot_minutes):
            for start, end, region_id in spans:
                if start <= minute < end:
                    dwell[region_id] = dwell.get(region_id, 0) + 1
                    first[region_id] = min(first.get(region_id, start), start)
        if len(dwell) == 0:
            res.append(None)
        else:
            best = sorted(dwell, key=lambda r: (-dwell[r], first[r], r))[0]
            res.append(best)
    seen: list[int] = [r for r in res if r is not None]
    filled: list[int] = list()
    prev: int = seen[0]
    for r in res:
        prev = prev if r is None else r
        filled.append(prev)
    return filled


def test_8_slotting_oracle() -> None:
    rnd = random.Random(7)
    midnight = datetime.combine(MONDAY, datetime.min.time(), tzinfo=UTC8)
    for n in range(200):
        L: int = rnd.choice([8, 12, 24, 48])
        stays: list[StayRecord] = list()
        for _ in range(rnd.randint(1, 6)):
            start: int = rnd.randrange(0, 1440 - 1)
            end: int = rnd.randint(start + 1, min(1440, start + rnd.choice([15, 60, 300, 900])))
            stays.append(
                StayRecord(
                    user_pseudo_id="u",
                    region_id=rnd.randint(1, 4),
                    start=midnight + timedelta(minutes=start),
                    end=midnight + timedelta(minutes=end),
                )
            )
        traj = slot_trajectory(stays, MONDAY, L=L, tz=UTC8)
        assert traj.regions == minute_oracle(stays, L), f"configuration {n}: {stays}"


@pytest.mark.parametrize(
    "day,bounds_utc",
    [
        (date(2024, 3, 10), ("2024-03-10T05:00", "2024-03-11T04:00")),
        (date(2024, 11, 3), ("2024-11-03T04:00", "2024-11-04T05:00")),
    ],
)
def test_9_daylight_saving_days(day: date, bounds_utc: tuple[str, str]) -> None:
    tz: str = "America/New_York"
    start, end = (datetime.fromisoformat(t).replace(tzinfo=timezone.utc) for t in bounds_utc)
    half: datetime = start + (end - start) / 2
    stays: list[StayRecord] = [
        StayRecord(user_pseudo_id="u", region_id=1, start=start, end=half),
        StayRecord(user_pseudo_id="u", region_id=2, start=half, end=end),
    ]
    traj = slot_trajectory(stays, day, L=24, tz=tz)
    assert traj.regions == [1] * 12 + [2] * 12
    assert traj.coverage == pytest.approx([60.0] * 24)
    assert traj.coverage_fraction == pytest.approx(1.0)

    # the last local hour belongs to the day
    last_hour = StayRecord(
        user_pseudo_id="u", region_id=3, start=end - timedelta(hours=1), end=end
    )
    traj = slot_trajectory([stays[0], last_hour], day, L=24, tz=tz)
    assert traj.regions[-1] == 3
    assert traj.coverage[-1] > 0
