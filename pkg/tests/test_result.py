import sys
import pytest  # type: ignore
import random
from datetime import date
from pathlib import Path
import logging

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

sys.path.insert(0, str(Path(__file__).parent.parent.resolve() / "src"))

from trajsem import (
    ActivityType,
    BackendConfig,
    BackendUnavailable,
    InferenceResult,
    InferenceScenario,
    LlmGateway,
    LlmRequest,
    LlmResponse,
    ParseFailure,
    PromptConfig,
    Provenance,
    ReportRecord,
    SamplerConfig,
    SlottedTrajectory,
    TrajectoryChain,
    assign_pois_to_regions,
    build_chain,
    build_profiles,
    emit_report,
    group_weights,
    load_pois,
    load_regions,
    load_stays,
    load_taxonomy,
    load_template,
    parse_result,
    render_mobility_info,
    render_prompt,
    slot_trajectory,
    validate_result,
)
from trajsem.chain import ChainRecord
from trajsem.prompt import DEFAULT_OCCUPATIONAL_CATEGORIES, scenario_labels
from trajsem.result import ValidationOutcome, render_result
from trajsem.trajectory import group_user_days


########################################################
#
# Test Plan
#
########################################################

# 1) Parse well-formed and markdown-decorated output
# 2) Partial output: skipped scenarios, warnings
# 3) Unparseable output
# 4) Validation outcomes
# 5) Report & summary
# 6) Random render-parse round trips
# 7) 24-slot day from stays through the replay backend
# 8) Activity sequence starting below its field name

########################################################
#
# Fixtures
#
########################################################

FIXTURE_DIR = Path(__file__).parent

RESPONSE: str = "08_Response_u001.txt"
RESPONSE_PARTIAL: str = "09_Response_partial.txt"

TAXONOMY: str = "01_Taxonomy.json"
HOURLY_REGIONS: str = "10_Regions_hourly.geojson"
HOURLY_POIS: str = "11_POIs_hourly.csv"
HOURLY_STAYS: str = "12_Stays_hourly.csv"
TZ: str = "Asia/Shanghai"

RESULT_FILES = pytest.mark.datafiles(
    FIXTURE_DIR / TAXONOMY,
    FIXTURE_DIR / RESPONSE,
    FIXTURE_DIR / RESPONSE_PARTIAL,
    FIXTURE_DIR / HOURLY_REGIONS,
    FIXTURE_DIR / HOURLY_POIS,
    FIXTURE_DIR / HOURLY_STAYS,
)


@pytest.fixture
def trajectory() -> SlottedTrajectory:
    return SlottedTrajectory(
        user_pseudo_id="u001",
        date=date(2024, 3, 4),
        weekday=1,
        regions=[10, 10, 10, 11, 11, 11, 10, 10],
        coverage=[180, 180, 150, 180, 180, 150, 180, 180],
    )


@pytest.fixture
def chain(trajectory: SlottedTrajectory) -> TrajectoryChain:
    return TrajectoryChain(
        user_pseudo_id=trajectory.user_pseudo_id,
        date=trajectory.date,
        records=[
            ChainRecord(
                slot_index=ndx,
                weekday=trajectory.weekday,
                region_id=region_id,
                unprofiled=True,
                distance_from_prev_km=None if ndx == 0 else 0.0,
            )
            for ndx, region_id in enumerate(trajectory.regions)
        ],
    )


def scenario(label: str, sequence: list[str], category: str = "Office worker") -> InferenceScenario:
    return InferenceScenario(
        label=label,
        occupational_category=category,
        activity_sequence=sequence,
        trajectory_description="An office worker.",
    )


COMMUTE: list[str] = ["Home"] * 3 + ["Work"] * 3 + ["Home"] * 2


########################################################
#
# Tests
#
########################################################


@pytest.mark.asyncio
@RESULT_FILES
async def test_1_parse(datafiles: Path) -> None:
    text: str = (datafiles / RESPONSE).read_text(encoding="utf8")
    result: InferenceResult = parse_result(text, L=8, prompt_hash="p" * 64)
    assert [s.label for s in result.scenarios] == ["A", "B", "C"]
    assert result.parse_warnings == []
    assert result.raw_text == text
    assert result.prompt_hash == "p" * 64

    a, b, c = result.scenarios
    assert a.occupational_category == "Office worker"
    assert a.activity_sequence == COMMUTE
    assert a.trajectory_description.startswith("An office worker who stays at home")
    assert "commutes 0.95 km" in a.trajectory_description, "description spans lines"
    assert b.occupational_category == "Retail/Service worker"
    assert b.activity_sequence == ["Home"] * 3 + ["Work", "Leisure", "Work"] + ["Home"] * 2
    assert c.activity_sequence[:4] == ["Home", "Home", "Home", "Leisure"], "labels are normalized"
    assert c.activity_sequence[-1] == "sleeping", "unknown labels are kept"


@pytest.mark.asyncio
@RESULT_FILES
async def test_2_parse_partial(datafiles: Path) -> None:
    text: str = (datafiles / RESPONSE_PARTIAL).read_text(encoding="utf8")
    result = parse_result(text, L=8, scenario_count=3)
    assert len(result) == 1
    assert result.scenarios[0].occupational_category == "Student"
    assert "Result B: missing activity_sequence" in result.parse_warnings
    assert "Result A: 6 activities, expected 8" in result.parse_warnings
    assert "expected 3, found 1" in result.parse_warnings


def test_3_parse_failure() -> None:
    text: str = "I cannot infer anything from this trajectory."
    with pytest.raises(ParseFailure) as excinfo:
        parse_result(text, L=8)
    assert excinfo.value.raw_text == text
    with pytest.raises(ParseFailure):
        parse_result("")


def test_4_render_parse() -> None:
    scenarios = [scenario("A", COMMUTE), scenario("B", COMMUTE, "Teacher")]
    result = parse_result(render_result(scenarios), L=8, scenario_count=2)
    assert result.scenarios == scenarios
    assert result.parse_warnings == []


def test_5_validate(trajectory: SlottedTrajectory) -> None:
    config = PromptConfig()
    result = InferenceResult(scenarios=[scenario("A", COMMUTE)])
    report = validate_result(result, trajectory, config)
    assert report.overall == ValidationOutcome.passed
    assert report.trajectory_id == trajectory.trajectory_id

    # category outside the list: warn
    result = InferenceResult(scenarios=[scenario("A", COMMUTE, "Astronaut")])
    report = validate_result(result, trajectory, config)
    assert report.overall == ValidationOutcome.warn
    assert not report.checks[0].category_in_list

    # three different activities in one region: warn
    mixed = ["Home", "Leisure", "Other"] + COMMUTE[3:]
    report = validate_result(InferenceResult(scenarios=[scenario("A", mixed)]), trajectory, config)
    assert report.overall == ValidationOutcome.warn
    assert not report.checks[0].region_consistency_ok

    # wrong length or unknown labels: fail
    report = validate_result(
        InferenceResult(scenarios=[scenario("A", COMMUTE), scenario("B", COMMUTE[:7])]),
        trajectory,
        config,
    )
    assert [c.outcome for c in report.checks] == [
        ValidationOutcome.passed,
        ValidationOutcome.fail,
    ]
    assert report.overall == ValidationOutcome.fail
    report = validate_result(
        InferenceResult(scenarios=[scenario("A", COMMUTE[:7] + ["Sleep"])]),
        trajectory,
        config,
    )
    assert not report.checks[0].labels_ok
    assert report.overall == ValidationOutcome.fail


@pytest.mark.asyncio
@RESULT_FILES
async def test_6_report(
    datafiles: Path, trajectory: SlottedTrajectory, chain: TrajectoryChain
) -> None:
    text: str = (datafiles / RESPONSE).read_text(encoding="utf8")
    result = parse_result(text, L=8)
    report = validate_result(result, trajectory, PromptConfig())
    assert report.overall == ValidationOutcome.fail, "Result C has an unknown label"

    provenance = Provenance(config_hash="c" * 64, template_hash="t" * 64)
    fn: Path = datafiles / "report.jsonl"
    records: list[ReportRecord] = await emit_report(
        [
            (chain, result, report),
            (chain, BackendUnavailable("giving up"), None),
        ],
        fn,
        provenance,
    )
    assert [r.outcome for r in records] == ["fail", "error"]
    assert records[1].error == "BackendUnavailable: giving up"
    assert len(fn.read_text().splitlines()) == 2

    summary: str = (datafiles / "report_summary.txt").read_text(encoding="utf8")
    lines: list[str] = summary.splitlines()
    assert lines[0] == provenance.header()
    assert lines[1] == "trajectories: 2"
    assert "fail:        1" in summary
    assert "error:       1" in summary
    assert "pass:        0" in summary
    assert "  Home" in summary
    assert "Office worker" in summary


def test_7_render_parse_random() -> None:
    rnd = random.Random(3)
    words: list[str] = "stays home commutes to the office park campus in evening morning km".split()
    for n in range(200):
        L: int = rnd.choice([8, 12, 24])
        scenarios: list[InferenceScenario] = [
            InferenceScenario(
                label=label,
                occupational_category=rnd.choice(DEFAULT_OCCUPATIONAL_CATEGORIES),
                activity_sequence=[str(rnd.choice(list(ActivityType))) for _ in range(L)],
                trajectory_description="\n".join(
                    " ".join(rnd.choices(words, k=rnd.randint(1, 12))).capitalize() + "."
                    for _ in range(rnd.randint(1, 3))
                ),
            )
            for label in scenario_labels(rnd.randint(1, 4))
        ]
        result = parse_result(render_result(scenarios), L=L, scenario_count=len(scenarios))
        assert result.scenarios == scenarios, f"round {n}"
        assert result.parse_warnings == []

    for text in ["", "Result A:", "Occupational Category: Student\nResult", "No results."]:
        with pytest.raises(ParseFailure) as excinfo:
            parse_result(text)
        assert excinfo.value.raw_text == text


@pytest.mark.asyncio
@RESULT_FILES
async def test_8_hourly_round_trip(datafiles: Path, tmp_path: Path) -> None:
    """24-slot day from stays through chain text, prompt, replay backend and parser"""
    taxonomy = await load_taxonomy(datafiles / TAXONOMY)
    registry = await load_regions(datafiles / HOURLY_REGIONS)
    pois, _ = await load_pois(datafiles / HOURLY_POIS, taxonomy)
    profiles, _ = build_profiles(assign_pois_to_regions(pois, registry, taxonomy.M))
    grouped = {r: group_weights(p, taxonomy) for r, p in profiles.items()}
    assert set(grouped) == {161, 359, 361, 365}
    stays, summary = await load_stays(datafiles / HOURLY_STAYS, TZ, registry)
    assert len(summary.rejected) == 0

    day = date(2024, 3, 4)
    trajectory = slot_trajectory(group_user_days(stays, TZ)[("u161", day)], day, L=24, tz=TZ)
    regions: list[int] = [161] * 9 + [365, 365, 359, 359, 365, 365, 361, 365, 361, 361, 359, 359, 365, 365, 161]
    assert trajectory.regions == regions
    assert trajectory.coverage == pytest.approx([60] * 24)

    chain = build_chain(trajectory, grouped, SamplerConfig(K=3, seed=42), registry)
    assert not any(record.unprofiled for record in chain)
    mobility_info: str = render_mobility_info(chain, taxonomy)
    assert len(mobility_info.split("\n")) == 24
    assert "Home: none" not in mobility_info.split("\n")[0]
    config = PromptConfig()
    bundle = render_prompt(await load_template(), trajectory, mobility_info, config)
    assert "[161, 161, 161, 161, 161, 161, 161, 161, 161, 365," in bundle.text

    activity: dict[int, str] = {161: "Home", 365: "Work", 359: "Leisure", 361: "Other"}
    answer: str = render_result(
        [
            scenario(label, [activity[r] for r in regions], category)
            for label, category in zip(config.labels, ["Office worker", "Teacher", "Freelancer"])
        ]
    )
    request = LlmRequest(prompt=bundle.text)
    fixture_dir: Path = tmp_path / "fixtures"
    fixture_dir.mkdir()
    (fixture_dir / f"{request.request_key}.json").write_text(LlmResponse(text=answer).json())

    async with LlmGateway(BackendConfig(fixture_dir=fixture_dir)) as gateway:
        response = await gateway.infer(request)
    result = parse_result(response.text, L=trajectory.L, prompt_hash=bundle.content_hash)
    assert len(result) == 3
    for s in result.scenarios:
        assert len(s.activity_sequence) == 24
        assert set(s.activity_sequence) <= {str(a) for a in ActivityType}
    assert validate_result(result, trajectory, config).overall == ValidationOutcome.passed


@pytest.mark.parametrize(
    "sequence_block",
    [
        "Activity Sequence:\n[{}]",
        "Activity Sequence:\n\n[{}]",
        "**Activity Sequence:**\n```\n[{}]\n```",
        "Activity Sequence:\n[Home, Home, Home,\n{}]",
        "Activity Sequence:\n{}",
    ],
)
def test_9_sequence_below_field(sequence_block: str) -> None:
    hourly: list[str] = ["Home"] * 8 + ["Work"] * 9 + ["Leisure"] * 4 + ["Home"] * 3
    items: str = ", ".join(hourly)
    if sequence_block.count("Home, Home, Home,") == 1:
        items = ", ".join(hourly[3:])
    text: str = "\n".join(
        [
            "Result A:",
            "Occupational Category: Office worker",
            sequence_block.format(items),
            "Trajectory Description: An office worker.",
        ]
    )
    result = parse_result(text, L=24, scenario_count=1)
    assert result.scenarios[0].activity_sequence == hourly
    assert result.scenarios[0].trajectory_description == "An office worker."
    assert result.parse_warnings == []
