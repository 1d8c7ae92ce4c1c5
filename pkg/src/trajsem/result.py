"""trajsem.result

Parsing of raw LLM output into inference scenarios, structural validation
of the scenarios and the JSON-lines report.

Each scenario follows this grammar:

    Result A:
    Occupational Category: Office worker
    Activity Sequence: [Home, Home, ..., Work, Home]
    Trajectory Description: free text, possibly over several lines

Markdown headings, bullets and bold markers are ignored, as is the case of
the labels and any prose before the first 'Result' header.
"""

import logging
import re
from collections import Counter
from enum import StrEnum
from pathlib import Path
from typing import Any, Iterable, Tuple

import aiofiles
from pydantic import Field

from pyutils import JSONExportable

from .chain import TrajectoryChain
from .errors import ParseFailure, TrajsemError
from .prompt import ActivityType, PromptConfig
from .trajectory import SlottedTrajectory
from .utils import Provenance, write_jsonl

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

MAX_LABELS_PER_REGION: int = 2
REPORT_SUMMARY: str = "report_summary.txt"

_MARKDOWN_PREFIX: re.Pattern = re.compile(r"^\s*(?:#{1,6}\s*|>\s*|[-*+]\s+)+")
_HEADER_RE: re.Pattern = re.compile(
    r"^result\s+([a-z0-9]{1,3})\s*(?:[:：.)]|$)", re.IGNORECASE
)
_FIELD_RE: re.Pattern = re.compile(
    r"^(occupational\s+category|activity\s+sequence|trajectory\s+description)\s*[:：]\s*(.*)$",
    re.IGNORECASE,
)

CATEGORY: str = "occupational_category"
SEQUENCE: str = "activity_sequence"
DESCRIPTION: str = "trajectory_description"


###########################################
#
# InferenceScenario() & InferenceResult()
#
###########################################


class InferenceScenario(JSONExportable):
    # fmt: off
    label                   : str       = Field(default=...)
    occupational_category   : str       = Field(default=...)
    activity_sequence       : list[str] = Field(default_factory=list)
    trajectory_description  : str       = Field(default="")
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False


class InferenceResult(JSONExportable):
    scenarios: list[InferenceScenario] = Field(default_factory=list)
    raw_text: str = Field(default="")
    prompt_hash: str = Field(default="")
    parse_warnings: list[str] = Field(default_factory=list)

    _exclude_defaults = False

    class Config:
        allow_mutation = True
        validate_assignment = True

    def __len__(self) -> int:
        return len(self.scenarios)


def _clean(line: str) -> str:
    line = _MARKDOWN_PREFIX.sub("", line)
    return line.replace("**", "").replace("__", "").strip()


def _field_key(name: str) -> str:
    return "_".join(name.lower().split())


def _split_sequence(text: str) -> list[str]:
    if (start := text.find("[")) >= 0:
        text = text[start + 1 :]
    if (end := text.find("]")) >= 0:
        text = text[:end]
    res: list[str] = list()
    for item in text.split(","):
        if len(item := item.strip().strip("\"'`").strip()) > 0:
            try:
                res.append(str(ActivityType.from_str(item)))
            except ValueError:
                res.append(item)
    return res


def parse_result(
    text: str, L: int | None = None, scenario_count: int = 3, prompt_hash: str = ""
) -> InferenceResult:
    """Parse raw LLM output. Scenarios lacking a field are skipped with a
    warning. Raises ParseFailure when no scenario is recognized."""
    blocks: list[Tuple[str, dict[str, list[str]]]] = list()
    current: dict[str, list[str]] | None = None
    field: str | None = None
    in_sequence: bool = False

    for line in text.splitlines():
        cleaned: str = _clean(line)
        if (m := _HEADER_RE.match(cleaned)) is not None:
            current = dict()
            blocks.append((m.group(1).upper(), current))
            field = None
            in_sequence = False
            continue
        if in_sequence and current is not None:
            opened: bool = any("[" in s for s in current[SEQUENCE])
            if opened or _FIELD_RE.match(cleaned) is None:
                current[SEQUENCE].append(cleaned)
                in_sequence = "]" not in cleaned
                continue
            in_sequence = False
        if current is None:
            continue
        if (m := _FIELD_RE.match(cleaned)) is not None:
            field = _field_key(m.group(1))
            current[field] = [m.group(2)]
            # the list may start on the field line or on the lines after it
            in_sequence = (
                field == SEQUENCE
                and "]" not in m.group(2)
                and ("[" in m.group(2) or m.group(2).strip() == "")
            )
        elif field == DESCRIPTION:
            current[field].append(cleaned)

    warnings: list[str] = list()
    scenarios: list[InferenceScenario] = list()
    for label, fields in blocks:
        if len(missing := [f for f in [CATEGORY, SEQUENCE, DESCRIPTION] if f not in fields]) > 0:
            warnings.append(f"Result {label}: missing {', '.join(missing)}")
            continue
        scenario = InferenceScenario(
            label=label,
            occupational_category=" ".join(fields[CATEGORY]).strip(),
            activity_sequence=_split_sequence(" ".join(fields[SEQUENCE])),
            trajectory_description="\n".join(fields[DESCRIPTION]).strip(),
        )
        if L is not None and len(scenario.activity_sequence) != L:
            warnings.append(
                f"Result {label}: {len(scenario.activity_sequence)} activities, expected {L}"
            )
        scenarios.append(scenario)

    if len(scenarios) == 0:
        raise ParseFailure("no recognizable scenario in LLM output", raw_text=text)
    if len(scenarios) != scenario_count:
        warnings.append(f"expected {scenario_count}, found {len(scenarios)}")
    for w in warnings:
        debug(w)
    return InferenceResult(
        scenarios=scenarios,
        raw_text=text,
        prompt_hash=prompt_hash,
        parse_warnings=warnings,
    )


def render_result(scenarios: Iterable[InferenceScenario]) -> str:
    """Scenarios in the grammar the prompt asks for"""
    return "\n\n".join(
        "\n".join(
            [
                f"Result {s.label}:",
                f"Occupational Category: {s.occupational_category}",
                f"Activity Sequence: [{', '.join(s.activity_sequence)}]",
                f"Trajectory Description: {s.trajectory_description}",
            ]
        )
        for s in scenarios
    )


###########################################
#
# validation
#
###########################################


class ValidationOutcome(StrEnum):
    passed = "pass"
    warn = "warn"
    fail = "fail"

    def __str__(self) -> str:
        return self.value


class ScenarioCheck(JSONExportable):
    # fmt: off
    label                   : str
    category_in_list        : bool
    sequence_length_ok      : bool
    labels_ok               : bool
    region_consistency_ok   : bool
    notes                   : list[str] = Field(default_factory=list)
    # fmt: on

    _exclude_defaults = False

    @property
    def outcome(self) -> ValidationOutcome:
        if not (self.sequence_length_ok and self.labels_ok):
            return ValidationOutcome.fail
        if not (self.category_in_list and self.region_consistency_ok):
            return ValidationOutcome.warn
        return ValidationOutcome.passed


class ValidationReport(JSONExportable):
    trajectory_id: str
    checks: list[ScenarioCheck] = Field(default_factory=list)
    overall: ValidationOutcome = Field(default=ValidationOutcome.passed)

    _exclude_defaults = False


def _check_scenario(
    scenario: InferenceScenario, traj: SlottedTrajectory, config: PromptConfig
) -> ScenarioCheck:
    notes: list[str] = list()
    seq: list[str] = scenario.activity_sequence
    allowed: set[str] = {str(a) for a in config.activity_types}

    length_ok: bool = len(seq) == traj.L
    if not length_ok:
        notes.append(f"sequence length {len(seq)} != {traj.L}")
    if not (labels_ok := all(a in allowed for a in seq)):
        notes.append(
            "unknown activity labels: "
            + ", ".join(sorted({a for a in seq if a not in allowed}))
        )
    if not (category_ok := config.has_category(scenario.occupational_category)):
        notes.append(f"category not in list: {scenario.occupational_category}")

    per_region: dict[int, set[str]] = dict()
    for region_id, activity in zip(traj.regions, seq):
        per_region.setdefault(region_id, set()).add(activity)
    busy: list[int] = sorted(
        r for r, acts in per_region.items() if len(acts) > MAX_LABELS_PER_REGION
    )
    if len(busy) > 0:
        notes.append(
            f"more than {MAX_LABELS_PER_REGION} activities in regions {', '.join(str(r) for r in busy)}"
        )
    return ScenarioCheck(
        label=scenario.label,
        category_in_list=category_ok,
        sequence_length_ok=length_ok,
        labels_ok=labels_ok,
        region_consistency_ok=len(busy) == 0,
        notes=notes,
    )


def validate_result(
    result: InferenceResult, traj: SlottedTrajectory, config: PromptConfig
) -> ValidationReport:
    """Structural checks per scenario. Never raises on bad content"""
    checks: list[ScenarioCheck] = [
        _check_scenario(s, traj, config) for s in result.scenarios
    ]
    outcomes: set[ValidationOutcome] = {c.outcome for c in checks}
    overall: ValidationOutcome = ValidationOutcome.passed
    if ValidationOutcome.fail in outcomes:
        overall = ValidationOutcome.fail
    elif ValidationOutcome.warn in outcomes:
        overall = ValidationOutcome.warn
    return ValidationReport(
        trajectory_id=traj.trajectory_id, checks=checks, overall=overall
    )


###########################################
#
# report
#
###########################################


class ReportStatus(StrEnum):
    ok = "ok"
    error = "error"

    def __str__(self) -> str:
        return self.value


class ReportRecord(JSONExportable):
    # fmt: off
    trajectory_id   : str
    prompt_hash     : str                       = Field(default="")
    status          : ReportStatus              = Field(default=ReportStatus.ok)
    error           : str | None                = Field(default=None)
    scenarios       : list[InferenceScenario]   = Field(default_factory=list)
    parse_warnings  : list[str]                 = Field(default_factory=list)
    validation      : ValidationReport | None   = Field(default=None)
    provenance      : Provenance                = Field(default_factory=Provenance)
    # fmt: on

    _exclude_defaults = False

    @property
    def outcome(self) -> str:
        if self.status == ReportStatus.error or self.validation is None:
            return str(ReportStatus.error)
        return str(self.validation.overall)


ReportItem = Tuple[
    TrajectoryChain, InferenceResult | TrajsemError, ValidationReport | None
]


def report_record(
    chain: TrajectoryChain,
    result: InferenceResult | TrajsemError,
    report: ValidationReport | None,
    prompt_hash: str = "",
    provenance: Provenance = Provenance(),
) -> ReportRecord:
    if isinstance(result, InferenceResult):
        return ReportRecord(
            trajectory_id=chain.trajectory_id,
            prompt_hash=result.prompt_hash or prompt_hash,
            scenarios=result.scenarios,
            parse_warnings=result.parse_warnings,
            validation=report,
            provenance=provenance,
        )
    return ReportRecord(
        trajectory_id=chain.trajectory_id,
        prompt_hash=prompt_hash,
        status=ReportStatus.error,
        error=f"{type(result).__name__}: {result}",
        provenance=provenance,
    )


def summarize(records: list[ReportRecord], provenance: Provenance = Provenance()) -> str:
    """Outcome counts and activity label frequencies"""
    outcomes: Counter[str] = Counter(r.outcome for r in records)
    labels: Counter[str] = Counter()
    categories: Counter[str] = Counter()
    for r in records:
        for s in r.scenarios:
            labels.update(s.activity_sequence)
            categories[s.occupational_category] += 1

    lines: list[str] = [provenance.header(), f"trajectories: {len(records)}"]
    for outcome in [*ValidationOutcome, ReportStatus.error]:
        lines.append(f"{str(outcome) + ':':<8s}{outcomes.get(str(outcome), 0):>6d}")
    lines.append("")
    lines.append("activity label frequencies:")
    for label, n in sorted(labels.items(), key=lambda x: (-x[1], x[0])):
        lines.append(f"  {label:<20s}{n:>6d}")
    lines.append("")
    lines.append("occupational categories:")
    for category, n in sorted(categories.items(), key=lambda x: (-x[1], x[0])):
        lines.append(f"  {category:<30s}{n:>6d}")
    return "\n".join(lines) + "\n"


async def emit_report(
    results: Iterable[ReportItem | ReportRecord],
    filename: Path | str,
    provenance: Provenance = Provenance(),
    summary_file: Path | str | None = None,
) -> list[ReportRecord]:
    """Write the JSON-lines report and its summary next to it"""
    path = Path(filename)
    records: list[ReportRecord] = list()
    for item in results:
        if isinstance(item, ReportRecord):
            records.append(item)
        else:
            chain, result, report = item
            records.append(report_record(chain, result, report, provenance=provenance))
    await write_jsonl(path, records)
    summary_path = path.parent / REPORT_SUMMARY if summary_file is None else Path(summary_file)
    async with aiofiles.open(summary_path, mode="w", encoding="utf8") as f:
        await f.write(summarize(records, provenance))
    verbose(f"wrote report of {len(records)} trajectories to {path}")
    return records
