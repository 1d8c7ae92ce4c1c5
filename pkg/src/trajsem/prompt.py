"""trajsem.prompt

Sectioned prompt templates and their rendering into inference prompts.

Template grammar: lines before the first section header may only be blank
or '#' comments. A section starts with a '[section: <name>]' line and its
body runs until the next header. Bodies are Jinja2 templates that refer
to values with '{{name}}' tokens. The four sections aims, data_description,
cot_reasoning and output_guidance must each appear once, in that order.
"""

import logging
import re
import string
from enum import StrEnum
from pathlib import Path
from typing import Any

import aiofiles
from jinja2 import Environment, StrictUndefined, TemplateSyntaxError, UndefinedError, meta
from pydantic import Field, ValidationError, root_validator, validator

from pyutils import JSONExportable

from .errors import DataError, TemplateError
from .trajectory import SlottedTrajectory
from .utils import sha256_obj, sha256_text

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

DEFAULT_TEMPLATE: Path = Path(__file__).parent / "templates" / "default.tpl"

SECTION_RE: re.Pattern = re.compile(r"^\[section:\s*([^\]]*?)\s*\]\s*$")
_ENV = Environment(undefined=StrictUndefined, autoescape=False)

PLACEHOLDERS: frozenset[str] = frozenset(
    [
        "trajectory_seq",
        "mobility_info",
        "occupational_category",
        "activity_type",
        "scenario_count",
        "slot_count",
        "scenario_labels",
    ]
)

DEFAULT_OCCUPATIONAL_CATEGORIES: list[str] = [
    "Office worker",
    "Student",
    "Teacher",
    "Retail/Service worker",
    "Healthcare worker",
    "Driver/Courier",
    "Freelancer",
    "Retiree/Homemaker",
]
DEFAULT_SCENARIO_COUNT: int = 3


class SectionName(StrEnum):
    aims = "aims"
    data_description = "data_description"
    cot_reasoning = "cot_reasoning"
    output_guidance = "output_guidance"

    def __str__(self) -> str:
        return self.value


class ActivityType(StrEnum):
    # fmt: off
    home    = "Home"
    work    = "Work"
    school  = "School"
    leisure = "Leisure"
    other   = "Other"
    # fmt: on

    def __str__(self) -> str:
        return self.value

    @classmethod
    def from_str(cls, label: str) -> "ActivityType":
        """Case-insensitive match to the canonical label"""
        key: str = label.strip().lower()
        for a in cls:
            if key == a.name:
                return a
        raise ValueError(f"unknown activity type: '{label}'")


def scenario_labels(count: int) -> list[str]:
    """A, B, C, ..."""
    if count < 1 or count > len(string.ascii_uppercase):
        raise ValueError(f"scenario count must be within 1-26: {count}")
    return list(string.ascii_uppercase[:count])


###########################################
#
# PromptTemplate()
#
###########################################


class TemplateSection(JSONExportable):
    name: SectionName
    body: str

    class Config:
        allow_mutation = False

    @validator("body")
    def check_body(cls, v: str) -> str:
        try:
            _ENV.parse(v)
        except TemplateSyntaxError as err:
            raise ValueError(f"template syntax error on line {err.lineno}: {err.message}")
        return v

    @property
    def placeholders(self) -> set[str]:
        return set(meta.find_undeclared_variables(_ENV.parse(self.body)))


class PromptTemplate(JSONExportable):
    sections: list[TemplateSection] = Field(default_factory=list)

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("sections")
    def check_sections(cls, v: list[TemplateSection]) -> list[TemplateSection]:
        names: list[SectionName] = [s.name for s in v]
        for name in SectionName:
            if names.count(name) == 0:
                raise ValueError(f"missing section: {name}")
            if names.count(name) > 1:
                raise ValueError(f"duplicate section: {name}")
        if len(names) != len(SectionName):
            raise ValueError(f"unexpected sections: {names}")
        if names != list(SectionName):
            raise ValueError(
                f"sections must be in order {', '.join(SectionName)}: got {', '.join(names)}"
            )
        for section in v:
            if len(undeclared := section.placeholders - PLACEHOLDERS) > 0:
                raise ValueError(
                    f"section {section.name}: undeclared placeholder: {', '.join(sorted(undeclared))}"
                )
        return v

    @property
    def placeholders(self) -> set[str]:
        res: set[str] = set()
        for section in self.sections:
            res |= section.placeholders
        return res

    def section(self, name: SectionName) -> TemplateSection:
        for s in self.sections:
            if s.name == name:
                return s
        raise KeyError(name)

    @classmethod
    def parse_text(cls, text: str) -> "PromptTemplate":
        """Parse the sectioned template format. Raises TemplateError"""
        sections: list[dict[str, Any]] = list()
        name: str | None = None
        body: list[str] = list()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if (m := SECTION_RE.match(line)) is not None:
                if name is not None:
                    sections.append({"name": name, "body": "\n".join(body).strip()})
                name = m.group(1)
                if name not in SectionName.__members__:
                    raise TemplateError(f"line {lineno}: unknown section: {name}")
                body = list()
            elif name is None:
                if len(line.strip()) > 0 and not line.lstrip().startswith("#"):
                    raise TemplateError(f"line {lineno}: text outside of a section")
            else:
                body.append(line)
        if name is not None:
            sections.append({"name": name, "body": "\n".join(body).strip()})
        try:
            return cls(sections=sections)
        except ValidationError as err:
            raise TemplateError(
                "; ".join(str(e["msg"]) for e in err.errors())
            ) from err

    def serialize(self) -> str:
        return (
            "\n\n".join(f"[section: {s.name}]\n{s.body}" for s in self.sections) + "\n"
        )

    @property
    def template_hash(self) -> str:
        return sha256_text(self.serialize())

    def render(self, values: dict[str, str]) -> str:
        """Substitute placeholders in a single pass. Substituted values are
        never expanded again"""
        try:
            return (
                "\n\n".join(_ENV.from_string(s.body).render(values) for s in self.sections)
                + "\n"
            )
        except UndefinedError as err:
            raise TemplateError(f"missing value for placeholder: {err.message}") from err


async def load_template(filename: Path | str | None = None) -> PromptTemplate:
    """Load a template file, by default the shipped one"""
    path = DEFAULT_TEMPLATE if filename is None else Path(filename)
    if not path.is_file():
        raise TemplateError(f"template file not found: {path}")
    async with aiofiles.open(path, mode="r", encoding="utf8") as f:
        text: str = await f.read()
    try:
        template = PromptTemplate.parse_text(text)
    except TemplateError as err:
        raise TemplateError(f"{path}: {err}") from err
    debug(f"loaded template {path.name} hash={template.template_hash}")
    return template


async def load_categories(filename: Path | str) -> list[str]:
    """One occupational category per line. Blank lines and '#' comments
    are skipped"""
    path = Path(filename)
    if not path.is_file():
        raise DataError(f"category list not found: {path}")
    res: list[str] = list()
    async with aiofiles.open(path, mode="r", encoding="utf8") as f:
        async for line in f:
            if len(line := line.strip()) > 0 and not line.startswith("#"):
                res.append(line)
    return res


###########################################
#
# PromptConfig()
#
###########################################


class PromptConfig(JSONExportable):
    # fmt: off
    occupational_categories : list[str]             = Field(default_factory=lambda: list(DEFAULT_OCCUPATIONAL_CATEGORIES))
    activity_types          : list[ActivityType]    = Field(default_factory=lambda: list(ActivityType))
    scenario_count          : int                   = Field(default=DEFAULT_SCENARIO_COUNT)
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("occupational_categories")
    def check_categories(cls, v: list[str]) -> list[str]:
        v = [c.strip() for c in v]
        if len(v) == 0:
            raise ValueError("occupational category list is empty")
        if any(len(c) == 0 for c in v):
            raise ValueError("occupational categories cannot be empty")
        if len(set(v)) != len(v):
            raise ValueError("occupational categories must be unique")
        return v

    @validator("activity_types")
    def check_activity_types(cls, v: list[ActivityType]) -> list[ActivityType]:
        if v != list(ActivityType):
            raise ValueError(
                f"activity types are fixed to {', '.join(ActivityType)}"
            )
        return v

    @validator("scenario_count")
    def check_scenario_count(cls, v: int) -> int:
        scenario_labels(v)
        return v

    @property
    def labels(self) -> list[str]:
        return scenario_labels(self.scenario_count)

    def has_category(self, category: str) -> bool:
        key: str = category.strip().lower()
        return any(key == c.lower() for c in self.occupational_categories)


###########################################
#
# PromptBundle()
#
###########################################


class PromptInputs(JSONExportable):
    trajectory_seq: str
    mobility_info: str
    config: PromptConfig

    _exclude_defaults = False


class PromptBundle(JSONExportable):
    trajectory_id: str
    text: str
    inputs: PromptInputs
    template_hash: str
    content_hash: str = Field(default="")

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def _hash(cls, values: dict[str, Any]) -> dict[str, Any]:
        digest: str = sha256_text(values["text"])
        if values["content_hash"] == "":
            values["content_hash"] = digest
        elif values["content_hash"] != digest:
            raise ValueError("content_hash does not match text")
        return values

    @property
    def inputs_hash(self) -> str:
        return sha256_obj(self.inputs.dict())


def _join_labels(labels: list[str]) -> str:
    if len(labels) == 1:
        return labels[0]
    return ", ".join(labels[:-1]) + " and " + labels[-1]


def render_prompt(
    template: PromptTemplate,
    traj: SlottedTrajectory,
    mobility_info: str,
    config: PromptConfig,
) -> PromptBundle:
    """Fill the template with the trajectory, its mobility info and the
    category and activity lists"""
    if len(mobility_info.strip()) == 0:
        raise DataError(f"{traj.trajectory_id}: mobility_info is empty")
    if len(config.occupational_categories) == 0:
        raise TemplateError("occupational category list is empty")
    values: dict[str, str] = {
        "trajectory_seq": traj.sequence(),
        "mobility_info": mobility_info,
        "occupational_category": ", ".join(config.occupational_categories),
        "activity_type": ", ".join(str(a) for a in config.activity_types),
        "scenario_count": str(config.scenario_count),
        "slot_count": str(traj.L),
        "scenario_labels": _join_labels(config.labels),
    }
    text: str = template.render(values)
    return PromptBundle(
        trajectory_id=traj.trajectory_id,
        text=text,
        inputs=PromptInputs(
            trajectory_seq=values["trajectory_seq"],
            mobility_info=mobility_info,
            config=config,
        ),
        template_hash=template.template_hash,
    )
