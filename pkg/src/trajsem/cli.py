"""trajsem.cli

Command-line pipeline: profile, format, infer, run and validate. Stages
only communicate through the files in the output directory.
"""

import asyncio
import logging
import sys
from argparse import ArgumentParser, Namespace
from configparser import ConfigParser
from pathlib import Path
from typing import Sequence

import aiofiles
from pydantic import Field

from pyutils import JSONExportable

from .chain import ChainLine, build_chain, render_mobility_info
from .config import PipelineConfig, add_args_paths, add_args_pipeline, read_config
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    EmptyDay,
    ParseFailure,
    TrajsemError,
)
from .llm import LlmGateway, LlmResponse, add_args_llm
from .poi import RejectedRow, load_pois, load_taxonomy
from .profile import build_profiles, group_weights, load_profiles, save_profiles
from .prompt import (
    PromptBundle,
    PromptConfig,
    PromptTemplate,
    load_categories,
    load_template,
    render_prompt,
)
from .region import assign_pois_to_regions, load_regions
from .result import (
    InferenceResult,
    InferenceScenario,
    ReportRecord,
    ReportStatus,
    emit_report,
    parse_result,
    report_record,
    validate_result,
)
from .trajectory import (
    group_user_days,
    load_stays,
    slot_trajectory,
    validate_trajectory,
)
from .utils import Provenance, read_jsonl, write_jsonl

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

EXIT_OK: int = 0
EXIT_CONFIG: int = 1
EXIT_DATA: int = 2
EXIT_BACKEND: int = 3

PROFILES: str = "profiles.jsonl"
PROFILE_STATS: str = "profile_stats.json"
CHAINS: str = "chains.jsonl"
MOBILITY_INFO: str = "mobility_info.txt"
REJECTED: str = "rejected.jsonl"
PROMPTS: str = "prompts.jsonl"
RESPONSES: str = "responses.jsonl"
DATASET: str = "dataset.jsonl"


###########################################
#
# artifact models
#
###########################################


class ProfileStats(JSONExportable):
    regions: int = Field(default=0)
    profiled: int = Field(default=0)
    empty_regions: list[int] = Field(default_factory=list)
    pois_loaded: int = Field(default=0)
    pois_rejected: list[RejectedRow] = Field(default_factory=list)
    provenance: Provenance = Field(default_factory=Provenance)

    _exclude_defaults = False


class RejectedTrajectory(JSONExportable):
    trajectory_id: str
    reason: str
    provenance: Provenance = Field(default_factory=Provenance)

    _exclude_defaults = False


class PromptLine(JSONExportable):
    bundle: PromptBundle
    provenance: Provenance = Field(default_factory=Provenance)

    _exclude_defaults = False


class ResponseLine(JSONExportable):
    trajectory_id: str
    request_key: str
    response: LlmResponse | None = Field(default=None)
    error: str | None = Field(default=None)
    provenance: Provenance = Field(default_factory=Provenance)

    _exclude_defaults = False


class DatasetLine(JSONExportable):
    """Trajectory and its inferred semantics as one text-trajectory pair"""

    trajectory_id: str
    trajectory_seq: str
    mobility_info: str
    scenarios: list[InferenceScenario] = Field(default_factory=list)
    provenance: Provenance = Field(default_factory=Provenance)

    _exclude_defaults = False


async def _template(config: PipelineConfig) -> PromptTemplate:
    return await load_template(config.template)


def _require_file(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise DataError(f"{path.name} not found in {path.parent}: run '{stage}' first")
    return path


###########################################
#
# profile
#
###########################################


async def cmd_profile(config: PipelineConfig) -> int:
    """POIs, regions and taxonomy to TF-IDF region profiles"""
    config.require("pois", "regions", "taxonomy")
    assert config.pois is not None and config.regions is not None
    assert config.taxonomy is not None
    provenance: Provenance = config.provenance((await _template(config)).template_hash)

    taxonomy = await load_taxonomy(config.taxonomy)
    registry = await load_regions(config.regions)
    pois, summary = await load_pois(config.pois, taxonomy)
    histograms = assign_pois_to_regions(pois, registry, taxonomy.M)
    profiles, empty = build_profiles(histograms)

    config.out_dir.mkdir(parents=True, exist_ok=True)
    await save_profiles(config.out(PROFILES), profiles.values(), provenance)
    stats = ProfileStats(
        regions=registry.R,
        profiled=len(profiles),
        empty_regions=empty,
        pois_loaded=summary.loaded,
        pois_rejected=summary.rejected,
        provenance=provenance,
    )
    await stats.save_json(config.out(PROFILE_STATS))
    message(
        f"profiled {len(profiles)} of {registry.R} regions from {summary.loaded} POIs"
    )
    return EXIT_OK


###########################################
#
# format
#
###########################################


async def cmd_format(config: PipelineConfig) -> int:
    """Stays to slotted trajectories and trajectory chains"""
    config.require("regions", "taxonomy", "stays")
    assert config.regions is not None and config.taxonomy is not None
    assert config.stays is not None
    provenance: Provenance = config.provenance((await _template(config)).template_hash)

    taxonomy = await load_taxonomy(config.taxonomy)
    registry = await load_regions(config.regions)
    profiles = await load_profiles(
        _require_file(config.out(PROFILES), "profile"), taxonomy.M
    )
    grouped = {r: group_weights(p, taxonomy) for r, p in profiles.items()}
    stays, summary = await load_stays(config.stays, config.timezone, registry)
    if summary.rejected_count > 0:
        message(f"{config.stays.name}: skipped {summary.rejected_count} stay rows")

    lines: list[ChainLine] = list()
    rejected: list[RejectedTrajectory] = list()
    for (_, day), user_stays in group_user_days(stays, config.timezone).items():
        if config.date is not None and day != config.date:
            continue
        try:
            traj = slot_trajectory(user_stays, day, config.L, config.timezone)
        except EmptyDay as err:
            debug(f"{err}")
            continue
        if not (check := validate_trajectory(traj, config.min_coverage)):
            verbose(f"{traj.trajectory_id}: rejected: {check.reason}")
            rejected.append(
                RejectedTrajectory(
                    trajectory_id=traj.trajectory_id,
                    reason=check.reason,
                    provenance=provenance,
                )
            )
            continue
        chain = build_chain(traj, grouped, config.sampler, registry)
        lines.append(
            ChainLine(
                trajectory=traj,
                chain=chain,
                mobility_info=render_mobility_info(
                    chain, taxonomy, config.show_dominant
                ),
                provenance=provenance,
            )
        )

    config.out_dir.mkdir(parents=True, exist_ok=True)
    await write_jsonl(config.out(CHAINS), lines)
    await write_jsonl(config.out(REJECTED), rejected)
    async with aiofiles.open(config.out(MOBILITY_INFO), mode="w", encoding="utf8") as f:
        await f.write(provenance.header() + "\n")
        for line in lines:
            await f.write(f"# trajectory {line.trajectory_id}\n{line.mobility_info}\n")
    message(f"formatted {len(lines)} trajectories, rejected {len(rejected)}")
    return EXIT_OK


###########################################
#
# infer & validate
#
###########################################


async def _prompt_config(config: PipelineConfig) -> PromptConfig:
    if config.categories is None:
        return PromptConfig(scenario_count=config.scenario_count)
    try:
        return PromptConfig(
            occupational_categories=await load_categories(config.categories),
            scenario_count=config.scenario_count,
        )
    except ValueError as err:
        raise ConfigError(f"{config.categories}: {err}") from err


async def _read_chains(config: PipelineConfig) -> list[ChainLine]:
    path = _require_file(config.out(CHAINS), "format")
    return [line async for line in read_jsonl(path, ChainLine)]


def _evaluate(
    line: ChainLine,
    bundle: PromptBundle,
    response: LlmResponse | TrajsemError,
    prompt_config: PromptConfig,
    provenance: Provenance,
) -> ReportRecord:
    """Parse and validate one response into its report record"""
    prompt_hash: str = bundle.content_hash
    if not isinstance(response, LlmResponse):
        return report_record(line.chain, response, None, prompt_hash, provenance)
    try:
        result: InferenceResult = parse_result(
            response.text,
            line.trajectory.L,
            prompt_config.scenario_count,
            prompt_hash=prompt_hash,
        )
    except ParseFailure as err:
        error(f"{line.trajectory_id}: {err}")
        return report_record(line.chain, err, None, prompt_hash, provenance)
    report = validate_result(result, line.trajectory, prompt_config)
    return report_record(line.chain, result, report, prompt_hash, provenance)


async def _report(
    config: PipelineConfig,
    lines: list[ChainLine],
    records: list[ReportRecord],
    provenance: Provenance,
) -> None:
    config.report_file.parent.mkdir(parents=True, exist_ok=True)
    await emit_report(records, config.report_file, provenance)
    await write_jsonl(
        config.out(DATASET),
        (
            DatasetLine(
                trajectory_id=line.trajectory_id,
                trajectory_seq=line.trajectory.sequence(),
                mobility_info=line.mobility_info,
                scenarios=record.scenarios,
                provenance=provenance,
            )
            for line, record in zip(lines, records)
            if len(record.scenarios) > 0
        ),
    )


async def cmd_infer(config: PipelineConfig) -> int:
    """Prompts to LLM responses, parsed and validated results"""
    backend = config.require_backend()
    template = await _template(config)
    provenance: Provenance = config.provenance(template.template_hash)
    prompt_config = await _prompt_config(config)
    lines = await _read_chains(config)

    bundles: list[PromptBundle] = [
        render_prompt(template, line.trajectory, line.mobility_info, prompt_config)
        for line in lines
    ]
    config.out_dir.mkdir(parents=True, exist_ok=True)
    await write_jsonl(
        config.out(PROMPTS),
        (PromptLine(bundle=b, provenance=provenance) for b in bundles),
    )

    requests = [config.request(b.text) for b in bundles]
    async with LlmGateway(backend) as gateway:
        responses = await gateway.batch_infer(requests)
        gateway.print()

    await write_jsonl(
        config.out(RESPONSES),
        (
            ResponseLine(
                trajectory_id=line.trajectory_id,
                request_key=key,
                response=resp if isinstance(resp, LlmResponse) else None,
                error=None if isinstance(resp, LlmResponse) else f"{type(resp).__name__}: {resp}",
                provenance=provenance,
            )
            for line, (key, resp) in zip(lines, responses)
        ),
    )
    records: list[ReportRecord] = [
        _evaluate(line, bundle, resp, prompt_config, provenance)
        for line, bundle, (_, resp) in zip(lines, bundles, responses)
    ]
    await _report(config, lines, records, provenance)

    failed: int = sum(1 for _, resp in responses if not isinstance(resp, LlmResponse))
    message(f"inferred {len(responses) - failed} of {len(responses)} trajectories")
    if len(responses) > 0 and failed == len(responses):
        error("all LLM requests failed")
        return EXIT_BACKEND
    return EXIT_OK


async def cmd_validate(config: PipelineConfig) -> int:
    """Re-parse stored responses and rewrite the report. No backend calls"""
    template = await _template(config)
    provenance: Provenance = config.provenance(template.template_hash)
    prompt_config = await _prompt_config(config)
    lines = await _read_chains(config)

    bundles: dict[str, PromptBundle] = dict()
    async for p in read_jsonl(_require_file(config.out(PROMPTS), "infer"), PromptLine):
        bundles[p.bundle.trajectory_id] = p.bundle
    responses: dict[str, ResponseLine] = dict()
    async for r in read_jsonl(
        _require_file(config.out(RESPONSES), "infer"), ResponseLine
    ):
        responses[r.trajectory_id] = r

    kept: list[ChainLine] = list()
    records: list[ReportRecord] = list()
    for line in lines:
        tid: str = line.trajectory_id
        if tid not in bundles or tid not in responses:
            message(f"{tid}: no stored prompt or response, skipping")
            continue
        stored: ResponseLine = responses[tid]
        kept.append(line)
        if stored.response is None:
            records.append(
                ReportRecord(
                    trajectory_id=tid,
                    prompt_hash=bundles[tid].content_hash,
                    status=ReportStatus.error,
                    error=stored.error or "no response",
                    provenance=provenance,
                )
            )
            continue
        records.append(
            _evaluate(line, bundles[tid], stored.response, prompt_config, provenance)
        )
    await _report(config, kept, records, provenance)
    message(f"validated {len(records)} trajectories")
    return EXIT_OK


async def cmd_run(config: PipelineConfig) -> int:
    """profile, format and infer in sequence"""
    for stage in [cmd_profile, cmd_format, cmd_infer]:
        try:
            if (rc := await stage(config)) != EXIT_OK:
                error(f"{stage.__name__} failed")
                return rc
        except TrajsemError as err:
            error(f"{stage.__name__} failed: {err}")
            raise
    return EXIT_OK


COMMANDS = {
    "profile": cmd_profile,
    "format": cmd_format,
    "infer": cmd_infer,
    "run": cmd_run,
    "validate": cmd_validate,
}


###########################################
#
# main()
#
###########################################


def add_args_common(parser: ArgumentParser, config: ConfigParser) -> bool:
    parser.add_argument(
        "--debug", "-d", action="store_true", default=False, help="debug mode"
    )
    parser.add_argument(
        "--verbose", "-v", action="store_true", default=False, help="verbose mode"
    )
    parser.add_argument(
        "--silent", "-s", action="store_true", default=False, help="silent mode"
    )
    parser.add_argument(
        "--log", type=str, default=None, metavar="FILE", help="log to FILE"
    )
    parser.add_argument(
        "--config", type=str, default=None, metavar="CONFIG", help="read config from CONFIG"
    )
    return (
        add_args_paths(parser, config)
        and add_args_pipeline(parser, config)
        and add_args_llm(parser, config)
    )


def get_parser(config: ConfigParser) -> ArgumentParser:
    parser = ArgumentParser(
        prog="trajsem", description="Infer semantics of stay trajectories with LLMs"
    )
    subparsers = parser.add_subparsers(dest="command", title="commands", required=True)
    helps: dict[str, str] = {
        "profile": "compute TF-IDF POI profiles of regions",
        "format": "build trajectory chains from stays",
        "infer": "render prompts, query the LLM and validate the results",
        "run": "run profile, format and infer",
        "validate": "re-parse stored responses and rewrite the report",
    }
    for name, help in helps.items():
        sub = subparsers.add_parser(name, help=help)
        if not add_args_common(sub, config):
            raise ConfigError(f"could not set up arguments for '{name}'")
    return parser


def set_logging(args: Namespace) -> None:
    logging.basicConfig(format="%(levelname)s: %(message)s", force=True)
    if args.debug:
        logger.setLevel(logging.DEBUG)
    elif args.verbose:
        logger.setLevel(logging.INFO)
    elif args.silent:
        logger.setLevel(logging.CRITICAL)
    else:
        logger.setLevel(logging.WARNING)
    if args.log is not None:
        handler = logging.FileHandler(args.log, encoding="utf8")
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(funcName)s(): %(message)s")
        )
        logger.addHandler(handler)


async def main_async(args: Namespace) -> int:
    config = PipelineConfig.from_args(args)
    debug(f"config_hash={config.config_hash}")
    return await COMMANDS[args.command](config)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        pre = ArgumentParser(add_help=False)
        pre.add_argument("--config", type=str, default=None)
        pre_args, _ = pre.parse_known_args(argv)
        config: ConfigParser = read_config(pre_args.config)
        parser = get_parser(config)
        try:
            args = parser.parse_args(argv)
        except SystemExit as err:
            return EXIT_OK if err.code in (0, None) else EXIT_CONFIG
        set_logging(args)
        return asyncio.run(main_async(args))
    except ConfigError as err:
        error(f"configuration error: {err}")
        return EXIT_CONFIG
    except DataError as err:
        error(f"data error: {err}")
        return EXIT_DATA
    except BackendError as err:
        error(f"backend error: {err}")
        return EXIT_BACKEND
    except (OSError, UnicodeError) as err:
        # unreadable or unwritable paths
        error(f"I/O error: {err}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
