"""trajsem.config

Config file lookup, argparse helpers and the validated pipeline config.
Values come from the INI file and are overridden by command-line flags.
"""

import logging
from argparse import ArgumentParser, Namespace
from configparser import ConfigParser, Error as ConfigParserError
from datetime import date
from pathlib import Path
from typing import Any, Optional

from pydantic import Field, ValidationError, validator

from pyutils import JSONExportable

from .errors import ConfigError
from .llm import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_MODEL,
    DEFAULT_TEMPERATURE,
    BackendConfig,
    LlmRequest,
)
from .prompt import DEFAULT_SCENARIO_COUNT
from .sampler import DEFAULT_K, DEFAULT_SEED, SamplerConfig, SamplingStrategy
from .trajectory import DEFAULT_MIN_COVERAGE, DEFAULT_SLOTS, Date, get_timezone
from .utils import Provenance, sha256_obj

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

CONFIG_FILE: str = "trajsem.ini"

CONFIG_FILES: list[Path] = [
    Path(".") / CONFIG_FILE,
    Path(__file__).parent / CONFIG_FILE,
    Path.home() / f".{CONFIG_FILE}",
    Path.home() / ".config" / CONFIG_FILE,
    Path.home() / ".config/trajsem/config",
]


def get_config_file() -> Path | None:
    """Get config file from the default locations"""
    for config_file in CONFIG_FILES:
        if config_file.is_file():
            return config_file
    return None


def read_config(filename: Path | str | None = None) -> ConfigParser:
    """Read the given INI file or the first one found in the default
    locations. No file at all gives an empty config"""
    config = ConfigParser()
    path: Path | None
    if filename is not None:
        if not (path := Path(filename)).is_file():
            raise ConfigError(f"config file not found: {filename}")
    else:
        path = get_config_file()
    if path is not None:
        try:
            config.read(path, encoding="utf8")
        except ConfigParserError as err:
            raise ConfigError(f"could not parse config file {path}: {err}") from err
        debug(f"read config file {path}")
    return config


###########################################
#
# PipelineConfig()
#
###########################################


class PipelineConfig(JSONExportable):
    # fmt: off
    pois            : Path | None       = Field(default=None)
    regions         : Path | None       = Field(default=None)
    taxonomy        : Path | None       = Field(default=None)
    stays           : Path | None       = Field(default=None)
    template        : Path | None       = Field(default=None)
    categories      : Path | None       = Field(default=None)
    out_dir         : Path              = Field(default=Path("out"))
    report_out      : Path | None       = Field(default=None)
    L               : int               = Field(default=DEFAULT_SLOTS)
    K               : int               = Field(default=DEFAULT_K)
    seed            : int               = Field(default=DEFAULT_SEED)
    min_coverage    : float             = Field(default=DEFAULT_MIN_COVERAGE)
    scenario_count  : int               = Field(default=DEFAULT_SCENARIO_COUNT)
    timezone        : str               = Field(default="UTC")
    date            : Date | None       = Field(default=None)
    sampling        : SamplingStrategy  = Field(default=SamplingStrategy.grouped)
    show_dominant   : bool              = Field(default=False)
    model_id        : str               = Field(default=DEFAULT_MODEL)
    temperature     : float             = Field(default=DEFAULT_TEMPERATURE)
    max_tokens      : int               = Field(default=DEFAULT_MAX_TOKENS)
    backend         : BackendConfig | None = Field(default=None)
    backend_error   : str | None        = Field(default=None)
    # fmt: on

    _exclude_defaults = False

    class Config:
        allow_mutation = False

    @validator("L")
    def check_L(cls, v: int) -> int:
        if v < 1 or 86400 % v != 0:
            raise ValueError(f"slots must divide the day into equal slots: {v}")
        return v

    @validator("min_coverage")
    def check_min_coverage(cls, v: float) -> float:
        if v < 0 or v > 1:
            raise ValueError(f"min_coverage must be within [0, 1]: {v}")
        return v

    @validator("timezone")
    def check_timezone(cls, v: str) -> str:
        try:
            get_timezone(v)
        except ConfigError as err:
            raise ValueError(str(err))
        return v

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(K=self.K, seed=self.seed, strategy=self.sampling)

    @property
    def report_file(self) -> Path:
        return self.out_dir / "report.jsonl" if self.report_out is None else self.report_out

    def out(self, filename: str) -> Path:
        return self.out_dir / filename

    def require(self, *fields: str) -> None:
        """Raise ConfigError unless the given path fields are set"""
        if len(missing := [f for f in fields if getattr(self, f) is None]) > 0:
            raise ConfigError(f"missing configuration: {', '.join(missing)}")

    def request(self, prompt: str) -> LlmRequest:
        return LlmRequest(
            model_id=self.model_id,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            prompt=prompt,
        )

    @property
    def config_hash(self) -> str:
        """sha256 of the settings that determine the artifacts. Output and
        cache locations and parallelism are left out"""
        snapshot: dict[str, Any] = self.dict(
            exclude={"out_dir", "report_out", "backend_error"}
        )
        snapshot = {k: str(v) if isinstance(v, Path) else v for k, v in snapshot.items()}
        if snapshot["date"] is not None:
            snapshot["date"] = snapshot["date"].isoformat()
        snapshot["sampling"] = str(snapshot["sampling"])
        if self.backend is not None:
            snapshot["backend"] = {
                "kind": str(self.backend.kind),
                "endpoint_url": self.backend.endpoint_url,
                "fixture_dir": None
                if self.backend.fixture_dir is None
                else str(self.backend.fixture_dir),
            }
        return sha256_obj(snapshot)

    def provenance(self, template_hash: str = "") -> Provenance:
        return Provenance(config_hash=self.config_hash, template_hash=template_hash)

    def require_backend(self) -> BackendConfig:
        """The LLM backend config. Raises ConfigError if it is incomplete"""
        if self.backend is None:
            raise ConfigError(self.backend_error or "no LLM backend configured")
        return self.backend

    @classmethod
    def from_args(cls, args: Namespace) -> "PipelineConfig":
        """Build config from parsed arguments. Raises ConfigError.

        An incomplete LLM backend is only an error for the stages that
        query it"""

        def _path(value: str | None) -> Path | None:
            return None if value is None or value == "" else Path(value)

        backend: BackendConfig | None = None
        backend_error: str | None = None
        if getattr(args, "backend", None) is not None:
            try:
                backend = BackendConfig(
                    kind=args.backend,
                    endpoint_url=args.endpoint,
                    auth_token_env=args.auth_token_env,
                    timeout_s=args.timeout,
                    max_retries=args.max_retries,
                    backoff_base_ms=args.backoff_base_ms,
                    parallelism=args.parallelism,
                    cache_dir=_path(args.cache_dir),
                    fixture_dir=_path(args.fixture_dir),
                    rate_limit=args.rate_limit,
                )
            except ValidationError as err:
                backend_error = f"LLM backend: {_errors(err)}"
                debug(backend_error)
        try:
            return cls(
                pois=_path(args.pois),
                regions=_path(args.regions),
                taxonomy=_path(args.taxonomy),
                stays=_path(args.stays),
                template=_path(args.template),
                categories=_path(args.categories),
                out_dir=Path(args.out_dir),
                report_out=_path(args.report_out),
                L=args.slots,
                K=args.k,
                seed=args.seed,
                min_coverage=args.min_coverage,
                scenario_count=args.scenarios,
                timezone=args.timezone,
                date=None if args.date is None else date.fromisoformat(args.date),
                sampling=args.sampling,
                show_dominant=args.show_dominant,
                model_id=getattr(args, "model", DEFAULT_MODEL),
                temperature=getattr(args, "temperature", DEFAULT_TEMPERATURE),
                max_tokens=getattr(args, "max_tokens", DEFAULT_MAX_TOKENS),
                backend=backend,
                backend_error=backend_error,
            )
        except ValidationError as err:
            raise ConfigError(_errors(err)) from err
        except ValueError as err:
            raise ConfigError(f"{err}") from err


def _errors(err: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in err.errors()
    )


###########################################
#
# argparse helpers
#
###########################################


def add_args_paths(parser: ArgumentParser, config: Optional[ConfigParser] = None) -> bool:
    """Helper to add argparse for input and output files"""
    try:
        debug("starting")
        PATHS: dict[str, str | None] = {
            "pois": None,
            "regions": None,
            "taxonomy": None,
            "stays": None,
            "template": None,
            "categories": None,
            "out_dir": "out",
            "report_out": None,
        }
        if config is not None and "PATHS" in config.sections():
            configPaths = config["PATHS"]
            for key in PATHS:
                PATHS[key] = configPaths.get(key, PATHS[key])

        parser.add_argument(
            "--pois", type=str, default=PATHS["pois"], metavar="CSV", help="POI CSV file"
        )
        parser.add_argument(
            "--regions",
            type=str,
            default=PATHS["regions"],
            metavar="GEOJSON",
            help="region GeoJSON FeatureCollection",
        )
        parser.add_argument(
            "--taxonomy",
            type=str,
            default=PATHS["taxonomy"],
            metavar="JSON",
            help="POI category taxonomy",
        )
        parser.add_argument(
            "--stays",
            type=str,
            default=PATHS["stays"],
            metavar="FILE",
            help="stay records, CSV or JSON lines",
        )
        parser.add_argument(
            "--template",
            type=str,
            default=PATHS["template"],
            metavar="FILE",
            help="prompt template (default: shipped template)",
        )
        parser.add_argument(
            "--categories",
            type=str,
            default=PATHS["categories"],
            metavar="FILE",
            help="occupational category list, one per line",
        )
        parser.add_argument(
            "--out-dir",
            type=str,
            default=PATHS["out_dir"],
            metavar="DIR",
            help=f"output directory (default: {PATHS['out_dir']})",
        )
        parser.add_argument(
            "--report-out",
            type=str,
            default=PATHS["report_out"],
            metavar="FILE",
            help="report file (default: OUT_DIR/report.jsonl)",
        )
        return True
    except Exception as err:
        error(f"{err}")
    return False


def add_args_pipeline(
    parser: ArgumentParser, config: Optional[ConfigParser] = None
) -> bool:
    """Helper to add argparse for pipeline parameters"""
    try:
        debug("starting")
        SLOTS: int = DEFAULT_SLOTS
        K: int = DEFAULT_K
        SEED: int = DEFAULT_SEED
        MIN_COVERAGE: float = DEFAULT_MIN_COVERAGE
        SCENARIOS: int = DEFAULT_SCENARIO_COUNT
        TIMEZONE: str = "UTC"
        DATE: str | None = None
        SAMPLING: str = SamplingStrategy.grouped.value
        SHOW_DOMINANT: bool = False

        if config is not None and "PIPELINE" in config.sections():
            configPipeline = config["PIPELINE"]
            SLOTS = configPipeline.getint("slots", SLOTS)
            K = configPipeline.getint("k", K)
            SEED = configPipeline.getint("seed", SEED)
            MIN_COVERAGE = configPipeline.getfloat("min_coverage", MIN_COVERAGE)
            SCENARIOS = configPipeline.getint("scenarios", SCENARIOS)
            TIMEZONE = configPipeline.get("timezone", TIMEZONE)
            DATE = configPipeline.get("date", DATE)
            SAMPLING = configPipeline.get("sampling", SAMPLING)
            SHOW_DOMINANT = configPipeline.getboolean("show_dominant", SHOW_DOMINANT)

        parser.add_argument(
            "--slots",
            type=int,
            default=SLOTS,
            metavar="L",
            help=f"time slots per day (default: {SLOTS})",
        )
        parser.add_argument(
            "--k",
            type=int,
            default=K,
            metavar="K",
            help=f"POI categories sampled per function group (default: {K})",
        )
        parser.add_argument(
            "--seed",
            type=int,
            default=SEED,
            metavar="SEED",
            help=f"sampling seed (default: {SEED})",
        )
        parser.add_argument(
            "--min-coverage",
            type=float,
            default=MIN_COVERAGE,
            metavar="FRACTION",
            help=f"minimum observed fraction of the day (default: {MIN_COVERAGE})",
        )
        parser.add_argument(
            "--scenarios",
            type=int,
            default=SCENARIOS,
            metavar="N",
            help=f"scenarios requested per trajectory (default: {SCENARIOS})",
        )
        parser.add_argument(
            "--timezone",
            type=str,
            default=TIMEZONE,
            metavar="TZ",
            help=f"local timezone of the stay data (default: {TIMEZONE})",
        )
        parser.add_argument(
            "--date",
            type=str,
            default=DATE,
            metavar="YYYY-MM-DD",
            help="process only this day",
        )
        parser.add_argument(
            "--sampling",
            type=str,
            choices=[s.value for s in SamplingStrategy],
            default=SAMPLING,
            help=f"POI sampling strategy (default: {SAMPLING})",
        )
        parser.add_argument(
            "--show-dominant",
            action="store_true",
            default=SHOW_DOMINANT,
            help="show the main POI category of each group in the chain text",
        )
        return True
    except Exception as err:
        error(f"{err}")
    return False
