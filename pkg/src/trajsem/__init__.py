from .errors import (
    TrajsemError as TrajsemError,
    ConfigError as ConfigError,
    DataError as DataError,
    EmptyRegion as EmptyRegion,
    EmptyGroup as EmptyGroup,
    EmptyDay as EmptyDay,
    TemplateError as TemplateError,
    ParseFailure as ParseFailure,
    BackendError as BackendError,
    TransientBackendError as TransientBackendError,
    BackendUnavailable as BackendUnavailable,
    FixtureMissing as FixtureMissing,
)
from .utils import Provenance as Provenance
from .poi import (
    FunctionGroup as FunctionGroup,
    CategoryEntry as CategoryEntry,
    CategoryTaxonomy as CategoryTaxonomy,
    PoiRecord as PoiRecord,
    LoadSummary as LoadSummary,
    load_taxonomy as load_taxonomy,
    load_pois as load_pois,
)
from .region import (
    Region as Region,
    RegionRegistry as RegionRegistry,
    load_regions as load_regions,
    assign_pois_to_regions as assign_pois_to_regions,
    haversine_km as haversine_km,
    region_distance as region_distance,
)
from .profile import (
    PoiHistogram as PoiHistogram,
    RegionProfile as RegionProfile,
    GroupedWeights as GroupedWeights,
    compute_document_frequency as compute_document_frequency,
    compute_tfidf as compute_tfidf,
    group_weights as group_weights,
    build_profiles as build_profiles,
    save_profiles as save_profiles,
    load_profiles as load_profiles,
)
from .sampler import (
    SamplerConfig as SamplerConfig,
    SamplingStrategy as SamplingStrategy,
    RegionSample as RegionSample,
    softmax_group as softmax_group,
    sample_group as sample_group,
    sample_region as sample_region,
)
from .trajectory import (
    StayRecord as StayRecord,
    SlottedTrajectory as SlottedTrajectory,
    TrajectoryCheck as TrajectoryCheck,
    slot_trajectory as slot_trajectory,
    validate_trajectory as validate_trajectory,
    load_stays as load_stays,
)
from .chain import (
    ChainRecord as ChainRecord,
    TrajectoryChain as TrajectoryChain,
    build_chain as build_chain,
    render_mobility_info as render_mobility_info,
)
from .prompt import (
    ActivityType as ActivityType,
    PromptTemplate as PromptTemplate,
    PromptConfig as PromptConfig,
    PromptBundle as PromptBundle,
    load_template as load_template,
    render_prompt as render_prompt,
)
from .llm import (
    BackendKind as BackendKind,
    BackendConfig as BackendConfig,
    LlmRequest as LlmRequest,
    LlmResponse as LlmResponse,
    LlmGateway as LlmGateway,
    add_args_llm as add_args_llm,
)
from .result import (
    InferenceScenario as InferenceScenario,
    InferenceResult as InferenceResult,
    ValidationReport as ValidationReport,
    ReportRecord as ReportRecord,
    parse_result as parse_result,
    validate_result as validate_result,
    emit_report as emit_report,
)
from .config import (
    PipelineConfig as PipelineConfig,
    get_config_file as get_config_file,
    read_config as read_config,
)

__all__ = [
    "chain",
    "cli",
    "config",
    "errors",
    "llm",
    "poi",
    "profile",
    "prompt",
    "region",
    "result",
    "sampler",
    "trajectory",
    "utils",
]
