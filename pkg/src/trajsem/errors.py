"""trajsem.errors

Exceptions raised by the trajsem pipeline. The CLI maps the three branches
(ConfigError, DataError, BackendError) to exit codes 1, 2 and 3.
"""


class TrajsemError(Exception):
    """Base class for trajsem errors"""


class ConfigError(TrajsemError):
    """Invalid or incomplete configuration"""


###########################################
#
# Data errors
#
###########################################


class DataError(TrajsemError):
    """Input data is missing, malformed or inconsistent"""


class EmptyRegion(DataError):
    """Region has no POIs"""

    def __init__(self, region_id: int):
        self.region_id: int = region_id
        super().__init__(f"region {region_id} has no POIs")


class EmptyGroup(DataError):
    """Function group has no categories to sample from"""


class EmptyDay(DataError):
    """No stay overlaps the requested day"""


class TemplateError(DataError):
    """Prompt template is invalid"""


class ParseFailure(DataError):
    """LLM output did not contain a single recognizable scenario"""

    def __init__(self, msg: str, raw_text: str):
        self.raw_text: str = raw_text
        super().__init__(msg)


###########################################
#
# Backend errors
#
###########################################


class BackendError(TrajsemError):
    """LLM backend failed"""


class TransientBackendError(BackendError):
    """Retryable failure: timeout, HTTP 429 or 5xx"""


class BackendUnavailable(BackendError):
    """Retries exhausted"""


class FixtureMissing(BackendError):
    """Replay backend has no fixture for the request key"""

    def __init__(self, request_key: str):
        self.request_key: str = request_key
        super().__init__(f"no replay fixture for request_key={request_key}")
