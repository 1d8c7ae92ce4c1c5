"""trajsem.utils

Hashing and JSON-lines helpers shared by the pipeline stages
"""

import json
import logging
from hashlib import sha256
from pathlib import Path
from typing import Any, AsyncGenerator, Iterable, Type, TypeVar

import aiofiles
from pydantic import BaseModel, Field

from pyutils import JSONExportable

from .errors import DataError

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

M = TypeVar("M", bound=BaseModel)


def sha256_text(text: str) -> str:
    """Hex sha256 digest of an UTF-8 string"""
    return sha256(text.encode("utf8")).hexdigest()


def sha256_obj(obj: Any) -> str:
    """Hex sha256 digest of the canonical JSON form of obj"""
    return sha256_text(json.dumps(obj, sort_keys=True, separators=(",", ":")))


class Provenance(JSONExportable):
    """Hashes identifying the configuration and template that produced a file"""

    config_hash: str = Field(default="")
    template_hash: str = Field(default="")

    class Config:
        allow_mutation = False
        allow_population_by_field_name = True

    def header(self) -> str:
        """Provenance as a comment line for text artifacts"""
        return f"# config_hash={self.config_hash} template_hash={self.template_hash}"


async def write_jsonl(filename: Path | str, objs: Iterable[BaseModel | dict[str, Any]]) -> int:
    """Write objects to a JSON-lines file. Returns number of lines written"""
    n: int = 0
    async with aiofiles.open(filename, mode="w", encoding="utf8") as f:
        for obj in objs:
            if isinstance(obj, BaseModel):
                line = obj.json(by_alias=False, exclude_none=False)
            else:
                line = json.dumps(obj, sort_keys=True, ensure_ascii=False)
            await f.write(line + "\n")
            n += 1
    debug("wrote %d lines to %s", n, str(filename))
    return n


async def read_jsonl(filename: Path | str, model: Type[M]) -> AsyncGenerator[M, None]:
    """Read a JSON-lines file as model instances. Empty lines are skipped"""
    async with aiofiles.open(filename, mode="r", encoding="utf8") as f:
        lineno: int = 0
        async for line in f:
            lineno += 1
            if len(line.strip()) == 0:
                continue
            try:
                yield model.parse_raw(line)
            except ValueError as err:
                raise DataError(f"{filename}: line {lineno}: {err}") from err
