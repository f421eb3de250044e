from __future__ import annotations

import csv
import os
from functools import lru_cache
from importlib.resources import files
from pathlib import Path

ASSET_DIR_ENV = "MDSWSCAN_ASSET_DIR"


def asset_root() -> Path:
    """Directory holding the shipped data files.

    ``$MDSWSCAN_ASSET_DIR`` overrides the packaged copy, which lets a research
    group point every command at its own lexicons without passing flags.
    """
    override = os.environ.get(ASSET_DIR_ENV)
    if override:
        return Path(override)
    return Path(str(files("mdswscan") / "assets"))


def asset_path(*parts: str) -> Path:
    return asset_root().joinpath(*parts)


@lru_cache(maxsize=None)
def read_table(path: str) -> tuple[dict[str, str], ...]:
    with open(path, encoding="utf-8", newline="") as fh:
        return tuple(
            row for row in csv.DictReader(line for line in fh if not line.startswith("#"))
        )
