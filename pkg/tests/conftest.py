from __future__ import annotations

from pathlib import Path

import pytest

from mdswscan._assets import asset_path
from mdswscan.annotate import AnnotationLexicons
from mdswscan.pipeline import load_pipeline

FIXTURES = asset_path("fixtures")
FIXTURE20 = FIXTURES / "fixture20.zip"
FIXTURE20_KEY = FIXTURES / "fixture20.answer_key.tsv"
FIXTURE20_EXCLUSIONS = FIXTURES / "fixture20.exclusions.csv"


@pytest.fixture(scope="session")
def paper_pipeline():
    return load_pipeline("paper_default")


@pytest.fixture(scope="session")
def lexicons():
    return AnnotationLexicons.load(asset_path("paper_default"))


def write_csv_zip(path: Path, members: dict[str, str], encoding: str = "utf-8") -> Path:
    import zipfile

    with zipfile.ZipFile(path, "w") as zf:
        for name, text in members.items():
            zf.writestr(name, text.encode(encoding))
    return path


def write_dump(path: Path, rows: list[dict[str, str]]) -> Path:
    """A dump-shaped archive in the default 2024 layout; ``rows`` use record field names."""
    import csv
    import io
    import json

    schema = json.loads(asset_path("default_schema.json").read_text(encoding="utf-8"))
    headers, bind = schema["headers"], schema["column_bindings"]
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    by_header = {h: f for f, h in bind.items()}
    for row in rows:
        w.writerow([row.get(by_header.get(h, ""), "") for h in headers])
    return write_csv_zip(path, {"UDID_FULL_RELEASE_part001.csv": buf.getvalue()})
