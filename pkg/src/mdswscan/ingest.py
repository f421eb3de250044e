"""Streaming reader for registry dumps (zip archives of delimited text).

Members are read in name order and cut into blocks at record boundaries. A
newline is a record boundary when the number of quote characters before it in
the block is even, which is exact for RFC 4180 quoting and lets a block be
parsed on its own: by this process or by a worker. Neither ``"`` nor ``\\n``
can occur inside a multi-byte UTF-8 or GBK sequence, so cutting raw bytes is
safe for both encodings.

Rows whose field count differs from the header are skipped and tallied, never
repaired. Blank lines are not rows.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import operator
import time
import zipfile
from collections import Counter
from collections.abc import Iterator
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

from ._assets import asset_path
from .errors import ArchiveUnreadable, EncodingError, HeaderMismatch
from .records import RECORD_FIELDS, DeviceRecord
from .text import canonical

__all__ = [
    "Chunk",
    "EncodingPolicy",
    "IngestStats",
    "MemberContext",
    "RecordStream",
    "dataset_fingerprint",
    "SchemaMap",
    "iter_chunks",
    "iter_chunk_rows",
    "open_dataset",
]

BLOCK_SIZE = 4 << 20
TEXT_SUFFIXES = (".csv", ".tsv", ".txt")
_SNIFF = 1 << 16


class EncodingPolicy(str, enum.Enum):
    UTF8 = "utf8"
    GBK = "gbk"
    AUTO = "auto"


@dataclass(frozen=True)
class SchemaMap:
    column_bindings: dict[str, str]
    required: frozenset[str] = frozenset({"record_id"})

    def __post_init__(self) -> None:
        unknown = set(self.column_bindings) - set(RECORD_FIELDS)
        if unknown:
            raise ValueError(f"unknown record fields in schema: {sorted(unknown)}")
        missing = self.required - self.column_bindings.keys()
        if missing:
            raise ValueError(f"required fields not bound: {sorted(missing)}")
        headers = [canonical(h).strip() for h in self.column_bindings.values()]
        if len(headers) != len(set(headers)):
            raise ValueError("two fields are bound to the same column")

    @classmethod
    def load(cls, path: str | Path) -> SchemaMap:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(dict(doc["column_bindings"]), frozenset(doc.get("required", ["record_id"])))

    @classmethod
    def default(cls) -> SchemaMap:
        return cls.load(asset_path("default_schema.json"))


def default_headers() -> list[str]:
    with open(asset_path("default_schema.json"), encoding="utf-8") as fh:
        return list(json.load(fh)["headers"])


@dataclass
class IngestStats:
    rows_read: int = 0
    rows_emitted: int = 0
    rows_skipped_malformed: int = 0
    per_error_counts: Counter = field(default_factory=Counter)
    elapsed: float = 0.0

    def skip(self, reason: str) -> None:
        self.rows_read += 1
        self.rows_skipped_malformed += 1
        self.per_error_counts[reason] += 1

    def merge(self, other: IngestStats) -> None:
        self.rows_read += other.rows_read
        self.rows_emitted += other.rows_emitted
        self.rows_skipped_malformed += other.rows_skipped_malformed
        self.per_error_counts.update(other.per_error_counts)

    def to_doc(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_emitted": self.rows_emitted,
            "rows_skipped_malformed": self.rows_skipped_malformed,
            "per_error_counts": dict(sorted(self.per_error_counts.items())),
        }


@dataclass(frozen=True)
class MemberContext:
    """Everything a worker needs to turn a chunk of one member into rows."""

    name: str
    header: tuple[str, ...]
    encoding: str
    delimiter: str
    columns: dict[str, int]  # record field -> column index

    def getter(self, fields: tuple[str, ...]) -> Callable[[list[str]], tuple[str, ...]]:
        idx = [self.columns[f] for f in fields]
        if not idx:
            return lambda row: ()
        if len(idx) == 1:
            only = idx[0]
            return lambda row: (row[only],)
        return operator.itemgetter(*idx)

    def full_row(self, row: list[str]) -> list[str]:
        if len(row) < len(self.header):
            row = row[:-1] + row[-1].split(self.delimiter)
        return row

    def record(self, row: list[str], line: int) -> DeviceRecord:
        row = self.full_row(row)
        values = {f: row[i] for f, i in self.columns.items()}
        if not values.get("record_id", "").strip():
            values["record_id"] = f"{self.name}:{line}"
        extra = {self.header[i]: row[i] for i in self._unbound}
        return DeviceRecord(**values, extra=extra)

    @cached_property
    def _unbound(self) -> tuple[int, ...]:
        bound = set(self.columns.values())
        return tuple(i for i in range(len(self.header)) if i not in bound)


@dataclass(frozen=True)
class Chunk:
    member: MemberContext
    seq: int
    first_line: int
    data: bytes


def _cut(buf: bytes) -> int:
    """Index just past the last record boundary in ``buf``, or -1."""
    end = len(buf)
    nl = buf.rfind(b"\n", 0, end)
    if nl < 0:
        return -1
    quotes = buf.count(b'"', 0, nl)
    while quotes % 2:
        prev = buf.rfind(b"\n", 0, nl)
        if prev < 0:
            return -1
        quotes -= buf.count(b'"', prev, nl)
        nl = prev
    return nl + 1


def _detect(sample: bytes, policy: EncodingPolicy, member: str) -> str:
    if policy is EncodingPolicy.UTF8:
        return "utf-8"
    if policy is EncodingPolicy.GBK:
        return "gbk"
    for enc in ("utf-8", "gbk"):
        try:
            sample.decode(enc)
            return enc
        except UnicodeDecodeError as exc:
            # a sample may end mid-character; only an error before the tail counts
            if exc.start >= len(sample) - 3 and exc.reason.startswith("unexpected end"):
                return enc
    raise EncodingError(f"{member}: bytes are neither UTF-8 nor GBK")


def _decode(data: bytes, encoding: str, member: str, line: int) -> str:
    try:
        return data.decode(encoding)
    except UnicodeDecodeError as exc:
        bad_line = line + data.count(b"\n", 0, exc.start)
        raise EncodingError(f"{member}:{bad_line}: undecodable bytes under {encoding}") from None


def _members(path: Path) -> tuple[zipfile.ZipFile | None, list[str]]:
    if not path.exists():
        raise ArchiveUnreadable(f"{path}: no such file")
    if path.is_file() and path.suffix.lower() in TEXT_SUFFIXES and not zipfile.is_zipfile(path):
        return None, [path.name]
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise ArchiveUnreadable(f"{path}: {exc}") from None
    names = sorted(
        i.filename for i in zf.infolist()
        if not i.is_dir() and i.filename.lower().endswith(TEXT_SUFFIXES)
    )
    if not names:
        zf.close()
        raise ArchiveUnreadable(f"{path}: archive holds no delimited text member")
    return zf, names


def _bind(header: tuple[str, ...], schema: SchemaMap, member: str, needed: frozenset[str]) -> dict[str, int]:
    position: dict[str, int] = {}
    for i, h in enumerate(header):
        position.setdefault(h, i)
    columns = {}
    missing = []
    for fld, col in schema.column_bindings.items():
        key = canonical(col).strip()
        if key in position:
            columns[fld] = position[key]
        elif fld in schema.required or fld in needed:
            missing.append(f"{fld} <- {col!r}")
    if missing:
        raise HeaderMismatch(f"{member}: header lacks required column(s): {'; '.join(missing)}")
    return columns


def iter_chunks(
    path: str | Path,
    schema: SchemaMap,
    encoding: EncodingPolicy | str = EncodingPolicy.AUTO,
    delimiter: str = ",",
    needed: frozenset[str] = frozenset(),
    block_size: int = BLOCK_SIZE,
) -> Iterator[Chunk]:
    """Yield record-aligned chunks of every member, in order."""
    policy = EncodingPolicy(encoding)
    path = Path(path)
    zf, names = _members(path)
    seq = 0
    try:
        for name in names:
            try:
                fh = zf.open(name) if zf is not None else open(path, "rb")
            except (zipfile.BadZipFile, OSError, RuntimeError) as exc:
                raise ArchiveUnreadable(f"{path}!{name}: {exc}") from None
            with fh:
                buf = b""
                ctx = None
                line = 1
                eof = False
                while not eof or buf:
                    cut = -1 if eof or len(buf) < block_size else _cut(buf)
                    if cut < 0 and not eof:
                        try:
                            more = fh.read(block_size)
                        except (zipfile.BadZipFile, OSError, EOFError) as exc:
                            raise ArchiveUnreadable(f"{path}!{name}: {exc}") from None
                        eof = not more
                        buf += more
                        continue
                    if eof:
                        cut = len(buf)
                    data, buf = buf[:cut], buf[cut:]
                    if ctx is None:
                        if data.startswith(b"\xef\xbb\xbf"):
                            data = data[3:]
                        enc = _detect(data[:_SNIFF], policy, name)
                        head_end = _cut_first(data)
                        text = _decode(data[:head_end], enc, name, 1)
                        rows = list(csv.reader(io.StringIO(text), delimiter=delimiter))
                        if not rows:
                            raise HeaderMismatch(f"{name}: missing header row")
                        header = tuple(canonical(h).strip() for h in rows[0])
                        ctx = MemberContext(name, header, enc, delimiter, _bind(header, schema, name, needed))
                        line += data.count(b"\n", 0, head_end)
                        data = data[head_end:]
                    if data:
                        yield Chunk(ctx, seq, line, data)
                        seq += 1
                        line += data.count(b"\n")
                if ctx is None:
                    raise HeaderMismatch(f"{name}: empty member, no header row")
    finally:
        if zf is not None:
            zf.close()


def _cut_first(data: bytes) -> int:
    """End of the first record (the header)."""
    start = 0
    quotes = 0
    while True:
        nl = data.find(b"\n", start)
        if nl < 0:
            return len(data)
        quotes += data.count(b'"', start, nl)
        if quotes % 2 == 0:
            return nl + 1
        start = nl + 1


def iter_chunk_rows(
    chunk: Chunk, stats: IngestStats, upto: int | None = None
) -> Iterator[tuple[int, list[str]]]:
    """Yield ``(line, row)`` for well-formed rows; tally the rest in ``stats``.

    Lines without a quote character are split directly; anything quoted,
    including records spanning several lines, goes through :mod:`csv`. With
    ``upto``, quote-free lines are split only after their first ``upto``
    fields and the rest stays joined in the last element; pass such a row
    through :meth:`MemberContext.full_row` before using later columns.
    """
    ctx = chunk.member
    text = _decode(chunk.data, ctx.encoding, ctx.name, chunk.first_line)
    d = ctx.delimiter
    width = len(ctx.header)
    lines = text.split("\n")
    if lines and not lines[-1]:
        lines.pop()
    n = len(lines)
    base = chunk.first_line
    good = bad = 0
    i = 0
    try:
        while i < n:
            ln = lines[i]
            j = i
            if '"' not in ln:
                body = ln[:-1] if ln.endswith("\r") else ln
                if "\r" not in body:
                    start = base + i
                    i += 1
                    if not body:
                        continue
                    if upto is None:
                        row = body.split(d)
                        ok = len(row) == width
                    else:
                        ok = body.count(d) == width - 1
                        row = body.split(d, upto) if ok else []
                    if ok:
                        good += 1
                        yield start, row
                    else:
                        bad += 1
                    continue
            else:
                quotes = ln.count('"')
                while quotes % 2 and j + 1 < n:
                    j += 1
                    quotes += lines[j].count('"')
            block = "\n".join(lines[i:j + 1]) + "\n"
            start = base + i
            i = j + 1
            yield from _csv_rows(block, start, d, width, stats)
    finally:
        # quote-free rows are tallied here in bulk; csv-parsed rows tally themselves
        stats.rows_read += good + bad
        stats.rows_emitted += good
        stats.rows_skipped_malformed += bad
        if bad:
            stats.per_error_counts["field_count"] += bad


def _csv_rows(block: str, start: int, d: str, width: int, stats: IngestStats) -> Iterator[tuple[int, list[str]]]:
    reader = csv.reader(io.StringIO(block, newline=""), delimiter=d, strict=True)
    prev = 0
    while True:
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error:
            stats.skip("csv_syntax")
            prev = reader.line_num
            continue
        line = start + prev
        prev = reader.line_num
        if not row:
            continue
        if len(row) != width:
            stats.skip("field_count")
            continue
        stats.rows_read += 1
        stats.rows_emitted += 1
        yield line, row


class RecordStream:
    """Lazy :class:`DeviceRecord` stream over an archive; ``stats`` fills as it is consumed."""

    def __init__(
        self,
        path: str | Path,
        schema: SchemaMap | None = None,
        encoding: EncodingPolicy | str = EncodingPolicy.AUTO,
        delimiter: str = ",",
    ) -> None:
        self.path = Path(path)
        self.schema = schema or SchemaMap.default()
        self.encoding = EncodingPolicy(encoding)
        self.delimiter = delimiter
        self.stats = IngestStats()
        zf, _ = _members(self.path)
        if zf is not None:
            zf.close()

    def __iter__(self) -> Iterator[DeviceRecord]:
        self.stats = stats = IngestStats()
        t0 = time.perf_counter()
        for chunk in iter_chunks(self.path, self.schema, self.encoding, self.delimiter):
            ctx = chunk.member
            for line, row in iter_chunk_rows(chunk, stats):
                yield ctx.record(row, line)
        stats.elapsed = time.perf_counter() - t0


def open_dataset(
    path: str | Path,
    schema: SchemaMap | None = None,
    encoding_policy: EncodingPolicy | str = EncodingPolicy.AUTO,
    delimiter: str = ",",
) -> RecordStream:
    return RecordStream(path, schema, encoding_policy, delimiter)


def dataset_fingerprint(path: str | Path) -> str:
    """sha256 over member names, CRCs and sizes (zip), or over the bytes (plain file)."""
    path = Path(path)
    h = hashlib.sha256()
    zf, names = _members(path)
    if zf is None:
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
        return h.hexdigest()
    with zf:
        for name in names:
            info = zf.getinfo(name)
            h.update(f"{name}\0{info.CRC:08x}\0{info.file_size}\n".encode())
    return h.hexdigest()
