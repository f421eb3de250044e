"""Counting over annotated devices: cross-tabs, geography, distributions.

All aggregations are plain integer folds, so they are order-invariant and
merge safely. Percentages are rounded half-up to one decimal and always come
with the denominator they were computed over.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .annotate import DIMENSIONS, UNLABELED, AnnotatedDevice
from .errors import UnknownDimension
from .records import DeviceClass, Origin, region_codes

__all__ = [
    "CrossTab",
    "Distribution",
    "DistributionRow",
    "GeoRollup",
    "crosstab",
    "distribution",
    "geo_rollup",
    "percent",
]

Cell = tuple[str, ...]


def _check_dims(dims: Iterable[str]) -> tuple[str, ...]:
    dims = tuple(dims)
    for d in dims:
        if d not in DIMENSIONS:
            raise UnknownDimension(d)
    if len(set(dims)) != len(dims):
        raise ValueError(f"repeated dimension in {dims}")
    return dims


@dataclass(frozen=True)
class CrossTab:
    dims: tuple[str, ...]
    cells: dict[Cell, int]
    total: int

    def __post_init__(self) -> None:
        if sum(self.cells.values()) != self.total:
            raise ValueError("cross-tab cells do not sum to the total")

    @classmethod
    def from_counter(cls, dims: Sequence[str], counts: Mapping[Cell, int]) -> CrossTab:
        cells = {k: counts[k] for k in sorted(counts) if counts[k]}
        return cls(tuple(dims), cells, sum(cells.values()))

    def marginalize(self, dim: str) -> CrossTab:
        """Sum out ``dim``."""
        if dim not in self.dims:
            raise UnknownDimension(dim)
        i = self.dims.index(dim)
        out: Counter[Cell] = Counter()
        for key, n in self.cells.items():
            out[key[:i] + key[i + 1:]] += n
        return CrossTab.from_counter(self.dims[:i] + self.dims[i + 1:], out)

    def merge(self, other: CrossTab) -> CrossTab:
        if other.dims != self.dims:
            raise ValueError("cannot merge cross-tabs over different dimensions")
        return CrossTab.from_counter(self.dims, Counter(self.cells) + Counter(other.cells))

    def rows(self) -> list[tuple]:
        return [(*k, n) for k, n in self.cells.items()]


def crosstab(devices: Iterable[AnnotatedDevice], dims: Sequence[str]) -> CrossTab:
    dims = _check_dims(dims)
    counts = Counter(tuple(d.value(x) for x in dims) for d in devices)
    return CrossTab.from_counter(dims, counts)


@dataclass(frozen=True)
class GeoRollup:
    """Non-foreign devices by region; domestic class III goes to ``National``,
    SAR devices to ``Xu``. Devices with no usable origin count as undetermined.
    """

    regions: dict[str, int]
    undetermined: int
    excluded_imported: int

    @property
    def national_class3_bucket(self) -> int:
        return self.regions.get("National", 0)

    @property
    def total(self) -> int:
        return sum(self.regions.values()) + self.undetermined

    def by_code(self) -> dict[str, int]:
        """Counts keyed by the standard region code (unknown names keep their name)."""
        codes = region_codes()
        out: Counter[str] = Counter()
        for name, n in self.regions.items():
            out[codes.get(name, name)] += n
        return dict(sorted(out.items()))


def _bucket(d: AnnotatedDevice) -> str:
    if d.origin is Origin.SAR:
        return "Xu"
    if d.device_class is DeviceClass.III:
        return "National"
    return d.region or "Undetermined"


def geo_rollup(devices: Iterable[AnnotatedDevice]) -> GeoRollup:
    regions: Counter[str] = Counter()
    undetermined = imported = 0
    for d in devices:
        if d.origin is None:
            undetermined += 1
        elif d.origin is Origin.IMPORTED:
            imported += 1
        else:
            regions[_bucket(d)] += 1
    return GeoRollup(dict(sorted(regions.items())), undetermined, imported)


_TENTH = Decimal("0.1")


def percent(count: int, denominator: int) -> Decimal:
    if denominator <= 0:
        return Decimal("0.0")
    return (Decimal(100 * count) / Decimal(denominator)).quantize(_TENTH, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class DistributionRow:
    value: str
    count: int
    percentage: Decimal


@dataclass(frozen=True)
class Distribution:
    dim: str
    rows: tuple[DistributionRow, ...]
    denominator: int
    unlabeled: int = 0
    groups: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def as_dict(self) -> dict[str, DistributionRow]:
        return {r.value: r for r in self.rows}


def distribution(
    devices: Iterable[AnnotatedDevice],
    dim: str,
    groups: Mapping[str, Iterable[str]] | None = None,
) -> Distribution:
    """Share of each value of ``dim`` among devices that have a known value.

    ``groups`` merges several labels into one reported label, e.g. two
    specialties that a report shows jointly.
    """
    (dim,) = _check_dims([dim])
    merged = {m: g for g, members in (groups or {}).items() for m in members}
    missing = UNLABELED.get(dim)
    counts: Counter[str] = Counter()
    unlabeled = 0
    for d in devices:
        v = d.value(dim)
        if v == missing:
            unlabeled += 1
        else:
            counts[merged.get(v, v)] += 1
    denominator = sum(counts.values())
    rows = tuple(
        DistributionRow(v, n, percent(n, denominator))
        for v, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    )
    used = {g: tuple(sorted(m)) for g, m in (groups or {}).items()}
    return Distribution(dim, rows, denominator, unlabeled, used)
