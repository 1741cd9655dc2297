"""Resource vectors and similarity-based matching.

A resource is described by six non-negative numbers in fixed order: hourly
price, MIPS, storage price ($/GB), RAM (GB), bandwidth (Mbps) and CPU cores.
Requests and offers are compared by the cosine of the angle between their
vectors; the price enters as its decimal value, not in base units.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

from smartson.money import Money, MoneyError

TRACE_HEADER = ("title", "wei_per_hr", "mips", "usd_per_gb", "ram_gb", "bw_mbps", "cpu_cores")


class ZeroVector(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ResourceSpec:
    title: str
    price: Money
    mips: float
    storage_price: float
    ram_gb: float
    bandwidth_mbps: float
    cpu_cores: float

    def __post_init__(self) -> None:
        for name in ("mips", "storage_price", "ram_gb", "bandwidth_mbps", "cpu_cores"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{self.title}: {name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)
        if not any(self.vector):
            raise ZeroVector(f"{self.title}: all components are zero")

    @property
    def vector(self) -> tuple[float, ...]:
        return (float(self.price), self.mips, self.storage_price, self.ram_gb,
                self.bandwidth_mbps, self.cpu_cores)

    @classmethod
    def from_vector(cls, title: str, values: Sequence[float | str]) -> ResourceSpec:
        if len(values) != 6:
            raise ValueError(f"expected 6 components, got {len(values)}")
        price, *rest = values
        return cls(title, Money.parse(str(price)), *(float(v) for v in rest))

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "price": self.price.short(),
            "mips": self.mips,
            "storage_price": self.storage_price,
            "ram_gb": self.ram_gb,
            "bandwidth_mbps": self.bandwidth_mbps,
            "cpu_cores": self.cpu_cores,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ResourceSpec:
        return cls(data["title"], Money.parse(data["price"]), data["mips"],
                   data["storage_price"], data["ram_gb"], data["bandwidth_mbps"],
                   data["cpu_cores"])


class Match(NamedTuple):
    resource: ResourceSpec
    score: float


class Catalogue:
    """A provider's resource pool: an ordered multiset."""

    def __init__(self, entries: Iterable[ResourceSpec] = ()):
        self._entries = list(entries)

    def __iter__(self) -> Iterator[ResourceSpec]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, item: ResourceSpec) -> bool:
        return item in self._entries

    def __repr__(self) -> str:
        return f"Catalogue({[e.title for e in self._entries]})"

    def remove(self, resource: ResourceSpec) -> ResourceSpec | None:
        """Take out one instance of ``resource``; None if there is none."""
        try:
            index = self._entries.index(resource)
        except ValueError:
            return None
        return self._entries.pop(index)

    def put(self, resource: ResourceSpec) -> None:
        self._entries.append(resource)

    def titles(self) -> list[str]:
        return [e.title for e in self._entries]


def _as_vector(value: ResourceSpec | Sequence[float]) -> Sequence[float]:
    return value.vector if isinstance(value, ResourceSpec) else value


def cosine_similarity(t: ResourceSpec | Sequence[float], e: ResourceSpec | Sequence[float]) -> float:
    a = _as_vector(t)
    b = _as_vector(e)
    if len(a) != len(b):
        raise ValueError("vectors differ in length")
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    if norm_a == 0 or norm_b == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    dot = sum(x * y for x, y in zip(a, b))
    # rounding can push parallel vectors to 1 + 2**-52
    return min(1.0, dot / (norm_a * norm_b))


def score_catalogue(request: ResourceSpec, catalogue: Iterable[ResourceSpec]) -> list[Match]:
    return [Match(entry, cosine_similarity(request, entry)) for entry in catalogue]


def best_match(request: ResourceSpec, catalogue: Iterable[ResourceSpec]) -> Match | None:
    """Highest-scoring entry; on equal scores the earliest entry wins.

    Returns None when the catalogue is empty.
    """
    best: Match | None = None
    for match in score_catalogue(request, catalogue):
        if best is None or match.score > best.score:
            best = match
    return best


class Proposal(NamedTuple):
    provider: str
    score: float
    resource: ResourceSpec


def select_best_proposal(proposals: Iterable[Proposal]) -> Proposal | None:
    """Pick the highest score; ties keep the proposal that arrived first."""
    best: Proposal | None = None
    for proposal in proposals:
        if best is None or proposal.score > best.score:
            best = proposal
    return best


def parse_trace(text: str, source: str = "<trace>") -> list[ResourceSpec]:
    reader = csv.reader(io.StringIO(text))
    rows: list[ResourceSpec] = []
    header_seen = False
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if not header_seen:
            if tuple(cells) != TRACE_HEADER:
                raise ParseError(f"{source}: unexpected header {cells}", line_no)
            header_seen = True
            continue
        if len(cells) != len(TRACE_HEADER):
            raise ParseError(f"{source}: expected {len(TRACE_HEADER)} columns, got {len(cells)}",
                             line_no)
        title, price, *numbers = cells
        try:
            rows.append(ResourceSpec(title, Money.parse(price), *(float(n) for n in numbers)))
        except (MoneyError, ValueError) as exc:
            raise ParseError(f"{source}: {exc}", line_no) from exc
    if not header_seen:
        raise ParseError(f"{source}: empty trace", 1)
    return rows


def load_trace(path: str | Path | None = None) -> list[ResourceSpec]:
    """Read a trace CSV; with no path, the bundled instance catalogue."""
    if path is None:
        text = resources.files("smartson").joinpath("data/trace.csv").read_text()
        return parse_trace(text, "trace.csv")
    path = Path(path)
    return parse_trace(path.read_text(), str(path))


def trace_index(trace: Iterable[ResourceSpec]) -> dict[str, ResourceSpec]:
    return {r.title: r for r in trace}
