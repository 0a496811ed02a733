"""Place records, label ingestion and the evaluation probe sets."""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .text import normalize

CATEGORY_CATALOGUE = (
    "Restaurant",
    "Cafe",
    "Bar",
    "Shopping",
    "Grocery",
    "Hotel",
    "Museum",
    "Park",
    "Gym",
    "Bank",
    "Pharmacy",
    "Hospital",
    "School",
    "Church",
    "Salon",
    "Auto",
    "Theater",
    "Office",
    "Transit",
)


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class ValidationError(DataError):
    pass


@dataclass(frozen=True)
class Place:
    id: str
    name: str
    address: str | None = None
    coordinate: tuple[float, float] | None = None
    categories: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError(f"place id must be a non-empty string, got {self.id!r}")
        if self.coordinate is not None:
            lat, lon = self.coordinate
            if not (math.isfinite(lat) and math.isfinite(lon)):
                raise ValidationError(f"place {self.id}: non-finite coordinate")
            if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                raise ValidationError(
                    f"place {self.id}: coordinate ({lat}, {lon}) out of range"
                )
        object.__setattr__(self, "categories", frozenset(self.categories))

    @property
    def usable(self) -> bool:
        """False when the name normalizes to nothing."""
        return bool(normalize(self.name))

    def to_json(self) -> dict:
        lat, lon = self.coordinate if self.coordinate is not None else (None, None)
        return {
            "id": self.id,
            "name": self.name,
            "address": self.address,
            "lat": lat,
            "lon": lon,
            "categories": sorted(self.categories),
        }


@dataclass(frozen=True, order=True)
class LabeledPair:
    a: str
    b: str
    y: int
    source: str

    def __post_init__(self):
        if self.a == self.b:
            raise ValidationError(f"self-pair ({self.a}, {self.b})")
        if self.y not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.y!r}")

    @classmethod
    def canonical(cls, a: str, b: str, y: int, source: str) -> "LabeledPair":
        if b < a:
            a, b = b, a
        return cls(a, b, y, source)

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b)


def _place_from_json(obj: dict) -> Place:
    lat, lon = obj.get("lat"), obj.get("lon")
    if (lat is None) != (lon is None):
        raise ValidationError(f"place {obj.get('id')}: lat and lon must both be set or both null")
    coordinate = None if lat is None else (float(lat), float(lon))
    name = obj.get("name")
    if not isinstance(name, str):
        raise ValidationError(f"place {obj.get('id')}: name must be a string")
    address = obj.get("address")
    if address is not None and not isinstance(address, str):
        raise ValidationError(f"place {obj.get('id')}: address must be a string or null")
    return Place(
        id=obj.get("id"),
        name=name,
        address=address,
        coordinate=coordinate,
        categories=frozenset(obj.get("categories") or ()),
    )


def load_places(path) -> list[Place]:
    places: list[Place] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"malformed JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            try:
                place = _place_from_json(obj)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if place.id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate place id {place.id!r}")
            seen.add(place.id)
            places.append(place)
    return places


def write_places(places: Iterable[Place], path) -> None:
    lines = [json.dumps(p.to_json(), ensure_ascii=False, sort_keys=False) for p in places]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _id_set(places) -> set[str]:
    ids = set()
    for p in places:
        ids.add(p.id if isinstance(p, Place) else p)
    return ids


def load_labels(path, places) -> list[LabeledPair]:
    """Read ``id_a  id_b  y  source`` rows.

    Pairs are stored in canonical order and exact repeats are dropped.
    Conflicting rows for the same pair are all kept.
    """
    known = _id_set(places)
    out: list[LabeledPair] = []
    seen: set[LabeledPair] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(path, lineno, f"expected 4 tab-separated columns, got {len(cols)}")
            a, b, y_raw, source = (c.strip() for c in cols)
            if y_raw not in ("0", "1"):
                raise ValidationError(f"{path}:{lineno}: label must be 0 or 1, got {y_raw!r}")
            for pid in (a, b):
                if pid not in known:
                    raise ValidationError(f"{path}:{lineno}: unknown place id {pid!r}")
            try:
                pair = LabeledPair.canonical(a, b, int(y_raw), source)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if pair not in seen:
                seen.add(pair)
                out.append(pair)
    return out


def write_labels(labels: Iterable[LabeledPair], path) -> None:
    rows = ["# id_a\tid_b\ty\tsource"]
    rows += [f"{l.a}\t{l.b}\t{l.y}\t{l.source}" for l in labels]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_ground_truth(path) -> dict[str, str]:
    truth: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 2:
                raise ParseError(path, lineno, "expected 'id<TAB>true_id'")
            truth[cols[0]] = cols[1]
    return truth


def write_ground_truth(truth: Mapping[str, str], path) -> None:
    rows = ["# id\ttrue_id"] + [f"{pid}\t{tid}" for pid, tid in truth.items()]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class EvalSets:
    omega: frozenset[str]
    theta: frozenset[str]
    dups: dict[str, frozenset[str]]
    nondups: dict[str, frozenset[str]]

    def ids(self) -> set[str]:
        out = set(self.omega) | set(self.theta)
        for group in (self.dups, self.nondups):
            for a, members in group.items():
                out.add(a)
                out |= members
        return out


def build_eval_sets(labels: Iterable[LabeledPair]) -> EvalSets:
    """Probe sets from labeled pairs; each pair counts for both endpoints.

    A pair labeled both ways (by different sources) is resolved by majority
    vote and dropped on a tie, so a place never lands in both of a probe's sets.
    """
    votes: dict[tuple[str, str], Counter] = defaultdict(Counter)
    for l in labels:
        votes[l.key][l.y] += 1
    dups: dict[str, set[str]] = defaultdict(set)
    nondups: dict[str, set[str]] = defaultdict(set)
    for (a, b), count in votes.items():
        if count[1] == count[0]:
            continue
        target = dups if count[1] > count[0] else nondups
        target[a].add(b)
        target[b].add(a)
    theta = frozenset(a for a, s in dups.items() if s)
    omega = frozenset(a for a in theta if nondups.get(a))
    return EvalSets(
        omega=omega,
        theta=theta,
        dups={a: frozenset(s) for a, s in dups.items()},
        nondups={a: frozenset(s) for a, s in nondups.items()},
    )
