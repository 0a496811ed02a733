"""Synthetic place graph with known duplicates and noisy multi-source labels.

True places live on streets inside cities. Each gets a canonical page plus a
Poisson number of corrupted duplicate pages. Each label source draws its own
sample of positive pairs (same true place) and negative pairs, most of them
near misses from the same grid bin, and flips each label at its own rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .graph import grid_bin
from .places import LabeledPair, Place

BUSINESS_WORDS = (
    "golden", "blue", "happy", "royal", "little", "green", "silver", "lucky", "sunny", "urban",
    "corner", "village", "harbor", "capital", "liberty", "empire", "garden", "maple", "oak", "cedar",
    "pioneer", "summit", "crown", "metro", "union", "central", "eastside", "westside", "northern",
    "southern", "phoenix", "dragon", "lotus", "jade", "tiger", "eagle", "falcon", "star", "moon",
    "sunset", "ocean", "river", "lake", "mountain", "valley", "prairie", "coastal", "atlas", "apex",
    "nova", "vista", "bella", "casa", "mama", "papa", "uncle", "grand", "classic", "modern",
    "fresh", "smart", "prime", "elite", "magic", "wonder", "dream", "joy", "bliss", "zen",
    "spice", "sugar", "honey", "pepper", "olive", "basil", "mint", "cherry", "peach", "plum",
)

# type word -> categories
TYPE_WORDS = {
    "cafe": ("Cafe", "Restaurant"),
    "coffee": ("Cafe",),
    "deli": ("Restaurant", "Grocery"),
    "pizza": ("Restaurant",),
    "grill": ("Restaurant",),
    "bakery": ("Cafe", "Grocery"),
    "diner": ("Restaurant",),
    "restaurant": ("Restaurant",),
    "bar": ("Bar",),
    "pub": ("Bar", "Restaurant"),
    "market": ("Grocery", "Shopping"),
    "boutique": ("Shopping",),
    "outlet": ("Shopping",),
    "hotel": ("Hotel",),
    "inn": ("Hotel",),
    "museum": ("Museum",),
    "gallery": ("Museum", "Shopping"),
    "park": ("Park",),
    "plaza": ("Shopping", "Park"),
    "square": ("Park",),
    "fitness": ("Gym",),
    "bank": ("Bank", "Office"),
    "pharmacy": ("Pharmacy", "Hospital"),
    "clinic": ("Hospital",),
    "academy": ("School",),
    "church": ("Church",),
    "salon": ("Salon",),
    "garage": ("Auto",),
    "theater": ("Theater",),
    "center": ("Office", "Shopping"),
    "station": ("Transit",),
}

STREET_NAMES = (
    "main", "oak", "pine", "elm", "washington", "lincoln", "park", "lake", "hill", "church",
    "market", "broad", "spring", "ridge", "mill", "river", "union", "franklin", "jefferson", "madison",
    "jackson", "highland", "forest", "cherry", "walnut", "willow", "chestnut", "center", "sunset", "meadow",
    "grove", "harbor", "bay", "cedar", "spruce", "birch", "college", "prospect", "liberty", "orchard",
)

STREET_TYPES = ("street", "avenue", "boulevard", "road", "lane", "drive", "place", "court")

ABBREVIATIONS = {
    "street": "st",
    "avenue": "ave",
    "boulevard": "blvd",
    "road": "rd",
    "lane": "ln",
    "drive": "dr",
    "place": "pl",
    "court": "ct",
    "center": "ctr",
    "restaurant": "rest",
    "saint": "st",
    "market": "mkt",
    "station": "sta",
    "academy": "acad",
}

CITIES = (
    "new york", "springfield", "riverside", "fairview", "san jose", "oakland",
    "madison", "georgetown", "salem", "los angeles", "franklin", "clinton",
)

SOURCE_NAMES = ("curation", "crowdsourcing", "feedback", "survey", "import", "scrape")


def default_gazetteer() -> frozenset[str]:
    return frozenset(CITIES)


@dataclass
class SyntheticConfig:
    n_true_places: int = 2000
    dup_rate: float = 1.5
    n_sources: int = 3
    flip_rates: tuple[float, ...] = (0.05, 0.15, 0.30)
    misspell_prob: float = 0.3
    abbreviation_prob: float = 0.3
    city_suffix_prob: float = 0.3
    address_drop_prob: float = 0.2
    coord_jitter: float = 0.0005
    seed: int = 0
    n_cities: int = 6
    streets_per_city: int = 25
    address_missing_prob: float = 0.33
    chain_prob: float = 0.2
    pos_coverage: float = 0.5
    neg_per_pos: float = 2.0
    near_miss_frac: float = 0.8
    holdout_frac: float = 0.2
    golden_neg_per_page: int = 3
    bin_size: float = 0.01
    city_spread: float = 0.03
    street_spread: float = 0.004

    def __post_init__(self):
        self.flip_rates = tuple(float(r) for r in self.flip_rates)
        probs = dict(
            misspell_prob=self.misspell_prob,
            abbreviation_prob=self.abbreviation_prob,
            city_suffix_prob=self.city_suffix_prob,
            address_drop_prob=self.address_drop_prob,
            address_missing_prob=self.address_missing_prob,
            chain_prob=self.chain_prob,
            pos_coverage=self.pos_coverage,
            near_miss_frac=self.near_miss_frac,
            holdout_frac=self.holdout_frac,
        )
        probs.update({f"flip_rates[{i}]": r for i, r in enumerate(self.flip_rates)})
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0 or math.isnan(p):
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.n_true_places < 1:
            raise ValueError("n_true_places must be >= 1")
        if not self.dup_rate >= 0:
            raise ValueError(f"dup_rate must be >= 0, got {self.dup_rate}")
        if self.n_sources < 1:
            raise ValueError("n_sources must be >= 1")
        if len(self.flip_rates) != self.n_sources:
            raise ValueError(f"{len(self.flip_rates)} flip rates for {self.n_sources} sources")
        if not 1 <= self.n_cities <= len(CITIES):
            raise ValueError(f"n_cities must be in [1, {len(CITIES)}]")
        if self.streets_per_city < 1 or self.golden_neg_per_page < 0:
            raise ValueError("streets_per_city must be >= 1 and golden_neg_per_page >= 0")
        if self.coord_jitter < 0 or self.neg_per_pos < 0 or self.bin_size <= 0:
            raise ValueError("coord_jitter and neg_per_pos must be >= 0, bin_size > 0")

    @property
    def source_names(self) -> list[str]:
        return [SOURCE_NAMES[i] if i < len(SOURCE_NAMES) else f"source{i}" for i in range(self.n_sources)]


# independent RNG streams so that, e.g., changing a flip rate leaves the pages untouched
_WORLD, _PAGES, _HOLDOUT, _GOLDEN, _LABELS = range(5)


def _rng(cfg: SyntheticConfig, stream: int, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream, sub])


def _misspell(token: str, rng) -> str:
    if len(token) < 4:
        return token
    i = int(rng.integers(1, len(token) - 1))
    if rng.random() < 0.5:
        return token[:i] + token[i + 1 :]
    return token[: i - 1] + token[i] + token[i - 1] + token[i + 1 :]


def _abbreviate(tokens: list[str]) -> list[str]:
    return [ABBREVIATIONS.get(t, t) for t in tokens]


def _display(tokens: list[str], rng) -> str:
    style = rng.random()
    if style < 0.6:
        return " ".join(t.capitalize() for t in tokens)
    if style < 0.8:
        return " ".join(tokens).upper()
    return " ".join(tokens)


@dataclass
class _TruePlace:
    name: list[str]
    street: tuple[str, str] | None
    number: int
    city: str
    coordinate: tuple[float, float]
    categories: frozenset[str]


def _make_world(cfg: SyntheticConfig) -> list[_TruePlace]:
    rng = _rng(cfg, _WORLD)
    cities = list(CITIES[: cfg.n_cities])
    centers = [(rng.uniform(-50, 60), rng.uniform(-170, 170)) for _ in cities]
    streets = []
    for c, city in enumerate(cities):
        names = rng.choice(len(STREET_NAMES), size=min(cfg.streets_per_city, len(STREET_NAMES)), replace=False)
        for k in range(cfg.streets_per_city):
            sname = STREET_NAMES[names[k % len(names)]]
            stype = STREET_TYPES[int(rng.integers(len(STREET_TYPES)))]
            loc = (
                centers[c][0] + rng.normal(0, cfg.city_spread),
                centers[c][1] + rng.normal(0, cfg.city_spread),
            )
            streets.append((c, (sname, stype), loc))

    chains: list[str] = []
    types = list(TYPE_WORDS)
    out = []
    for _ in range(cfg.n_true_places):
        c, street, loc = streets[int(rng.integers(len(streets)))]
        if chains and rng.random() < cfg.chain_prob:
            name = chains[int(rng.integers(len(chains)))].split()
        else:
            n_words = 1 if rng.random() < 0.6 else 2
            words = [BUSINESS_WORDS[int(i)] for i in rng.choice(len(BUSINESS_WORDS), size=n_words, replace=False)]
            name = words + [types[int(rng.integers(len(types)))]]
            chains.append(" ".join(name))
        cats = set(TYPE_WORDS[name[-1]][: 1 + int(rng.integers(2))])
        coord = (
            float(np.clip(loc[0] + rng.normal(0, cfg.street_spread), -90, 90)),
            float(np.clip(loc[1] + rng.normal(0, cfg.street_spread), -180, 180)),
        )
        has_address = rng.random() >= cfg.address_missing_prob
        out.append(
            _TruePlace(
                name=name,
                street=street if has_address else None,
                number=int(rng.integers(1, 400)),
                city=cities[c],
                coordinate=coord,
                categories=frozenset(cats),
            )
        )
    return out


def _page(truth: _TruePlace, corrupt: bool, cfg: SyntheticConfig, rng) -> tuple[str, str | None, tuple[float, float], frozenset[str]]:
    name = list(truth.name)
    address = None
    if truth.street is not None:
        address = [str(truth.number), truth.street[0], truth.street[1]]
    lat, lon = truth.coordinate
    # draws happen unconditionally so that every page consumes the same randomness
    u = rng.random(5)
    jitter = rng.normal(0, 1, size=2)
    if corrupt:
        if u[0] < cfg.misspell_prob:
            k = int(rng.integers(len(name)))
            name[k] = _misspell(name[k], rng)
        if u[1] < cfg.abbreviation_prob:
            name = _abbreviate(name)
            if address is not None:
                address = _abbreviate(address)
        if u[2] < cfg.city_suffix_prob:
            name = name + truth.city.split()
        if u[3] < cfg.address_drop_prob:
            address = None
        lat = float(np.clip(lat + cfg.coord_jitter * jitter[0], -90, 90))
        lon = float(np.clip(lon + cfg.coord_jitter * jitter[1], -180, 180))
    name_text = _display(name, rng)
    addr_text = None if address is None else _display(address, rng)
    return name_text, addr_text, (lat, lon), truth.categories


def generate_synthetic(cfg: SyntheticConfig) -> tuple[list[Place], list[LabeledPair], dict[str, str]]:
    """Build pages, training labels and the page -> true place map.

    Training labels only touch true places outside the held-out fraction;
    :func:`golden_labels` builds clean evaluation labels for the rest.
    """
    world = _make_world(cfg)
    rng = _rng(cfg, _PAGES)
    raw = []
    for t, truth in enumerate(world):
        n_dup = int(rng.poisson(cfg.dup_rate)) if cfg.dup_rate > 0 else 0
        for d in range(1 + n_dup):
            raw.append((t, _page(truth, d > 0, cfg, rng)))
    order = rng.permutation(len(raw))
    width = max(6, len(str(len(raw))))
    places: list[Place] = []
    truth_of: dict[str, str] = {}
    for new_pos, old in enumerate(order.tolist()):
        t, (name, addr, coord, cats) = raw[old]
        pid = f"p{new_pos:0{width}d}"
        places.append(Place(pid, name, addr, coord, cats))
        truth_of[pid] = f"t{t:0{width}d}"

    held = holdout_truths(cfg, truth_of)
    train_ids = [p.id for p in places if truth_of[p.id] not in held]
    labels = _sample_source_labels(cfg, places, truth_of, set(train_ids))
    return places, labels, truth_of


def holdout_truths(cfg: SyntheticConfig, truth_of: dict[str, str]) -> set[str]:
    truths = sorted(set(truth_of.values()))
    n = int(round(cfg.holdout_frac * len(truths)))
    rng = _rng(cfg, _HOLDOUT)
    return {truths[i] for i in rng.choice(len(truths), size=n, replace=False).tolist()}


def _groups(ids, truth_of):
    groups: dict[str, list[str]] = {}
    for pid in ids:
        groups.setdefault(truth_of[pid], []).append(pid)
    return groups


def _bins(places, ids, bin_size):
    out: dict[tuple[int, int], list[str]] = {}
    for p in places:
        if p.id in ids and p.coordinate is not None:
            out.setdefault(grid_bin(*p.coordinate, bin_size), []).append(p.id)
    return out


def _negatives(n: int, pool: list[str], places, truth_of, cfg, rng, near_frac: float) -> list[tuple[str, str]]:
    """``n`` different-truth pairs, a ``near_frac`` share from a shared bin."""
    ids = set(pool)
    by_bin = _bins(places, ids, cfg.bin_size)
    bin_of = {pid: key for key, members in by_bin.items() for pid in members}
    out = []
    if len(set(truth_of[p] for p in pool)) < 2:
        return out
    attempts = 0
    while len(out) < n and attempts < 50 * n + 100:
        attempts += 1
        a = pool[int(rng.integers(len(pool)))]
        near = rng.random() < near_frac
        if near and a in bin_of:
            mates = [b for b in by_bin[bin_of[a]] if truth_of[b] != truth_of[a]]
            if mates:
                out.append((a, mates[int(rng.integers(len(mates)))]))
                continue
        b = pool[int(rng.integers(len(pool)))]
        if truth_of[b] != truth_of[a]:
            out.append((a, b))
    return out


def _sample_source_labels(cfg, places, truth_of, train_ids: set[str]) -> list[LabeledPair]:
    ordered = [p.id for p in places if p.id in train_ids]
    candidates = []
    for members in _groups(ordered, truth_of).values():
        candidates.extend(combinations(sorted(members), 2))
    candidates.sort()
    labels: list[LabeledPair] = []
    for s, source in enumerate(cfg.source_names):
        rng = _rng(cfg, _LABELS, s)
        take = rng.random(len(candidates)) < cfg.pos_coverage
        positives = [c for c, keep in zip(candidates, take) if keep]
        n_neg = int(round(cfg.neg_per_pos * max(len(positives), 1))) if ordered else 0
        negatives = _negatives(n_neg, ordered, places, truth_of, cfg, rng, cfg.near_miss_frac)
        rows = [(a, b, 1) for a, b in positives] + [(a, b, 0) for a, b in negatives]
        flips = rng.random(len(rows)) < cfg.flip_rates[s]
        seen = set()
        for (a, b, y), flip in zip(rows, flips):
            pair = LabeledPair.canonical(a, b, 1 - y if flip else y, source)
            if pair not in seen:
                seen.add(pair)
                labels.append(pair)
    return labels


def golden_labels(places: list[Place], truth_of: dict[str, str], cfg: SyntheticConfig) -> list[LabeledPair]:
    """Clean evaluation labels over the held-out true places."""
    held = holdout_truths(cfg, truth_of)
    pool = [p.id for p in places if truth_of[p.id] in held]
    rng = _rng(cfg, _GOLDEN)
    out = []
    seen = set()
    for members in sorted(_groups(pool, truth_of).values()):
        for a, b in combinations(sorted(members), 2):
            out.append(LabeledPair.canonical(a, b, 1, "golden"))
    for a, b in _negatives(cfg.golden_neg_per_page * len(pool), pool, places, truth_of, cfg, rng, 1.0):
        pair = LabeledPair.canonical(a, b, 0, "golden")
        if pair not in seen:
            seen.add(pair)
            out.append(pair)
    return out
