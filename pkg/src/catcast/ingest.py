"""CSV ingestion, cleaning, year-based splitting and the synthetic data generator."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Sequence, TextIO

import numpy as np

from catcast import core
from catcast.core import BLANK, Schema, Table, Vocabulary, VariableSpec
from catcast.errors import DataError, FormatError

log = logging.getLogger(__name__)

NAN_LIKE = {"", "nan"}
DATE_RE = re.compile(r"^\s*(\d{1,2})/(\d{1,2})/(\d{4})")
DEFAULT_MIN_YEAR = 2004
DEFAULT_MAX_YEAR = 2019
DEFAULT_TEST_YEAR = 2019
TRAIN_FRACTION = 0.8
DEFAULT_K = 5


@dataclass
class RawTable:
    header: list[str]
    cells: list[list[str]]
    dropped_rows: int = 0

    def __len__(self) -> int:
        return len(self.cells)

    def column(self, name: str) -> list[str]:
        try:
            j = self.header.index(name)
        except ValueError:
            raise FormatError(f"column {name!r} not present") from None
        return [row[j] for row in self.cells]


def parse_csv(stream: TextIO | str | os.PathLike) -> RawTable:
    """Read a comma-separated dump with a header row into a RawTable.

    Accepts an open text stream or a path. Row numbers in errors are 1-based
    and count the header as row 1.
    """
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, newline="", encoding="utf-8") as fh:
            return parse_csv(fh)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("missing header row") from None
    header = [h.strip() for h in header]
    if not any(header):
        raise FormatError("missing header row")
    if len(set(header)) != len(header):
        raise FormatError(f"duplicate column names in header: {header}")
    cells = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} cells, found {len(row)}", row=row_no)
        cells.append(row)
    return RawTable(header, cells)


def write_csv(raw: RawTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(raw.header)
        writer.writerows(raw.cells)


def _normalize(value: str) -> str:
    if value.strip().casefold() in NAN_LIKE:
        return BLANK
    if value == BLANK:
        return value
    return value.strip().casefold()


def _parse_date(value: str) -> tuple[int, int] | None:
    m = DATE_RE.match(value)
    if not m:
        return None
    day, month, year = (int(g) for g in m.groups())
    try:
        date(year, month, day)
    except ValueError:
        return None
    return month, year


def _dedupe(cells: list[list[str]]) -> list[list[str]]:
    seen = set()
    out = []
    for row in cells:
        key = tuple(row)
        if key not in seen:
            seen.add(key)
            out.append(row)
    return out


def preprocess(raw: RawTable, rename: dict[str, dict[str, str]] | None = None) -> RawTable:
    """Clean a parsed dump.

    Steps, in order: blank sentinel for empty/NaN cells, trim + case-fold,
    drop exact duplicate rows, apply the category rename map, and derive
    MONTH/YEAR from DATE_CASE. ``rename`` maps column name (or ``"*"`` for
    every column) to an old -> new category table; keys are normalized the
    same way as cells. NUMBER and REF are dropped before deduplication.
    Rows whose DATE_CASE does not parse are dropped and counted.
    """
    keep = [j for j, h in enumerate(raw.header)
            if h not in core.DROPPED_COLUMNS and h not in (core.MONTH, core.YEAR)]
    header = [raw.header[j] for j in keep]
    cells = [[_normalize(row[j]) for j in keep] for row in raw.cells]
    cells = _dedupe(cells)

    if rename:
        tables = {}
        for col, mapping in rename.items():
            tables[col] = {_normalize(k): _normalize(v) for k, v in mapping.items()}
        star = tables.get("*", {})
        per_col = [(j, tables.get(h, {})) for j, h in enumerate(header)]
        for row in cells:
            for j, mapping in per_col:
                v = row[j]
                v = mapping.get(v, v)
                row[j] = star.get(v, v)
        # renaming can merge rows that were distinct before
        cells = _dedupe(cells)

    dropped = raw.dropped_rows
    if core.DATE_CASE in header:
        j = header.index(core.DATE_CASE)
        out = []
        for row in cells:
            parsed = _parse_date(row[j])
            if parsed is None:
                dropped += 1
                continue
            month, year = parsed
            out.append(row + [str(month), str(year)])
        if dropped > raw.dropped_rows:
            log.warning("dropped %d rows with unparseable %s", dropped - raw.dropped_rows, core.DATE_CASE)
        cells = out
        header = header + [core.MONTH, core.YEAR]
    return RawTable(header, cells, dropped)


def modeled_columns(header: Sequence[str]) -> list[str]:
    skip = set(core.DROPPED_COLUMNS) | set(core.FREE_TEXT_COLUMNS) | {core.DATE_CASE, core.YEAR}
    return [h for h in header if h not in skip]


def raw_to_table(raw: RawTable, schema: Schema | None = None, provenance: str = "real") -> Table:
    """Index a pre-processed RawTable. Free-text, date and id columns are not modeled."""
    names = schema.names if schema is not None else modeled_columns(raw.header)
    columns = {name: raw.column(name) for name in names}
    if core.YEAR in raw.header:
        year = [int(y) for y in raw.column(core.YEAR)]
    else:
        year = [0] * len(raw)
    return core.build_table(columns, year, provenance, schema)


def filter_years(table: Table, min_year: int = DEFAULT_MIN_YEAR, max_year: int = DEFAULT_MAX_YEAR) -> Table:
    if min_year > max_year:
        raise DataError(f"inverted year range [{min_year}, {max_year}]")
    mask = (table.year >= min_year) & (table.year <= max_year)
    if not mask.any():
        raise DataError(f"no rows within [{min_year}, {max_year}]")
    return table.subset(np.flatnonzero(mask))


@dataclass(frozen=True)
class SplitPlan:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int
    test_year: int

    def to_dict(self) -> dict:
        return {
            "train": self.train.tolist(),
            "validation": self.validation.tolist(),
            "test": self.test.tolist(),
            "seed": self.seed,
            "test_year": self.test_year,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitPlan":
        return cls(
            np.asarray(data["train"], dtype=np.int64),
            np.asarray(data["validation"], dtype=np.int64),
            np.asarray(data["test"], dtype=np.int64),
            int(data["seed"]),
            int(data["test_year"]),
        )


def make_split(table: Table, test_year: int = DEFAULT_TEST_YEAR, seed: int = 0) -> SplitPlan:
    """Hold out ``test_year`` and split the remaining rows 80/20 at random."""
    is_test = table.year == test_year
    test = np.flatnonzero(is_test)
    if test.size == 0:
        raise DataError(f"no rows for test year {test_year}")
    rest = np.flatnonzero(~is_test)
    if rest.size == 0:
        raise DataError(f"every row belongs to test year {test_year}")
    shuffled = np.random.default_rng(seed).permutation(rest)
    n_train = int(round(TRAIN_FRACTION * rest.size))
    return SplitPlan(shuffled[:n_train], shuffled[n_train:], test, seed, test_year)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple[np.ndarray, ...]

    def train_indices(self, i: int) -> np.ndarray:
        return np.concatenate([f for j, f in enumerate(self.folds) if j != i])


def make_folds(split: SplitPlan | np.ndarray, k: int = DEFAULT_K, seed: int = 0) -> FoldPlan:
    """Round-robin k-fold assignment of the (shuffled) training indices."""
    train = split.train if isinstance(split, SplitPlan) else np.asarray(split, dtype=np.int64)
    if k < 2:
        raise DataError(f"k must be at least 2, got {k}")
    if k > train.size:
        raise DataError(f"k={k} exceeds the {train.size} training rows")
    shuffled = np.random.default_rng(seed).permutation(train)
    return FoldPlan(k, tuple(shuffled[i::k] for i in range(k)))


# Synthetic generator ---------------------------------------------------------

ROOTS = (core.MONTH, core.NOTIFICATION_COUNTRY, core.DISTRIBUTION_STATUS, core.COUNTRY_ORIGIN)
SYNTH_VARIABLES = ROOTS + core.TARGETS
PAPER_CARDINALITIES = {
    core.MONTH: 12,
    core.NOTIFICATION_COUNTRY: 32,
    core.DISTRIBUTION_STATUS: 17,
    core.COUNTRY_ORIGIN: 190,
    core.PRODUCT_CATEGORY: 38,
    core.HAZARD_CATEGORY: 35,
    core.ACTION_TAKEN: 24,
}


@dataclass
class GeneratorSpec:
    """Categorical generator with deterministic parent -> child mappings.

    ``product_map[origin, month]``, ``hazard_map[product, origin]`` and
    ``action_map[hazard]`` hold 0-based category ids. Each child follows its
    mapping with probability ``1 - epsilon`` and is uniform otherwise.
    """

    cardinalities: dict[str, int]
    product_map: np.ndarray
    hazard_map: np.ndarray
    action_map: np.ndarray
    epsilon: float
    seed: int
    years: tuple[int, int] = (DEFAULT_MIN_YEAR, DEFAULT_MAX_YEAR)

    def __post_init__(self):
        card = self.cardinalities
        missing = [v for v in SYNTH_VARIABLES if v not in card]
        if missing:
            raise DataError(f"generator spec lacks cardinalities for {missing}")
        if any(card[v] < 1 for v in SYNTH_VARIABLES):
            raise DataError("cardinalities must be positive")
        if card[core.MONTH] > 12:
            raise DataError("MONTH cardinality cannot exceed 12")
        if not 0.0 <= self.epsilon < 1.0:
            raise DataError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.years[0] > self.years[1]:
            raise DataError(f"inverted year range {self.years}")
        self.product_map = np.asarray(self.product_map, dtype=np.int64)
        self.hazard_map = np.asarray(self.hazard_map, dtype=np.int64)
        self.action_map = np.asarray(self.action_map, dtype=np.int64)
        self._check_map(self.product_map, (card[core.COUNTRY_ORIGIN], card[core.MONTH]), core.PRODUCT_CATEGORY)
        self._check_map(self.hazard_map, (card[core.PRODUCT_CATEGORY], card[core.COUNTRY_ORIGIN]), core.HAZARD_CATEGORY)
        self._check_map(self.action_map, (card[core.HAZARD_CATEGORY],), core.ACTION_TAKEN)

    def _check_map(self, table, shape, target):
        if table.shape != shape:
            raise DataError(f"{target} mapping has shape {table.shape}, expected {shape}")
        if table.size and (table.min() < 0 or table.max() >= self.cardinalities[target]):
            raise DataError(f"{target} mapping holds ids outside its vocabulary")

    @classmethod
    def random(cls, cardinalities: dict[str, int], epsilon: float, seed: int,
               years=(DEFAULT_MIN_YEAR, DEFAULT_MAX_YEAR)) -> "GeneratorSpec":
        """Draw the mapping tables uniformly at random from ``seed``."""
        card = {**cardinalities}
        rng = np.random.default_rng([seed, 7919])
        product = rng.integers(card[core.PRODUCT_CATEGORY], size=(card[core.COUNTRY_ORIGIN], card[core.MONTH]))
        hazard = rng.integers(card[core.HAZARD_CATEGORY], size=(card[core.PRODUCT_CATEGORY], card[core.COUNTRY_ORIGIN]))
        action = rng.integers(card[core.ACTION_TAKEN], size=card[core.HAZARD_CATEGORY])
        return cls(card, product, hazard, action, epsilon, seed, tuple(years))

    @classmethod
    def uniform(cls, k: int, epsilon: float, seed: int, **kw) -> "GeneratorSpec":
        return cls.random({v: k for v in SYNTH_VARIABLES}, epsilon, seed, **kw)

    def to_dict(self) -> dict:
        return {
            "cardinalities": dict(self.cardinalities),
            "epsilon": self.epsilon,
            "seed": self.seed,
            "years": list(self.years),
            "mappings": {
                "product": self.product_map.tolist(),
                "hazard": self.hazard_map.tolist(),
                "action": self.action_map.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        try:
            card = {k: int(v) for k, v in data["cardinalities"].items()}
            epsilon = float(data["epsilon"])
            seed = int(data["seed"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed generator spec: {exc}") from exc
        years = tuple(data.get("years", (DEFAULT_MIN_YEAR, DEFAULT_MAX_YEAR)))
        maps = data.get("mappings")
        if maps is None:
            return cls.random(card, epsilon, seed, years)
        return cls(card, maps["product"], maps["hazard"], maps["action"], epsilon, seed, years)

    @classmethod
    def load(cls, path) -> "GeneratorSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    # category strings are lowercase so that preprocess leaves them unchanged
    def category(self, variable: str, gen_id: int) -> str:
        if variable == core.MONTH:
            return str(gen_id + 1)
        return f"{variable.lower()}_{gen_id:03d}"

    def vocabulary(self, variable: str) -> Vocabulary:
        cache = self.__dict__.setdefault("_vocab_cache", {})
        if variable not in cache:
            cache[variable] = Vocabulary(self.category(variable, i) for i in range(self.cardinalities[variable]))
        return cache[variable]

    def schema(self) -> Schema:
        return Schema(tuple(
            VariableSpec(v, core.default_role(v), self.vocabulary(v)) for v in SYNTH_VARIABLES
        ))

    def gen_id(self, variable: str, value: str) -> int | None:
        """Inverse of :meth:`category`; None for strings the generator never emits."""
        vocab = self.vocabulary(variable)
        index = vocab.lookup(value)
        return index - 1 if index else None

    def predict(self, stage: int, parents: dict[str, int]) -> int:
        """Bayes-optimal gen id for a stage target given its parents' gen ids."""
        needed = {1: (core.COUNTRY_ORIGIN, core.MONTH), 2: (core.PRODUCT_CATEGORY, core.COUNTRY_ORIGIN),
                  3: (core.HAZARD_CATEGORY,)}.get(stage, ())
        if any(parents.get(n) is None for n in needed):
            raise DataError(f"stage {stage} prediction needs known values for {needed}")
        if stage == 1:
            return int(self.product_map[parents[core.COUNTRY_ORIGIN], parents[core.MONTH]])
        if stage == 2:
            return int(self.hazard_map[parents[core.PRODUCT_CATEGORY], parents[core.COUNTRY_ORIGIN]])
        if stage == 3:
            return int(self.action_map[parents[core.HAZARD_CATEGORY]])
        raise DataError(f"unknown stage {stage}")


def _sample(spec: GeneratorSpec, n_rows: int) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    card = spec.cardinalities
    ids = {v: rng.integers(card[v], size=n_rows) for v in ROOTS}

    def noisy(mapped, k):
        flip = rng.random(n_rows) < spec.epsilon
        uniform = rng.integers(k, size=n_rows)
        return np.where(flip, uniform, mapped)

    origin, month = ids[core.COUNTRY_ORIGIN], ids[core.MONTH]
    ids[core.PRODUCT_CATEGORY] = noisy(spec.product_map[origin, month], card[core.PRODUCT_CATEGORY])
    product = ids[core.PRODUCT_CATEGORY]
    ids[core.HAZARD_CATEGORY] = noisy(spec.hazard_map[product, origin], card[core.HAZARD_CATEGORY])
    ids[core.ACTION_TAKEN] = noisy(spec.action_map[ids[core.HAZARD_CATEGORY]], card[core.ACTION_TAKEN])
    year = rng.integers(spec.years[0], spec.years[1] + 1, size=n_rows)
    day = rng.integers(1, 29, size=n_rows)
    return ids, year, day


def synth_generate(spec: GeneratorSpec, n_rows: int) -> Table:
    """Sample ``n_rows`` records; vocabularies list categories in generator-id order."""
    ids, year, _ = _sample(spec, n_rows)
    rows = np.stack([ids[v] + 1 for v in SYNTH_VARIABLES], axis=1) if n_rows else np.zeros((0, len(SYNTH_VARIABLES)))
    return Table(spec.schema(), rows, year, provenance="synthetic")


def synth_raw(spec: GeneratorSpec, n_rows: int) -> RawTable:
    """The same sample as :func:`synth_generate`, rendered as a dump with DATE_CASE."""
    ids, year, day = _sample(spec, n_rows)
    header = [core.DATE_CASE] + [v for v in SYNTH_VARIABLES if v != core.MONTH]
    cells = []
    for i in range(n_rows):
        row = [f"{day[i]:02d}/{ids[core.MONTH][i] + 1:02d}/{year[i]}"]
        row += [spec.category(v, int(ids[v][i])) for v in header[1:]]
        cells.append(row)
    return RawTable(header, cells)


def bayes_accuracy(spec: GeneratorSpec, stage: int) -> float:
    """Accuracy of the optimal predictor of a stage target given its true parents."""
    target = core.TARGETS[stage - 1]
    k = spec.cardinalities[target]
    return (1.0 - spec.epsilon) + spec.epsilon / k


# Dataset directory ------------------------------------------------------------

DATASET_FILE = "dataset.json"


@dataclass
class Dataset:
    table: Table
    split: SplitPlan
    info: dict = field(default_factory=dict)

    def part(self, name: str) -> Table:
        return self.table.subset(getattr(self.split, name))

    def save(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, DATASET_FILE)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"table": self.table.to_dict(), "split": self.split.to_dict(), "info": self.info}, fh)
        return path

    @classmethod
    def load(cls, path) -> "Dataset":
        if os.path.isdir(path):
            path = os.path.join(path, DATASET_FILE)
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            return cls(Table.from_dict(data["table"]), SplitPlan.from_dict(data["split"]), data.get("info", {}))
        except (OSError, ValueError, KeyError) as exc:
            raise FormatError(f"cannot read dataset {path}: {exc}") from exc


def ingest(raw: RawTable, min_year=DEFAULT_MIN_YEAR, max_year=DEFAULT_MAX_YEAR,
           test_year=DEFAULT_TEST_YEAR, seed=0, rename=None, provenance="real") -> Dataset:
    """Full ingestion path: clean, index, filter years, split."""
    clean = preprocess(raw, rename)
    table = filter_years(raw_to_table(clean, provenance=provenance), min_year, max_year)
    split = make_split(table, test_year, seed)
    info = {
        "rows_parsed": len(raw),
        "rows_after_preprocess": len(clean),
        "rows_dropped_bad_date": clean.dropped_rows,
        "rows_in_year_range": len(table),
        "train": int(split.train.size),
        "validation": int(split.validation.size),
        "test": int(split.test.size),
    }
    return Dataset(table, split, info)


def read_csv_text(text: str) -> RawTable:
    return parse_csv(io.StringIO(text))

