"""Rating datasets, train/test splitting and metric-vs-rating correlation tables."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .audio_io import read_wav, resample
from .degradations import KINDS
from .exceptions import DataError, NumericalError, UndefinedCorrelationError
from .spectrogram import MelSpectrogram, SpectrogramConfig, load_spectrogram, mel_spectrogram, save_spectrogram

log = logging.getLogger(__name__)

__all__ = [
    "MANIFEST_COLUMNS",
    "RatingRecord",
    "ReportRow",
    "EvalReport",
    "MetricBinding",
    "load_dataset",
    "split_train_test",
    "rank_average",
    "spearman",
    "pearson",
    "evaluate",
    "load_external_scores",
    "SpectrogramLoader",
]

MANIFEST_COLUMNS = ("clip_id", "genre", "song", "degradation", "rating", "reference_path", "degraded_path")
DEGRADATION_TAGS = KINDS + ("reference",)
TABLE_LABELS = {"waveshape": "Waveshape", "lowpass": "Low Pass", "limiter": "Limiter", "noise": "Noise", "all": "All data"}
MAX_FAILURE_FRACTION = 0.10


@dataclass(frozen=True)
class RatingRecord:
    clip_id: str
    genre: str
    song: str
    degradation: str
    rating: float
    reference_path: str
    degraded_path: str


def load_dataset(manifest: str | Path) -> list[RatingRecord]:
    """Read and validate a manifest CSV.

    Relative audio paths are resolved against the manifest's directory.
    Errors name the 1-based line number of the offending row.
    """
    manifest = Path(manifest)
    try:
        fh = open(manifest, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open manifest {manifest}: {exc.strerror or exc}") from exc
    records = []
    seen = {}
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{manifest}: missing column(s) {', '.join(missing)}")
        for row in reader:
            line = reader.line_num
            try:
                rating = float(row["rating"])
            except (TypeError, ValueError):
                raise DataError(f"{manifest} row {line}: unparseable rating {row['rating']!r}") from None
            if not (1.0 <= rating <= 5.0):
                raise DataError(f"{manifest} row {line}: rating {rating} outside [1, 5]")
            tag = row["degradation"].strip()
            if tag not in DEGRADATION_TAGS:
                raise DataError(f"{manifest} row {line}: unknown degradation {tag!r}")
            clip_id = row["clip_id"].strip()
            if not clip_id:
                raise DataError(f"{manifest} row {line}: empty clip_id")
            if clip_id in seen:
                raise DataError(f"{manifest} row {line}: duplicate clip_id {clip_id!r} (first at row {seen[clip_id]})")
            seen[clip_id] = line
            paths = []
            for col in ("reference_path", "degraded_path"):
                value = (row[col] or "").strip()
                if not value:
                    raise DataError(f"{manifest} row {line}: empty {col}")
                p = Path(value)
                paths.append(str(p if p.is_absolute() else manifest.parent / p))
            records.append(
                RatingRecord(clip_id, row["genre"].strip(), row["song"].strip(), tag, rating, *paths)
            )
    return records


def split_train_test(records: Iterable[RatingRecord]) -> tuple[list[RatingRecord], list[RatingRecord]]:
    """Hold out every clip of the lexicographically last song of each genre."""
    records = list(records)
    songs: dict[str, set] = {}
    for r in records:
        songs.setdefault(r.genre, set()).add(r.song)
    held_out = {}
    for genre, names in songs.items():
        if len(names) < 2:
            log.warning("genre %r has fewer than two songs; keeping it wholly in train", genre)
            continue
        held_out[genre] = max(names)
    train = [r for r in records if held_out.get(r.genre) != r.song]
    test = [r for r in records if held_out.get(r.genre) == r.song]
    return train, test


# --- correlations ------------------------------------------------------------


def rank_average(xs: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing the mean of the ranks they span."""
    x = np.asarray(xs, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size)
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + 1 + stop)
        start = stop
    return ranks


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise UndefinedCorrelationError("correlation needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined: a vector has zero variance")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    return pearson(rank_average(xs), rank_average(ys))


# --- evaluation --------------------------------------------------------------


PairMetric = Callable[[MelSpectrogram, MelSpectrogram], float]


@dataclass(frozen=True)
class MetricBinding:
    """A named metric and a short description of its configuration."""

    name: str
    fn: PairMetric
    fingerprint: str = ""


@dataclass(frozen=True)
class ReportRow:
    metric: str
    degradation: str
    n: int
    spearman: float
    pearson: float


@dataclass
class EvalReport:
    rows: list[ReportRow]
    fingerprints: dict[str, str] = field(default_factory=dict)
    failures: list[tuple[str, str]] = field(default_factory=list)
    n_records: int = 0
    provenance: dict[str, str] = field(default_factory=dict)

    def cell(self, metric: str, degradation: str) -> ReportRow:
        for row in self.rows:
            if row.metric == metric and row.degradation == degradation:
                return row
        raise KeyError((metric, degradation))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "degradation", "n", "spearman", "pearson"])
            for r in self.rows:
                writer.writerow([r.metric, r.degradation, r.n, repr(r.spearman), repr(r.pearson)])

    def to_table(self) -> str:
        """Plain-text Spearman table: one row per metric, one column per degradation."""
        degs = []
        for r in self.rows:
            if r.degradation not in degs:
                degs.append(r.degradation)
        metrics = list(dict.fromkeys(r.metric for r in self.rows))
        labels = [TABLE_LABELS.get(d, d) for d in degs]
        width = max([len("Metric")] + [len(m) for m in metrics]) + 2
        lines = ["Metric".ljust(width) + "".join(l.rjust(11) for l in labels)]
        for m in metrics:
            cells = []
            for d in degs:
                value = self.cell(m, d).spearman
                cells.append(("nan" if math.isnan(value) else f"{value:.3f}").rjust(11))
            lines.append(m.ljust(width) + "".join(cells))
        lines.append("")
        for key, value in self.provenance.items():
            lines.append(f"# {key}: {value}")
        for name, fp in self.fingerprints.items():
            lines.append(f"# metric {name}: {fp}")
        if self.failures:
            lines.append(f"# excluded {len(self.failures)} of {self.n_records} records after read failures")
        return "\n".join(lines) + "\n"


class SpectrogramLoader:
    """Decode, resample and transform audio files, memoising by path.

    With ``cache_dir`` set, spectrograms are also persisted in the binary
    cache format and reused across runs.
    """

    def __init__(self, config: SpectrogramConfig | None = None, cache_dir: str | Path | None = None):
        self.config = SpectrogramConfig() if config is None else config
        self.cache_dir = None if cache_dir is None else Path(cache_dir)
        self._memo: dict[str, MelSpectrogram] = {}

    def _cache_path(self, path: str) -> Path:
        key = hashlib.sha1((path + "\0" + self.config.to_text()).encode()).hexdigest()[:20]
        return self.cache_dir / f"{key}.spec"

    def __call__(self, path: str) -> MelSpectrogram:
        if path in self._memo:
            return self._memo[path]
        spec = None
        if self.cache_dir is not None:
            cached = self._cache_path(path)
            if cached.exists():
                spec = load_spectrogram(cached)
        if spec is None:
            wave = resample(read_wav(path), self.config.sample_rate)
            spec = mel_spectrogram(wave, self.config)
            if self.cache_dir is not None:
                self.cache_dir.mkdir(parents=True, exist_ok=True)
                save_spectrogram(self._cache_path(path), spec)
        self._memo[path] = spec
        return spec


def load_external_scores(path: str | Path) -> dict[str, dict[str, float]]:
    """Read ``clip_id,<metric>,<metric>...`` into ``{metric: {clip_id: score}}``.

    Empty cells are treated as missing scores.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "clip_id" not in reader.fieldnames:
            raise DataError(f"{path}: external score file needs a clip_id column")
        metrics = [c for c in reader.fieldnames if c != "clip_id"]
        out: dict[str, dict[str, float]] = {m: {} for m in metrics}
        for row in reader:
            for m in metrics:
                cell = (row[m] or "").strip()
                if cell:
                    try:
                        out[m][row["clip_id"]] = float(cell)
                    except ValueError:
                        raise DataError(f"{path} row {reader.line_num}: bad {m} score {cell!r}") from None
    return out


def _safe_corr(fn, xs, ys) -> float:
    try:
        return fn(xs, ys)
    except UndefinedCorrelationError:
        return float("nan")


def evaluate(
    records: Iterable[RatingRecord],
    metrics: Sequence[MetricBinding],
    split: str = "all",
    loader: Callable[[str], MelSpectrogram] | None = None,
    external: Mapping[str, Mapping[str, float]] | None = None,
    jobs: int = 1,
) -> EvalReport:
    """Score every rated (reference, degraded) pair and correlate with ratings.

    Records tagged ``reference`` carry no distortion and are left out of the
    correlations. Rows come out ordered by metric, then degradation type,
    then the all-data union.
    """
    if split not in ("all", "test"):
        raise ValueError(f"split must be 'all' or 'test', got {split!r}")
    records = sorted(records, key=lambda r: r.clip_id)
    if split == "test":
        records = sorted(split_train_test(records)[1], key=lambda r: r.clip_id)
    rated = [r for r in records if r.degradation != "reference"]
    loader = SpectrogramLoader() if loader is None else loader
    external = {} if external is None else external

    # decode each distinct file once, in a fixed order
    paths = list(dict.fromkeys(p for r in rated for p in (r.reference_path, r.degraded_path)))

    def load(path):
        try:
            return path, loader(path), None
        except (DataError, OSError, ValueError) as exc:
            return path, None, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            loaded = list(pool.map(load, paths))
    else:
        loaded = [load(p) for p in paths]
    specs = {p: s for p, s, _ in loaded if s is not None}
    errors = {p: e for p, _, e in loaded if e is not None}

    failures = []
    usable = []
    for r in rated:
        bad = [p for p in (r.reference_path, r.degraded_path) if p in errors]
        if bad:
            failures.append((r.clip_id, errors[bad[0]]))
        else:
            usable.append(r)
    if rated and len(failures) > MAX_FAILURE_FRACTION * len(rated):
        raise DataError(
            f"{len(failures)} of {len(rated)} records failed to load (limit 10%); first: {failures[0][1]}"
        )
    for clip_id, err in failures:
        log.warning("excluding %s: %s", clip_id, err)

    def score_all(binding: MetricBinding):
        def one(r):
            try:
                return binding.fn(specs[r.reference_path], specs[r.degraded_path])
            except DataError as exc:
                raise DataError(f"{binding.name} on {r.clip_id}: {exc}") from exc

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                return np.array(list(pool.map(one, usable)))
        return np.array([one(r) for r in usable])

    ratings = np.array([r.rating for r in usable])
    tag_of = np.array([r.degradation for r in usable])
    columns = [(b.name, b.fingerprint, False, lambda b=b: score_all(b)) for b in metrics]
    for name, table in external.items():
        lookup = lambda table=table: np.array([table.get(r.clip_id, np.nan) for r in usable], dtype=float)
        columns.append((name, "external scores", True, lookup))

    rows = []
    fingerprints = {}
    for name, fingerprint, may_be_missing, compute in columns:
        scores = compute().astype(np.float64)
        present = np.isfinite(scores)
        if not may_be_missing and not np.all(present):
            raise NumericalError(f"metric {name} produced non-finite scores")
        fingerprints[name] = fingerprint
        for tag in KINDS + ("all",):
            mask = present if tag == "all" else present & (tag_of == tag)
            xs, ys = scores[mask], ratings[mask]
            if xs.size < 3:
                rows.append(ReportRow(name, tag, int(xs.size), float("nan"), float("nan")))
                continue
            rows.append(ReportRow(name, tag, int(xs.size), _safe_corr(spearman, xs, ys), _safe_corr(pearson, xs, ys)))
    return EvalReport(rows, fingerprints, failures, len(rated))
