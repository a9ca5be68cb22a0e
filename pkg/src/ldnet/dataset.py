"""Listening-test data model and CSV ingestion.

A ratings file is a UTF-8 CSV with one row per (sample, listener) rating::

    sample_id,system_id,listener_id,score,audio_path

and a split file assigns each sample to ``train``, ``valid`` or ``test``::

    sample_id,split
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Iterator, Mapping

import numpy as np

logger = logging.getLogger(__name__)

MEAN_LISTENER = "MEAN_LISTENER"
UNKNOWN_INDEX = -1
SPLITS = ("train", "valid", "test")
RATING_COLUMNS = ("sample_id", "system_id", "listener_id", "score", "audio_path")
SCORE_MIN, SCORE_MAX = 1.0, 5.0


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    pass


@dataclass(frozen=True)
class Rating:
    sample_id: str
    listener_id: str
    score: float

    def __post_init__(self):
        if not (SCORE_MIN <= self.score <= SCORE_MAX):
            raise DatasetError(
                f"score {self.score} for ({self.sample_id}, {self.listener_id}) outside [{SCORE_MIN}, {SCORE_MAX}]"
            )


@dataclass(frozen=True)
class Sample:
    sample_id: str
    system_id: str
    audio_path: Path
    split: str = "train"

    def __post_init__(self):
        if not isinstance(self.audio_path, Path):
            object.__setattr__(self, "audio_path", Path(self.audio_path))


@dataclass(frozen=True)
class ListenerRegistry:
    """Maps listener ids to embedding rows.

    ``names`` are the training listeners in index order. Listeners that only
    appear in valid/test are kept in ``unseen`` and resolve to UNKNOWN_INDEX.
    """

    names: tuple[str, ...]
    unseen: tuple[str, ...] = ()
    mean_listener_index: int | None = None

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DatasetError("duplicate listener ids in registry")
        if self.mean_listener_index is not None and self.mean_listener_index != len(self.names):
            raise DatasetError("mean_listener_index must equal the number of real listeners")

    @property
    def n_listeners(self) -> int:
        """M, the real training listeners."""
        return len(self.names)

    @property
    def embedding_rows(self) -> int:
        return self.n_listeners + (self.mean_listener_index is not None)

    def index(self, listener_id: str) -> int:
        if listener_id == MEAN_LISTENER:
            if self.mean_listener_index is None:
                raise KeyError("mean listener is not enabled")
            return self.mean_listener_index
        try:
            return self._lookup[listener_id]
        except KeyError:
            if listener_id in self.unseen:
                return UNKNOWN_INDEX
            raise

    @property
    def _lookup(self) -> dict[str, int]:
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {name: i for i, name in enumerate(self.names)}
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def to_dict(self) -> dict:
        return {"names": list(self.names), "unseen": list(self.unseen),
                "mean_listener_index": self.mean_listener_index}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ListenerRegistry":
        return cls(tuple(d["names"]), tuple(d.get("unseen", ())), d.get("mean_listener_index"))


@dataclass(frozen=True)
class MOSDataset:
    samples: Mapping[str, Sample]
    ratings: tuple[Rating, ...]
    registry: ListenerRegistry
    mean_scores: Mapping[str, float] = field(default_factory=dict)

    @property
    def has_mean_listener(self) -> bool:
        return self.registry.mean_listener_index is not None

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples.values() if s.split == name]

    def split_sizes(self) -> dict[str, int]:
        sizes = dict.fromkeys(SPLITS, 0)
        for s in self.samples.values():
            sizes[s.split] += 1
        return sizes

    def system_map(self) -> dict[str, str]:
        return {sid: s.system_id for sid, s in self.samples.items()}

    def training_ratings(self) -> list[Rating]:
        return [r for r in self.ratings if self.samples[r.sample_id].split == "train"]


# ----------------------------------------------------------------------------- construction


def compute_mean_scores(dataset: MOSDataset) -> dict[str, float]:
    """Arithmetic mean of real-listener ratings per sample."""
    sums: dict[str, list[float]] = {sid: [] for sid in dataset.samples}
    for r in dataset.ratings:
        if r.listener_id != MEAN_LISTENER:
            sums[r.sample_id].append(r.score)
    missing = [sid for sid, v in sums.items() if not v]
    if missing:
        raise DatasetError(f"samples without ratings: {', '.join(missing[:10])}")
    return {sid: float(np.mean(v)) for sid, v in sums.items()}


def build_registry(samples: Mapping[str, Sample], ratings) -> ListenerRegistry:
    train_listeners, other = set(), set()
    for r in ratings:
        (train_listeners if samples[r.sample_id].split == "train" else other).add(r.listener_id)
    return ListenerRegistry(tuple(sorted(train_listeners)), tuple(sorted(other - train_listeners)))


def make_dataset(samples, ratings) -> MOSDataset:
    """Validate samples and ratings and derive the registry and mean scores."""
    samples = {s.sample_id: s for s in samples} if not isinstance(samples, Mapping) else dict(samples)
    if not samples:
        raise DatasetError("dataset has no samples")
    ratings = tuple(ratings)
    seen = set()
    for r in ratings:
        if r.sample_id not in samples:
            raise DatasetError(f"rating references unknown sample {r.sample_id!r}")
        if r.listener_id == MEAN_LISTENER:
            raise DatasetError(f"listener id {MEAN_LISTENER!r} is reserved")
        key = (r.sample_id, r.listener_id)
        if key in seen:
            raise DatasetError(f"duplicate rating for sample {r.sample_id!r} by listener {r.listener_id!r}")
        seen.add(key)
    for s in samples.values():
        if s.split not in SPLITS:
            raise DatasetError(f"sample {s.sample_id!r} has unknown split {s.split!r}")
    ds = MOSDataset(MappingProxyType(samples), ratings, build_registry(samples, ratings))
    return replace(ds, mean_scores=MappingProxyType(compute_mean_scores(ds)))


def extend_with_mean_listener(dataset: MOSDataset) -> MOSDataset:
    """Add one MEAN_LISTENER rating per training sample, scored with its mean score."""
    if dataset.has_mean_listener:
        raise DatasetError("dataset already contains the mean listener")
    train = [s for s in dataset.samples.values() if s.split == "train"]
    if not train:
        raise DatasetError("cannot add a mean listener: training split is empty")
    extra = tuple(Rating(s.sample_id, MEAN_LISTENER, dataset.mean_scores[s.sample_id]) for s in train)
    reg = dataset.registry
    registry = ListenerRegistry(reg.names, reg.unseen, mean_listener_index=reg.n_listeners)
    return replace(dataset, ratings=dataset.ratings + extra, registry=registry)


def iterate_training_triples(dataset: MOSDataset, seed: int) -> Iterator[tuple[Sample, int, float]]:
    """One shuffled epoch of training ratings as (sample, listener_index, score)."""
    ratings = dataset.training_ratings()
    order = list(range(len(ratings)))
    random.Random(seed).shuffle(order)
    for i in order:
        r = ratings[i]
        yield dataset.samples[r.sample_id], dataset.registry.index(r.listener_id), r.score


# ----------------------------------------------------------------------------- CSV


@dataclass(frozen=True)
class Preset:
    """Column mapping and split policy for a known corpus."""

    name: str
    columns: Mapping[str, str]
    n_samples: int | None = None
    n_listeners: int | None = None
    split_sizes: tuple[int, int, int] | None = None
    random_split: bool = False
    split_seed: int = 0


_CANONICAL = MappingProxyType({c: c for c in RATING_COLUMNS})

PRESETS = {
    "default": Preset("default", _CANONICAL),
    # 13580/3000/4000 random sample-level split; all listeners are seen in training.
    "vcc2018": Preset("vcc2018", _CANONICAL, 20580, 270, (13580, 3000, 4000), random_split=True),
    # curated 4974/1066/1066 split shipped with the corpus; must be given as a split file.
    "bvcc": Preset("bvcc", _CANONICAL, 7106, 304, (4974, 1066, 1066)),
}


def _read_rows(path: Path, required) -> Iterator[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or ())]
        if missing:
            raise ParseError(f"{path}: missing column(s) {missing}")
        for row in reader:
            yield reader.line_num, row


def read_ratings(path, audio_root=None, preset: Preset | str = "default"):
    """Parse a ratings CSV into (samples-without-split, ratings)."""
    preset = PRESETS[preset] if isinstance(preset, str) else preset
    cols = preset.columns
    path = Path(path)
    audio_root = Path(audio_root) if audio_root is not None else path.parent
    required = [cols[c] for c in ("sample_id", "system_id", "listener_id", "score")]
    samples: dict[str, Sample] = {}
    ratings = []
    for line, row in _read_rows(path, required):
        try:
            sid, sys_id, lid = (row[cols[c]].strip() for c in ("sample_id", "system_id", "listener_id"))
            score = float(row[cols["score"]])
        except (TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"{path}:{line}: malformed row ({exc})") from None
        if not sid or not sys_id or not lid:
            raise ParseError(f"{path}:{line}: empty sample, system or listener id")
        if not (SCORE_MIN <= score <= SCORE_MAX):
            raise DatasetError(f"{path}:{line}: score {score} outside [{SCORE_MIN}, {SCORE_MAX}]")
        audio = (row.get(cols["audio_path"]) or "").strip() or f"{sid}.wav"
        sample = Sample(sid, sys_id, audio_root / audio)
        prev = samples.setdefault(sid, sample)
        if prev != sample:
            raise ParseError(f"{path}:{line}: sample {sid!r} has inconsistent system or audio path")
        ratings.append(Rating(sid, lid, score))
    return samples, ratings


def read_splits(path) -> dict[str, str]:
    splits = {}
    for line, row in _read_rows(Path(path), ("sample_id", "split")):
        split = (row["split"] or "").strip()
        if split not in SPLITS:
            raise ParseError(f"{path}:{line}: unknown split {split!r}")
        splits[row["sample_id"].strip()] = split
    return splits


def random_split(sample_ids, sizes: tuple[int, int, int], seed: int) -> dict[str, str]:
    ids = sorted(sample_ids)
    if sum(sizes) != len(ids):
        raise DatasetError(f"split sizes {sizes} do not add up to {len(ids)} samples")
    random.Random(seed).shuffle(ids)
    out, start = {}, 0
    for name, n in zip(SPLITS, sizes):
        out.update(dict.fromkeys(ids[start:start + n], name))
        start += n
    return out


def load_dataset(ratings_file, audio_root=None, split_spec=None, preset: str = "default") -> MOSDataset:
    """Load and validate a listening test.

    ``split_spec`` is a split CSV path, a preset name with a random split
    policy (``"vcc2018"``), or None to put every sample in the training split.
    """
    if isinstance(split_spec, str) and split_spec in PRESETS:
        preset = split_spec
    pset = PRESETS[preset]
    samples, ratings = read_ratings(ratings_file, audio_root, pset)

    if split_spec is None:
        assignment = dict.fromkeys(samples, "train")
    elif isinstance(split_spec, str) and split_spec in PRESETS:
        if not pset.random_split:
            raise DatasetError(f"preset {pset.name!r} has a curated split; pass its split file")
        assignment = random_split(samples, pset.split_sizes, pset.split_seed)
    else:
        assignment = read_splits(split_spec)
        unknown = set(assignment) - set(samples)
        if unknown:
            raise DatasetError(f"split file names unknown samples: {sorted(unknown)[:10]}")
        missing = set(samples) - set(assignment)
        if missing:
            raise DatasetError(f"samples without a split: {sorted(missing)[:10]}")

    samples = {sid: replace(s, split=assignment[sid]) for sid, s in samples.items()}
    ds = make_dataset(samples, ratings)
    if split_spec is not None:
        empty = [k for k, v in ds.split_sizes().items() if v == 0]
        if empty:
            raise DatasetError(f"empty split(s): {empty}")
    _check_preset_statistics(ds, pset)
    return ds


def _check_preset_statistics(ds: MOSDataset, preset: Preset):
    if preset.n_samples is not None and len(ds.samples) != preset.n_samples:
        logger.warning("%s: expected %d samples, found %d", preset.name, preset.n_samples, len(ds.samples))
    n_listeners = ds.registry.n_listeners + len(ds.registry.unseen)
    if preset.n_listeners is not None and n_listeners != preset.n_listeners:
        logger.warning("%s: expected %d listeners, found %d", preset.name, preset.n_listeners, n_listeners)
    sizes = ds.split_sizes()
    if preset.split_sizes is not None and tuple(sizes[s] for s in SPLITS) != preset.split_sizes:
        logger.warning("%s: expected split %s, found %s", preset.name, preset.split_sizes, sizes)


def write_dataset(dataset: MOSDataset, ratings_file, splits_file, audio_root=None):
    """Write real-listener ratings and the split assignment in the canonical CSV layout."""
    ratings_file, splits_file = Path(ratings_file), Path(splits_file)
    root = Path(audio_root) if audio_root is not None else ratings_file.parent
    with open(ratings_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RATING_COLUMNS)
        for r in dataset.ratings:
            if r.listener_id == MEAN_LISTENER:
                continue
            s = dataset.samples[r.sample_id]
            try:
                audio = s.audio_path.relative_to(root)
            except ValueError:
                audio = s.audio_path
            w.writerow([r.sample_id, s.system_id, r.listener_id, repr(r.score), audio.as_posix()])
    with open(splits_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("sample_id", "split"))
        for s in dataset.samples.values():
            w.writerow((s.sample_id, s.split))
