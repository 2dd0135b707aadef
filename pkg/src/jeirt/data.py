"""Canonical data model and bit-exact file formats.

Three on-disk formats, all framework-free:

* responses.jsonl: one JSON object per line,
  {"model_id": "...", "question_id": "...", "correct": 0|1,
   "benchmark": "...", "subject": "..."|null}
* features.manifest.json + features.f32: JSON manifest
  {"format": "JEF1", "dim": p, "count": n, "question_ids": [...]}
  next to a row-major little-endian float32 blob of n*p*4 bytes.
* checkpoint.manifest.json + checkpoint.f32: named float32 segments
  (W1, b1, W2, b2, model_table) with declared shapes.

Loaders reject rather than repair: duplicate (model, question) pairs, blob
size mismatches, and non-finite values are hard errors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    ConflictError,
    CoverageError,
    DataError,
    FormatError,
    ParseError,
    ShapeError,
)
from .model import AdapterParams, ModelTable

FEATURE_FORMAT = "JEF1"
CHECKPOINT_FORMAT = "JEC1"
_RECORD_KEYS = {"model_id", "question_id", "correct", "benchmark", "subject"}


@dataclass(frozen=True)
class ResponseRecord:
    """One observed outcome: did ``model_id`` answer ``question_id`` correctly."""

    model_id: str
    question_id: str
    correct: int
    benchmark: str = ""
    subject: str | None = None

    def __post_init__(self):
        if not self.model_id or not self.question_id:
            raise DataError("model_id and question_id must be non-empty")
        if self.correct not in (0, 1):
            raise DataError(f"correct must be 0 or 1, got {self.correct!r}")


@dataclass(frozen=True)
class Dataset:
    """Deduplicated records plus dense id indices (first-appearance order)."""

    records: tuple[ResponseRecord, ...]
    model_index: dict[str, int]
    question_index: dict[str, int]

    @classmethod
    def from_records(cls, records) -> "Dataset":
        records = tuple(records)
        seen: set[tuple[str, str]] = set()
        model_index: dict[str, int] = {}
        question_index: dict[str, int] = {}
        for rec in records:
            pair = (rec.model_id, rec.question_id)
            if pair in seen:
                raise ConflictError(
                    f"duplicate record for pair ({rec.model_id!r}, {rec.question_id!r})"
                )
            seen.add(pair)
            if rec.model_id not in model_index:
                model_index[rec.model_id] = len(model_index)
            if rec.question_id not in question_index:
                question_index[rec.question_id] = len(question_index)
        return cls(records, model_index, question_index)

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(self.model_index)

    @property
    def question_ids(self) -> tuple[str, ...]:
        return tuple(self.question_index)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(model row, question row, label) per record, as int arrays."""
        mi = np.fromiter(
            (self.model_index[r.model_id] for r in self.records), dtype=np.int64
        )
        qi = np.fromiter(
            (self.question_index[r.question_id] for r in self.records), dtype=np.int64
        )
        y = np.fromiter((r.correct for r in self.records), dtype=np.int64)
        return mi, qi, y

    def question_benchmarks(self) -> dict[str, str]:
        """question_id -> benchmark tag; conflicting tags are a data error."""
        tags: dict[str, str] = {}
        for rec in self.records:
            prev = tags.setdefault(rec.question_id, rec.benchmark)
            if prev != rec.benchmark:
                raise DataError(
                    f"question {rec.question_id!r} tagged with two benchmarks "
                    f"({prev!r}, {rec.benchmark!r})"
                )
        return tags

    def question_subjects(self) -> dict[str, str | None]:
        subj: dict[str, str | None] = {}
        for rec in self.records:
            prev = subj.setdefault(rec.question_id, rec.subject)
            if prev != rec.subject:
                raise DataError(
                    f"question {rec.question_id!r} tagged with two subjects "
                    f"({prev!r}, {rec.subject!r})"
                )
        return subj


def load_responses(path) -> Dataset:
    """Parse a responses.jsonl file; errors carry the offending line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            unknown = set(obj) - _RECORD_KEYS
            if unknown:
                raise ParseError(f"{path}:{lineno}: unknown keys {sorted(unknown)}")
            try:
                rec = ResponseRecord(
                    model_id=obj["model_id"],
                    question_id=obj["question_id"],
                    correct=obj["correct"],
                    benchmark=obj["benchmark"],
                    subject=obj.get("subject"),
                )
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing key {exc.args[0]!r}") from None
            except DataError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            records.append(rec)
    return Dataset.from_records(records)


def save_responses(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in ds.records:
            fh.write(
                json.dumps(
                    {
                        "model_id": rec.model_id,
                        "question_id": rec.question_id,
                        "correct": rec.correct,
                        "benchmark": rec.benchmark,
                        "subject": rec.subject,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


# -- feature matrices ----------------------------------------------------

@dataclass(frozen=True)
class FeatureMatrix:
    """Frozen encoder outputs, one float32 row per question."""

    question_ids: tuple[str, ...]
    values: np.ndarray  # (n, p) float32, C-order
    index: dict[str, int] = field(repr=False, default=None)

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"feature values must be 2-D, got {self.values.shape}")
        if self.values.shape[0] != len(self.question_ids):
            raise ShapeError(
                f"{len(self.question_ids)} ids but {self.values.shape[0]} rows"
            )
        if self.index is None:
            object.__setattr__(
                self, "index", {qid: i for i, qid in enumerate(self.question_ids)}
            )
        if len(self.index) != len(self.question_ids):
            raise DataError("feature question ids are not unique")
        bad = np.flatnonzero(~np.all(np.isfinite(self.values), axis=1))
        if bad.size:
            raise DataError(f"non-finite feature value in row {int(bad[0])}")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def count(self) -> int:
        return self.values.shape[0]

    def row(self, question_id: str) -> np.ndarray:
        return self.values[self.index[question_id]]

    def rows(self, question_ids) -> np.ndarray:
        missing = [q for q in question_ids if q not in self.index]
        if missing:
            raise CoverageError(
                f"{len(missing)} question id(s) lack feature rows: "
                + ", ".join(repr(q) for q in missing[:10])
            )
        idx = np.fromiter((self.index[q] for q in question_ids), dtype=np.int64)
        return self.values[idx]


def load_features(manifest_path, blob_path) -> FeatureMatrix:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FEATURE_FORMAT:
        raise FormatError(f"unsupported feature format {manifest.get('format')!r}")
    dim = int(manifest["dim"])
    count = int(manifest["count"])
    qids = manifest["question_ids"]
    if len(qids) != count:
        raise FormatError(f"manifest count {count} != {len(qids)} question ids")
    if dim < 1:
        raise FormatError(f"feature dim must be positive, got {dim}")
    raw = Path(blob_path).read_bytes()
    expected = count * dim * 4
    if len(raw) != expected:
        raise FormatError(
            f"feature blob holds {len(raw)} bytes, manifest implies {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float32)
    return FeatureMatrix(tuple(qids), values)


def save_features(feats: FeatureMatrix, manifest_path, blob_path) -> None:
    manifest = {
        "format": FEATURE_FORMAT,
        "dim": feats.dim,
        "count": feats.count,
        "question_ids": list(feats.question_ids),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    blob = np.ascontiguousarray(feats.values, dtype="<f4")
    Path(blob_path).write_bytes(blob.tobytes())


# -- splits ----------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    """Disjoint record-index partition; regenerating with the same seed is identity."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    ratios: tuple[float, float, float]
    mode: str = "record"

    def part(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split part {name!r}") from None


def _counts(n: int, ratios) -> tuple[int, int, int]:
    c0 = int(round(ratios[0] * n))
    c1 = int(round(ratios[1] * n))
    c0 = min(c0, n)
    c1 = min(c1, n - c0)
    return c0, c1, n - c0 - c1


def make_split(ds: Dataset, ratios, seed: int, mode: str = "record") -> Split:
    """Seeded shuffle partition of record indices.

    ``mode="record"`` shuffles records directly (the default: the same question
    may be train for one model and test for another). ``mode="question"``
    partitions whole questions, for OOD-style experiments.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"need three non-negative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got sum {sum(ratios)!r}")
    if mode not in ("record", "question"):
        raise ConfigError(f"unknown split mode {mode!r}")

    rng = np.random.default_rng(seed)
    n = len(ds.records)
    if mode == "record":
        perm = rng.permutation(n)
        c0, c1, _ = _counts(n, ratios)
        parts = (perm[:c0], perm[c0 : c0 + c1], perm[c0 + c1 :])
    else:
        qids = list(ds.question_index)
        qperm = rng.permutation(len(qids))
        c0, c1, _ = _counts(len(qids), ratios)
        bucket_of = {}
        for pos, qpos in enumerate(qperm):
            bucket_of[qids[qpos]] = 0 if pos < c0 else (1 if pos < c0 + c1 else 2)
        buckets: tuple[list[int], list[int], list[int]] = ([], [], [])
        for i, rec in enumerate(ds.records):
            buckets[bucket_of[rec.question_id]].append(i)
        parts = tuple(np.asarray(b, dtype=np.int64) for b in buckets)

    train, val, test = (np.sort(np.asarray(p, dtype=np.int64)) for p in parts)
    return Split(train=train, val=val, test=test, seed=seed, ratios=ratios, mode=mode)


def save_split(split: Split, path) -> None:
    doc = {
        "seed": split.seed,
        "ratios": list(split.ratios),
        "mode": split.mode,
        "train": split.train.tolist(),
        "val": split.val.tolist(),
        "test": split.test.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_split(path) -> Split:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return Split(
        train=np.asarray(doc["train"], dtype=np.int64),
        val=np.asarray(doc["val"], dtype=np.int64),
        test=np.asarray(doc["test"], dtype=np.int64),
        seed=int(doc["seed"]),
        ratios=tuple(doc["ratios"]),
        mode=doc.get("mode", "record"),
    )


# -- checkpoints -----------------------------------------------------------

@dataclass(frozen=True)
class JeirtCheckpoint:
    """Adapter + model table snapshot, float32 end to end for bit-exact IO."""

    adapter: AdapterParams
    model_table: ModelTable
    embed_dim: int
    feature_dim: int
    train_meta: dict

    def __post_init__(self):
        if self.adapter.embed_dim != self.embed_dim:
            raise ShapeError(
                f"adapter embeds into {self.adapter.embed_dim}, checkpoint says {self.embed_dim}"
            )
        if self.adapter.feature_dim != self.feature_dim:
            raise ShapeError(
                f"adapter consumes {self.adapter.feature_dim}-dim features, "
                f"checkpoint says {self.feature_dim}"
            )
        if self.model_table.embed_dim != self.embed_dim:
            raise ShapeError("model table dimension differs from adapter output")

    @classmethod
    def build(cls, adapter: AdapterParams, table: ModelTable, train_meta=None):
        """Cast parameters to float32 (the wire dtype) and assemble a checkpoint."""
        adapter32 = adapter.astype(np.float32)
        table32 = table.astype(np.float32)
        return cls(
            adapter=adapter32,
            model_table=table32,
            embed_dim=adapter32.embed_dim,
            feature_dim=adapter32.feature_dim,
            train_meta=dict(train_meta or {}),
        )


_SEGMENT_ORDER = ("W1", "b1", "W2", "b2", "model_table")


def save_checkpoint(ckpt: JeirtCheckpoint, manifest_path, blob_path) -> None:
    segments = []
    chunks = []
    offset = 0
    named = {
        "W1": ckpt.adapter.W1,
        "b1": ckpt.adapter.b1,
        "W2": ckpt.adapter.W2,
        "b2": ckpt.adapter.b2,
        "model_table": ckpt.model_table.vectors,
    }
    for name in _SEGMENT_ORDER:
        arr = np.ascontiguousarray(named[name], dtype="<f4")
        segments.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "d": ckpt.embed_dim,
        "p": ckpt.feature_dim,
        "activation": ckpt.adapter.activation,
        "segments": segments,
        "model_ids": list(ckpt.model_table.model_ids),
        "train_meta": ckpt.train_meta,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    Path(blob_path).write_bytes(b"".join(chunks))


def load_checkpoint(manifest_path, blob_path) -> JeirtCheckpoint:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"unsupported checkpoint format {manifest.get('format')!r}")
    raw = Path(blob_path).read_bytes()
    arrays = {}
    total = 0
    for seg in manifest["segments"]:
        shape = tuple(int(s) for s in seg["shape"])
        nbytes = int(math.prod(shape)) * 4
        start = int(seg["offset"])
        if start + nbytes > len(raw):
            raise FormatError(
                f"checkpoint blob truncated: segment {seg['name']!r} needs bytes "
                f"[{start}, {start + nbytes}), blob has {len(raw)}"
            )
        arrays[seg["name"]] = (
            np.frombuffer(raw[start : start + nbytes], dtype="<f4")
            .reshape(shape)
            .astype(np.float32)
        )
        total = max(total, start + nbytes)
    if total != len(raw):
        raise FormatError(
            f"checkpoint blob holds {len(raw)} bytes, segments imply {total}"
        )
    missing = [n for n in _SEGMENT_ORDER if n not in arrays]
    if missing:
        raise FormatError(f"checkpoint missing segments {missing}")
    adapter = AdapterParams(
        W1=arrays["W1"],
        b1=arrays["b1"],
        W2=arrays["W2"],
        b2=arrays["b2"],
        activation=manifest.get("activation", "relu"),
    )
    table = ModelTable(tuple(manifest["model_ids"]), arrays["model_table"])
    return JeirtCheckpoint(
        adapter=adapter,
        model_table=table,
        embed_dim=int(manifest["d"]),
        feature_dim=int(manifest["p"]),
        train_meta=dict(manifest.get("train_meta", {})),
    )
