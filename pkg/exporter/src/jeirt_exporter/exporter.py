"""Turn question text files into frozen-encoder feature files.

Input is JSON-lines of {"question_id", "text", "benchmark", "subject"|null};
output is the engine's feature format: a JSON manifest
{"format": "JEF1", "dim": p, "count": n, "question_ids": [...]} plus a
row-major little-endian float32 blob, one row per input line in input order.

Encoders are named with a scheme prefix:

* ``st:<model>``: a sentence-transformers model's pooled sentence vector.
* ``hf:<model>``: a transformers masked-LM encoder, mean pooling over the
  final hidden states (attention-mask weighted), 512-token truncation.
* ``hash:<dim>``: a deterministic text-hash featurizer needing no model
  weights; for pipeline dry-runs and format tests.

Embeddings are written unnormalized: all learned geometry belongs to the
downstream adapter. Inference runs in eval mode on a single thread so
repeated exports are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_FORMAT = "JEF1"
DEFAULT_MAX_TOKENS = 512


class ExporterError(Exception):
    pass


class ConfigError(ExporterError):
    """Bad arguments or unusable input file."""


class DataError(ExporterError):
    """Malformed question records."""


class EncoderLoadError(ExporterError):
    """The named encoder could not be loaded in this environment."""


@dataclass(frozen=True)
class QuestionText:
    question_id: str
    text: str
    benchmark: str = ""
    subject: str | None = None

    def __post_init__(self):
        if not self.question_id:
            raise DataError("question_id must be non-empty")
        if not self.text:
            raise DataError(f"question {self.question_id!r} has empty text")


def load_questions(path) -> list[QuestionText]:
    questions = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                q = QuestionText(
                    question_id=obj["question_id"],
                    text=obj["text"],
                    benchmark=obj.get("benchmark", ""),
                    subject=obj.get("subject"),
                )
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing key {exc.args[0]!r}") from None
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if q.question_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate question id {q.question_id!r}")
            seen.add(q.question_id)
            questions.append(q)
    if not questions:
        raise ConfigError(f"question file {path} holds no records")
    return questions


# -- encoders -----------------------------------------------------------------

class HashEncoder:
    """Deterministic per-text Gaussian features seeded by a text digest.

    No weights, no network; row values depend only on the text, so exports
    are reproducible anywhere. Meant for dry-runs and format tests, not for
    semantically meaningful geometry.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ConfigError(f"hash encoder dim must be >= 1, got {dim}")
        self.dim = dim

    def encode(self, texts, batch_size: int = 64) -> np.ndarray:
        rows = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            rows[i] = rng.standard_normal(self.dim).astype(np.float32)
        return rows


class SentenceTransformerEncoder:
    def __init__(self, model_name: str, max_tokens: int = DEFAULT_MAX_TOKENS):
        try:
            import torch
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderLoadError(f"sentence-transformers unavailable: {exc}") from None
        torch.set_num_threads(1)
        try:
            self._model = SentenceTransformer(model_name, device="cpu")
        except Exception as exc:
            raise EncoderLoadError(f"cannot load encoder {model_name!r}: {exc}") from None
        self._model.eval()
        self._model.max_seq_length = max_tokens
        self.dim = int(self._model.get_sentence_embedding_dimension())
        self.max_tokens = max_tokens

    def truncated_rows(self, texts) -> list[int]:
        tok = self._model.tokenizer
        out = []
        for i, text in enumerate(texts):
            if len(tok(text, truncation=False)["input_ids"]) > self.max_tokens:
                out.append(i)
        return out

    def encode(self, texts, batch_size: int = 64) -> np.ndarray:
        import torch

        with torch.inference_mode():
            vecs = self._model.encode(
                list(texts),
                batch_size=batch_size,
                convert_to_numpy=True,
                normalize_embeddings=False,
                show_progress_bar=False,
            )
        return np.asarray(vecs, dtype=np.float32)


class MaskedLmMeanEncoder:
    """transformers AutoModel with attention-masked mean pooling."""

    def __init__(self, model_name: str, max_tokens: int = DEFAULT_MAX_TOKENS):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderLoadError(f"transformers unavailable: {exc}") from None
        torch.set_num_threads(1)
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name)
        except Exception as exc:
            raise EncoderLoadError(f"cannot load encoder {model_name!r}: {exc}") from None
        self._model.eval()
        self.dim = int(self._model.config.hidden_size)
        self.max_tokens = max_tokens

    def truncated_rows(self, texts) -> list[int]:
        out = []
        for i, text in enumerate(texts):
            if len(self._tokenizer(text, truncation=False)["input_ids"]) > self.max_tokens:
                out.append(i)
        return out

    def encode(self, texts, batch_size: int = 64) -> np.ndarray:
        import torch

        rows = []
        with torch.inference_mode():
            for start in range(0, len(texts), batch_size):
                chunk = list(texts[start : start + batch_size])
                enc = self._tokenizer(
                    chunk,
                    padding=True,
                    truncation=True,
                    max_length=self.max_tokens,
                    return_tensors="pt",
                )
                hidden = self._model(**enc).last_hidden_state
                mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1)
                rows.append(pooled.cpu().numpy().astype(np.float32))
        return np.vstack(rows)


def load_encoder(name: str, max_tokens: int = DEFAULT_MAX_TOKENS):
    scheme, _, rest = name.partition(":")
    if scheme == "hash":
        try:
            return HashEncoder(int(rest))
        except ValueError:
            raise ConfigError(f"hash encoder takes an integer dim, got {rest!r}") from None
    if scheme == "st":
        return SentenceTransformerEncoder(rest, max_tokens)
    if scheme == "hf":
        return MaskedLmMeanEncoder(rest, max_tokens)
    if rest:
        raise ConfigError(f"unknown encoder scheme {scheme!r} (use st:, hf:, or hash:)")
    # bare name: treat as a sentence-transformers model
    return SentenceTransformerEncoder(name, max_tokens)


# -- output -------------------------------------------------------------------

def write_features(question_ids, values: np.ndarray, manifest_path, blob_path) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2 or values.shape[0] != len(question_ids):
        raise DataError(
            f"need one row per question, got {values.shape} for {len(question_ids)} ids"
        )
    if not np.all(np.isfinite(values)):
        raise DataError("encoder produced non-finite values")
    manifest = {
        "format": FEATURE_FORMAT,
        "dim": int(values.shape[1]),
        "count": int(values.shape[0]),
        "question_ids": list(question_ids),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    Path(blob_path).write_bytes(values.tobytes())


def export_features(
    questions_path,
    encoder_name: str,
    out_prefix,
    batch_size: int = 64,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    log=lambda msg: print(msg, file=sys.stderr),
) -> dict:
    """Encode a question file and write `<prefix>.manifest.json` + `<prefix>.f32`.

    Row order matches the input file order. Returns a summary dict.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    questions = load_questions(questions_path)
    encoder = load_encoder(encoder_name, max_tokens)
    texts = [q.text for q in questions]
    truncated = encoder.truncated_rows(texts) if hasattr(encoder, "truncated_rows") else []
    for i in truncated:
        log(f"[jeirt-export] truncating question {questions[i].question_id!r} to {max_tokens} tokens")
    values = encoder.encode(texts, batch_size=batch_size)
    manifest_path = Path(f"{out_prefix}.manifest.json")
    blob_path = Path(f"{out_prefix}.f32")
    write_features([q.question_id for q in questions], values, manifest_path, blob_path)
    return {
        "manifest": str(manifest_path),
        "blob": str(blob_path),
        "count": len(questions),
        "dim": int(values.shape[1]),
        "bytes": int(values.shape[0] * values.shape[1] * 4),
        "truncated_rows": len(truncated),
        "encoder": encoder_name,
    }
