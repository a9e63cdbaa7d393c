"""Text encoders mapping sentences and ICO frames to fixed-length vectors.

The built-in encoder hashes lowercased word unigrams and bigrams into a
fixed number of signed buckets and L2-normalizes, keyed by the encoder's
identity string so two differently-named encoders embed differently. It is
dependency-free and byte-for-byte deterministic across processes, which is
what the desk-scale training and acceptance paths need.

Contextual encoders plug in through the same interface: any object with a
``dim``, an ``identity`` string, and ``encode(text) -> vector`` works, e.g.
via :class:`CallableEncoder` around a pooled-representation function.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .corpus import ICOPrompt
from .errors import EvinferError

ICO_DELIMITER = " | "


class Encoder(Protocol):
    dim: int
    identity: str
    default_learning_rate: float

    def encode(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class ICOFrame:
    """The prompt frame rendered to a single encoder input."""

    intervention: str
    comparator: str
    outcome: str

    @classmethod
    def from_prompt(cls, prompt: ICOPrompt) -> "ICOFrame":
        return cls(prompt.intervention, prompt.comparator, prompt.outcome)

    def render(self) -> str:
        return ICO_DELIMITER.join((self.intervention, self.comparator, self.outcome))


@dataclass(frozen=True)
class ConditionedInput:
    """Encoder output for one (prompt, sentence) pair, ICO part first."""

    ico_vector: np.ndarray | None
    sentence_vector: np.ndarray

    def concat(self) -> np.ndarray:
        if self.ico_vector is None:
            return self.sentence_vector
        return np.concatenate([self.ico_vector, self.sentence_vector])


_TOKEN = re.compile(r"[a-z0-9]+")


class HashingEncoder:
    """Signed feature hashing of word unigrams+bigrams, L2-normalized.

    Deterministic: the bucket and sign of each feature come from a keyed
    blake2b digest of the token, with the key derived from ``identity``.
    """

    default_learning_rate = 1e-2

    def __init__(self, dim: int = 1024, name: str = "hash-bow-v1"):
        if dim <= 0:
            raise EvinferError("MALFORMED_RECORD", f"encoder dim must be positive, got {dim}")
        self.dim = dim
        self.identity = f"{name}:d={dim}"
        self._key = hashlib.blake2b(self.identity.encode(), digest_size=16).digest()
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _features(self, text: str) -> list[str]:
        tokens = _TOKEN.findall(text.lower())
        return tokens + [f"{a}_{b}" for a, b in zip(tokens, tokens[1:])]

    def encode(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        features = self._features(text)
        if not features:
            raise EvinferError("EMPTY_INPUT", f"no encodable tokens in {text!r}")
        vec = np.zeros(self.dim, dtype=np.float64)
        for feat in features:
            digest = hashlib.blake2b(feat.encode(), key=self._key, digest_size=8).digest()
            value = int.from_bytes(digest, "big")
            sign = 1.0 if value & 1 else -1.0
            vec[(value >> 1) % self.dim] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # Possible only if signed counts cancel exactly in every bucket.
            raise EvinferError("EMPTY_INPUT", f"degenerate zero encoding for {text!r}")
        vec /= norm
        vec.setflags(write=False)
        with self._lock:
            self._cache[text] = vec
        return vec


class CallableEncoder:
    """Adapter wrapping any ``text -> vector`` function as an Encoder.

    This is the attachment point for pretrained contextual encoders: wrap a
    function returning the model's pooled (leading-token) representation.
    Fine-tuning, batching and devices stay inside the wrapped callable.
    """

    def __init__(
        self,
        fn: Callable[[str], np.ndarray],
        dim: int,
        identity: str,
        default_learning_rate: float = 2e-5,
        thread_safe: bool = False,
    ):
        self._fn = fn
        self.dim = dim
        self.identity = identity
        self.default_learning_rate = default_learning_rate
        self.thread_safe = thread_safe

    def encode(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EvinferError("EMPTY_INPUT", "cannot encode empty text")
        vec = np.asarray(self._fn(text), dtype=np.float64)
        if vec.shape != (self.dim,):
            raise EvinferError(
                "ENCODER_MISMATCH",
                f"{self.identity} returned shape {vec.shape}, expected ({self.dim},)",
            )
        return vec


def encode_text(encoder: Encoder, text: str) -> np.ndarray:
    """Encode one string; rejects input that is empty after normalization."""
    if not text.strip():
        raise EvinferError("EMPTY_INPUT", "cannot encode empty text")
    return encoder.encode(text)


def encode_conditioned(
    encoder: Encoder, ico: ICOFrame, sentence_text: str, conditioned: bool
) -> ConditionedInput:
    """Encode a sentence, prepending the encoded ICO frame when conditioned."""
    sentence_vector = encode_text(encoder, sentence_text)
    if not conditioned:
        return ConditionedInput(ico_vector=None, sentence_vector=sentence_vector)
    return ConditionedInput(
        ico_vector=encode_text(encoder, ico.render()), sentence_vector=sentence_vector
    )


def make_encoder(spec: str) -> Encoder:
    """Build an encoder from a CLI-style spec string.

    ``hash`` or ``hash:<dim>`` selects the built-in hashing encoder.
    """
    if spec == "hash":
        return HashingEncoder()
    if spec.startswith("hash:"):
        try:
            dim = int(spec.split(":", 1)[1])
        except ValueError:
            raise EvinferError("MALFORMED_RECORD", f"bad encoder spec {spec!r}") from None
        return HashingEncoder(dim=dim)
    raise EvinferError(
        "MALFORMED_RECORD",
        f"unknown encoder spec {spec!r}; use hash[:dim] or construct an adapter in code",
    )


class EncodingCache:
    """Optional on-disk key-value store for encoder outputs.

    Keys combine the encoder identity with a content hash of the input, so a
    cache file can be shared across encoders without collisions. Storage is
    append-friendly JSONL.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._store: dict[str, list[float]] = {}
        if self.path.is_file():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        record = json.loads(line)
                        self._store[record["key"]] = record["vector"]

    @staticmethod
    def key_for(identity: str, text: str) -> str:
        digest = hashlib.blake2b(text.encode(), digest_size=16).hexdigest()
        return f"{identity}:{digest}"

    def get(self, identity: str, text: str) -> np.ndarray | None:
        vec = self._store.get(self.key_for(identity, text))
        return None if vec is None else np.asarray(vec, dtype=np.float64)

    def put(self, identity: str, text: str, vector: np.ndarray) -> None:
        key = self.key_for(identity, text)
        if key in self._store:
            return
        self._store[key] = [float(x) for x in vector]
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "vector": self._store[key]}) + "\n")

    def wrap(self, encoder: Encoder) -> "CachedEncoder":
        return CachedEncoder(encoder, self)


class CachedEncoder:
    """Encoder wrapper that reads through an :class:`EncodingCache`."""

    def __init__(self, encoder: Encoder, cache: EncodingCache):
        self._encoder = encoder
        self._encoding_cache = cache
        self.dim = encoder.dim
        self.identity = encoder.identity
        self.default_learning_rate = encoder.default_learning_rate

    def encode(self, text: str) -> np.ndarray:
        cached = self._encoding_cache.get(self.identity, text)
        if cached is not None:
            return cached
        vec = self._encoder.encode(text)
        self._encoding_cache.put(self.identity, text, vec)
        return vec
