"""Embedding backends: a deterministic mock, a precomputed store, and an HTTP client.

All backends return L2-normalized float vectors of one fixed dimension and
share the same surface, so the scorer never knows which one it is talking to.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .datasets import AttributeDataset
from .prompts import Prompt

UNIT_NORM_TOL = 1e-6

TEXT_KEY = 0
IMAGE_KEY = 1

_STORE_MAGIC = b"VLES"
_STORE_VERSION = 1


class BackendError(RuntimeError):
    """Base class for embedding-backend failures."""


class StoreMissError(BackendError, KeyError):
    """A requested key is not present in a precomputed store."""


class DimensionMismatchError(BackendError):
    """A backend returned vectors of an unexpected dimension."""


class TransportError(BackendError):
    """A service request failed after exhausting retries; safe to retry later."""


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm, preserving direction."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return matrix / norms


@dataclass(frozen=True)
class BackendDescriptor:
    """Everything needed to (re)construct a backend, recorded in run manifests."""

    kind: str  # "store" | "service" | "mock"
    model_name: str
    dim: int
    location: str = ""
    seed: int = 0

    def as_dict(self) -> dict:
        return {
            "kind": self.kind, "model_name": self.model_name, "dim": self.dim,
            "location": self.location, "seed": self.seed,
        }


class EmbeddingBackend:
    """Common surface of all backends; subclasses fill in the encoders."""

    model_name: str
    dim: int

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def embed_prompts(self, prompts: Sequence[Prompt]) -> np.ndarray:
        return self.embed_texts([p.text for p in prompts])

    def embed_images(self, image_ids: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def embed_image(self, image_id: int) -> np.ndarray:
        return self.embed_images([image_id])[0]

    def _check(self, matrix: np.ndarray, n_expected: int) -> np.ndarray:
        if matrix.shape != (n_expected, self.dim):
            raise DimensionMismatchError(
                f"{self.model_name}: expected shape {(n_expected, self.dim)}, "
                f"got {matrix.shape}"
            )
        return matrix


def _stable_text_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class MockStructure:
    """Weights of the synthetic embedding geometry used by the mock backend."""

    class_weight: float = 1.0
    attribute_weight: float = 0.0
    noise_weight: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.class_weight, self.attribute_weight, self.noise_weight) < 0:
            raise ValueError("mock weights must be non-negative")


class MockBackend(EmbeddingBackend):
    """Deterministic backend that embeds structural tags instead of running a model.

    A prompt tagged with class ``k`` and attributes ``A`` maps to
    ``cw * dir(class k) + aw * mean(dir(a) for a in A) + nw * dir(text)``,
    L2-normalized; image embeddings use the image's ground-truth class and
    attributes (falling back to its class profile while per-image sets are
    still empty). Directions are unit Gaussian vectors drawn from counters
    seeded only by integers, so outputs are identical across runs and
    platforms.
    """

    _CLASS_TAG = 1
    _ATTR_TAG = 2
    _TEXT_TAG = 3

    def __init__(
        self,
        dataset: AttributeDataset,
        structure: MockStructure,
        dim: int = 256,
        model_name: str = "mock",
    ) -> None:
        self.dataset = dataset
        self.structure = structure
        self.dim = dim
        self.model_name = model_name
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(
            kind="mock", model_name=self.model_name, dim=self.dim, seed=self.structure.seed
        )

    def _direction(self, tag: int, index: int) -> np.ndarray:
        key = (tag, index)
        cached = self._cache.get(key)
        if cached is None:
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((self.structure.seed, tag, index)))
            )
            cached = l2_normalize(rng.standard_normal(self.dim))
            self._cache[key] = cached
        return cached

    def _compose(
        self, class_id: int | None, attribute_ids: Sequence[int], text: str
    ) -> np.ndarray:
        s = self.structure
        v = np.zeros(self.dim)
        if class_id is not None and s.class_weight > 0:
            v += s.class_weight * self._direction(self._CLASS_TAG, class_id)
        if attribute_ids and s.attribute_weight > 0:
            bag = np.mean(
                [self._direction(self._ATTR_TAG, a) for a in attribute_ids], axis=0
            )
            v += s.attribute_weight * bag
        noise_weight = s.noise_weight
        if not np.any(v):
            # Untagged or weightless inputs would be zero vectors; fall back to
            # pure text noise so every embedding stays well-defined.
            noise_weight = noise_weight or 1.0
        if noise_weight > 0:
            v += noise_weight * self._direction(self._TEXT_TAG, _stable_text_hash(text))
        return l2_normalize(v)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise BackendError("empty text batch")
        return self._check(np.stack([self._compose(None, (), t) for t in texts]), len(texts))

    def embed_prompts(self, prompts: Sequence[Prompt]) -> np.ndarray:
        if not prompts:
            raise BackendError("empty prompt batch")
        rows = [self._compose(p.class_id, p.attribute_ids, p.text) for p in prompts]
        return self._check(np.stack(rows), len(prompts))

    def embed_images(self, image_ids: Sequence[int]) -> np.ndarray:
        rows = []
        for image_id in image_ids:
            try:
                img = self.dataset.images[image_id]
            except IndexError:
                raise BackendError(f"unknown image id {image_id}") from None
            attrs = img.attribute_ids or self.dataset.profile(img.class_id).attribute_ids
            rows.append(self._compose(img.class_id, attrs, f"image:{image_id}"))
        return self._check(np.stack(rows), len(image_ids))


class EmbeddingStore:
    """Reads/writes the binary store: a JSON header then fixed-layout records.

    Layout: magic ``VLES``, u32 version, u32 header length, UTF-8 JSON header
    ``{"model": ..., "dim": ..., "count": ...}``, then per record one u8 key
    kind (0 text, 1 image), u32 key length, the UTF-8 key, and dim float32
    values. All integers and floats little-endian. Keys are full strings, so
    lookups cannot collide (the in-memory index is an ordinary dict).
    """

    def __init__(self, model_name: str, dim: int) -> None:
        self.model_name = model_name
        self.dim = dim
        self._records: dict[tuple[int, str], np.ndarray] = {}

    def put(self, kind: int, key: str, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float32)
        if values.shape != (self.dim,):
            raise DimensionMismatchError(
                f"store {self.model_name}: expected dim {self.dim}, got {values.shape}"
            )
        self._records[(kind, key)] = values

    def get(self, kind: int, key: str) -> np.ndarray:
        try:
            return self._records[(kind, key)]
        except KeyError:
            what = "text" if kind == TEXT_KEY else "image"
            raise StoreMissError(f"store {self.model_name}: no {what} record for {key!r}")

    def __len__(self) -> int:
        return len(self._records)

    def save(self, path: str | Path) -> None:
        header = json.dumps(
            {"model": self.model_name, "dim": self.dim, "count": len(self._records)}
        ).encode("utf-8")
        with Path(path).open("wb") as fh:
            fh.write(_STORE_MAGIC)
            fh.write(struct.pack("<II", _STORE_VERSION, len(header)))
            fh.write(header)
            for (kind, key), values in self._records.items():
                key_bytes = key.encode("utf-8")
                fh.write(struct.pack("<BI", kind, len(key_bytes)))
                fh.write(key_bytes)
                fh.write(values.astype("<f4").tobytes())

    @classmethod
    def open(cls, path: str | Path) -> "EmbeddingStore":
        raw = Path(path).read_bytes()
        if raw[:4] != _STORE_MAGIC:
            raise BackendError(f"{path}: not an embedding store (bad magic)")
        version, header_len = struct.unpack_from("<II", raw, 4)
        if version != _STORE_VERSION:
            raise BackendError(f"{path}: unsupported store version {version}")
        offset = 12
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
        offset += header_len
        store = cls(model_name=header["model"], dim=int(header["dim"]))
        for _ in range(int(header["count"])):
            kind, key_len = struct.unpack_from("<BI", raw, offset)
            offset += 5
            key = raw[offset : offset + key_len].decode("utf-8")
            offset += key_len
            values = np.frombuffer(raw, dtype="<f4", count=store.dim, offset=offset).copy()
            offset += store.dim * 4
            store._records[(kind, key)] = values
        return store

    def save_ndjson(self, path: str | Path) -> None:
        """Hand-inspectable debug variant of the binary layout."""
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {"kind": "header", "model": self.model_name, "dim": self.dim,
                     "count": len(self._records)}
                )
                + "\n"
            )
            for (kind, key), values in self._records.items():
                fh.write(
                    json.dumps(
                        {"kind": "text" if kind == TEXT_KEY else "image", "key": key,
                         "values": [float(v) for v in values]}
                    )
                    + "\n"
                )

    @classmethod
    def open_ndjson(cls, path: str | Path) -> "EmbeddingStore":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        store = cls(model_name=header["model"], dim=int(header["dim"]))
        for line in lines[1:]:
            if not line.strip():
                continue
            record = json.loads(line)
            kind = TEXT_KEY if record["kind"] == "text" else IMAGE_KEY
            store.put(kind, record["key"], np.asarray(record["values"], dtype=np.float32))
        return store


class StoreBackend(EmbeddingBackend):
    """Serves embeddings from a precomputed store, keyed by exact text/image id.

    Stored vectors that are already unit-norm are returned bit-for-bit;
    anything else is normalized on the way out.
    """

    def __init__(self, store: EmbeddingStore, location: str = "") -> None:
        self.store = store
        self.model_name = store.model_name
        self.dim = store.dim
        self.location = location

    @classmethod
    def open(cls, path: str | Path) -> "StoreBackend":
        return cls(EmbeddingStore.open(path), location=str(path))

    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(
            kind="store", model_name=self.model_name, dim=self.dim, location=self.location
        )

    @staticmethod
    def _finalize(values: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(values.astype(np.float64)))
        if abs(norm - 1.0) <= UNIT_NORM_TOL:
            return values
        return l2_normalize(values)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise BackendError("empty text batch")
        return self._check(
            np.stack([self._finalize(self.store.get(TEXT_KEY, t)) for t in texts]), len(texts)
        )

    def embed_images(self, image_ids: Sequence[int]) -> np.ndarray:
        rows = [self._finalize(self.store.get(IMAGE_KEY, str(i))) for i in image_ids]
        return self._check(np.stack(rows), len(image_ids))


class ServiceBackend(EmbeddingBackend):
    """Client for the embedding HTTP service.

    POST /v1/embed_text   {"model": str, "texts": [str, ...]}
    POST /v1/embed_image  {"model": str, "image_ids": [str, ...]}
    GET  /v1/info         -> {"model": str, "dim": int}

    Batches are capped at 256 inputs; up to ``in_flight`` batches run
    concurrently and are reassembled by batch index, never arrival order.
    Failed requests are retried up to 3 times with exponential backoff.
    """

    BATCH_CAP = 256
    RETRIES = 3

    def __init__(
        self,
        base_url: str,
        model_name: str | None = None,
        timeout: float = 30.0,
        in_flight: int = 4,
        retry_wait: float = 0.5,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.in_flight = in_flight
        self.retry_wait = retry_wait
        self._session = requests.Session()
        info = self._request_json("GET", "/v1/info")
        self.model_name = model_name or info["model"]
        self.dim = int(info["dim"])

    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(
            kind="service", model_name=self.model_name, dim=self.dim, location=self.base_url
        )

    def _request_json(self, method: str, route: str, body: dict | None = None) -> dict:
        url = self.base_url + route
        last_error: Exception | None = None
        for attempt in range(self.RETRIES):
            try:
                response = self._session.request(method, url, json=body, timeout=self.timeout)
                if response.status_code >= 500:
                    raise requests.RequestException(
                        f"server error {response.status_code}: {response.text[:200]}"
                    )
                if response.status_code >= 400:
                    raise BackendError(
                        f"{url}: HTTP {response.status_code}: {response.text[:200]}"
                    )
                return response.json()
            except BackendError:
                raise
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.RETRIES:
                    time.sleep(self.retry_wait * 2**attempt)
        raise TransportError(f"{url}: failed after {self.RETRIES} attempts: {last_error}")

    def _embed_batched(self, route: str, key: str, items: list[str]) -> np.ndarray:
        batches = [
            items[i : i + self.BATCH_CAP] for i in range(0, len(items), self.BATCH_CAP)
        ]

        def one(batch: list[str]) -> np.ndarray:
            payload = self._request_json(
                "POST", route, {"model": self.model_name, key: batch}
            )
            if int(payload["dim"]) != self.dim:
                raise DimensionMismatchError(
                    f"{self.model_name}: service returned dim {payload['dim']}, "
                    f"expected {self.dim}"
                )
            return np.asarray(payload["vectors"], dtype=np.float64)

        if len(batches) == 1:
            parts = [one(batches[0])]
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=self.in_flight) as pool:
                parts = list(pool.map(one, batches))
        return normalize_rows(np.vstack(parts))

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise BackendError("empty text batch")
        return self._check(self._embed_batched("/v1/embed_text", "texts", list(texts)), len(texts))

    def embed_images(self, image_ids: Sequence[int]) -> np.ndarray:
        ids = [str(i) for i in image_ids]
        return self._check(
            self._embed_batched("/v1/embed_image", "image_ids", ids), len(image_ids)
        )


class CachingBackend(EmbeddingBackend):
    """Memoizes prompt/text/image embeddings of a slower backend.

    Keys are exact (text, class tag, attribute tags) triples, so caching can
    never change results, only skip repeated encoder calls.
    """

    def __init__(self, inner: EmbeddingBackend) -> None:
        self.inner = inner
        self.model_name = inner.model_name
        self.dim = inner.dim
        self._prompts: dict[tuple, np.ndarray] = {}
        self._images: dict[int, np.ndarray] = {}

    def descriptor(self) -> BackendDescriptor:
        return self.inner.descriptor()  # type: ignore[attr-defined]

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return self.inner.embed_texts(texts)

    def embed_prompts(self, prompts: Sequence[Prompt]) -> np.ndarray:
        keys = [(p.text, p.class_id, p.attribute_ids) for p in prompts]
        missing = [i for i, k in enumerate(keys) if k not in self._prompts]
        if missing:
            fresh = self.inner.embed_prompts([prompts[i] for i in missing])
            for row, i in enumerate(missing):
                self._prompts[keys[i]] = fresh[row]
        return np.stack([self._prompts[k] for k in keys])

    def embed_images(self, image_ids: Sequence[int]) -> np.ndarray:
        missing = [i for i in image_ids if i not in self._images]
        if missing:
            fresh = self.inner.embed_images(missing)
            for row, i in enumerate(missing):
                self._images[i] = fresh[row]
        return np.stack([self._images[i] for i in image_ids])
