"""Item-title embeddings: binary persistence, caching, fetching, mocking.

Vectors are stored row-major float32 in a small binary container (magic
``TGE1``) with an optional ``.ids`` sidecar listing the external item ID of
each row. Fetched vectors are kept exactly as the provider returned them;
no re-normalization happens at ingestion. The cache is content-addressed
by (model name, title), so renaming an item without changing its title is
a cache hit.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np
import requests

from .corpus import ItemCatalog
from .errors import DataError

MAGIC = b"TGE1"
FORMAT_VERSION = 1
DEFAULT_BATCH_SIZE = 256
API_KEY_ENV = "TEXTGCN_EMBED_API_KEY"
ENDPOINT_ENV = "TEXTGCN_EMBED_URL"


class EmbeddingServiceError(RuntimeError):
    """Embedding endpoint failure that survived all retries."""


def validate_matrix(matrix: np.ndarray) -> np.ndarray:
    """Coerce to contiguous float32 rows and require finite values."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise DataError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise DataError("non-finite value in embedding matrix")
    return matrix


def save_matrix(matrix: np.ndarray, path: str | Path, ids: list[str] | None = None) -> None:
    """Write a float32 matrix in the TGE1 container; bit-exact round trip."""
    matrix = validate_matrix(matrix)
    n_rows, dim = matrix.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, n_rows, dim))
        fh.write(matrix.tobytes())
    if ids is not None:
        if len(ids) != n_rows:
            raise DataError("sidecar ID count does not match row count")
        Path(str(path) + ".ids").write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def load_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not an embedding file")
    version, n_rows, dim = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported embedding file version {version}")
    need = 16 + n_rows * dim * 4
    if len(raw) < need:
        raise DataError(f"{path}: truncated embedding file")
    matrix = np.frombuffer(raw[16:need], dtype="<f4").reshape(n_rows, dim).copy()
    if not np.isfinite(matrix).all():
        raise DataError(f"{path}: non-finite value in embedding file")
    return matrix


def load_ids(path: str | Path) -> list[str]:
    return Path(str(path) + ".ids").read_text(encoding="utf-8").splitlines()


def cache_key(model: str, title: str) -> str:
    """Content hash of (model, title); 256-bit hex."""
    return hashlib.sha256(f"{model}\x1f{title}".encode("utf-8")).hexdigest()


class VectorCache:
    """Directory of per-key vector files; writes are atomic and serialized."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / key

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        if not path.exists():
            return None
        return load_matrix(path)[0]

    def put(self, key: str, vector: np.ndarray) -> None:
        with self._lock:
            tmp = self._path(key).with_suffix(".tmp")
            save_matrix(vector.reshape(1, -1), tmp)
            os.replace(tmp, self._path(key))


def _post_json(url: str, payload: dict, api_key: str | None, timeout: float = 60.0) -> dict:
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    resp = requests.post(url, data=json.dumps(payload), headers=headers, timeout=timeout)
    if not 200 <= resp.status_code < 300:
        raise EmbeddingServiceError(f"HTTP {resp.status_code} from {url}: {resp.text[:500]}")
    return resp.json()


def _embed_batch(
    post: Callable[[str, dict], dict],
    endpoint: str,
    model: str,
    titles: list[str],
    max_attempts: int,
    backoff: float,
    sleep: Callable[[float], None],
) -> list[np.ndarray]:
    """One request with retries; vectors reordered by the response index."""
    payload = {"model": model, "input": list(titles)}
    last_err: Exception | None = None
    for attempt in range(max_attempts):
        try:
            body = post(endpoint, payload)
            break
        except Exception as err:  # noqa: BLE001 - retried, re-raised below
            last_err = err
            if attempt + 1 < max_attempts:
                sleep(backoff * (2 ** attempt))
    else:
        raise EmbeddingServiceError(
            f"embedding request failed after {max_attempts} attempts: {last_err}"
        ) from last_err
    data = body.get("data")
    if not isinstance(data, list) or len(data) != len(titles):
        raise EmbeddingServiceError(
            f"endpoint returned {0 if not isinstance(data, list) else len(data)} "
            f"vectors for {len(titles)} inputs"
        )
    out: list[np.ndarray | None] = [None] * len(titles)
    for entry in data:
        idx = int(entry["index"])
        out[idx] = np.asarray(entry["embedding"], dtype=np.float32)
    if any(v is None for v in out):
        raise EmbeddingServiceError("response indices do not cover all inputs")
    return out  # type: ignore[return-value]


def fetch_embeddings(
    catalog: ItemCatalog,
    endpoint: str,
    model: str,
    batch_size: int = DEFAULT_BATCH_SIZE,
    cache: VectorCache | None = None,
    api_key: str | None = None,
    concurrency: int = 1,
    post: Callable[[str, dict], dict] | None = None,
    max_attempts: int = 3,
    backoff: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> np.ndarray:
    """Fetch one vector per catalog title, consulting the cache first.

    Only titles missing from the cache are sent (deduplicated, batched);
    the returned matrix always follows catalog order. ``post`` is the
    transport and exists mainly so tests can inject a fake endpoint.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if post is None:
        if api_key is None:
            api_key = os.environ.get(API_KEY_ENV)
        post = lambda url, payload: _post_json(url, payload, api_key)

    keys = [cache_key(model, t) for t in catalog.titles]
    vectors: dict[str, np.ndarray] = {}
    if cache is not None:
        for key in keys:
            if key not in vectors:
                hit = cache.get(key)
                if hit is not None:
                    vectors[key] = hit

    missing: list[tuple[str, str]] = []
    seen = set(vectors)
    for key, title in zip(keys, catalog.titles):
        if key not in seen:
            seen.add(key)
            missing.append((key, title))

    batches = [missing[i:i + batch_size] for i in range(0, len(missing), batch_size)]

    def run(batch: list[tuple[str, str]]) -> list[np.ndarray]:
        return _embed_batch(post, endpoint, model, [t for _, t in batch],
                            max_attempts, backoff, sleep)

    if concurrency > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(run, batches))
    else:
        results = [run(b) for b in batches]

    for batch, vecs in zip(batches, results):
        for (key, _), vec in zip(batch, vecs):
            vectors[key] = vec
            if cache is not None:
                cache.put(key, vec)

    dims = {v.shape[0] for v in vectors.values()}
    if len(dims) > 1:
        raise EmbeddingServiceError(f"inconsistent embedding dimension: {sorted(dims)}")
    matrix = np.stack([vectors[k] for k in keys]) if keys else np.zeros((0, 0), np.float32)
    return validate_matrix(matrix)


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x1f{token}".encode("utf-8"), digest_size=16).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def mock_embed(catalog: ItemCatalog, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in for the embedding service.

    Each whitespace token hashes to a pseudo-random unit vector (blake2b
    keyed by the seed, expanded through PCG64); a title embeds as the
    normalized mean of its token vectors. Identical titles give identical
    rows, and titles sharing words land near each other, mimicking how a
    text model places related titles. Reproducible across platforms: the
    only float work is a fixed-order mean over explicitly seeded draws.
    """
    if dim < 2:
        raise DataError("mock embedding dim must be >= 2")
    token_vecs: dict[str, np.ndarray] = {}
    rows = np.zeros((catalog.n_items, dim), dtype=np.float64)
    for pos, title in enumerate(catalog.titles):
        tokens = title.split()
        acc = np.zeros(dim, dtype=np.float64)
        for tok in tokens:
            vec = token_vecs.get(tok)
            if vec is None:
                vec = _token_vector(tok, dim, seed)
                token_vecs[tok] = vec
            acc += vec
        norm = np.linalg.norm(acc)
        if norm == 0.0:
            raise DataError(f"title at index {pos} produced a zero vector")
        rows[pos] = acc / norm
    return rows.astype(np.float32)
