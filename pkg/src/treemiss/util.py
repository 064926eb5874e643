"""Shared plumbing: canonical JSON, atomic writes, keyed RNG streams, worker pools."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Short stable digest of a JSON-serializable configuration."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory plus rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp.", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *key); stable regardless of scheduling order."""
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    )


def parallel_map(fn, items, workers=1):
    """Map with an optional process pool; serial when workers <= 1."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def lexsorted_rows(values: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically so fits cannot depend on input order."""
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] <= 1:
        return np.array(values, copy=True)
    # lexsort keys run last-to-first; NaNs sort high, which is fine for canonicalization
    order = np.lexsort(tuple(values[:, j] for j in range(values.shape[1] - 1, -1, -1)))
    return values[order]
