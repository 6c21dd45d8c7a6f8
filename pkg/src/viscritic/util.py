"""Small shared helpers: canonical JSON, hashing, bounded parallel map."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def canonical_json(value: Any) -> str:
    """Deterministic single-line JSON (sorted keys, tight separators)."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def parallel_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    max_workers: int = 8,
) -> list[tuple[T, R | None, Exception | None]]:
    """Apply fn to items with bounded parallelism.

    Returns (item, result, error) triples in input order; an item either has
    a result or an error, never both.
    """
    items = list(items)
    if not items:
        return []
    results: list[tuple[T, R | None, Exception | None]] = [None] * len(items)  # type: ignore[list-item]

    def run(i: int) -> None:
        try:
            results[i] = (items[i], fn(items[i]), None)
        except Exception as exc:  # noqa: BLE001 - summaries report per-item failures
            results[i] = (items[i], None, exc)

    workers = max(1, min(max_workers, len(items)))
    if workers == 1:
        for i in range(len(items)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(items))))
    return results
