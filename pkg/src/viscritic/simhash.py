"""64-bit simhash over code tokens, plus the greedy near-duplicate clustering.

Features are token runs (identifiers/numbers and punctuation runs) with all
whitespace dropped, so formatting-only edits do not move the fingerprint.
Each feature votes its md5-derived 64 bits; fingerprint bit i is set when
the weighted vote sum is positive. Deterministic across runs and platforms
(md5, not the salted builtin hash).
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field

DEFAULT_THRESHOLD = 3

_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+|[^A-Za-z0-9_\s]+")


def tokenize(code: str) -> list[str]:
    return _TOKEN_RE.findall(code)


def _feature_hash(feature: str) -> int:
    return int.from_bytes(hashlib.md5(feature.encode("utf-8")).digest()[:8], "big")


def simhash64(code: str, shingle: int = 1) -> int:
    """Fingerprint of the token stream; shingle > 1 hashes token n-grams."""
    tokens = tokenize(code)
    if shingle > 1:
        features = [
            "\x00".join(tokens[i : i + shingle])
            for i in range(max(len(tokens) - shingle + 1, 0))
        ]
        if not features and tokens:
            features = ["\x00".join(tokens)]
    else:
        features = tokens
    votes = [0] * 64
    for feature, weight in Counter(features).items():
        h = _feature_hash(feature)
        for bit in range(64):
            if h >> bit & 1:
                votes[bit] += weight
            else:
                votes[bit] -= weight
    fingerprint = 0
    for bit in range(64):
        if votes[bit] > 0:
            fingerprint |= 1 << bit
    return fingerprint


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


@dataclass
class SimhashIndex:
    threshold: int = DEFAULT_THRESHOLD
    entries: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.threshold <= 64:
            raise ValueError(f"threshold {self.threshold} outside [0, 64]")

    def add(self, instance_id: str, fingerprint: int):
        if not 0 <= fingerprint < 1 << 64:
            raise ValueError("fingerprint must be 64-bit")
        self.entries[instance_id] = fingerprint

    def nearest_within(self, fingerprint: int) -> str | None:
        """First entry (insertion order) within threshold, else None."""
        for entry_id, candidate in self.entries.items():
            if hamming(candidate, fingerprint) <= self.threshold:
                return entry_id
        return None


@dataclass
class DedupResult:
    kept: list[str]
    clusters: dict[str, list[str]]  # head id -> member ids queued for review

    def head_of(self, member_id: str) -> str | None:
        for head, members in self.clusters.items():
            if member_id in members:
                return head
        return None


def dedup(items, threshold: int = DEFAULT_THRESHOLD, shingle: int = 1) -> DedupResult:
    """Greedy append-order clustering of (id, code) pairs.

    A record joins the first kept record within the threshold, otherwise it
    becomes a cluster head and is kept. Cluster members go to the manual
    render-review queue rather than being dropped outright.
    """
    index = SimhashIndex(threshold)
    kept: list[str] = []
    clusters: dict[str, list[str]] = {}
    for item_id, code in items:
        fingerprint = simhash64(code, shingle=shingle)
        head = index.nearest_within(fingerprint)
        if head is None:
            index.add(item_id, fingerprint)
            kept.append(item_id)
            clusters[item_id] = []
        else:
            clusters[head].append(item_id)
    return DedupResult(kept, clusters)
