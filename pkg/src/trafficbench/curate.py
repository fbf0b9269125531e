"""Per-class balancing and stratified train/test splitting.

Randomness is drawn from numpy's PCG64 bit generator, seeded per class from
``SeedSequence([seed, h])`` where ``h`` is the first 8 bytes (big-endian) of
SHA-256 over the UTF-8 class name. Any implementation with PCG64 and
SeedSequence reproduces the same memberships.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .capture import FlowSession


class ClassTooSmall(UserWarning):
    """A class has fewer than two samples and cannot be stratified."""


class EmptyCorpus(ValueError):
    pass


@dataclass
class CurationConfig:
    n_min: int = 0
    n_max: int | None = None  # None means unlimited
    split_ratio: Fraction = Fraction(4, 5)
    seed: int = 0

    def __post_init__(self):
        self.split_ratio = Fraction(self.split_ratio).limit_denominator(10**6)
        if self.n_min < 0:
            raise ValueError("n_min must be non-negative")
        if self.n_max is not None:
            if self.n_max <= 0:
                raise ValueError("n_max must be positive")
            if self.n_min > self.n_max:
                raise ValueError(f"n_min ({self.n_min}) > n_max ({self.n_max})")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie strictly between 0 and 1")


@dataclass
class CuratedCorpus:
    train: list[FlowSession]
    test: list[FlowSession]
    per_class_counts: dict[str, tuple[int, int]] = field(default_factory=dict)
    removed_classes: list[str] = field(default_factory=list)

    def manifest(self, cfg: CurationConfig) -> dict:
        train_counts = _count(self.train)
        test_counts = _count(self.test)
        return {
            "seed": cfg.seed,
            "split_ratio": str(cfg.split_ratio),
            "n_min": cfg.n_min,
            "n_max": cfg.n_max,
            "prng": "numpy PCG64 via SeedSequence([seed, sha256(class)[:8]])",
            "classes": {
                name: {
                    "kept": kept,
                    "dropped": dropped,
                    "train": train_counts.get(name, 0),
                    "test": test_counts.get(name, 0),
                }
                for name, (kept, dropped) in sorted(self.per_class_counts.items())
            },
            "removed_classes": sorted(self.removed_classes),
            "train_size": len(self.train),
            "test_size": len(self.test),
        }

    def write_manifest(self, path: str | Path, cfg: CurationConfig) -> None:
        Path(path).write_text(json.dumps(self.manifest(cfg), indent=2, sort_keys=True) + "\n")


def _count(sessions: Sequence[FlowSession]) -> dict[str, int]:
    out: dict[str, int] = defaultdict(int)
    for s in sessions:
        out[s.label] += 1
    return dict(out)


def class_rng(seed: int, class_name: str, stream: int = 0) -> np.random.Generator:
    """Independent generator for one class; ``stream`` separates balancing from splitting."""
    digest = hashlib.sha256(class_name.encode("utf-8")).digest()
    h = int.from_bytes(digest[:8], "big")
    seq = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, h, stream])
    return np.random.Generator(np.random.PCG64(seq))


def _by_class(sessions: Sequence[FlowSession]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = defaultdict(list)
    for i, s in enumerate(sessions):
        if not s.label:
            raise ValueError(f"session {i} has an empty label")
        groups[s.label].append(i)
    return groups


def balance_classes(
    sessions: Sequence[FlowSession], cfg: CurationConfig
) -> tuple[list[FlowSession], list[str], dict[str, tuple[int, int]]]:
    """Drop classes under ``n_min`` and downsample classes over ``n_max``.

    Returns ``(kept_sessions, removed_classes, per_class_counts)`` where the
    counts map class -> (kept, dropped). Output is ordered by class name,
    then by original position.
    """
    kept: list[FlowSession] = []
    removed: list[str] = []
    counts: dict[str, tuple[int, int]] = {}
    for name, idx in sorted(_by_class(sessions).items()):
        total = len(idx)
        if total < cfg.n_min:
            removed.append(name)
            counts[name] = (0, total)
            continue
        if cfg.n_max is not None and total > cfg.n_max:
            rng = class_rng(cfg.seed, name, stream=0)
            chosen = np.sort(rng.choice(total, size=cfg.n_max, replace=False))
            idx = [idx[int(c)] for c in chosen]
        counts[name] = (len(idx), total - len(idx))
        kept.extend(sessions[i] for i in idx)
    return kept, removed, counts


def split_train_test(sessions: Sequence[FlowSession], cfg: CurationConfig) -> CuratedCorpus:
    """Stratified split: ``floor(count * ratio)`` per class to train, the rest to test."""
    train: list[FlowSession] = []
    test: list[FlowSession] = []
    counts: dict[str, tuple[int, int]] = {}
    removed: list[str] = []
    for name, idx in sorted(_by_class(sessions).items()):
        if len(idx) < 2:
            warnings.warn(f"class {name!r} has fewer than 2 samples; dropped", ClassTooSmall, stacklevel=2)
            removed.append(name)
            counts[name] = (0, len(idx))
            continue
        n_train = math.floor(len(idx) * cfg.split_ratio)
        perm = class_rng(cfg.seed, name, stream=1).permutation(len(idx))
        train_pos = sorted(int(p) for p in perm[:n_train])
        test_pos = sorted(int(p) for p in perm[n_train:])
        train.extend(sessions[idx[p]] for p in train_pos)
        test.extend(sessions[idx[p]] for p in test_pos)
        counts[name] = (len(idx), 0)
    return CuratedCorpus(train, test, counts, removed)


def curate(sessions: Sequence[FlowSession], cfg: CurationConfig) -> CuratedCorpus:
    """Balance then split; raises :class:`EmptyCorpus` if nothing survives."""
    balanced, removed, counts = balance_classes(sessions, cfg)
    corpus = split_train_test(balanced, cfg)
    for name in corpus.removed_classes:
        kept, dropped = counts[name]
        counts[name] = (0, kept + dropped)
    corpus.per_class_counts = counts
    corpus.removed_classes = sorted(set(removed) | set(corpus.removed_classes))
    if not corpus.train and not corpus.test:
        raise EmptyCorpus("no class survived curation")
    return corpus
