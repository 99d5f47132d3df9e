"""Ranking, mean-average-precision evaluation, and synthetic bursty data.

Ground truth distinguishes relevant items from junk items; junk ids are
deleted from a ranking before average precision is computed, and a flag
optionally removes the query itself from its own ranking.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .normalize import similarity
from .types import AggregateVector, DataFormatError, DescriptorSet, KernelMatrix, WeightVector


@dataclass(frozen=True)
class GroundTruth:
    """Per-query relevant and junk id sets."""

    relevant: Mapping[str, frozenset[str]]
    junk: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        relevant = {q: frozenset(ids) for q, ids in self.relevant.items()}
        junk = {q: frozenset(ids) for q, ids in self.junk.items()}
        for q, rel in relevant.items():
            overlap = rel & junk.get(q, frozenset())
            if overlap:
                raise ValueError(f"query {q!r}: ids {sorted(overlap)} are both relevant and junk")
        object.__setattr__(self, "relevant", relevant)
        object.__setattr__(self, "junk", junk)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the generated bursty toy datasets."""

    n_images: int
    burst_size: int
    n_distinct: int
    d: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_images", "burst_size", "n_distinct", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")


def rank(
    query: AggregateVector, index: Sequence[tuple[str, AggregateVector]]
) -> list[tuple[str, float]]:
    """Score the index against the query, best first; ties break by ascending id."""
    scored = [(item_id, similarity(query, vec)) for item_id, vec in index]
    return sorted(scored, key=lambda pair: (-pair[1], pair[0]))


def average_precision(
    ranked_ids: Sequence[str],
    relevant: frozenset[str] | set[str],
    junk: frozenset[str] | set[str] = frozenset(),
    exclude_id: str | None = None,
) -> float:
    """AP of one ranking: precision at each relevant hit, averaged over all
    relevant items (missing relevant items count against the score)."""
    effective = set(relevant)
    if exclude_id is not None:
        effective.discard(exclude_id)
    if not effective:
        raise ValueError("query has no relevant items")

    filtered = [i for i in ranked_ids if i not in junk and i != exclude_id]
    seen = set(filtered)
    missing = effective - seen
    if missing:
        warnings.warn(f"{len(missing)} relevant id(s) missing from the ranking", stacklevel=2)

    hits = 0
    total = 0.0
    for pos, item in enumerate(filtered, start=1):
        if item in effective:
            hits += 1
            total += hits / pos
    return total / len(effective)


def mean_average_precision(
    rankings: Mapping[str, Sequence[str]], truth: GroundTruth, exclude_self: bool = False
) -> float:
    """Mean of per-query APs, junk removed, optionally dropping the query id."""
    if not rankings:
        raise ValueError("no queries to evaluate")
    aps = []
    for qid, ranked in rankings.items():
        rel = truth.relevant.get(qid, frozenset())
        junk = truth.junk.get(qid, frozenset())
        aps.append(
            average_precision(ranked, rel, junk, exclude_id=qid if exclude_self else None)
        )
    return float(np.mean(aps))


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def _separated_unit(rng: np.random.Generator, existing: list[np.ndarray], d: int) -> np.ndarray:
    # Rejection-sample a direction away from the ones drawn so far; fall back
    # to the least-aligned candidate when the space is too small to separate.
    best, best_score = None, np.inf
    for _ in range(64):
        cand = _unit(rng.normal(size=d))
        score = max((abs(cand @ e) for e in existing), default=0.0)
        if score < 0.8:
            return cand
        if score < best_score:
            best, best_score = cand, score
    return best


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[list[tuple[str, DescriptorSet]], GroundTruth]:
    """Build a deterministic bursty dataset.

    Every image holds ``burst_size`` near-duplicates of one globally shared
    bursty direction plus ``n_distinct`` distinctive descriptors. Images are
    grouped in pairs (the last group absorbs a leftover image); a group shares
    its distinctive directions, which defines mutual relevance.
    """
    rng = np.random.default_rng(spec.seed)
    ids = [f"img{i:04d}" for i in range(spec.n_images)]

    groups: list[list[int]] = []
    i = 0
    while i < spec.n_images:
        if spec.n_images - i == 3:
            groups.append([i, i + 1, i + 2])
            i += 3
        else:
            groups.append(list(range(i, min(i + 2, spec.n_images))))
            i += 2

    modes: list[np.ndarray] = []
    burst_mode = _separated_unit(rng, modes, spec.d)
    modes.append(burst_mode)
    group_modes = []
    for _ in groups:
        rows = []
        for _ in range(spec.n_distinct):
            m = _separated_unit(rng, modes, spec.d)
            modes.append(m)
            rows.append(m)
        group_modes.append(np.stack(rows))

    images: list[tuple[str, DescriptorSet]] = []
    relevant: dict[str, frozenset[str]] = {}
    for g, members in enumerate(groups):
        for idx in members:
            burst = burst_mode + spec.noise_sigma * rng.normal(size=(spec.burst_size, spec.d))
            distinct = group_modes[g] + spec.noise_sigma * rng.normal(
                size=(spec.n_distinct, spec.d)
            )
            images.append((ids[idx], DescriptorSet(np.vstack([burst, distinct]))))
            relevant[ids[idx]] = frozenset(ids[m] for m in members if m != idx)

    images.sort(key=lambda pair: pair[0])
    return images, GroundTruth(relevant=relevant)


def export_weights(
    kern: KernelMatrix,
    weights: WeightVector,
    positions: Sequence[tuple[float, float]] | None = None,
) -> str:
    """Per-descriptor TSV: index, weight, and contribution a_i * (K a)_i.

    ``positions`` optionally appends x/y columns for plotting weights over an
    image.
    """
    if weights.n != kern.n:
        raise ValueError(f"weight vector has length {weights.n}, kernel order is {kern.n}")
    if positions is not None and len(positions) != kern.n:
        raise ValueError(f"got {len(positions)} positions for {kern.n} descriptors")

    contributions = weights.alpha * kern.matvec(weights.alpha)
    lines = ["idx\tweight\tcontribution" + ("\tx\ty" if positions is not None else "")]
    for i in range(kern.n):
        row = f"{i}\t{weights.alpha[i]:.12g}\t{contributions[i]:.12g}"
        if positions is not None:
            row += f"\t{positions[i][0]:.12g}\t{positions[i][1]:.12g}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def read_ground_truth(path: str | Path) -> GroundTruth:
    """Parse `query_id<TAB>rel|junk<TAB>item_id` lines."""
    relevant: dict[str, set[str]] = {}
    junk: dict[str, set[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, tag, item = parts
            if tag == "rel":
                relevant.setdefault(qid, set()).add(item)
            elif tag == "junk":
                junk.setdefault(qid, set()).add(item)
            else:
                raise DataFormatError(f"{path}:{lineno}: tag must be 'rel' or 'junk', got {tag!r}")
    return GroundTruth(
        relevant={q: frozenset(s) for q, s in relevant.items()},
        junk={q: frozenset(s) for q, s in junk.items()},
    )


def write_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(truth.relevant):
            for item in sorted(truth.relevant[qid]):
                fh.write(f"{qid}\trel\t{item}\n")
        for qid in sorted(truth.junk):
            for item in sorted(truth.junk[qid]):
                fh.write(f"{qid}\tjunk\t{item}\n")


def read_manifest(path: str | Path) -> list[tuple[str, str]]:
    """Parse an `id<TAB>vector_file_path` manifest, keeping file order."""
    entries: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 2 tab-separated fields")
            entries.append((parts[0], parts[1]))
    return entries
