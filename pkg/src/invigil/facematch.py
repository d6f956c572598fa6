"""Face identity verification against a pre-exam reference set.

A face is represented by a 128-dimensional characteristic vector. The
probe vector captured during the session is compared with every
reference vector by Euclidean distance; the minimum of those distances
decides between "Clean" and "AnotherPerson" at a configurable
threshold (default 0.6, ties resolved as Clean).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import EngineError

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 128
DEFAULT_FACE_THRESHOLD = 0.6
DEFAULT_REFERENCE_COUNT = 20


class NonFiniteInput(EngineError):
    """An embedding component is NaN or infinite."""


class EmptyReferenceSet(EngineError):
    """The reference set contains no embeddings."""


class Verdict(str, Enum):
    CLEAN = "Clean"
    ANOTHER_PERSON = "AnotherPerson"


@dataclass(frozen=True, eq=False)
class Embedding:
    """A 128-component face characteristic vector.

    Values are treated as opaque: no re-normalisation is applied, the
    distance threshold presumes the upstream embedder's scale.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (EMBEDDING_DIM,):
            raise NonFiniteInput(
                f"embedding must have exactly {EMBEDDING_DIM} components, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput("embedding contains non-finite components")
        object.__setattr__(self, "values", arr)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __hash__(self) -> int:  # frozen dataclass without field-based hash
        return hash(self.values.tobytes())

    @classmethod
    def from_list(cls, values: Iterable[float]) -> "Embedding":
        return cls(np.asarray(list(values), dtype=np.float64))


@dataclass(frozen=True, eq=False)
class ReferenceSet:
    """The embeddings captured before the session that define the candidate.

    The expected count is configurable (default 20); smaller sets are
    accepted with a warning because real capture can lose frames.
    """

    references: tuple[Embedding, ...]
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        refs = tuple(self.references)
        if not refs:
            raise EmptyReferenceSet("reference set must contain at least one embedding")
        object.__setattr__(self, "references", refs)
        object.__setattr__(self, "matrix", np.stack([r.values for r in refs]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReferenceSet):
            return NotImplemented
        return self.references == other.references

    def __len__(self) -> int:
        return len(self.references)

    @classmethod
    def from_lists(
        cls,
        rows: Sequence[Sequence[float]],
        expected_count: int = DEFAULT_REFERENCE_COUNT,
    ) -> "ReferenceSet":
        if len(rows) < expected_count:
            logger.warning(
                "reference set has %d embeddings, expected %d", len(rows), expected_count
            )
        return cls(tuple(Embedding.from_list(row) for row in rows))


@dataclass(frozen=True)
class IdentityDecision:
    min_distance: float
    verdict: Verdict
    threshold_used: float


def euclidean_distance(a: Embedding, b: Embedding) -> float:
    """Root of the summed squared component differences of two embeddings."""
    diff = a.values - b.values
    return float(np.sqrt(np.dot(diff, diff)))


def min_reference_distance(probe: Embedding, refs: ReferenceSet) -> float:
    """Smallest Euclidean distance from the probe to any reference."""
    diffs = refs.matrix - probe.values
    return float(np.sqrt(np.einsum("ij,ij->i", diffs, diffs).min()))


def classify_identity(
    probe: Embedding,
    refs: ReferenceSet,
    threshold: float = DEFAULT_FACE_THRESHOLD,
) -> IdentityDecision:
    """Decide Clean vs AnotherPerson from the minimum reference distance.

    The boundary case min_distance == threshold counts as Clean.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    min_d = min_reference_distance(probe, refs)
    verdict = Verdict.CLEAN if min_d <= threshold else Verdict.ANOTHER_PERSON
    return IdentityDecision(min_distance=min_d, verdict=verdict, threshold_used=threshold)
