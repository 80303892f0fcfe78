"""Surrogate joint image/text goal embedding.

Both "encoders" share one fixed random projection: a concept set or a bag of
visible concepts is mapped to a weighted sum of projection rows and
L2-normalized. The image side adds isotropic Gaussian noise before
normalization, which stands in for the nuisance content a real image
embedding carries and a caption does not.

Text goals are encoded through the same arithmetic as an image bag in which
every concept occurs once, so that with zero noise a view of a single
concept and the concept's name produce bit-identical vectors.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

DEFAULT_OBJECTS = (
    "sink", "stove", "fridge", "toilet", "bathtub", "bed",
    "wardrobe", "sofa", "tv", "plant", "table", "chair",
)
DEFAULT_ROOMS = ("kitchen", "bathroom", "bedroom", "living_room", "dining_room")

# Which objects a procedurally generated room may contain. "sink" appears in
# both kitchens and bathrooms so that room qualifiers are meaningful.
ROOM_AFFINITY = {
    "kitchen": ("sink", "stove", "fridge"),
    "bathroom": ("sink", "toilet", "bathtub"),
    "bedroom": ("bed", "wardrobe", "plant"),
    "living_room": ("sofa", "tv", "plant"),
    "dining_room": ("table", "chair", "plant"),
}


class UnknownConceptError(KeyError):
    def __init__(self, concept: str):
        super().__init__(concept)
        self.concept = concept

    def __str__(self) -> str:
        return f"concept {self.concept!r} is not in the vocabulary"


@dataclass(frozen=True)
class ConceptVocabulary:
    object_concepts: tuple[str, ...] = DEFAULT_OBJECTS
    room_concepts: tuple[str, ...] = DEFAULT_ROOMS

    def __post_init__(self):
        object.__setattr__(self, "object_concepts", tuple(self.object_concepts))
        object.__setattr__(self, "room_concepts", tuple(self.room_concepts))
        allc = self.object_concepts + self.room_concepts
        if len(set(allc)) != len(allc):
            dup = sorted({c for c in allc if allc.count(c) > 1})
            raise ValueError(f"duplicate concepts in vocabulary: {dup}")

    @property
    def concepts(self) -> tuple[str, ...]:
        return self.object_concepts + self.room_concepts

    def __len__(self) -> int:
        return len(self.object_concepts) + len(self.room_concepts)

    def __contains__(self, concept: str) -> bool:
        return concept in self._index

    @cached_property
    def _index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.concepts)}

    def index(self, concept: str) -> int:
        try:
            return self._index[concept]
        except KeyError:
            raise UnknownConceptError(concept) from None

    def object_index(self, concept: str) -> int:
        try:
            return self.object_concepts.index(concept)
        except ValueError:
            raise UnknownConceptError(concept) from None

    def room_index(self, concept: str) -> int:
        try:
            return self.room_concepts.index(concept)
        except ValueError:
            raise UnknownConceptError(concept) from None

    def is_room(self, concept: str) -> bool:
        return concept in self.room_concepts

    def to_dict(self) -> dict:
        return {"objects": list(self.object_concepts), "rooms": list(self.room_concepts)}

    @classmethod
    def from_dict(cls, d: Mapping) -> ConceptVocabulary:
        return cls(tuple(d["objects"]), tuple(d["rooms"]))


@dataclass(frozen=True)
class ConceptBag:
    """Counts of concepts visible from a pose."""

    counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for c, n in self.counts.items():
            if n < 0:
                raise ValueError(f"negative count for {c!r}")
        object.__setattr__(self, "counts", {c: int(n) for c, n in sorted(self.counts.items()) if n > 0})

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, concept: str) -> int:
        return self.counts.get(concept, 0)

    def concepts(self) -> frozenset[str]:
        return frozenset(self.counts)


@dataclass(frozen=True, eq=False)
class SemanticGoal:
    """Unit-norm float32 goal vector."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float32)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, SemanticGoal) and self.vector.tobytes() == other.vector.tobytes()

    def __hash__(self) -> int:
        return hash(self.vector.tobytes())

    def to_b64(self) -> str:
        return base64.b64encode(self.vector.astype("<f4").tobytes()).decode("ascii")

    @classmethod
    def from_b64(cls, s: str) -> SemanticGoal:
        return cls(np.frombuffer(base64.b64decode(s), dtype="<f4").astype(np.float32))


@dataclass(frozen=True, eq=False)
class EncoderParams:
    vocab: ConceptVocabulary
    projection: np.ndarray
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        p = np.ascontiguousarray(self.projection, dtype=np.float32)
        if p.ndim != 2 or p.shape[0] != len(self.vocab):
            raise ValueError(f"projection must be |vocab|x D, got {p.shape} for |vocab|={len(self.vocab)}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "projection", p)

    @classmethod
    def create(cls, vocab: ConceptVocabulary | None = None, dim: int = 64,
               noise_sigma: float = 0.1, seed: int = 0) -> EncoderParams:
        vocab = vocab or ConceptVocabulary()
        rng = np.random.default_rng(seed)
        proj = rng.standard_normal((len(vocab), dim)) / math.sqrt(dim)
        return cls(vocab, proj.astype(np.float32), float(noise_sigma), int(seed))

    @property
    def dim(self) -> int:
        return self.projection.shape[1]

    def with_noise(self, sigma: float) -> EncoderParams:
        return EncoderParams(self.vocab, self.projection, float(sigma), self.seed)

    def row(self, concept: str) -> np.ndarray:
        return self.projection[self.vocab.index(concept)]

    def to_dict(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "dim": self.dim,
            "seed": self.seed,
            "vocab": self.vocab.to_dict(),
            "noise_sigma": self.noise_sigma,
            "projection": base64.b64encode(self.projection.astype("<f4").tobytes()).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> EncoderParams:
        if d.get("v", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError(f"encoder params schema version mismatch: expected {SCHEMA_VERSION}, found {d.get('v')}")
        vocab = ConceptVocabulary.from_dict(d["vocab"])
        proj = np.frombuffer(base64.b64decode(d["projection"]), dtype="<f4").astype(np.float32)
        return cls(vocab, proj.reshape(len(vocab), int(d["dim"])), float(d["noise_sigma"]), int(d["seed"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> EncoderParams:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _weighted_sum(weights: Mapping[str, float], params: EncoderParams) -> np.ndarray:
    # summation in vocabulary order so that equal weight maps give equal bits
    idx = sorted((params.vocab.index(c), w) for c, w in weights.items())
    v = np.zeros(params.dim, dtype=np.float64)
    for i, w in idx:
        v += w * params.projection[i].astype(np.float64)
    return v


def _normalize(v: np.ndarray) -> SemanticGoal:
    n = float(np.sqrt(np.dot(v, v)))
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite embedding")
    return SemanticGoal((v / n).astype(np.float32))


def encode_image_view(bag: ConceptBag | Mapping[str, int], params: EncoderParams, noise_seed: int) -> SemanticGoal:
    """Embed what is visible from a goal pose: sum of log(1+count)-weighted
    rows, plus N(0, sigma^2 I) noise drawn from ``noise_seed``."""
    counts = bag.counts if isinstance(bag, ConceptBag) else {c: n for c, n in bag.items() if n > 0}
    if not counts:
        raise ValueError("cannot encode an empty concept bag")
    v = _weighted_sum({c: math.log1p(n) for c, n in counts.items()}, params)
    if params.noise_sigma > 0:
        v = v + params.noise_sigma * np.random.default_rng(noise_seed).standard_normal(params.dim)
    return _normalize(v)


def encode_text(concepts: Iterable[str], params: EncoderParams) -> SemanticGoal:
    """Embed a set of concept names (no prompt template, no noise)."""
    concepts = set(concepts)
    if not concepts:
        raise ValueError("cannot encode an empty concept set")
    for c in sorted(concepts):
        params.vocab.index(c)
    return _normalize(_weighted_sum({c: math.log1p(1) for c in concepts}, params))


def cosine_similarity(a: SemanticGoal, b: SemanticGoal) -> float:
    va = a.vector.astype(np.float64)
    vb = b.vector.astype(np.float64)
    c = float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))
    return min(1.0, max(-1.0, c))
