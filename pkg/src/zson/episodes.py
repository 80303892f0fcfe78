"""Goal-view (IMAGE) and object-category (OBJECT) episode generation and JSONL storage."""

from __future__ import annotations

import json
import zlib
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import EncoderParams, SemanticGoal, encode_image_view, encode_text
from .worldsim import AgentPose, GridWorld, KinematicsConfig, visible_concept_bag

EPISODE_SCHEMA_VERSION = 1
IMAGE, OBJECT = "IMAGE", "OBJECT"

# shortest-path bands in metres; the HARD band is closed on the right
TIERS = {"EASY": (1.5, 3.0), "MEDIUM": (3.0, 5.0), "HARD": (5.0, 10.0)}
GOAL_HEADINGS = (0, 90, 180, 270)
MIN_OBJECT_START_DISTANCE = 1.5
MAX_TRIES = 10_000


class EpisodeGenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


def in_tier(tier: str, d: float) -> bool:
    lo, hi = TIERS[tier]
    return lo <= d <= hi if tier == "HARD" else lo <= d < hi


@dataclass(frozen=True, eq=False)
class Episode:
    id: str
    world_id: str
    start: AgentPose
    goal_kind: str
    goal_embedding: SemanticGoal
    shortest_path: float
    goal_pose: AgentPose | None = None
    goal_concepts: tuple[str, ...] = ()
    tier: str | None = None

    def __post_init__(self):
        if self.goal_kind not in (IMAGE, OBJECT):
            raise ValueError(f"unknown goal kind {self.goal_kind!r}")
        if self.goal_kind == IMAGE and self.goal_pose is None:
            raise ValueError("IMAGE episodes need a goal pose")
        if self.goal_kind == OBJECT and not self.goal_concepts:
            raise ValueError("OBJECT episodes need goal concepts")
        object.__setattr__(self, "goal_concepts", tuple(sorted(self.goal_concepts)))

    def __eq__(self, other) -> bool:
        return isinstance(other, Episode) and episode_to_dict(self) == episode_to_dict(other)

    __hash__ = None


@dataclass
class EpisodeDataset:
    episodes: list[Episode] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes)

    def __getitem__(self, i):
        return self.episodes[i]

    @property
    def kinds(self) -> set[str]:
        return {e.goal_kind for e in self.episodes}

    @property
    def world_ids(self) -> list[str]:
        return sorted({e.world_id for e in self.episodes})

    def tier_counts(self) -> dict[str, int]:
        out = {t: 0 for t in TIERS}
        for e in self.episodes:
            if e.tier:
                out[e.tier] += 1
        return out

    @classmethod
    def concat(cls, parts: Iterable[EpisodeDataset]) -> EpisodeDataset:
        parts = list(parts)
        eps = [e for p in parts for e in p.episodes]
        meta = dict(parts[0].meta) if parts else {}
        return cls(eps, meta)


def _rng(seed: int, world_id: str, salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(world_id.encode()), salt]))


def _meta(params: EncoderParams, seed: int, kind: str) -> dict:
    return {"v": EPISODE_SCHEMA_VERSION, "kind": kind, "seed": int(seed),
            "encoder_digest": params.digest(), "vocab": params.vocab.to_dict()}


def sample_imagenav_episodes(world: GridWorld, n_per_tier: int, params: EncoderParams, seed: int,
                             cfg: KinematicsConfig | None = None,
                             tiers: Sequence[str] | None = None) -> EpisodeDataset:
    """Rejection-sample start/goal cells per difficulty tier, then emit one
    episode per goal heading in ``GOAL_HEADINGS``.

    ``tiers`` restricts generation to a subset of tiers (default: all).
    """
    if n_per_tier < 1:
        raise ValueError("n_per_tier must be >= 1")
    tiers = list(TIERS) if tiers is None else [t.upper() for t in tiers]
    for t in tiers:
        if t not in TIERS:
            raise ValueError(f"unknown tier {t!r}; expected one of {list(TIERS)}")
    cfg = cfg or KinematicsConfig()
    rng = _rng(seed, world.id, 0)
    free = world.free_cells
    out: list[Episode] = []
    for tier in tiers:
        for i in range(n_per_tier):
            for _ in range(MAX_TRIES):
                a, b = rng.integers(len(free), size=2)
                ra, ca = free[a]
                rb, cb = free[b]
                d = float(world.distance_field([(ra, ca)])[rb, cb])
                if in_tier(tier, d):
                    break
            else:
                raise EpisodeGenerationError(
                    f"world {world.id}: could not realize tier {tier} {TIERS[tier]} after {MAX_TRIES} tries")
            start = AgentPose(*world.cell_center(ra, ca), int(rng.integers(12)) * 30)
            gx, gy = world.cell_center(rb, cb)
            for h in GOAL_HEADINGS:
                goal = AgentPose(gx, gy, h)
                bag = visible_concept_bag(world, goal, cfg)
                emb = encode_image_view(bag, params, int(rng.integers(2**63 - 1)))
                out.append(Episode(f"{world.id}-img-{tier.lower()}-{i:04d}-h{h:03d}", world.id, start, IMAGE,
                                   emb, d, goal_pose=goal, tier=tier))
    return EpisodeDataset(out, _meta(params, seed, IMAGE))


def _normalize_goals(categories) -> list[frozenset[str]]:
    goals = []
    for c in categories:
        goals.append(frozenset([c]) if isinstance(c, str) else frozenset(c))
    if not goals:
        raise ValueError("no categories given")
    return goals


def target_cells(world: GridWorld, concepts: Iterable[str]) -> list[tuple[int, int]]:
    """Cells of every instance of the object concepts among ``concepts``."""
    cs = set(concepts)
    return [world.cell_of(*o.position) for o in world.objects if o.object_concept in cs]


def sample_objectnav_episodes(world: GridWorld, n: int, categories, params: EncoderParams, seed: int,
                              cfg: KinematicsConfig | None = None) -> EpisodeDataset:
    """Episodes whose goal is any instance of a category (or compound concept
    set such as {"sink", "kitchen"}); goals are assigned round-robin."""
    goals = _normalize_goals(categories)
    vocab = params.vocab
    fields = []
    for g in goals:
        objs = sorted(c for c in g if not vocab.is_room(c))
        for c in sorted(g):
            vocab.index(c)
        if not objs:
            raise EpisodeGenerationError(f"goal {sorted(g)} names no object category")
        for c in objs:
            if not world.instances(c):
                raise EpisodeGenerationError(f"category {c!r} has no instance in world {world.id}")
        fields.append(world.distance_field(target_cells(world, objs)))
    rng = _rng(seed, world.id, 1)
    free = world.free_cells
    out: list[Episode] = []
    for i in range(n):
        gi = i % len(goals)
        fld = fields[gi]
        for _ in range(MAX_TRIES):
            r, c = free[rng.integers(len(free))]
            d = float(fld[r, c])
            if MIN_OBJECT_START_DISTANCE <= d < np.inf:
                break
        else:
            raise EpisodeGenerationError(
                f"world {world.id}: no start >= {MIN_OBJECT_START_DISTANCE} m from {sorted(goals[gi])}")
        start = AgentPose(*world.cell_center(r, c), int(rng.integers(12)) * 30)
        concepts = tuple(sorted(goals[gi]))
        out.append(Episode(f"{world.id}-obj-{i:04d}", world.id, start, OBJECT, encode_text(concepts, params), d,
                           goal_concepts=concepts))
    return EpisodeDataset(out, _meta(params, seed, OBJECT))


def objectnav_twin(world: GridWorld, episode: Episode, params: EncoderParams,
                   cfg: KinematicsConfig | None = None) -> Episode:
    """OBJECT episode with the same start whose goal names exactly the concepts
    visible from ``episode``'s goal pose."""
    if episode.goal_kind != IMAGE:
        raise ValueError("twin source must be an IMAGE episode")
    cfg = cfg or KinematicsConfig()
    concepts = tuple(sorted(visible_concept_bag(world, episode.goal_pose, cfg).concepts()))
    objs = [c for c in concepts if not params.vocab.is_room(c)]
    if not objs:
        raise EpisodeGenerationError(f"episode {episode.id}: goal view shows no object")
    d = float(world.distance_field(target_cells(world, objs))[world.cell_of(*episode.start.position)])
    return Episode(episode.id.replace("-img-", "-twin-"), world.id, episode.start, OBJECT,
                   encode_text(concepts, params), d, goal_concepts=concepts)


def check_episode(world: GridWorld, ep: Episode, vocab=None) -> list[str]:
    problems = []
    sx, sy = ep.start.position
    if not world.is_free(sx, sy):
        problems.append(f"{ep.id}: start not free")
    if ep.goal_kind == IMAGE:
        d = float(world.distance_field([world.cell_of(sx, sy)])[world.cell_of(*ep.goal_pose.position)])
        if ep.tier and not in_tier(ep.tier, d):
            problems.append(f"{ep.id}: shortest path {d} outside tier {ep.tier}")
    else:
        objs = [c for c in ep.goal_concepts if not world.vocab.is_room(c)]
        d = float(world.distance_field(target_cells(world, objs))[world.cell_of(sx, sy)])
    if d != ep.shortest_path:
        problems.append(f"{ep.id}: recorded shortest path {ep.shortest_path} != {d}")
    return problems


# --------------------------------------------------------------------------
# JSONL persistence


def episode_to_dict(ep: Episode) -> dict:
    d = {
        "v": EPISODE_SCHEMA_VERSION,
        "id": ep.id,
        "world_id": ep.world_id,
        "kind": ep.goal_kind.lower(),
        "start": {"x": ep.start.x, "y": ep.start.y, "h": ep.start.heading},
    }
    if ep.goal_kind == IMAGE:
        d["goal"] = {"x": ep.goal_pose.x, "y": ep.goal_pose.y, "h": ep.goal_pose.heading}
    else:
        d["goal"] = {"concepts": list(ep.goal_concepts)}
    d["tier"] = ep.tier.lower() if ep.tier else None
    d["spl_len"] = ep.shortest_path
    d["emb"] = ep.goal_embedding.to_b64()
    return d


def episode_from_dict(d: dict) -> Episode:
    v = d.get("v")
    if v != EPISODE_SCHEMA_VERSION:
        raise DatasetFormatError(f"schema version mismatch: expected {EPISODE_SCHEMA_VERSION}, found {v}")
    kind = d["kind"].upper()
    s = d["start"]
    g = d["goal"]
    start = AgentPose(float(s["x"]), float(s["y"]), int(s["h"]))
    emb = SemanticGoal.from_b64(d["emb"])
    tier = d.get("tier")
    if kind == IMAGE:
        return Episode(d["id"], d["world_id"], start, IMAGE, emb, float(d["spl_len"]),
                       goal_pose=AgentPose(float(g["x"]), float(g["y"]), int(g["h"])),
                       tier=tier.upper() if tier else None)
    return Episode(d["id"], d["world_id"], start, OBJECT, emb, float(d["spl_len"]),
                   goal_concepts=tuple(g["concepts"]), tier=tier.upper() if tier else None)


def save_dataset(ds: EpisodeDataset, path) -> None:
    path = Path(path)
    with path.open("w") as f:
        for ep in ds.episodes:
            f.write(json.dumps(episode_to_dict(ep), separators=(",", ":")) + "\n")
    if ds.meta:
        Path(str(path) + ".meta.json").write_text(json.dumps(ds.meta, indent=1, sort_keys=True) + "\n")


def load_dataset(path) -> EpisodeDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    eps = []
    with path.open() as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                eps.append(episode_from_dict(json.loads(line)))
            except DatasetFormatError as e:
                raise DatasetFormatError(f"{path}:{lineno}: {e}") from None
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetFormatError(f"{path}:{lineno}: malformed episode: {e}") from None
    meta_path = Path(str(path) + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return EpisodeDataset(eps, meta)


def split_by_world(ds: EpisodeDataset) -> dict[str, list[Episode]]:
    out: dict[str, list[Episode]] = {}
    for e in ds.episodes:
        out.setdefault(e.world_id, []).append(e)
    return out


def imagenav_for_worlds(worlds: Sequence[GridWorld], n_per_tier: int, params: EncoderParams, seed: int,
                        cfg: KinematicsConfig | None = None, tiers: Sequence[str] | None = None) -> EpisodeDataset:
    return EpisodeDataset.concat(sample_imagenav_episodes(w, n_per_tier, params, seed, cfg, tiers) for w in worlds)


def objectnav_for_worlds(worlds: Sequence[GridWorld], n_per_world: int, params: EncoderParams, seed: int,
                         categories=None, cfg: KinematicsConfig | None = None) -> EpisodeDataset:
    """ObjectNav episodes on each world; without ``categories`` every object
    concept present in the world is used."""
    parts = []
    for w in worlds:
        if categories is None:
            cats = sorted({o.object_concept for o in w.objects})
        else:
            goals = _normalize_goals(categories)
            cats = [g for g in goals if all(w.instances(c) for c in g if not params.vocab.is_room(c))]
        if not cats:
            continue
        parts.append(sample_objectnav_episodes(w, n_per_world, cats, params, seed, cfg))
    if not parts:
        raise EpisodeGenerationError("none of the requested categories occurs in the given worlds")
    return EpisodeDataset.concat(parts)
