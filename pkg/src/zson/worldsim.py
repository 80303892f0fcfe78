"""Procedural grid worlds, agent kinematics, visibility and geodesic distance.

Worlds are occupancy grids partitioned into labelled rooms that hold point
objects. The agent has a continuous position and a heading restricted to
multiples of the turn angle; it moves on the grid with the four discrete
navigation actions.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .embedding import ROOM_AFFINITY, ConceptBag, ConceptVocabulary

MOVE_FORWARD, TURN_LEFT, TURN_RIGHT, STOP = 0, 1, 2, 3
START = 4  # previous-action token at the first step of an episode
ACTION_NAMES = ("MOVE_FORWARD", "TURN_LEFT", "TURN_RIGHT", "STOP")
N_ACTIONS = 4

UNREACHABLE = math.inf
WORLD_SCHEMA_VERSION = 1
_POS_DECIMALS = 9


class WorldGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class KinematicsConfig:
    step_size: float = 0.25
    turn_angle: int = 30
    success_radius: float = 1.0
    hfov: float = 90.0
    view_range: float = 5.0
    n_view_bins: int = 9

    def __post_init__(self):
        if self.step_size <= 0 or self.view_range <= 0:
            raise ValueError("step_size and view_range must be positive")
        if self.n_view_bins < 1 or self.hfov % self.n_view_bins != 0:
            raise ValueError(f"hfov={self.hfov} must be divisible by n_view_bins={self.n_view_bins}")
        if self.turn_angle <= 0 or 360 % self.turn_angle != 0:
            raise ValueError("turn_angle must divide 360")


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    heading: int = 0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Room:
    room_concept: str
    cells: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class ObjectInstance:
    object_concept: str
    position: tuple[float, float]
    room_concept: str


@dataclass(frozen=True, eq=False)
class GridWorld:
    id: str
    cell_size: float
    occupancy: np.ndarray
    rooms: tuple[Room, ...]
    objects: tuple[ObjectInstance, ...]
    rng_seed: int
    vocab: ConceptVocabulary = field(default_factory=ConceptVocabulary, repr=False)

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=np.bool_)
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "rooms", tuple(self.rooms))
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "_fields", {})

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @cached_property
    def room_map(self) -> np.ndarray:
        """Room index per cell, -1 where no room claims the cell."""
        m = np.full(self.shape, -1, dtype=np.int64)
        for i, room in enumerate(self.rooms):
            for r, c in room.cells:
                m[r, c] = i
        m.setflags(write=False)
        return m

    @cached_property
    def free_cells(self) -> np.ndarray:
        return np.argwhere(~self.occupancy)

    @cached_property
    def object_arrays(self):
        n = len(self.objects)
        ox = np.array([o.position[0] for o in self.objects], dtype=np.float64).reshape(n)
        oy = np.array([o.position[1] for o in self.objects], dtype=np.float64).reshape(n)
        cid = np.array([self.vocab.object_index(o.object_concept) for o in self.objects], dtype=np.int64).reshape(n)
        return ox, oy, cid

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return ((c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size)

    def in_bounds(self, r: int, c: int) -> bool:
        H, W = self.shape
        return 0 <= r < H and 0 <= c < W

    def is_free(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return self.in_bounds(r, c) and not self.occupancy[r, c]

    def room_at(self, x: float, y: float) -> str | None:
        r, c = self.cell_of(x, y)
        if not self.in_bounds(r, c):
            return None
        i = self.room_map[r, c]
        return self.rooms[i].room_concept if i >= 0 else None

    def instances(self, concept: str) -> list[ObjectInstance]:
        return [o for o in self.objects if o.object_concept == concept]

    def distance_field(self, cells: Sequence[tuple[int, int]]) -> np.ndarray:
        """Geodesic metres from every cell to the nearest of ``cells`` (inf if unreachable).

        Memoized per source set; the world itself never changes.
        """
        key = tuple(sorted(set((int(r), int(c)) for r, c in cells)))
        cache = self._fields
        hit = cache.get(key)
        if hit is not None:
            return hit
        src = np.array(key, dtype=np.int64).reshape(-1, 2)
        ns, nd = kernels.distance_field(self.occupancy, src[:, 0].copy(), src[:, 1].copy())
        d = steps_to_metres(ns, nd, self.cell_size)
        d.setflags(write=False)
        if len(cache) >= 8192:
            cache.clear()
        cache[key] = d
        return d


def steps_to_metres(ns, nd, cell_size: float):
    """Convert exact (straight, diagonal) move counts into metres."""
    ns = np.asarray(ns)
    nd = np.asarray(nd)
    d = ns * cell_size + nd * (cell_size * kernels.SQRT2)
    return np.where(ns < 0, np.inf, d)


# --------------------------------------------------------------------------
# kinematics and sensing


def step_action(world: GridWorld, pose: AgentPose, action: int, cfg: KinematicsConfig) -> tuple[AgentPose, bool]:
    if action == TURN_LEFT:
        return AgentPose(pose.x, pose.y, (pose.heading + cfg.turn_angle) % 360), False
    if action == TURN_RIGHT:
        return AgentPose(pose.x, pose.y, (pose.heading - cfg.turn_angle) % 360), False
    if action == MOVE_FORWARD:
        th = math.radians(pose.heading)
        nx = round(pose.x + cfg.step_size * math.cos(th), _POS_DECIMALS)
        ny = round(pose.y + cfg.step_size * math.sin(th), _POS_DECIMALS)
        if not world.is_free(nx, ny):
            return pose, True
        return AgentPose(nx, ny, pose.heading), False
    if action == STOP:
        return pose, False
    raise ValueError(f"unknown action {action!r}")


def geodesic_distance(world: GridWorld, a: tuple[float, float], b: tuple[float, float]) -> float:
    """Shortest 8-connected path length between the cells containing a and b.

    Returns ``UNREACHABLE`` (inf) when no path exists.
    """
    ca = world.cell_of(*a)
    cb = world.cell_of(*b)
    # source = lexicographically smaller cell so the result is symmetric bit for bit
    src, dst = (ca, cb) if ca <= cb else (cb, ca)
    return float(world.distance_field([src])[dst])


def angle_between(h1: float, h2: float) -> float:
    """Absolute angular difference in degrees, in [0, 180]."""
    return abs(float(kernels.wrap_degrees(float(h1) - float(h2))))


def visible_objects(world: GridWorld, pose: AgentPose, cfg: KinematicsConfig) -> list[ObjectInstance]:
    if not world.objects:
        return []
    ox, oy, _ = world.object_arrays
    mask = kernels.visible_mask(world.occupancy, world.cell_size, pose.x, pose.y, float(pose.heading),
                                cfg.view_range, float(cfg.hfov), ox, oy)
    return [o for o, m in zip(world.objects, mask) if m]


def visible_concept_bag(world: GridWorld, pose: AgentPose, cfg: KinematicsConfig) -> ConceptBag:
    counts: dict[str, int] = {}
    for o in visible_objects(world, pose, cfg):
        counts[o.object_concept] = counts.get(o.object_concept, 0) + 1
    room = world.room_at(pose.x, pose.y)
    if room is not None:
        counts[room] = counts.get(room, 0) + 1
    return ConceptBag(counts)


def observation_dim(vocab: ConceptVocabulary, cfg: KinematicsConfig) -> int:
    return cfg.n_view_bins * (1 + len(vocab.object_concepts)) + len(vocab.room_concepts)


def observe(world: GridWorld, pose: AgentPose, cfg: KinematicsConfig) -> np.ndarray:
    """Egocentric feature: per sector [free distance / view_range, object multi-hot],
    sectors ordered left to right, followed by the current room one-hot."""
    vocab = world.vocab
    ox, oy, cid = world.object_arrays
    sectors = kernels.observe_sectors(world.occupancy, world.cell_size, pose.x, pose.y, float(pose.heading),
                                      cfg.view_range, float(cfg.hfov), cfg.n_view_bins, ox, oy, cid,
                                      len(vocab.object_concepts))
    room_hot = np.zeros(len(vocab.room_concepts), dtype=np.float32)
    room = world.room_at(pose.x, pose.y)
    if room is not None:
        room_hot[vocab.room_index(room)] = 1.0
    return np.concatenate([sectors, room_hot])


# --------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class WorldGenParams:
    height: int = 16
    width: int = 16
    cell_size: float = 0.5
    min_rooms: int = 2
    max_rooms: int = 4
    min_objects_per_room: int = 1
    max_objects_per_room: int = 1
    min_room_side: int = 3
    door_width: int = 2
    max_retries: int = 50
    vocab: ConceptVocabulary = field(default_factory=ConceptVocabulary)
    affinity: Mapping[str, tuple[str, ...]] | None = None

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("grid must be at least 8x8")
        if not 1 <= self.min_rooms <= self.max_rooms:
            raise ValueError("need 1 <= min_rooms <= max_rooms")
        if not 0 <= self.min_objects_per_room <= self.max_objects_per_room:
            raise ValueError("need 0 <= min_objects_per_room <= max_objects_per_room")
        if self.door_width < 1 or self.min_room_side < max(1, self.door_width):
            raise ValueError("min_room_side must be >= door_width >= 1")

    def room_objects(self, room: str) -> tuple[str, ...]:
        aff = ROOM_AFFINITY if self.affinity is None else self.affinity
        cands = tuple(c for c in aff.get(room, ()) if c in self.vocab.object_concepts)
        return cands or self.vocab.object_concepts

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "height", "width", "cell_size", "min_rooms", "max_rooms", "min_objects_per_room",
            "max_objects_per_room", "min_room_side", "door_width", "max_retries")}
        d["vocab"] = self.vocab.to_dict()
        if self.affinity is not None:
            d["affinity"] = {k: list(v) for k, v in self.affinity.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> WorldGenParams:
        d = dict(d)
        if "vocab" in d:
            d["vocab"] = ConceptVocabulary.from_dict(d["vocab"])
        if d.get("affinity") is not None:
            d["affinity"] = {k: tuple(v) for k, v in d["affinity"].items()}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown world-gen parameters: {sorted(unknown)}")
        return cls(**d)


def _split_rects(rng, params: WorldGenParams, n_rooms: int):
    H, W = params.height, params.width
    m = params.min_room_side
    rects = [(1, 1, H - 2, W - 2)]
    doors: list[tuple[int, int]] = []
    door_set: set[tuple[int, int]] = set()
    while len(rects) < n_rooms:
        options = []
        for i, (r0, c0, r1, c1) in enumerate(rects):
            h, w = r1 - r0 + 1, c1 - c0 + 1
            # a horizontal wall needs m rows on each side plus itself
            rows = [s for s in range(r0 + m, r1 - m + 1)
                    if (s, c0 - 1) not in door_set and (s, c1 + 1) not in door_set]
            cols = [s for s in range(c0 + m, c1 - m + 1)
                    if (r0 - 1, s) not in door_set and (r1 + 1, s) not in door_set]
            if rows or cols:
                options.append((h * w, i, rows, cols, h, w))
        if not options:
            break
        area, i, rows, cols, h, w = max(options, key=lambda o: (o[0], -o[1]))
        r0, c0, r1, c1 = rects.pop(i)
        if rows and (not cols or h > w or (h == w and rng.random() < 0.5)):
            s = int(rng.choice(rows))
            j = int(rng.integers(c0, c1 - params.door_width + 2))
            new_doors = [(s, j + k) for k in range(params.door_width)]
            rects[i:i] = [(r0, c0, s - 1, c1), (s + 1, c0, r1, c1)]
        else:
            s = int(rng.choice(cols))
            j = int(rng.integers(r0, r1 - params.door_width + 2))
            new_doors = [(j + k, s) for k in range(params.door_width)]
            rects[i:i] = [(r0, c0, r1, s - 1), (r0, s + 1, r1, c1)]
        doors.extend(new_doors)
        door_set.update(new_doors)
    return rects, doors


def _build_once(rng, seed: int, world_id: str, params: WorldGenParams) -> GridWorld:
    H, W = params.height, params.width
    n_rooms = int(rng.integers(params.min_rooms, params.max_rooms + 1))
    rects, doors = _split_rects(rng, params, n_rooms)
    if len(rects) < params.min_rooms:
        raise WorldGenerationError(f"grid {H}x{W} cannot hold {params.min_rooms} rooms of side {params.min_room_side}")
    occ = np.ones((H, W), dtype=np.bool_)
    label = np.full((H, W), -1, dtype=np.int64)
    for i, (r0, c0, r1, c1) in enumerate(rects):
        occ[r0:r1 + 1, c0:c1 + 1] = False
        label[r0:r1 + 1, c0:c1 + 1] = i
    for r, c in doors:
        occ[r, c] = False
    # doorway cells join the room on their lower-index side (up / left first)
    for r, c in doors:
        for dr, dc in ((-1, 0), (0, -1), (1, 0), (0, 1)):
            if label[r + dr, c + dc] >= 0:
                label[r, c] = label[r + dr, c + dc]
                break
    room_vocab = params.vocab.room_concepts
    concepts = rng.choice(len(room_vocab), size=len(rects), replace=len(rects) > len(room_vocab))
    door_set = set(doors)
    rooms = []
    objects = []
    for i, (r0, c0, r1, c1) in enumerate(rects):
        concept = room_vocab[int(concepts[i])]
        cells = tuple(map(tuple, np.argwhere(label == i).tolist()))
        rooms.append(Room(concept, cells))
        k = int(rng.integers(params.min_objects_per_room, params.max_objects_per_room + 1))
        cands = params.room_objects(concept)
        spots = [(r, c) for r, c in cells if (r, c) not in door_set]
        k = min(k, len(cands), len(spots))
        if k == 0:
            continue
        chosen = rng.choice(len(cands), size=k, replace=False)
        where = rng.choice(len(spots), size=k, replace=False)
        for ci, wi in zip(chosen, where):
            r, c = spots[int(wi)]
            pos = ((c + 0.5) * params.cell_size, (r + 0.5) * params.cell_size)
            objects.append(ObjectInstance(cands[int(ci)], pos, concept))
    world = GridWorld(world_id, params.cell_size, occ, tuple(rooms), tuple(objects), seed, params.vocab)
    problems = check_world(world)
    if problems:
        raise WorldGenerationError("; ".join(problems))
    return world


def generate_world(seed: int, params: WorldGenParams | None = None, world_id: str | None = None) -> GridWorld:
    """Deterministic procedural world for ``(seed, params)``.

    Rooms come from recursive binary splits of the interior, each split
    leaving a one-cell wall with a doorway; objects are drawn per room from
    the room's affinity list.
    """
    params = params or WorldGenParams()
    world_id = world_id if world_id is not None else f"w{seed:06d}"
    last: Exception | None = None
    for attempt in range(params.max_retries):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        try:
            return _build_once(rng, seed, world_id, params)
        except WorldGenerationError as e:
            last = e
    raise WorldGenerationError(f"world {world_id}: generation failed after {params.max_retries} attempts: {last}")


def corridor_world(length: int = 10, cell_size: float = 0.25, room: str = "living_room",
                   objects: Sequence[tuple[str, int]] = (), world_id: str = "corridor",
                   vocab: ConceptVocabulary | None = None) -> GridWorld:
    """A single straight 1 x ``length`` corridor inside an 8-row walled grid.

    ``objects`` are (concept, column-offset) pairs placed along the corridor.
    """
    vocab = vocab or ConceptVocabulary()
    H, W = 8, max(8, length + 2)
    occ = np.ones((H, W), dtype=np.bool_)
    row = 3
    occ[row, 1:length + 1] = False
    cells = tuple((row, c) for c in range(1, length + 1))
    objs = tuple(ObjectInstance(name, ((1 + k + 0.5) * cell_size, (row + 0.5) * cell_size), room)
                 for name, k in objects)
    return GridWorld(world_id, cell_size, occ, (Room(room, cells),), objs, 0, vocab)


def check_world(world: GridWorld) -> list[str]:
    """Return a list of invariant violations (empty if the world is valid)."""
    problems = []
    H, W = world.shape
    if H < 8 or W < 8:
        problems.append(f"grid {H}x{W} smaller than 8x8")
    occ = world.occupancy
    seen: set[tuple[int, int]] = set()
    for room in world.rooms:
        if room.room_concept not in world.vocab.room_concepts:
            problems.append(f"unknown room concept {room.room_concept!r}")
        for cell in room.cells:
            if cell in seen:
                problems.append(f"cell {cell} belongs to more than one room")
            seen.add(cell)
    for r, c in world.free_cells.tolist():
        if (r, c) not in seen:
            problems.append(f"free cell {(r, c)} is in no room")
            break
    for o in world.objects:
        x, y = o.position
        if not world.is_free(x, y):
            problems.append(f"object {o.object_concept} at {o.position} is not in a free cell")
            continue
        if world.room_at(x, y) != o.room_concept:
            problems.append(f"object {o.object_concept} room label {o.room_concept!r} != {world.room_at(x, y)!r}")
        if o.object_concept not in world.vocab.object_concepts:
            problems.append(f"unknown object concept {o.object_concept!r}")
    free = ~occ
    if free.any():
        _, n = ndimage.label(free, structure=np.ones((3, 3), dtype=int))
        if n != 1:
            problems.append(f"free space has {n} 8-connected components")
    else:
        problems.append("world has no free cells")
    return problems


# --------------------------------------------------------------------------
# persistence


def world_to_dict(world: GridWorld) -> dict:
    return {
        "v": WORLD_SCHEMA_VERSION,
        "id": world.id,
        "cell_size": world.cell_size,
        "grid": ["".join("1" if b else "0" for b in row) for row in world.occupancy],
        "rooms": [{"concept": r.room_concept, "cells": [list(c) for c in r.cells]} for r in world.rooms],
        "objects": [{"concept": o.object_concept, "x": o.position[0], "y": o.position[1], "room": o.room_concept}
                    for o in world.objects],
        "rng_seed": world.rng_seed,
    }


def world_from_dict(d: Mapping, vocab: ConceptVocabulary | None = None) -> GridWorld:
    v = d.get("v", WORLD_SCHEMA_VERSION)
    if v != WORLD_SCHEMA_VERSION:
        raise ValueError(f"world schema version mismatch: expected {WORLD_SCHEMA_VERSION}, found {v}")
    occ = np.array([[ch == "1" for ch in row] for row in d["grid"]], dtype=np.bool_)
    rooms = tuple(Room(r["concept"], tuple((int(a), int(b)) for a, b in r["cells"])) for r in d["rooms"])
    objects = tuple(ObjectInstance(o["concept"], (float(o["x"]), float(o["y"])), o["room"]) for o in d["objects"])
    return GridWorld(d["id"], float(d["cell_size"]), occ, rooms, objects, int(d["rng_seed"]),
                     vocab or ConceptVocabulary())


def world_to_json(world: GridWorld) -> str:
    return json.dumps(world_to_dict(world), separators=(",", ":")) + "\n"


def save_world(world: GridWorld, path) -> None:
    Path(path).write_text(world_to_json(world))


def load_world(path, vocab: ConceptVocabulary | None = None) -> GridWorld:
    return world_from_dict(json.loads(Path(path).read_text()), vocab)


def with_objects(world: GridWorld, objects: Sequence[ObjectInstance], world_id: str | None = None) -> GridWorld:
    """Copy of ``world`` with a different object list (handy for constructing fixtures)."""
    return replace(world, objects=tuple(objects), id=world_id or world.id)
