from __future__ import annotations

import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from zson.embedding import ConceptVocabulary, EncoderParams  # noqa: E402
from zson.worldsim import (  # noqa: E402
    GridWorld,
    ObjectInstance,
    Room,
    WorldGenParams,
    corridor_world,
    generate_world,
)

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def vocab() -> ConceptVocabulary:
    return ConceptVocabulary()


@pytest.fixture(scope="session")
def params(vocab) -> EncoderParams:
    return EncoderParams.create(vocab, dim=64, noise_sigma=0.1, seed=0)


@pytest.fixture(scope="session")
def params0(params) -> EncoderParams:
    return params.with_noise(0.0)


@pytest.fixture(scope="session")
def corridor():
    return corridor_world()


@pytest.fixture(scope="session")
def world():
    return generate_world(3)


@pytest.fixture(scope="session")
def worlds():
    return [generate_world(s) for s in range(4)]


def open_world(h: int = 10, w: int = 10, cell: float = 1.0, room: str = "living_room", objects=(),
               blocked=(), world_id: str = "open", vocab=None) -> GridWorld:
    """Walled rectangle with an open interior, optional blocked cells and objects."""
    occ = np.ones((h, w), dtype=bool)
    occ[1:-1, 1:-1] = False
    for r, c in blocked:
        occ[r, c] = True
    cells = tuple(map(tuple, np.argwhere(~occ)))
    objs = tuple(ObjectInstance(name, (x, y), room) for name, x, y in objects)
    return GridWorld(world_id, cell, occ, (Room(room, cells),), objs, 0, vocab or ConceptVocabulary())


def random_grid_world(rng: np.random.Generator, h: int = 20, w: int = 20, density: float = 0.3,
                      cell: float = 0.25, world_id: str = "rand") -> GridWorld:
    """Random obstacles, one room claiming every free cell (connectivity not enforced)."""
    occ = rng.random((h, w)) < density
    cells = tuple(map(tuple, np.argwhere(~occ)))
    return GridWorld(world_id, cell, occ, (Room("living_room", cells),), (), 0, ConceptVocabulary())


__all__ = ["WorldGenParams", "open_world", "random_grid_world", "record_criterion"]


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    """Collect one PASS/FAIL line; all lines are echoed in the terminal summary."""
    line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
