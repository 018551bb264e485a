"""Shared fixtures: small inline maps, a quiet default config and the bundled desk maps."""

import os
from typing import Callable, Iterable, Tuple

import pytest

from config import Config
from environment import OccupancyGrid, load_map, parse_map

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MAPS_DIR = os.path.join(REPO_ROOT, 'maps')
BUNDLED_MAPS = ('open_room', 'pillars', 'corridor', 'two_rooms')


def box_map_text(rows: int, cols: int, obstacles: Iterable[Tuple[int, int]] = (), resolution: float = 0.1) -> str:
    blocked = set(obstacles)
    lines = ['resolution {}'.format(resolution)]
    for r in range(rows):
        lines.append(''.join('#' if r in (0, rows - 1) or c in (0, cols - 1) or (r, c) in blocked else '.'
                             for c in range(cols)))
    return '\n'.join(lines) + '\n'


@pytest.fixture
def box_grid() -> Callable[..., OccupancyGrid]:
    """Factory of closed rectangular maps with optional interior obstacle cells."""
    def make(rows: int = 30, cols: int = 30, obstacles: Iterable[Tuple[int, int]] = (),
             resolution: float = 0.1, name: str = 'box') -> OccupancyGrid:
        return parse_map(box_map_text(rows, cols, obstacles, resolution), name=name)
    return make


@pytest.fixture
def open_grid(box_grid) -> OccupancyGrid:
    return box_grid(30, 30, name='open')


@pytest.fixture
def config(tmp_path) -> Config:
    config = Config(set_defaults=True)
    config.VERBOSE_MODE = 0
    config.OUTPUT_DIR = str(tmp_path)
    config.MAP_PATHS = [os.path.join(MAPS_DIR, name + '.map') for name in BUNDLED_MAPS]
    return config


@pytest.fixture(scope='session')
def bundled_maps():
    return {name: load_map(os.path.join(MAPS_DIR, name + '.map')) for name in BUNDLED_MAPS}
