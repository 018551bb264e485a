import math
from typing import List, NamedTuple, Optional, Tuple

import networkx as nx
import numpy as np

from common import common
from geometry import MotionDelta, Point2, Pose, bearing_to, normalize_angle


OBSTACLE_GLYPH = '#'
FREE_GLYPH = '.'

SQRT2 = math.sqrt(2.0)

# 8-connected moves as (d_row, d_col, cost in cells).
GRID_MOVES: Tuple[Tuple[int, int, float], ...] = (
    (0, 1, 1.0), (1, 0, 1.0), (0, -1, 1.0), (-1, 0, 1.0),
    (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))

Cell = Tuple[int, int]


class MapParseError(ValueError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super(MapParseError, self).__init__('line {}: {}'.format(line_number, message))


class OccupancyGrid:
    """
    Boolean occupancy grid. `cells[row, col]` is True for an obstacle; rows grow along +z and
    columns along +x starting at `origin` (the world coordinates of the corner of cell (0, 0)).
    Treated as immutable once built.
    """

    def __init__(self, cells: np.ndarray, resolution: float, origin: Point2 = (0.0, 0.0), name: str = ''):
        cells = np.array(cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError('Occupancy grid must be a non-empty 2D array, got shape {}.'.format(cells.shape))
        if not resolution > 0:
            raise ValueError('Grid resolution must be positive, got {}.'.format(resolution))
        self.cells = cells
        self.cells.setflags(write=False)
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self.name = name
        self._graph: Optional[nx.Graph] = None

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def is_obstacle(self, cell: Cell) -> bool:
        return not self.in_bounds(cell) or bool(self.cells[cell])

    def point_to_cell(self, point: Point2) -> Cell:
        col = int(math.floor((point[0] - self.origin[0]) / self.resolution))
        row = int(math.floor((point[1] - self.origin[1]) / self.resolution))
        return row, col

    def cell_center(self, cell: Cell) -> Point2:
        return (self.origin[0] + (cell[1] + 0.5) * self.resolution,
                self.origin[1] + (cell[0] + 0.5) * self.resolution)

    def free_cells(self) -> np.ndarray:
        """(N, 2) array of free (row, col) indices in row-major order."""
        return np.argwhere(~self.cells)

    def graph(self) -> nx.Graph:
        """8-connected graph over free cells; diagonal moves never cut an obstacle corner."""
        if self._graph is None:
            graph = nx.Graph()
            for row, col in map(tuple, self.free_cells()):
                graph.add_node((row, col))
                for d_row, d_col, cost in GRID_MOVES[:2] + GRID_MOVES[4:6]:
                    neighbour = (row + d_row, col + d_col)
                    if self.is_traversable_move((row, col), neighbour):
                        graph.add_edge((row, col), neighbour, weight=cost * self.resolution)
            self._graph = graph
        return self._graph

    def is_traversable_move(self, src: Cell, dst: Cell) -> bool:
        if self.is_obstacle(src) or self.is_obstacle(dst):
            return False
        if src[0] != dst[0] and src[1] != dst[1]:
            return not self.is_obstacle((src[0], dst[1])) and not self.is_obstacle((dst[0], src[1]))
        return True

    def __repr__(self):
        return 'OccupancyGrid(name={!r}, width={}, height={}, resolution={})'.format(
            self.name, self.width, self.height, self.resolution)


class SensorConfig(NamedTuple):
    num_rays: int = 61
    fov: float = math.radians(120.0)
    max_range: float = 4.0
    min_range: float = 0.1

    def verify(self):
        if self.num_rays < 2:
            raise ValueError('SensorConfig.num_rays must be at least 2, got {}.'.format(self.num_rays))
        if not 0.0 < self.fov <= 2.0 * math.pi:
            raise ValueError('SensorConfig.fov must be in (0, 2*pi], got {}.'.format(self.fov))
        if not 0.0 < self.min_range < self.max_range:
            raise ValueError('SensorConfig ranges must satisfy 0 < min_range < max_range, got {} and {}.'.format(
                self.min_range, self.max_range))

    def ray_angles(self) -> np.ndarray:
        """Ray bearings relative to the agent heading; ray 0 is the rightmost."""
        fractions = np.arange(self.num_rays, dtype=np.float64) / (self.num_rays - 1) - 0.5
        return self.fov * fractions


class DepthScan(NamedTuple):
    depths: np.ndarray

    def __len__(self):
        return len(self.depths)

    def valid_mask(self, cfg: SensorConfig) -> np.ndarray:
        """Rays that hit something inside the sensor range."""
        return (self.depths > cfg.min_range) & (self.depths < cfg.max_range)

    def to_points(self, cfg: SensorConfig) -> np.ndarray:
        """(N, 2) agent-frame (x, z) endpoints of the rays that hit something."""
        mask = self.valid_mask(cfg)
        angles = cfg.ray_angles()[mask]
        depths = self.depths[mask]
        return np.stack([depths * np.sin(angles), depths * np.cos(angles)], axis=1)


def parse_map(text: str, name: str = '') -> OccupancyGrid:
    lines = text.splitlines()
    if not lines:
        raise MapParseError(1, 'empty map file, expecting a "resolution <float>" header')
    header = lines[0].split()
    if len(header) != 2 or header[0] != 'resolution':
        raise MapParseError(1, 'malformed header {!r}, expecting "resolution <float>"'.format(lines[0]))
    try:
        resolution = float(header[1])
    except ValueError:
        raise MapParseError(1, 'resolution {!r} is not a number'.format(header[1]))
    if not resolution > 0 or not math.isfinite(resolution):
        raise MapParseError(1, 'resolution must be a positive number, got {}'.format(resolution))

    rows: List[List[bool]] = []
    row_line_numbers: List[int] = []
    width = None
    for line_number, line in enumerate(lines[1:], start=2):
        row_text = line.rstrip()
        if not row_text:
            continue
        if width is None:
            width = len(row_text)
        elif len(row_text) != width:
            raise MapParseError(line_number, 'row has {} cells, expecting {}'.format(len(row_text), width))
        row = []
        for glyph in row_text:
            if glyph == OBSTACLE_GLYPH:
                row.append(True)
            elif glyph == FREE_GLYPH:
                row.append(False)
            else:
                raise MapParseError(line_number, 'unknown glyph {!r}'.format(glyph))
        rows.append(row)
        row_line_numbers.append(line_number)
    if not rows:
        raise MapParseError(len(lines) + 1, 'map has no grid rows')

    cells = np.array(rows, dtype=bool)
    for row_index in range(cells.shape[0]):
        boundary = cells[row_index] if row_index in (0, cells.shape[0] - 1) else cells[row_index, [0, -1]]
        if not boundary.all():
            raise MapParseError(row_line_numbers[row_index], 'open boundary, the outer ring of the map must be obstacles')
    return OccupancyGrid(cells, resolution, name=name)


def load_map(path: str) -> OccupancyGrid:
    with open(path, 'r', encoding='utf-8') as file:
        text = file.read()
    return parse_map(text, name=common.scene_name(path))


def first_obstacle_distance(grid: OccupancyGrid, origin: Point2, angle: float, max_distance: float) -> float:
    """
    Distance along a ray (world bearing `angle`, same convention as yaw) to the boundary of the
    first obstacle cell, found by grid traversal. Returns `max_distance` when nothing is hit.
    """
    res = grid.resolution
    dir_x, dir_z = math.sin(angle), math.cos(angle)
    gx = (origin[0] - grid.origin[0]) / res
    gz = (origin[1] - grid.origin[1]) / res
    col, row = int(math.floor(gx)), int(math.floor(gz))
    if grid.is_obstacle((row, col)):
        return 0.0

    step_col = 1 if dir_x > 0 else -1
    step_row = 1 if dir_z > 0 else -1
    if dir_x != 0.0:
        next_x = (col + 1 if dir_x > 0 else col) - gx
        t_max_x = next_x / dir_x * res
        t_delta_x = abs(res / dir_x)
    else:
        t_max_x = t_delta_x = math.inf
    if dir_z != 0.0:
        next_z = (row + 1 if dir_z > 0 else row) - gz
        t_max_z = next_z / dir_z * res
        t_delta_z = abs(res / dir_z)
    else:
        t_max_z = t_delta_z = math.inf

    while True:
        if t_max_x < t_max_z:
            t = t_max_x
            col += step_col
            t_max_x += t_delta_x
        else:
            t = t_max_z
            row += step_row
            t_max_z += t_delta_z
        if t >= max_distance:
            return max_distance
        if grid.is_obstacle((row, col)):
            return t


def raycast(grid: OccupancyGrid, pose: Pose, cfg: SensorConfig) -> DepthScan:
    if grid.is_obstacle(grid.point_to_cell(pose.position)):
        raise ValueError('Cannot raycast from pose {} inside an obstacle of map {!r}.'.format(pose, grid.name))
    origin = pose.position
    depths = np.empty(cfg.num_rays, dtype=np.float64)
    for i, ray_angle in enumerate(cfg.ray_angles()):
        depths[i] = first_obstacle_distance(grid, origin, pose.yaw + float(ray_angle), cfg.max_range)
    np.clip(depths, cfg.min_range, cfg.max_range, out=depths)
    return DepthScan(depths)


def is_free_position(grid: OccupancyGrid, x: float, z: float, radius: float = 0.0) -> bool:
    """True when a disc of `radius` centred at (x, z) overlaps no obstacle cell."""
    row, col = grid.point_to_cell((x, z))
    if grid.is_obstacle((row, col)):
        return False
    if radius <= 0.0:
        return True
    res = grid.resolution
    reach = int(math.ceil(radius / res))
    for r in range(row - reach, row + reach + 1):
        for c in range(col - reach, col + reach + 1):
            if (r, c) == (row, col) or not grid.is_obstacle((r, c)):
                continue
            x0 = grid.origin[0] + c * res
            z0 = grid.origin[1] + r * res
            nearest_dx = max(x0 - x, 0.0, x - (x0 + res))
            nearest_dz = max(z0 - z, 0.0, z - (z0 + res))
            if nearest_dx * nearest_dx + nearest_dz * nearest_dz < radius * radius:
                return False
    return True


def step_kinematics(grid: OccupancyGrid, pose: Pose, delta: MotionDelta, agent_radius: float = 0.0,
                    num_substeps: int = 10, sliding: bool = True) -> Tuple[Pose, bool]:
    """
    Executes `delta` (expressed in the frame of `pose`) with per-axis collision handling.
    The translation is split into `num_substeps` world-frame substeps; a blocked axis component
    is cancelled for that substep, letting the agent slide along obstacle boundaries. Without
    sliding the translation stops at the first blocked substep. The rotation is always applied.
    """
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    step_x = (c * delta.dx + s * delta.dz) / num_substeps
    step_z = (-s * delta.dx + c * delta.dz) / num_substeps
    x, z = pose.x, pose.z
    collided = False
    for _ in range(num_substeps):
        if step_x == 0.0 and step_z == 0.0:
            break
        if is_free_position(grid, x + step_x, z + step_z, agent_radius):
            x += step_x
            z += step_z
            continue
        collided = True
        if not sliding:
            break
        if step_x != 0.0 and is_free_position(grid, x + step_x, z, agent_radius):
            x += step_x
        if step_z != 0.0 and is_free_position(grid, x, z + step_z, agent_radius):
            z += step_z
    return Pose(x, pose.y, z, normalize_angle(pose.yaw + delta.dyaw)), collided


def snap_to_free_cell(grid: OccupancyGrid, point: Point2) -> Optional[Cell]:
    """The point's own cell when free, otherwise the free cell whose centre is nearest."""
    cell = grid.point_to_cell(point)
    if not grid.is_obstacle(cell):
        return cell
    free = grid.free_cells()
    if len(free) == 0:
        return None
    centers_x = grid.origin[0] + (free[:, 1] + 0.5) * grid.resolution
    centers_z = grid.origin[1] + (free[:, 0] + 0.5) * grid.resolution
    nearest = int(np.argmin((centers_x - point[0]) ** 2 + (centers_z - point[1]) ** 2))
    return int(free[nearest, 0]), int(free[nearest, 1])


def has_line_of_sight(grid: OccupancyGrid, a: Point2, b: Point2) -> bool:
    length = math.hypot(b[0] - a[0], b[1] - a[1])
    if grid.is_obstacle(grid.point_to_cell(a)):
        return False
    if length == 0.0:
        return True
    angle = bearing_to((b[0] - a[0], b[1] - a[1]))
    return first_obstacle_distance(grid, a, angle, length) >= length


class GeodesicOracle:
    """
    Distance field to a fixed goal: one Dijkstra run from the goal's cell over the 8-connected
    free cells, then constant-time queries. Points snap to cells, so a point in the goal cell is at 0.
    """

    def __init__(self, grid: OccupancyGrid, goal: Point2):
        self.grid = grid
        self.goal = (float(goal[0]), float(goal[1]))
        self.goal_cell = snap_to_free_cell(grid, self.goal)
        if self.goal_cell is None:
            raise ValueError('Map {!r} has no free cell to snap the goal {} to.'.format(grid.name, goal))
        self._distances = nx.single_source_dijkstra_path_length(grid.graph(), self.goal_cell)

    def distance_to(self, point: Point2) -> Optional[float]:
        """Geodesic distance from `point` to the goal, or None when the goal is unreachable."""
        cell = snap_to_free_cell(self.grid, point)
        if cell is None:
            return None
        return self._distances.get(cell)

    def is_reachable(self, point: Point2) -> bool:
        return self.distance_to(point) is not None


def geodesic_distance(grid: OccupancyGrid, a: Point2, b: Point2) -> Optional[float]:
    """Shortest obstacle-avoiding distance between two points; None when they are disconnected."""
    return GeodesicOracle(grid, b).distance_to(a)
