import heapq
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import binary_dilation

from actuation import Action
from agent_base import Agent, AgentKind, AgentObservation
from environment import GRID_MOVES, SQRT2, Cell, DepthScan, SensorConfig
from geometry import Point2, Pose, bearing_to, inverse, transform_point

# Moves a ray endpoint slightly past the surface it hit, so it lands in the obstacle cell.
RAY_END_NUDGE = 1e-4


class ClassicNavParams(NamedTuple):
    map_size: int = 400
    map_resolution: float = 0.1
    obstacle_threshold: int = 3
    inflation_cells: int = 1
    waypoint_distance: float = 0.5
    heading_tolerance: float = math.radians(15.0)
    random_action_prob: float = 0.1
    stop_radius: float = 0.14

    def verify(self):
        if self.map_size < 2 or not self.map_resolution > 0:
            raise ValueError('Classic agent map must have a size >= 2 and a positive resolution.')
        if self.obstacle_threshold < 1 or self.inflation_cells < 0:
            raise ValueError('obstacle_threshold must be >= 1 and inflation_cells >= 0.')
        if not 0.0 <= self.random_action_prob <= 1.0:
            raise ValueError('random_action_prob must be in [0, 1], got {}.'.format(self.random_action_prob))


class BuiltMap:
    """
    Hit-count occupancy map built by the classic agent from its own scans. Rows grow along +z and
    columns along +x of the map frame, starting at `origin`.
    """

    def __init__(self, counts: np.ndarray, resolution: float, origin: Point2, threshold: int = 3,
                 inflation_cells: int = 1):
        self.counts = np.array(counts, dtype=np.int64)
        if self.counts.ndim != 2 or (self.counts < 0).any():
            raise ValueError('BuiltMap counts must be a 2D array of non-negative hit counts.')
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self.threshold = int(threshold)
        self.inflation_cells = int(inflation_cells)
        self.dropped_points = 0

    @classmethod
    def empty(cls, size: int = 400, resolution: float = 0.1, threshold: int = 3,
              inflation_cells: int = 1) -> 'BuiltMap':
        """A `size` x `size` map centred on the origin of its frame."""
        half = 0.5 * size * resolution
        return cls(np.zeros((size, size), dtype=np.int64), resolution, (-half, -half), threshold, inflation_cells)

    @classmethod
    def from_obstacles(cls, obstacles: np.ndarray, resolution: float = 0.1, origin: Point2 = (0.0, 0.0),
                       threshold: int = 3, inflation_cells: int = 0) -> 'BuiltMap':
        return cls(np.asarray(obstacles, dtype=bool) * threshold, resolution, origin, threshold, inflation_cells)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.counts.shape

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.counts.shape[0] and 0 <= cell[1] < self.counts.shape[1]

    def point_to_cell(self, point: Point2) -> Cell:
        return (int(math.floor((point[1] - self.origin[1]) / self.resolution)),
                int(math.floor((point[0] - self.origin[0]) / self.resolution)))

    def cell_center(self, cell: Cell) -> Point2:
        return (self.origin[0] + (cell[1] + 0.5) * self.resolution,
                self.origin[1] + (cell[0] + 0.5) * self.resolution)

    def obstacle_mask(self) -> np.ndarray:
        return self.counts >= self.threshold

    def planning_mask(self) -> np.ndarray:
        obstacles = self.obstacle_mask()
        if self.inflation_cells <= 0 or not obstacles.any():
            return obstacles
        return binary_dilation(obstacles, structure=np.ones((3, 3), dtype=bool), iterations=self.inflation_cells)


def update_map(m: BuiltMap, scan: DepthScan, est_pose: Pose, cfg: SensorConfig) -> BuiltMap:
    """Projects every in-range ray endpoint through `est_pose` and counts a hit in its cell."""
    if len(scan) != cfg.num_rays:
        raise ValueError('Scan has {} rays, sensor config expects {}.'.format(len(scan), cfg.num_rays))
    mask = scan.valid_mask(cfg)
    angles = cfg.ray_angles()[mask]
    depths = scan.depths[mask] + RAY_END_NUDGE
    c, s = math.cos(est_pose.yaw), math.sin(est_pose.yaw)
    local_x = depths * np.sin(angles)
    local_z = depths * np.cos(angles)
    world_x = est_pose.x + c * local_x + s * local_z
    world_z = est_pose.z - s * local_x + c * local_z
    cols = np.floor((world_x - m.origin[0]) / m.resolution).astype(np.int64)
    rows = np.floor((world_z - m.origin[1]) / m.resolution).astype(np.int64)
    inside = (rows >= 0) & (rows < m.shape[0]) & (cols >= 0) & (cols < m.shape[1])
    m.dropped_points += int((~inside).sum())
    np.add.at(m.counts, (rows[inside], cols[inside]), 1)
    return m


def octile_distance(a: Cell, b: Cell) -> float:
    d_row, d_col = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(d_row, d_col) + (SQRT2 - 1.0) * min(d_row, d_col)


def path_cost(path: Sequence[Cell], resolution: float) -> float:
    """Length of a cell path counted by move type: (straight + diagonal * sqrt(2)) * resolution."""
    diagonal = sum(1 for a, b in zip(path, path[1:]) if a[0] != b[0] and a[1] != b[1])
    straight = len(path) - 1 - diagonal
    return (straight + diagonal * SQRT2) * resolution


class PlannerState:
    """
    D* Lite over an 8-connected grid. Searches backwards from the goal, so that after the map
    changes only the affected cells are repaired and replanning from a moved start is cheap.
    """

    def __init__(self):
        self.blocked: Optional[np.ndarray] = None
        self.goal: Optional[Cell] = None
        self.last_start: Optional[Cell] = None
        self.km = 0.0
        self.g: Dict[Cell, float] = {}
        self.rhs: Dict[Cell, float] = {}
        self._heap: List[Tuple[Tuple[float, float], Cell]] = []
        self._queued: Dict[Cell, Tuple[float, float]] = {}
        self.num_expansions = 0

    @property
    def is_initialized(self) -> bool:
        return self.blocked is not None

    def cost_to_goal(self, cell: Cell) -> float:
        return self.g.get(cell, math.inf)

    def reset(self, blocked: np.ndarray, start: Cell, goal: Cell):
        self.blocked = blocked
        self.goal = goal
        self.last_start = start
        self.km = 0.0
        self.g = {}
        self.rhs = {goal: 0.0}
        self._heap = []
        self._queued = {}
        self._push(goal, (octile_distance(start, goal), 0.0))

    def _is_free(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.blocked.shape[0] and 0 <= cell[1] < self.blocked.shape[1] \
               and not self.blocked[cell]

    def _neighbours(self, cell: Cell):
        """Free neighbours reachable in one move, with the move cost in cells."""
        row, col = cell
        if not self._is_free(cell):
            return
        for d_row, d_col, cost in GRID_MOVES:
            neighbour = (row + d_row, col + d_col)
            if not self._is_free(neighbour):
                continue
            if d_row and d_col and not (self._is_free((row + d_row, col)) and self._is_free((row, col + d_col))):
                continue
            yield neighbour, cost

    def _calculate_key(self, cell: Cell, start: Cell) -> Tuple[float, float]:
        best = min(self.g.get(cell, math.inf), self.rhs.get(cell, math.inf))
        return best + octile_distance(start, cell) + self.km, best

    def _push(self, cell: Cell, key: Tuple[float, float]):
        self._queued[cell] = key
        heapq.heappush(self._heap, (key, cell))

    def _top(self) -> Tuple[Tuple[float, float], Optional[Cell]]:
        while self._heap:
            key, cell = self._heap[0]
            if self._queued.get(cell) == key:
                return key, cell
            heapq.heappop(self._heap)
        return (math.inf, math.inf), None

    def _update_vertex(self, cell: Cell, start: Cell):
        if cell != self.goal:
            self.rhs[cell] = min((cost + self.g.get(neighbour, math.inf)
                                  for neighbour, cost in self._neighbours(cell)), default=math.inf)
        self._queued.pop(cell, None)
        if self.g.get(cell, math.inf) != self.rhs.get(cell, math.inf):
            self._push(cell, self._calculate_key(cell, start))

    def compute_shortest_path(self, start: Cell):
        while True:
            top_key, cell = self._top()
            start_rhs = self.rhs.get(start, math.inf)
            start_g = self.g.get(start, math.inf)
            if not (top_key < self._calculate_key(start, start) or start_rhs != start_g):
                return
            if cell is None:
                return
            heapq.heappop(self._heap)
            del self._queued[cell]
            self.num_expansions += 1
            new_key = self._calculate_key(cell, start)
            g_cell = self.g.get(cell, math.inf)
            rhs_cell = self.rhs.get(cell, math.inf)
            if top_key < new_key:
                self._push(cell, new_key)
            elif g_cell > rhs_cell:
                self.g[cell] = rhs_cell
                for neighbour, _ in self._neighbours(cell):
                    self._update_vertex(neighbour, start)
            else:
                self.g[cell] = math.inf
                self._update_vertex(cell, start)
                for neighbour, _ in self._neighbours(cell):
                    self._update_vertex(neighbour, start)

    def apply_changes(self, blocked: np.ndarray, start: Cell):
        changed = np.argwhere(blocked != self.blocked)
        self.km += octile_distance(self.last_start, start)
        self.last_start = start
        self.blocked = blocked
        touched = set()
        for row, col in changed:
            for d_row in (-1, 0, 1):
                for d_col in (-1, 0, 1):
                    cell = (int(row) + d_row, int(col) + d_col)
                    if 0 <= cell[0] < blocked.shape[0] and 0 <= cell[1] < blocked.shape[1]:
                        touched.add(cell)
        for cell in sorted(touched):
            self._update_vertex(cell, start)

    def extract_path(self, start: Cell) -> Optional[List[Cell]]:
        if math.isinf(self.g.get(start, math.inf)):
            return None
        path = [start]
        cell = start
        for _ in range(self.blocked.size):
            if cell == self.goal:
                return path
            cell = min(self._neighbours(cell), key=lambda item: item[1] + self.g.get(item[0], math.inf))[0]
            path.append(cell)
        return None


def plan(ps: PlannerState, m: BuiltMap, start: Cell, goal: Cell) -> Optional[List[Cell]]:
    """
    Shortest 8-connected cell path from `start` to `goal` over the inflated obstacles of `m`
    (unknown cells count as free), or None when the goal cannot be reached. Reuses the search
    state in `ps` across calls with the same goal.
    """
    if not m.in_bounds(start) or not m.in_bounds(goal):
        raise ValueError('Plan endpoints {} and {} must lie inside the {} map.'.format(start, goal, m.shape))
    blocked = m.planning_mask()
    blocked[start] = False
    blocked[goal] = False
    if not ps.is_initialized or ps.goal != goal or ps.blocked.shape != blocked.shape:
        ps.reset(blocked, start, goal)
    else:
        ps.apply_changes(blocked, start)
    ps.compute_shortest_path(start)
    return ps.extract_path(start)


def select_waypoint(path: Sequence[Point2], est_pose: Pose, min_distance: float = 0.5) -> Point2:
    if not path:
        raise ValueError('Cannot select a waypoint on an empty path.')
    for point in path:
        if math.hypot(point[0] - est_pose.x, point[1] - est_pose.z) >= min_distance:
            return point
    return path[-1]


def controller_step(est_pose: Pose, waypoint: Point2, est_goal_dist: float, rng: np.random.Generator,
                    params: ClassicNavParams = ClassicNavParams()) -> Action:
    if est_goal_dist < params.stop_radius:
        return Action.Stop
    if rng.random() < params.random_action_prob:
        moves = Action.moves()
        return moves[int(rng.integers(len(moves)))]
    bearing_error = bearing_to(transform_point(inverse(est_pose), waypoint))
    if abs(bearing_error) <= params.heading_tolerance:
        return Action.MoveForward
    return Action.TurnLeft if bearing_error > 0 else Action.TurnRight


class ClassicAgent(Agent):
    """Map, plan and follow waypoints; all geometry is in the episode start frame."""
    kind = AgentKind.Classic

    def __init__(self, params: ClassicNavParams = ClassicNavParams(), sensor_config: SensorConfig = SensorConfig()):
        super(ClassicAgent, self).__init__()
        self.params = params
        self.sensor_config = sensor_config
        self.goal: Point2 = (0.0, 0.0)
        self.built_map: Optional[BuiltMap] = None
        self.planner: Optional[PlannerState] = None
        self.last_path: Optional[List[Cell]] = None

    def _reset(self, initial_rel_goal: Point2):
        self.goal = (float(initial_rel_goal[0]), float(initial_rel_goal[1]))
        self.built_map = BuiltMap.empty(self.params.map_size, self.params.map_resolution,
                                        self.params.obstacle_threshold, self.params.inflation_cells)
        self.planner = PlannerState()
        self.last_path = None

    def act(self, observation: AgentObservation) -> Action:
        est_pose = observation.est_pose
        update_map(self.built_map, observation.scan, est_pose, self.sensor_config)
        waypoint = self._next_waypoint(est_pose)
        est_goal_dist = math.hypot(*observation.est_rel_goal)
        return controller_step(est_pose, waypoint, est_goal_dist, self.rng, self.params)

    def _next_waypoint(self, est_pose: Pose) -> Point2:
        start = self.built_map.point_to_cell(est_pose.position)
        goal = self.built_map.point_to_cell(self.goal)
        if not self.built_map.in_bounds(start) or not self.built_map.in_bounds(goal):
            return self.goal
        self.last_path = plan(self.planner, self.built_map, start, goal)
        if not self.last_path:
            return self.goal
        points = [self.built_map.cell_center(cell) for cell in self.last_path]
        points[-1] = self.goal
        return select_waypoint(points, est_pose, self.params.waypoint_distance)
