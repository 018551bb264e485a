import csv
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import binary_dilation

from actuation import Action, nominal_motion, sample_noisy_motion
from agent_base import Agent, AgentKind, AgentObservation
from classic_nav import ClassicAgent
from common import common
from config import Config, ConfigError
from environment import (GeodesicOracle, OccupancyGrid, has_line_of_sight, is_free_position, load_map, raycast,
                         step_kinematics)
from geometry import Point2, Pose, bearing_to, compose, inverse, relative_pose, transform_point
from metrics import EpisodeOutcome, is_success, soft_spl, spl, step_reward
from odometry import Odometer, OdometerKind, integrate, load_odometer, update_relative_goal

GREEDY_HEADING_TOLERANCE = math.radians(5.0)
# Above half a forward step and inside the success radius once positions snap to cells.
GREEDY_STOP_RADIUS = 0.14
TRAJECTORY_CSV_COLUMNS = ('step', 'action', 'x_true', 'z_true', 'yaw_true', 'x_est', 'z_est', 'yaw_est', 'reward')


class EpisodeSpec(NamedTuple):
    map_name: str
    start: Pose
    goal: Point2
    max_steps: int = 500
    episode_id: str = ''


class RunSetting(NamedTuple):
    agent: AgentKind
    odometer: OdometerKind
    noisy: bool

    @property
    def label(self) -> str:
        return '{}/{}/{}'.format(self.agent.value, self.odometer.value, 'noisy' if self.noisy else 'noiseless')


class StepRecord(NamedTuple):
    """State after executing `action`; poses are in world coordinates."""
    step: int
    action: Action
    true_pose: Pose
    est_pose: Pose
    est_rel_goal: Point2
    reward: float
    collided: bool


class EpisodeRecord(NamedTuple):
    episode: EpisodeSpec
    setting: RunSetting
    seed: int
    steps: List[StepRecord]
    outcome: EpisodeOutcome
    collisions: int
    localization_error: float

    @property
    def spl(self) -> float:
        return spl(self.outcome)

    @property
    def soft_spl(self) -> float:
        return soft_spl(self.outcome)

    @property
    def actions(self) -> List[Action]:
        return [step.action for step in self.steps]

    @property
    def rewards(self) -> List[float]:
        return [step.reward for step in self.steps]


class Report(NamedTuple):
    label: str
    soft_spl: float
    spl: float
    success_rate: float
    geo_d_T: float
    localization_error: float
    num_episodes: int

    def __str__(self):
        return '{label}: SoftSPL: {soft_spl:.3f}, SPL: {spl:.3f}, success: {success:.3f}, geo_d_T: {d_T:.3f}, ' \
               'median localization error: {loc:.3f} ({n} episodes)'.format(
                   label=self.label, soft_spl=self.soft_spl, spl=self.spl, success=self.success_rate,
                   d_T=self.geo_d_T, loc=self.localization_error, n=self.num_episodes)

    def to_dict(self) -> dict:
        return dict(self._asdict())

    @classmethod
    def from_dict(cls, values: dict) -> 'Report':
        return cls(label=str(values['label']), soft_spl=float(values['soft_spl']), spl=float(values['spl']),
                   success_rate=float(values['success_rate']), geo_d_T=float(values['geo_d_T']),
                   localization_error=float(values['localization_error']),
                   num_episodes=int(values['num_episodes']))


def greedy_goal_policy(est_rel_goal: Point2) -> Action:
    if math.hypot(est_rel_goal[0], est_rel_goal[1]) <= GREEDY_STOP_RADIUS:
        return Action.Stop
    bearing = bearing_to(est_rel_goal)
    if abs(bearing) <= GREEDY_HEADING_TOLERANCE:
        return Action.MoveForward
    return Action.TurnLeft if bearing > 0 else Action.TurnRight


class GreedyGoalAgent(Agent):
    kind = AgentKind.GreedyGoal

    def act(self, observation: AgentObservation) -> Action:
        return greedy_goal_policy(observation.est_rel_goal)


def create_agent(kind: AgentKind, config: Config) -> Agent:
    if kind is AgentKind.Classic:
        return ClassicAgent(config.classic_nav_params, config.sensor_config)
    return GreedyGoalAgent()


def validate_episode(grid: OccupancyGrid, episode: EpisodeSpec, config: Config) -> Tuple[GeodesicOracle, float]:
    """Geodesic oracle for the episode goal and the start distance; raises ConfigError for unusable episodes."""
    if episode.max_steps <= 0:
        raise ConfigError('Episode {!r} needs a positive step budget, got {}.'.format(
            episode.episode_id, episode.max_steps))
    if not is_free_position(grid, episode.start.x, episode.start.z, config.AGENT_RADIUS):
        raise ConfigError('Episode {!r} starts inside an obstacle of map {!r} at {}.'.format(
            episode.episode_id, grid.name, episode.start.position))
    oracle = GeodesicOracle(grid, episode.goal)
    d_init = oracle.distance_to(episode.start.position)
    if d_init is None:
        raise ConfigError('Episode {!r}: goal {} is unreachable from the start on map {!r}.'.format(
            episode.episode_id, episode.goal, grid.name))
    if not d_init > 0:
        raise ConfigError('Episode {!r} starts on its goal.'.format(episode.episode_id))
    return oracle, d_init


def run_episode(config: Config, grid: OccupancyGrid, episode: EpisodeSpec, seed: int, setting: RunSetting,
                odometer: Optional[Odometer] = None, agent: Optional[Agent] = None) -> EpisodeRecord:
    """
    Runs one episode: sense, act, move the world, localize, score. The agent only ever sees its
    scans and its own odometer-integrated estimates; the relative goal is given once at the start.
    """
    oracle, d_init = validate_episode(grid, episode, config)
    odometer = odometer or load_odometer(config, setting.odometer)
    agent = agent or create_agent(setting.agent, config)
    sensor_config = config.sensor_config
    noise_model = config.noise_model
    reward_config = config.reward_config
    actuation_rng, agent_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    start = episode.start
    true_pose = start
    est_pose = Pose.identity()  # in the start frame
    est_world = start
    rel_goal = transform_point(inverse(start), episode.goal)
    agent.reset(rel_goal, agent_rng)
    scan = raycast(grid, true_pose, sensor_config)

    steps: List[StepRecord] = []
    d_prev = d_init
    path_length = 0.0
    collisions = 0
    called_stop = False
    for t in range(episode.max_steps):
        action = agent.act(AgentObservation(scan, est_pose, rel_goal))
        if action.is_stop:
            called_stop = True
            reward = step_reward(d_prev, d_prev, is_success(d_prev, True), reward_config)
            steps.append(StepRecord(t, action, true_pose, est_world, rel_goal, reward, False))
            break

        commanded = sample_noisy_motion(action, noise_model, actuation_rng) if setting.noisy \
            else nominal_motion(action)
        new_pose, collided = step_kinematics(grid, true_pose, commanded, config.AGENT_RADIUS,
                                             config.NUM_SUBSTEPS, config.SLIDING)
        true_delta = relative_pose(true_pose, new_pose)
        new_scan = raycast(grid, new_pose, sensor_config)
        est_delta = odometer.predict(action, scan, new_scan, true_delta=true_delta)
        if odometer.uses_ground_truth:
            est_pose = Pose(*relative_pose(start, new_pose))
            est_world = new_pose
            rel_goal = transform_point(inverse(new_pose), episode.goal)
        else:
            est_pose = integrate(est_pose, est_delta)
            est_world = compose(start, est_pose)
            rel_goal = update_relative_goal(rel_goal, est_delta)

        path_length += math.hypot(new_pose.x - true_pose.x, new_pose.z - true_pose.z)
        collisions += int(collided)
        d_curr = oracle.distance_to(new_pose.position)
        if d_curr is None:
            d_curr = math.hypot(new_pose.x - episode.goal[0], new_pose.z - episode.goal[1])
        reward = step_reward(d_prev, d_curr, False, reward_config)
        steps.append(StepRecord(t, action, new_pose, est_world, rel_goal, reward, collided))
        true_pose, scan, d_prev = new_pose, new_scan, d_curr

    outcome = EpisodeOutcome(d_init=d_init, d_T=d_prev, s=d_init, p=path_length,
                             success=is_success(d_prev, called_stop), steps=len(steps), called_stop=called_stop)
    localization_error = math.hypot(true_pose.x - est_world.x, true_pose.z - est_world.z)
    return EpisodeRecord(episode, setting, seed, steps, outcome, collisions, localization_error)


def _sample_free_point(grid: OccupancyGrid, free_cells: np.ndarray, rng: np.random.Generator,
                       clearance: float) -> Optional[Point2]:
    for _ in range(100):
        row, col = free_cells[int(rng.integers(len(free_cells)))]
        x = grid.origin[0] + (col + rng.random()) * grid.resolution
        z = grid.origin[1] + (row + rng.random()) * grid.resolution
        if is_free_position(grid, x, z, clearance):
            return float(x), float(z)
    return None


def sample_episodes(grid: OccupancyGrid, count: int, rng: np.random.Generator, min_distance: float = 1.0,
                    max_distance: float = 4.0, agent_radius: float = 0.05, line_of_sight: bool = False,
                    max_steps: int = 500, max_attempts: Optional[int] = None) -> List[EpisodeSpec]:
    """
    Random start/goal pairs whose geodesic distance lies in [min_distance, max_distance]. With
    `line_of_sight` the straight segment between them keeps one cell of clearance from obstacles.
    """
    free_cells = grid.free_cells()
    if len(free_cells) == 0:
        raise ValueError('Map {!r} has no free cells.'.format(grid.name))
    clearance = agent_radius + grid.resolution
    dilated = None
    if line_of_sight:
        dilated = OccupancyGrid(binary_dilation(grid.cells, structure=np.ones((3, 3), dtype=bool)),
                                grid.resolution, grid.origin, grid.name)
    max_attempts = max_attempts or 200 * max(count, 1)
    episodes: List[EpisodeSpec] = []
    for _ in range(max_attempts):
        if len(episodes) == count:
            break
        start = _sample_free_point(grid, free_cells, rng, clearance)
        goal = _sample_free_point(grid, free_cells, rng, clearance)
        yaw = float(rng.uniform(-math.pi, math.pi))
        if start is None or goal is None:
            continue
        euclidean = math.hypot(goal[0] - start[0], goal[1] - start[1])
        if not min_distance <= euclidean <= max_distance:
            continue
        if dilated is not None and not has_line_of_sight(dilated, start, goal):
            continue
        geodesic = GeodesicOracle(grid, goal).distance_to(start)
        if geodesic is None or not min_distance <= geodesic <= max_distance:
            continue
        episodes.append(EpisodeSpec(grid.name, Pose.planar(start[0], start[1], yaw), goal, max_steps,
                                    '{}-{:03d}'.format(grid.name, len(episodes))))
    if len(episodes) < count:
        raise ValueError('Sampled only {} of {} episodes on map {!r}.'.format(len(episodes), count, grid.name))
    return episodes


def load_maps(paths: Iterable[str]) -> Dict[str, OccupancyGrid]:
    grids = {}
    for path in common.get_unique_list(paths):
        grid = load_map(path)
        grids[grid.name] = grid
    return grids


def build_episodes(config: Config, grids: Dict[str, OccupancyGrid]) -> List[EpisodeSpec]:
    if config.EPISODES:
        episodes = []
        for index, entry in enumerate(config.EPISODES):
            if entry.get('map') not in grids:
                raise ConfigError('Episode {} refers to unknown map {!r}.'.format(index, entry.get('map')))
            x, z, yaw_degrees = entry['start']
            episodes.append(EpisodeSpec(entry['map'], Pose.planar(x, z, math.radians(yaw_degrees)),
                                        (float(entry['goal'][0]), float(entry['goal'][1])),
                                        int(entry.get('max_steps', config.MAX_STEPS)),
                                        entry.get('id', 'episode-{:03d}'.format(index))))
        return episodes
    episodes = []
    for name, grid in grids.items():
        rng = common.derive_rng(config.SEED, common.stable_hash(name))
        episodes.extend(sample_episodes(grid, config.EPISODES_PER_MAP, rng, config.MIN_EPISODE_DISTANCE,
                                        config.MAX_EPISODE_DISTANCE, config.AGENT_RADIUS,
                                        config.REQUIRE_LINE_OF_SIGHT, config.MAX_STEPS))
    return episodes


def aggregate(records: Sequence[EpisodeRecord], label: str = '') -> Report:
    if not records:
        raise ValueError('Cannot aggregate an empty set of episodes.')
    return Report(label=label or records[0].setting.label,
                  soft_spl=float(np.mean([r.soft_spl for r in records])),
                  spl=float(np.mean([r.spl for r in records])),
                  success_rate=float(np.mean([float(r.outcome.success) for r in records])),
                  geo_d_T=float(np.mean([r.outcome.d_T for r in records])),
                  localization_error=float(statistics.median(r.localization_error for r in records)),
                  num_episodes=len(records))


def _run_task(config: Config, grids: Dict[str, OccupancyGrid], odometers: Dict[OdometerKind, Odometer],
              task: Tuple[RunSetting, EpisodeSpec, int]) -> EpisodeRecord:
    setting, episode, seed = task
    return run_episode(config, grids[episode.map_name], episode, seed, setting, odometers[setting.odometer])


def run_matrix(config: Config) -> List[Tuple[RunSetting, List[EpisodeRecord]]]:
    """Every {agent} x {odometer} x {noise} setting on the same episodes and seeds."""
    grids = load_maps(config.MAP_PATHS)
    episodes = build_episodes(config, grids)
    for episode in episodes:
        validate_episode(grids[episode.map_name], episode, config)
    seeds = [common.derive_seed(config.SEED, index) for index in range(len(episodes))]
    odometers = {kind: load_odometer(config, kind) for kind in common.get_unique_list(config.odometer_kinds)}
    settings = [RunSetting(agent, odometer, bool(noisy))
                for agent in config.agent_kinds for odometer in config.odometer_kinds
                for noisy in config.NOISE_SETTINGS]
    tasks = [(setting, episode, seed) for setting in settings for episode, seed in zip(episodes, seeds)]
    config.log('Running {} settings x {} episodes on {} maps'.format(len(settings), len(episodes), len(grids)))

    run_task = partial(_run_task, config, grids, odometers)
    records: List[EpisodeRecord] = []
    if config.NUM_WORKERS > 1:
        with ProcessPoolExecutor(max_workers=config.NUM_WORKERS) as executor:
            for record in executor.map(run_task, tasks, chunksize=4):
                records.append(record)
                _log_progress(config, len(records), len(tasks))
    else:
        for task in tasks:
            records.append(run_task(task))
            _log_progress(config, len(records), len(tasks))

    results = []
    for index, setting in enumerate(settings):
        setting_records = records[index * len(episodes):(index + 1) * len(episodes)]
        results.append((setting, setting_records))
        if setting_records:
            config.log(str(aggregate(setting_records)))
    return results


def _log_progress(config: Config, done: int, total: int):
    if config.NUM_EPISODES_TO_LOG_PROGRESS and done % config.NUM_EPISODES_TO_LOG_PROGRESS == 0:
        config.log('    {} / {} episodes done'.format(done, total))


def write_report(reports: Sequence[Report], path: str, seed: int):
    common.save_json({'seed': seed, 'reports': [report.to_dict() for report in reports]}, path)


def read_reports(paths: Iterable[str]) -> List[Report]:
    reports = []
    for path in paths:
        data = common.load_json(path)
        if not isinstance(data, dict) or 'reports' not in data:
            raise ValueError('`{}` is not a run report.'.format(path))
        reports.extend(Report.from_dict(values) for values in data['reports'])
    return reports


def format_table(reports: Sequence[Report]) -> str:
    header = ('setting', 'SoftSPL', 'SPL', 'Succ.', 'geo_d_T', 'loc. err.', 'episodes')
    rows = [(r.label, '{:.3f}'.format(r.soft_spl), '{:.3f}'.format(r.spl), '{:.3f}'.format(r.success_rate),
             '{:.3f}'.format(r.geo_d_T), '{:.3f}'.format(r.localization_error), str(r.num_episodes))
            for r in reports]
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = ['  '.join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))
             for row in [header] + rows]
    lines.insert(1, '-' * len(lines[0]))
    return '\n'.join(lines) + '\n'


def write_trajectory_csv(record: EpisodeRecord, path: str):
    common.ensure_parent_dir(path)
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(TRAJECTORY_CSV_COLUMNS)
        for step in record.steps:
            writer.writerow([step.step, step.action.value,
                             step.true_pose.x, step.true_pose.z, step.true_pose.yaw,
                             step.est_pose.x, step.est_pose.z, step.est_pose.yaw,
                             step.reward])


def trajectory_csv_path(directory: str, record: EpisodeRecord) -> str:
    setting = record.setting
    return os.path.join(directory, '{}__{}__{}__{}.csv'.format(
        record.episode.episode_id, setting.agent.value, setting.odometer.value,
        'noisy' if setting.noisy else 'noiseless'))
