import json
import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from actuation import Action
from agent_base import AgentKind
from common import common
from config import Config
from environment import OccupancyGrid, load_map, raycast
from geometry import MotionDelta, Pose, relative_pose
from harness import RunSetting, run_episode, sample_episodes
from odometry import GroundTruthOdometer, OdometerKind

SAMPLE_FIELDS = ('scene', 'traj', 'step', 'action', 'prev_depths', 'curr_depths', 'delta', 'collided')
MAX_ATTEMPTS_PER_TRAJECTORY = 20


class DatasetFormatError(ValueError):
    def __init__(self, line_number: int, field: Optional[str], message: str):
        self.line_number = line_number
        self.field = field
        where = 'line {}'.format(line_number) if field is None else 'line {}, field `{}`'.format(line_number, field)
        super(DatasetFormatError, self).__init__('{}: {}'.format(where, message))


class DatasetCollectionError(ValueError):
    def __init__(self, scene: str, message: str):
        self.scene = scene
        super(DatasetCollectionError, self).__init__('scene {!r}: {}'.format(scene, message))


class EgomotionSample(NamedTuple):
    scene: str
    traj: int
    step: int
    action: Action
    prev_depths: np.ndarray
    curr_depths: np.ndarray
    delta: MotionDelta
    collided: bool
    # True poses bracketing the action; known at collection time only, never serialized.
    src_pose: Optional[Pose] = None
    tgt_pose: Optional[Pose] = None

    def to_json_dict(self) -> dict:
        return {'scene': self.scene, 'traj': int(self.traj), 'step': int(self.step), 'action': self.action.value,
                'prev_depths': [float(d) for d in self.prev_depths],
                'curr_depths': [float(d) for d in self.curr_depths],
                'delta': [float(v) for v in self.delta], 'collided': bool(self.collided)}


class DatasetSpec(NamedTuple):
    scenes: Tuple[str, ...]
    pairs_per_scene: int = 250
    trajectories_per_scene: int = 20
    noisy: bool = True
    seed: int = 0

    @classmethod
    def from_config(cls, config: Config) -> 'DatasetSpec':
        return cls(tuple(config.dataset_scenes), int(config.PAIRS_PER_SCENE), int(config.TRAJECTORIES_PER_SCENE),
                   bool(config.DATASET_NOISY), int(config.SEED))

    def verify(self):
        if not self.scenes:
            raise ValueError('A dataset spec needs at least one scene.')
        if self.pairs_per_scene <= 0 or self.trajectories_per_scene <= 0:
            raise ValueError('pairs_per_scene and trajectories_per_scene must be positive, got {} and {}.'.format(
                self.pairs_per_scene, self.trajectories_per_scene))


class DatasetSplits(NamedTuple):
    train: List[EgomotionSample]
    val_seen: List[EgomotionSample]
    val_unseen: List[EgomotionSample]


class ActionStatistics(NamedTuple):
    count: int
    share: float
    mean: Tuple[float, float, float, float]
    std: Tuple[float, float, float, float]

    def __str__(self):
        return 'count: {}, share: {:.3f}, mean (dx, dy, dz, dyaw): {}, std: {}'.format(
            self.count, self.share, tuple(round(v, 5) for v in self.mean), tuple(round(v, 5) for v in self.std))


def _trajectory_samples(grid: OccupancyGrid, scene: str, traj: int, start: Pose, steps, quota: int,
                        rng: np.random.Generator, config: Config) -> List[EgomotionSample]:
    """Samples `quota` adjacent (t, t+1) pairs of one unrolled trajectory, in step order."""
    moves = []
    prev_pose = start
    for step in steps:
        if step.action.is_stop:
            break
        moves.append((step.step, step.action, prev_pose, step.true_pose, step.collided))
        prev_pose = step.true_pose
    chosen = np.sort(rng.choice(len(moves), size=quota, replace=False))
    sensor_config = config.sensor_config
    samples = []
    for index in chosen:
        step_index, action, src, tgt, collided = moves[int(index)]
        samples.append(EgomotionSample(
            scene=scene, traj=traj, step=int(step_index), action=action,
            prev_depths=raycast(grid, src, sensor_config).depths, curr_depths=raycast(grid, tgt, sensor_config).depths,
            delta=relative_pose(src, tgt), collided=bool(collided), src_pose=src, tgt_pose=tgt))
    return samples


def collect_scene(config: Config, spec: DatasetSpec, scene_path: str,
                  grid: Optional[OccupancyGrid] = None) -> List[EgomotionSample]:
    """
    Unrolls trajectories with the classic agent under ground-truth localization and keeps the
    first successful ones long enough for their share of the scene's pairs.
    """
    grid = grid or load_map(scene_path)
    scene = grid.name or common.scene_name(scene_path)
    rng = common.derive_rng(spec.seed, common.stable_hash(scene))
    quotas = common.split_evenly(spec.pairs_per_scene, spec.trajectories_per_scene)
    setting = RunSetting(AgentKind.Classic, OdometerKind.GroundTruth, spec.noisy)
    odometer = GroundTruthOdometer()

    samples: List[EgomotionSample] = []
    traj = 0
    attempts = 0
    max_attempts = MAX_ATTEMPTS_PER_TRAJECTORY * spec.trajectories_per_scene
    while traj < spec.trajectories_per_scene and attempts < max_attempts:
        attempts += 1
        episode = sample_episodes(grid, 1, rng, config.MIN_EPISODE_DISTANCE, config.MAX_EPISODE_DISTANCE,
                                  config.AGENT_RADIUS, max_steps=config.MAX_STEPS)[0]
        seed = int(rng.integers(2 ** 63 - 1))
        record = run_episode(config, grid, episode, seed, setting, odometer=odometer)
        num_moves = sum(1 for step in record.steps if not step.action.is_stop)
        if not record.outcome.success or num_moves < quotas[traj]:
            continue
        samples.extend(_trajectory_samples(grid, scene, traj, episode.start, record.steps, quotas[traj], rng, config))
        traj += 1
    if traj == 0:
        raise DatasetCollectionError(scene, 'no successful trajectory in {} attempts'.format(attempts))
    if traj < spec.trajectories_per_scene:
        raise DatasetCollectionError(scene, 'only {} of {} trajectories succeeded in {} attempts'.format(
            traj, spec.trajectories_per_scene, attempts))
    config.log('Collected {} pairs from {} trajectories of scene {!r} ({} attempts)'.format(
        len(samples), traj, scene, attempts))
    return samples


def collect(spec: DatasetSpec, config: Config, worlds: Optional[Dict[str, OccupancyGrid]] = None) -> List[EgomotionSample]:
    """Samples of every scene in canonical (scene, trajectory, step) order."""
    spec.verify()
    worlds = worlds or {}
    scenes = list(spec.scenes)
    if config.NUM_WORKERS > 1 and len(scenes) > 1:
        with ProcessPoolExecutor(max_workers=config.NUM_WORKERS) as executor:
            per_scene = list(executor.map(partial(_collect_scene_task, config, spec, worlds), scenes))
    else:
        per_scene = [collect_scene(config, spec, scene, worlds.get(scene)) for scene in scenes]
    return [sample for scene_samples in per_scene for sample in scene_samples]


def _collect_scene_task(config: Config, spec: DatasetSpec, worlds: Dict[str, OccupancyGrid],
                        scene: str) -> List[EgomotionSample]:
    return collect_scene(config, spec, scene, worlds.get(scene))


def write_jsonl(samples: Iterable[EgomotionSample], path: str):
    common.ensure_parent_dir(path)
    with open(path, 'w') as file:
        for sample in samples:
            file.write(json.dumps(sample.to_json_dict(), separators=(',', ':')))
            file.write('\n')


def _parse_depths(values, line_number: int, field: str) -> np.ndarray:
    if not isinstance(values, list) or not values:
        raise DatasetFormatError(line_number, field, 'expecting a non-empty list of depths')
    try:
        depths = np.array(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetFormatError(line_number, field, 'depths must be numbers')
    if depths.ndim != 1 or not np.isfinite(depths).all():
        raise DatasetFormatError(line_number, field, 'depths must be a flat list of finite numbers')
    return depths


def parse_sample(line: str, line_number: int) -> EgomotionSample:
    try:
        values = json.loads(line)
    except ValueError as error:
        raise DatasetFormatError(line_number, None, 'malformed JSON ({})'.format(error))
    if not isinstance(values, dict):
        raise DatasetFormatError(line_number, None, 'expecting a JSON object')
    for field in SAMPLE_FIELDS:
        if field not in values:
            raise DatasetFormatError(line_number, field, 'missing field')
    try:
        action = Action(values['action'])
    except ValueError:
        raise DatasetFormatError(line_number, 'action', 'unknown action {!r}'.format(values['action']))
    if action.is_stop:
        raise DatasetFormatError(line_number, 'action', 'stop has no egomotion')
    delta = values['delta']
    if not isinstance(delta, list) or len(delta) != 4 or not all(isinstance(v, (int, float)) for v in delta):
        raise DatasetFormatError(line_number, 'delta', 'expecting [dx, dy, dz, dyaw]')
    prev_depths = _parse_depths(values['prev_depths'], line_number, 'prev_depths')
    curr_depths = _parse_depths(values['curr_depths'], line_number, 'curr_depths')
    if len(prev_depths) != len(curr_depths):
        raise DatasetFormatError(line_number, 'curr_depths', 'scan lengths differ ({} and {})'.format(
            len(prev_depths), len(curr_depths)))
    for field in ('traj', 'step'):
        if not isinstance(values[field], int):
            raise DatasetFormatError(line_number, field, 'expecting an integer')
    if not isinstance(values['collided'], bool):
        raise DatasetFormatError(line_number, 'collided', 'expecting a boolean')
    return EgomotionSample(scene=str(values['scene']), traj=values['traj'], step=values['step'], action=action,
                           prev_depths=prev_depths, curr_depths=curr_depths,
                           delta=MotionDelta(*(float(v) for v in delta)), collided=values['collided'])


def read_jsonl(path: str) -> List[EgomotionSample]:
    samples = []
    with open(path, 'r') as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            samples.append(parse_sample(line, line_number))
    return samples


def split(samples: Sequence[EgomotionSample], ratio: float, seed: int,
          unseen_scenes: Optional[Sequence[str]] = None) -> DatasetSplits:
    """
    Holds out whole scenes as val-unseen and a random (1 - ratio) share of the remaining samples
    as val-seen. `unseen_scenes=None` holds out scene `seed mod #scenes` in sorted order, so consecutive
    seeds cycle through every scene; an empty list holds out none.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError('Split ratio must be in (0, 1], got {}.'.format(ratio))
    rng = np.random.default_rng(seed)
    scenes = sorted(set(sample.scene for sample in samples))
    if unseen_scenes is None:
        if len(scenes) < 2:
            raise ValueError('A val-unseen split needs at least 2 scenes, got {}.'.format(len(scenes)))
        unseen = {scenes[seed % len(scenes)]}
    else:
        unseen = set(unseen_scenes)
        unknown = unseen - set(scenes)
        if unknown:
            raise ValueError('Unseen scenes {} are not in the dataset.'.format(sorted(unknown)))
        if unseen and unseen == set(scenes):
            raise ValueError('Holding out every scene leaves nothing to train on.')
    val_unseen = [sample for sample in samples if sample.scene in unseen]
    seen = [sample for sample in samples if sample.scene not in unseen]
    num_train = int(round(ratio * len(seen)))
    order = rng.permutation(len(seen))
    train_indices = np.sort(order[:num_train])
    val_indices = np.sort(order[num_train:])
    return DatasetSplits(train=[seen[i] for i in train_indices], val_seen=[seen[i] for i in val_indices],
                         val_unseen=val_unseen)


def action_statistics(samples: Sequence[EgomotionSample]) -> Dict[Action, ActionStatistics]:
    stats = {}
    total = len(samples)
    for action in Action.moves():
        deltas = np.array([np.asarray(s.delta, dtype=np.float64) for s in samples if s.action is action])
        if len(deltas) == 0:
            continue
        stats[action] = ActionStatistics(count=len(deltas), share=len(deltas) / total,
                                         mean=tuple(float(v) for v in deltas.mean(axis=0)),
                                         std=tuple(float(v) for v in deltas.std(axis=0)))
    return stats


def samples_close(a: EgomotionSample, b: EgomotionSample, tol: float = 1e-12) -> bool:
    return (a.scene, a.traj, a.step, a.action, a.collided) == (b.scene, b.traj, b.step, b.action, b.collided) \
        and np.allclose(a.prev_depths, b.prev_depths, rtol=0.0, atol=tol) \
        and np.allclose(a.curr_depths, b.curr_depths, rtol=0.0, atol=tol) \
        and all(math.isclose(x, y, rel_tol=0.0, abs_tol=tol) for x, y in zip(a.delta, b.delta))
