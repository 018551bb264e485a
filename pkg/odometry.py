import abc
import math
from enum import Enum
from typing import TYPE_CHECKING, Dict, Iterable, NamedTuple, Optional, Set, Tuple

import numpy as np
from scipy.spatial import cKDTree

from actuation import Action, nominal_motion
from common import common
from environment import DepthScan, SensorConfig
from geometry import MotionDelta, Point2, Pose, compose, inverse, normalize_angle, transform_point

if TYPE_CHECKING:
    from config import Config
    from egodata import EgomotionSample


class OdometerKind(Enum):
    GroundTruth = 'ground_truth'
    DeadReckoning = 'dead_reckoning'
    Calibrated = 'calibrated'
    ScanMatch = 'scan_match'


class ScanMatchParams(NamedTuple):
    translation_window: float = 0.15
    rotation_window: float = math.radians(15.0)
    coarse_translation_step: float = 0.03
    coarse_rotation_step: float = math.radians(3.0)
    fine_translation_step: float = 0.005
    fine_rotation_step: float = math.radians(0.5)
    max_iterations: int = 10
    min_points: int = 5
    max_correspondence_distance: float = 0.25
    densify_max_gap: float = 0.3
    densify_spacing: float = 0.01

    def verify(self):
        for name in ('translation_window', 'rotation_window', 'coarse_translation_step', 'coarse_rotation_step',
                     'fine_translation_step', 'fine_rotation_step', 'max_correspondence_distance',
                     'densify_max_gap', 'densify_spacing'):
            if not getattr(self, name) > 0:
                raise ValueError('ScanMatchParams.{} must be positive, got {}.'.format(name, getattr(self, name)))
        if self.fine_translation_step > self.coarse_translation_step or \
                self.fine_rotation_step > self.coarse_rotation_step:
            raise ValueError('Fine scan-matching steps must not exceed the coarse steps.')
        if self.max_iterations < 0 or self.min_points < 1:
            raise ValueError('ScanMatchParams.max_iterations must be >= 0 and min_points >= 1.')


def dead_reckon(action: Action) -> MotionDelta:
    return nominal_motion(action)


def integrate(est: Pose, delta: MotionDelta) -> Pose:
    return compose(est, delta)


def update_relative_goal(goal_in_prev_frame: Point2, delta: MotionDelta) -> Point2:
    """Re-expresses a goal given in the previous agent frame in the frame reached after `delta`."""
    return transform_point(inverse(delta), goal_in_prev_frame)


def smooth_l1(pred: MotionDelta, truth: MotionDelta, beta: float = 1.0) -> float:
    error = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64))
    per_component = np.where(error < beta, 0.5 * error ** 2 / beta, error - 0.5 * beta)
    return float(per_component.sum())


class CalibratedModel:
    """Per-action mean egomotion, fitted from an egomotion dataset."""

    def __init__(self, means: Dict[Action, MotionDelta], counts: Dict[Action, int],
                 fallback: Optional[Set[Action]] = None):
        self.means = dict(means)
        self.counts = dict(counts)
        self.fallback: Set[Action] = set(fallback or ())
        for action in Action.moves():
            if action not in self.means:
                self.means[action] = dead_reckon(action)
                self.counts[action] = 0
                self.fallback.add(action)

    def delta_for(self, action: Action) -> MotionDelta:
        if action.is_stop:
            raise ValueError('Action `stop` has no calibrated motion.')
        return self.means[action]

    def to_dict(self) -> dict:
        return {action.value: {'mean': list(self.means[action]),
                               'count': self.counts[action],
                               'fallback': action in self.fallback}
                for action in Action.moves()}

    @classmethod
    def from_dict(cls, data: dict) -> 'CalibratedModel':
        means, counts, fallback = {}, {}, set()
        for action in Action.moves():
            if action.value not in data:
                continue
            entry = data[action.value]
            mean = entry['mean']
            if len(mean) != 4:
                raise ValueError('Calibrated mean for `{}` must have 4 components, got {}.'.format(
                    action.value, len(mean)))
            means[action] = MotionDelta(*map(float, mean))
            counts[action] = int(entry.get('count', 0))
            if entry.get('fallback', False):
                fallback.add(action)
        return cls(means, counts, fallback)

    def save(self, path: str):
        common.save_json(self.to_dict(), path)

    @classmethod
    def load(cls, path: str) -> 'CalibratedModel':
        return cls.from_dict(common.load_json(path))

    def __repr__(self):
        return 'CalibratedModel({})'.format(', '.join(
            '{}: {} (n={}{})'.format(action.value, tuple(round(v, 6) for v in self.means[action]),
                                     self.counts[action], ', fallback' if action in self.fallback else '')
            for action in Action.moves()))


def fit_calibrated(samples: Iterable['EgomotionSample']) -> CalibratedModel:
    sums = {action: np.zeros(4, dtype=np.float64) for action in Action.moves()}
    counts = {action: 0 for action in Action.moves()}
    for sample in samples:
        sums[sample.action] += np.asarray(sample.delta, dtype=np.float64)
        counts[sample.action] += 1
    if sum(counts.values()) == 0:
        raise ValueError('Cannot fit a calibrated odometer on an empty dataset.')
    means = {}
    for action in Action.moves():
        if counts[action] == 0:
            continue
        dx, _, dz, dyaw = sums[action] / counts[action]
        means[action] = MotionDelta(float(dx), 0.0, float(dz), float(dyaw))
    return CalibratedModel(means, {a: n for a, n in counts.items() if n > 0})


def _densify(points: np.ndarray, ray_indices: np.ndarray, max_gap: float, spacing: float) -> np.ndarray:
    """Adds points along segments joining endpoints of neighbouring rays that lie on the same surface."""
    pieces = [points]
    for i in range(len(points) - 1):
        if ray_indices[i + 1] != ray_indices[i] + 1:
            continue
        segment = points[i + 1] - points[i]
        gap = float(np.hypot(segment[0], segment[1]))
        if gap >= max_gap or gap <= spacing:
            continue
        num = int(math.ceil(gap / spacing))
        fractions = np.arange(1, num, dtype=np.float64) / num
        pieces.append(points[i] + fractions[:, None] * segment)
    return np.concatenate(pieces, axis=0)


def _alignment_scores(tree: cKDTree, curr_points: np.ndarray, candidates: np.ndarray, cap: float) -> np.ndarray:
    # candidates: (C, 3) rows of (dx, dz, dyaw); curr points are mapped into the previous frame.
    cos = np.cos(candidates[:, 2])[:, None]
    sin = np.sin(candidates[:, 2])[:, None]
    px = curr_points[None, :, 0]
    pz = curr_points[None, :, 1]
    mapped_x = candidates[:, 0:1] + cos * px + sin * pz
    mapped_z = candidates[:, 1:2] - sin * px + cos * pz
    distances, _ = tree.query(np.stack([mapped_x.ravel(), mapped_z.ravel()], axis=1), distance_upper_bound=cap)
    return np.minimum(distances, cap).reshape(len(candidates), -1).mean(axis=1)


def _grid_around(center: np.ndarray, half_counts: Tuple[int, int, int], steps: Tuple[float, float, float]) -> np.ndarray:
    axes = [center[i] + np.arange(-half_counts[i], half_counts[i] + 1, dtype=np.float64) * steps[i]
            for i in range(3)]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)


def _pick_best(candidates: np.ndarray, scores: np.ndarray, seed: np.ndarray, scale: np.ndarray) -> int:
    # Among equally good candidates prefer the one closest to the seed.
    best = scores.min()
    tied = np.flatnonzero(scores <= best + 1e-12)
    if len(tied) == 1:
        return int(tied[0])
    offsets = (candidates[tied] - seed) / scale
    return int(tied[np.argmin((offsets ** 2).sum(axis=1))])


def _prepare_alignment(prev: DepthScan, curr: DepthScan, params: ScanMatchParams,
                       cfg: SensorConfig) -> Optional[Tuple[cKDTree, np.ndarray]]:
    if len(prev) != len(curr):
        raise ValueError('Scans must have the same number of rays, got {} and {}.'.format(len(prev), len(curr)))
    prev_mask = prev.valid_mask(cfg)
    curr_points = curr.to_points(cfg)
    if prev_mask.sum() < params.min_points or len(curr_points) < params.min_points:
        return None
    prev_points = _densify(prev.to_points(cfg), np.flatnonzero(prev_mask),
                           params.densify_max_gap, params.densify_spacing)
    return cKDTree(prev_points), curr_points


def alignment_score(prev: DepthScan, curr: DepthScan, delta: MotionDelta, params: ScanMatchParams,
                    cfg: SensorConfig) -> float:
    """Scan-matching objective of a single candidate delta; infinite for degenerate scans."""
    prepared = _prepare_alignment(prev, curr, params, cfg)
    if prepared is None:
        return math.inf
    tree, curr_points = prepared
    candidate = np.array([[delta.dx, delta.dz, delta.dyaw]], dtype=np.float64)
    return float(_alignment_scores(tree, curr_points, candidate, params.max_correspondence_distance)[0])


def scan_match(prev: DepthScan, curr: DepthScan, seed: MotionDelta, params: ScanMatchParams,
               cfg: SensorConfig) -> Tuple[MotionDelta, float]:
    """
    Estimates the pose of the current scan's frame in the previous scan's frame by a
    coarse-to-fine grid search around `seed`, minimising the mean (capped) nearest-neighbour
    distance of the current points to the previous points.
    """
    prepared = _prepare_alignment(prev, curr, params, cfg)
    if prepared is None:
        return seed, math.inf
    tree, curr_points = prepared
    cap = params.max_correspondence_distance
    seed_vec = np.array([seed.dx, seed.dz, seed.dyaw], dtype=np.float64)
    fine_steps = (params.fine_translation_step, params.fine_translation_step, params.fine_rotation_step)
    scale = np.array(fine_steps)

    coarse_steps = (params.coarse_translation_step, params.coarse_translation_step, params.coarse_rotation_step)
    translation_count = int(round(params.translation_window / params.coarse_translation_step))
    rotation_count = int(round(params.rotation_window / params.coarse_rotation_step))
    candidates = _grid_around(seed_vec, (translation_count, translation_count, rotation_count), coarse_steps)
    scores = _alignment_scores(tree, curr_points, candidates, cap)
    best_index = _pick_best(candidates, scores, seed_vec, scale)
    best, best_score = candidates[best_index], scores[best_index]

    half_counts = tuple(int(math.ceil(0.5 * coarse / fine)) for coarse, fine in zip(coarse_steps, fine_steps))
    candidates = _grid_around(best, half_counts, fine_steps)
    scores = _alignment_scores(tree, curr_points, candidates, cap)
    index = _pick_best(candidates, scores, seed_vec, scale)
    if scores[index] < best_score:
        best, best_score = candidates[index], scores[index]

    for _ in range(params.max_iterations):
        candidates = _grid_around(best, (1, 1, 1), fine_steps)
        scores = _alignment_scores(tree, curr_points, candidates, cap)
        index = int(np.argmin(scores))
        if not scores[index] < best_score:
            break
        best, best_score = candidates[index], scores[index]

    return MotionDelta(float(best[0]), 0.0, float(best[1]), normalize_angle(float(best[2]))), float(best_score)


class Odometer(abc.ABC):
    kind: OdometerKind

    def predict(self, action: Action, prev_scan: DepthScan, curr_scan: DepthScan,
                true_delta: Optional[MotionDelta] = None) -> MotionDelta:
        """
        Egomotion estimate for `action`, taking the agent from the frame of `prev_scan` to the
        frame of `curr_scan`. `true_delta` is only consumed by the ground-truth odometer.
        """
        if len(prev_scan) != len(curr_scan):
            raise ValueError('Scans must have the same number of rays, got {} and {}.'.format(
                len(prev_scan), len(curr_scan)))
        if action.is_stop:
            raise ValueError('Action `stop` has no egomotion to estimate.')
        return self._predict(action, prev_scan, curr_scan, true_delta)

    @abc.abstractmethod
    def _predict(self, action: Action, prev_scan: DepthScan, curr_scan: DepthScan,
                 true_delta: Optional[MotionDelta]) -> MotionDelta:
        ...

    @property
    def uses_ground_truth(self) -> bool:
        return self.kind is OdometerKind.GroundTruth

    def __repr__(self):
        return '{}()'.format(type(self).__name__)


class GroundTruthOdometer(Odometer):
    kind = OdometerKind.GroundTruth

    def _predict(self, action, prev_scan, curr_scan, true_delta):
        if true_delta is None:
            raise ValueError('The ground-truth odometer needs the simulator delta.')
        return true_delta


class DeadReckoningOdometer(Odometer):
    kind = OdometerKind.DeadReckoning

    def _predict(self, action, prev_scan, curr_scan, true_delta):
        return dead_reckon(action)


class CalibratedOdometer(Odometer):
    kind = OdometerKind.Calibrated

    def __init__(self, model: CalibratedModel):
        self.model = model

    def _predict(self, action, prev_scan, curr_scan, true_delta):
        return self.model.delta_for(action)

    def __repr__(self):
        return 'CalibratedOdometer({!r})'.format(self.model)


class ScanMatchOdometer(Odometer):
    kind = OdometerKind.ScanMatch

    def __init__(self, params: ScanMatchParams, sensor_config: SensorConfig):
        self.params = params
        self.sensor_config = sensor_config

    def _predict(self, action, prev_scan, curr_scan, true_delta):
        delta, _ = scan_match(prev_scan, curr_scan, dead_reckon(action), self.params, self.sensor_config)
        return delta


def create_odometer(kind: OdometerKind, calibrated_model: Optional[CalibratedModel] = None,
                    scan_match_params: Optional[ScanMatchParams] = None,
                    sensor_config: Optional[SensorConfig] = None) -> Odometer:
    if kind is OdometerKind.GroundTruth:
        return GroundTruthOdometer()
    if kind is OdometerKind.DeadReckoning:
        return DeadReckoningOdometer()
    if kind is OdometerKind.Calibrated:
        if calibrated_model is None:
            raise ValueError('A calibrated odometer needs a fitted CalibratedModel.')
        return CalibratedOdometer(calibrated_model)
    return ScanMatchOdometer(scan_match_params or ScanMatchParams(), sensor_config or SensorConfig())


def load_odometer(config: 'Config', kind: OdometerKind) -> Odometer:
    calibrated_model = None
    if kind is OdometerKind.Calibrated:
        config.log('Loading calibrated odometer from: `{}`'.format(config.calibrated_model_path))
        calibrated_model = CalibratedModel.load(config.calibrated_model_path)
    return create_odometer(kind, calibrated_model, config.scan_match_params, config.sensor_config)


class OdometerEvaluationResults(NamedTuple):
    loss: float
    num_samples: int
    error_mean: Tuple[float, float, float, float]
    error_std: Tuple[float, float, float, float]

    def __str__(self):
        return 'smooth_l1: {loss:.6g} over {n} samples, error mean (x, y, z, yaw): {mean}, error std: {std}'.format(
            loss=self.loss, n=self.num_samples,
            mean=tuple(round(v, 6) for v in self.error_mean),
            std=tuple(round(v, 6) for v in self.error_std))

    def to_dict(self) -> dict:
        return {'smooth_l1': self.loss, 'num_samples': self.num_samples,
                'error_mean': list(self.error_mean), 'error_std': list(self.error_std)}


def evaluate_odometer(odometer: Odometer, samples: Iterable['EgomotionSample']) -> OdometerEvaluationResults:
    losses = []
    errors = []
    for sample in samples:
        pred = odometer.predict(sample.action, DepthScan(np.asarray(sample.prev_depths)),
                                DepthScan(np.asarray(sample.curr_depths)), true_delta=sample.delta)
        losses.append(smooth_l1(pred, sample.delta))
        error = np.asarray(pred, dtype=np.float64) - np.asarray(sample.delta, dtype=np.float64)
        error[3] = normalize_angle(error[3])
        errors.append(error)
    if not losses:
        raise ValueError('Cannot evaluate an odometer on an empty split.')
    errors = np.stack(errors)
    return OdometerEvaluationResults(
        loss=float(np.mean(losses)), num_samples=len(losses),
        error_mean=tuple(float(v) for v in errors.mean(axis=0)),
        error_std=tuple(float(v) for v in errors.std(axis=0)))
