import csv
import math
import statistics

import numpy as np
import pytest

from actuation import Action, NoiseModel, sample_noisy_motions
from agent_base import AgentKind, AgentObservation
from classic_nav import ClassicAgent
from common import common
from config import ConfigError
from egodata import EgomotionSample
from environment import geodesic_distance, is_free_position, raycast
from geometry import Pose, inverse, transform_point
from harness import TRAJECTORY_CSV_COLUMNS, EpisodeRecord, EpisodeSpec, Report, RunSetting, aggregate, \
    build_episodes, format_table, greedy_goal_policy, read_reports, run_episode, run_matrix, sample_episodes, \
    trajectory_csv_path, write_report, write_trajectory_csv
from metrics import EpisodeOutcome, soft_spl, spl
from odometry import CalibratedOdometer, DeadReckoningOdometer, OdometerKind, fit_calibrated, integrate, \
    update_relative_goal

GREEDY_GT = RunSetting(AgentKind.GreedyGoal, OdometerKind.GroundTruth, False)
GREEDY_DR = RunSetting(AgentKind.GreedyGoal, OdometerKind.DeadReckoning, False)
GREEDY_DR_NOISY = RunSetting(AgentKind.GreedyGoal, OdometerKind.DeadReckoning, True)
CLASSIC_DR_NOISY = RunSetting(AgentKind.Classic, OdometerKind.DeadReckoning, True)


def _episodes(grid, count: int, seed: int, line_of_sight: bool = True, max_steps: int = 300):
    return sample_episodes(grid, count, np.random.default_rng(seed), 1.0, 3.5, line_of_sight=line_of_sight,
                           max_steps=max_steps)


def _record(spl_value: float, success: bool, d_T: float = 0.0, localization_error: float = 0.0,
            label_setting: RunSetting = GREEDY_GT) -> EpisodeRecord:
    s = 4.0
    p = s / spl_value if success and spl_value > 0 else s
    outcome = EpisodeOutcome(d_init=4.0, d_T=d_T, s=s, p=p, success=success, steps=3, called_stop=success)
    episode = EpisodeSpec('open_room', Pose.planar(1.0, 1.0), (3.0, 3.0))
    return EpisodeRecord(episode, label_setting, 0, [], outcome, 0, localization_error)


def _calibrated_from_noise(model: NoiseModel, seed: int = 0) -> CalibratedOdometer:
    rng = np.random.default_rng(seed)
    empty = np.full(61, 4.0)
    samples = []
    for action in Action.moves():
        for row in sample_noisy_motions(action, model, rng, 5000):
            samples.append(EgomotionSample('noise', 0, 0, action, empty, empty, tuple(row), False))
    return CalibratedOdometer(fit_calibrated(samples))


@pytest.mark.parametrize('goal, expected', [
    ((0.0, 1.5), Action.MoveForward),
    ((0.0, 0.1), Action.Stop),
    ((0.0, 0.15), Action.MoveForward),
    ((math.sin(math.radians(40)), math.cos(math.radians(40))), Action.TurnLeft),
    ((-math.sin(math.radians(40)), math.cos(math.radians(40))), Action.TurnRight),
    ((math.sin(math.radians(4)), math.cos(math.radians(4))), Action.MoveForward),
])
def test_greedy_goal_policy(goal, expected: Action) -> None:
    """Stop inside 0.14 m, go straight within 5 degrees, otherwise turn toward the goal."""
    assert greedy_goal_policy(goal) is expected


class TestRunEpisode:

    def test_ground_truth_reaches_goal_ahead(self, config, bundled_maps) -> None:
        """With perfect localization the greedy agent walks 2 m straight and stops on the goal."""
        episode = EpisodeSpec('open_room', Pose.planar(2.5, 1.0, 0.0), (2.5, 3.0), 100, 'ahead')
        record = run_episode(config, bundled_maps['open_room'], episode, 0, GREEDY_GT)
        assert record.outcome.success
        assert record.outcome.d_T <= 0.2
        assert record.actions[-1] is Action.Stop
        assert record.actions.count(Action.MoveForward) == 8
        assert record.localization_error == 0.0
        assert record.spl == pytest.approx(1.0)

    def test_same_seed_gives_identical_records(self, config, bundled_maps) -> None:
        """Re-running an episode with the same seed reproduces it exactly."""
        grid = bundled_maps['pillars']
        episode = _episodes(grid, 1, seed=1, line_of_sight=False, max_steps=80)[0]
        first = run_episode(config, grid, episode, 123, CLASSIC_DR_NOISY)
        second = run_episode(config, grid, episode, 123, CLASSIC_DR_NOISY)
        assert first == second

    def test_noiseless_dead_reckoning_without_collisions_is_exact(self, config, bundled_maps) -> None:
        """Collision-free noiseless episodes end with no localization error."""
        grid = bundled_maps['open_room']
        records = [run_episode(config, grid, episode, index, GREEDY_DR)
                   for index, episode in enumerate(_episodes(grid, 10, seed=2))]
        clean = [r for r in records if r.collisions == 0]
        assert len(clean) >= 8
        for record in clean:
            assert record.localization_error < 1e-6
            assert record.outcome.called_stop

    def test_collisions_break_dead_reckoning(self, config, bundled_maps) -> None:
        """Episodes with collisions leave dead reckoning centimetres off."""
        grid = bundled_maps['two_rooms']
        episodes = _episodes(grid, 16, seed=3, line_of_sight=False, max_steps=100)
        records = [run_episode(config, grid, episode, index, GREEDY_DR) for index, episode in enumerate(episodes)]
        collided = [r.localization_error for r in records if r.collisions > 0]
        assert len(collided) >= 3
        assert statistics.median(collided) > 0.01

    def test_ground_truth_odometer_has_zero_error(self, config, bundled_maps) -> None:
        """The ground-truth odometer tracks the true pose exactly, even under noise."""
        grid = bundled_maps['pillars']
        for index, episode in enumerate(_episodes(grid, 4, seed=4, line_of_sight=False, max_steps=60)):
            record = run_episode(config, grid, episode, index,
                                 RunSetting(AgentKind.GreedyGoal, OdometerKind.GroundTruth, True))
            assert record.localization_error == 0.0

    def test_rewards_telescope(self, config, bundled_maps) -> None:
        """Per-step rewards sum to s_r * success + (d_init - d_T) + slack * steps."""
        grid = bundled_maps['pillars']
        for index, episode in enumerate(_episodes(grid, 4, seed=5, line_of_sight=False, max_steps=120)):
            record = run_episode(config, grid, episode, index, CLASSIC_DR_NOISY)
            outcome = record.outcome
            expected = 1.0 * float(outcome.success) + (outcome.d_init - outcome.d_T) - 0.01 * len(record.steps)
            assert sum(record.rewards) == pytest.approx(expected, abs=1e-9)
            assert outcome.steps == len(record.steps)
            assert outcome.s == outcome.d_init

    def test_spl_is_soft_spl_with_binary_progress(self, config, bundled_maps) -> None:
        """Swapping the progress factor of SoftSPL for the success bit gives SPL on every episode."""
        grid = bundled_maps['two_rooms']
        for index, episode in enumerate(_episodes(grid, 6, seed=9, line_of_sight=False, max_steps=150)):
            for setting in (CLASSIC_DR_NOISY, GREEDY_DR_NOISY):
                outcome = run_episode(config, grid, episode, index, setting).outcome
                efficiency = outcome.s / max(outcome.s, outcome.p)
                progress = 1.0 - outcome.d_T / outcome.d_init
                assert spl(outcome) == pytest.approx(float(outcome.success) * efficiency, abs=1e-12)
                assert soft_spl(outcome) == pytest.approx(progress * efficiency, abs=1e-12)
                assert soft_spl(outcome._replace(d_T=0.0)) == pytest.approx(efficiency, abs=1e-12)
                if outcome.success:
                    assert spl(outcome) == pytest.approx(soft_spl(outcome._replace(d_T=0.0)), abs=1e-12)

    def test_path_length_is_at_least_geodesic(self, config, bundled_maps) -> None:
        """The true path covers at least the geodesic progress made, up to grid discretization."""
        grid = bundled_maps['corridor']
        for index, episode in enumerate(_episodes(grid, 4, seed=6, line_of_sight=False, max_steps=150)):
            record = run_episode(config, grid, episode, index,
                                 RunSetting(AgentKind.Classic, OdometerKind.GroundTruth, False))
            outcome = record.outcome
            # Grid paths overestimate off-axis lengths by at most 1 / cos(22.5 deg).
            assert outcome.p >= (outcome.d_init - outcome.d_T) * math.cos(math.pi / 8) - 2 * grid.resolution

    def test_invalid_episodes_are_rejected_before_stepping(self, config, bundled_maps, box_grid) -> None:
        """Starts in obstacles, unreachable goals and empty budgets are configuration errors."""
        grid = bundled_maps['open_room']
        with pytest.raises(ConfigError):
            run_episode(config, grid, EpisodeSpec('open_room', Pose.planar(0.05, 0.05), (2.0, 2.0)), 0, GREEDY_GT)
        with pytest.raises(ConfigError):
            run_episode(config, grid, EpisodeSpec('open_room', Pose.planar(1.0, 1.0), (2.0, 2.0), 0), 0, GREEDY_GT)
        sealed = box_grid(10, 10, obstacles=[(r, 5) for r in range(1, 9)], name='sealed')
        with pytest.raises(ConfigError):
            run_episode(config, sealed, EpisodeSpec('sealed', Pose.planar(0.25, 0.45), (0.75, 0.45)), 0, GREEDY_GT)

    def test_agent_sees_no_ground_truth(self, config, bundled_maps) -> None:
        """Replaying the scans through a fresh agent and odometer reproduces every action."""
        grid = bundled_maps['pillars']
        episode = _episodes(grid, 1, seed=7, line_of_sight=False, max_steps=60)[0]
        seed = 99
        record = run_episode(config, grid, episode, seed, CLASSIC_DR_NOISY)
        agent_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
        agent = ClassicAgent(config.classic_nav_params, config.sensor_config)
        rel_goal = transform_point(inverse(episode.start), episode.goal)
        agent.reset(rel_goal, agent_rng)
        odometer = DeadReckoningOdometer()
        scans = [raycast(grid, episode.start, config.sensor_config)]
        scans += [raycast(grid, step.true_pose, config.sensor_config) for step in record.steps]
        est_pose = Pose.identity()
        for t, step in enumerate(record.steps):
            action = agent.act(AgentObservation(scans[t], est_pose, rel_goal))
            assert action is step.action
            if action.is_stop:
                break
            delta = odometer.predict(action, scans[t], scans[t + 1])
            est_pose = integrate(est_pose, delta)
            rel_goal = update_relative_goal(rel_goal, delta)
            assert rel_goal == pytest.approx(step.est_rel_goal)

    def test_changing_one_seed_changes_one_episode(self, config, bundled_maps) -> None:
        """Episodes draw from their own seeds only."""
        grid = bundled_maps['pillars']
        episodes = _episodes(grid, 2, seed=8, line_of_sight=False, max_steps=60)
        before = [run_episode(config, grid, e, s, CLASSIC_DR_NOISY) for e, s in zip(episodes, (10, 11))]
        after = [run_episode(config, grid, e, s, CLASSIC_DR_NOISY) for e, s in zip(episodes, (10, 12))]
        assert before[0] == after[0]
        assert before[1].steps != after[1].steps


class TestEpisodes:

    def test_sampled_episodes_respect_distances(self, bundled_maps) -> None:
        """Sampled pairs are free, reachable and within the requested geodesic range."""
        grid = bundled_maps['two_rooms']
        episodes = sample_episodes(grid, 6, np.random.default_rng(0), 1.0, 3.0)
        assert [e.episode_id for e in episodes] == ['two_rooms-{:03d}'.format(i) for i in range(6)]
        for episode in episodes:
            assert is_free_position(grid, episode.start.x, episode.start.z, 0.15)
            assert 1.0 <= geodesic_distance(grid, episode.start.position, episode.goal) <= 3.0

    def test_sampling_is_deterministic(self, bundled_maps) -> None:
        """The same generator seed yields the same episodes."""
        grid = bundled_maps['corridor']
        first = sample_episodes(grid, 3, np.random.default_rng(1))
        second = sample_episodes(grid, 3, np.random.default_rng(1))
        assert first == second

    def test_impossible_request_fails(self, open_grid) -> None:
        """Distances larger than the map cannot be sampled."""
        with pytest.raises(ValueError):
            sample_episodes(open_grid, 1, np.random.default_rng(0), 10.0, 20.0, max_attempts=50)

    def test_explicit_episodes_from_config(self, config, bundled_maps) -> None:
        """Configured episodes are used verbatim, with yaw in degrees."""
        config.EPISODES = [{'map': 'open_room', 'start': [1.0, 1.0, 90.0], 'goal': [3.0, 1.0], 'id': 'e0'}]
        episodes = build_episodes(config, bundled_maps)
        assert episodes == [EpisodeSpec('open_room', Pose.planar(1.0, 1.0, math.pi / 2), (3.0, 1.0), 500, 'e0')]
        config.EPISODES = [{'map': 'nowhere', 'start': [1.0, 1.0, 0.0], 'goal': [3.0, 1.0]}]
        with pytest.raises(ConfigError):
            build_episodes(config, bundled_maps)

    def test_sampled_episodes_per_map(self, config, bundled_maps) -> None:
        """Without explicit episodes each map contributes its quota, seeded by map name."""
        config.EPISODES_PER_MAP = 2
        episodes = build_episodes(config, bundled_maps)
        assert len(episodes) == 8
        assert episodes == build_episodes(config, bundled_maps)
        assert {e.map_name for e in episodes} == set(bundled_maps)


class TestAggregate:

    def test_single_perfect_episode(self) -> None:
        """One shortest-path success scores SPL 1 and success 1."""
        report = aggregate([_record(1.0, True)])
        assert report.spl == 1.0
        assert report.success_rate == 1.0
        assert report.num_episodes == 1
        assert report.label == GREEDY_GT.label

    def test_mean_of_two(self) -> None:
        """SPL values 1 and 0 average to 0.5."""
        report = aggregate([_record(1.0, True), _record(0.0, False, d_T=2.0)])
        assert report.spl == pytest.approx(0.5)
        assert report.success_rate == pytest.approx(0.5)
        assert report.geo_d_T == pytest.approx(1.0)

    def test_matches_recomputation(self) -> None:
        """Every report field equals an independent recomputation from the records."""
        rng = np.random.default_rng(0)
        records = [_record(float(rng.uniform(0.2, 1.0)), bool(rng.integers(2)), float(rng.uniform(0.0, 3.0)),
                           float(rng.uniform(0.0, 1.0))) for _ in range(9)]
        report = aggregate(records, 'mixed')
        assert report.label == 'mixed'
        assert report.spl == pytest.approx(sum(r.spl for r in records) / 9)
        assert report.soft_spl == pytest.approx(sum(r.soft_spl for r in records) / 9)
        assert report.success_rate == pytest.approx(sum(r.outcome.success for r in records) / 9)
        assert report.geo_d_T == pytest.approx(sum(r.outcome.d_T for r in records) / 9)
        assert report.localization_error == sorted(r.localization_error for r in records)[4]

    def test_empty(self) -> None:
        """Aggregating nothing is an error."""
        with pytest.raises(ValueError):
            aggregate([])


class TestOutputs:

    def test_report_round_trip_and_table(self, tmp_path) -> None:
        """Reports survive JSON and render as a table with the metric columns."""
        reports = [Report('greedy_goal/ground_truth/noisy', 0.9, 0.8, 0.85, 0.1, 0.0, 20),
                   Report('greedy_goal/dead_reckoning/noisy', 0.5, 0.3, 0.35, 0.9, 0.4, 20)]
        path = str(tmp_path / 'report.json')
        write_report(reports, path, seed=7)
        assert common.load_json(path)['seed'] == 7
        assert read_reports([path]) == reports
        table = format_table(reports)
        header = table.splitlines()[0]
        for column in ('SoftSPL', 'SPL', 'Succ.', 'geo_d_T'):
            assert column in header
        assert len(table.splitlines()) == 4
        assert 'greedy_goal/dead_reckoning/noisy' in table

    def test_read_reports_rejects_other_json(self, tmp_path) -> None:
        """Only files holding a report list are accepted."""
        path = str(tmp_path / 'other.json')
        common.save_json({'seed': 1}, path)
        with pytest.raises(ValueError):
            read_reports([path])

    def test_trajectory_csv(self, config, bundled_maps, tmp_path) -> None:
        """Trajectories are written with fixed columns, one row per step."""
        episode = EpisodeSpec('open_room', Pose.planar(2.5, 1.0, 0.0), (2.5, 3.0), 100, 'ahead')
        record = run_episode(config, bundled_maps['open_room'], episode, 0, GREEDY_DR_NOISY)
        path = trajectory_csv_path(str(tmp_path), record)
        assert path.endswith('ahead__greedy_goal__dead_reckoning__noisy.csv')
        write_trajectory_csv(record, path)
        with open(path, newline='') as file:
            rows = list(csv.reader(file))
        assert tuple(rows[0]) == TRAJECTORY_CSV_COLUMNS
        assert len(rows) == len(record.steps) + 1
        assert rows[1][1] == record.steps[0].action.value


class TestRunMatrix:

    def _small_config(self, config):
        config.MAP_PATHS = [path for path in config.MAP_PATHS if path.endswith('open_room.map')]
        config.EPISODES_PER_MAP = 2
        config.MAX_EPISODE_DISTANCE = 2.5
        config.REQUIRE_LINE_OF_SIGHT = True
        config.MAX_STEPS = 80
        config.AGENTS = ['greedy_goal']
        config.ODOMETERS = ['ground_truth', 'dead_reckoning']
        config.NOISE_SETTINGS = [False, True]
        return config

    def test_cross_product_in_canonical_order(self, config) -> None:
        """Every agent, odometer and noise setting runs on the same episodes."""
        config = self._small_config(config)
        results = run_matrix(config)
        labels = [setting.label for setting, _ in results]
        assert labels == ['greedy_goal/ground_truth/noiseless', 'greedy_goal/ground_truth/noisy',
                          'greedy_goal/dead_reckoning/noiseless', 'greedy_goal/dead_reckoning/noisy']
        episode_ids = [[r.episode.episode_id for r in records] for _, records in results]
        assert all(ids == episode_ids[0] for ids in episode_ids)
        assert all(len(records) == 2 for _, records in results)
        assert results == run_matrix(config)

    def test_parallel_run_matches_serial_run(self, config) -> None:
        """Worker processes produce the same records in the same order."""
        config = self._small_config(config)
        serial = run_matrix(config)
        config.NUM_WORKERS = 2
        assert run_matrix(config) == serial


@pytest.mark.slow
def test_better_odometry_localizes_better_under_noise(config, bundled_maps) -> None:
    """Over 200 noisy episodes SoftSPL orders ground truth, scan matching, calibrated and dead reckoning."""
    settings = {kind: RunSetting(AgentKind.GreedyGoal, kind, True) for kind in OdometerKind}
    odometers = {OdometerKind.GroundTruth: None, OdometerKind.DeadReckoning: DeadReckoningOdometer(),
                 OdometerKind.Calibrated: _calibrated_from_noise(config.noise_model)}
    results = {kind: [] for kind in settings}
    for map_index, grid in enumerate(bundled_maps.values()):
        for index, episode in enumerate(_episodes(grid, 50, seed=20 + map_index)):
            seed = common.derive_seed(map_index, index)
            for kind, setting in settings.items():
                results[kind].append(run_episode(config, grid, episode, seed, setting, odometers.get(kind)))
    assert all(len(records) == 200 for records in results.values())
    errors = {kind: statistics.median(r.localization_error for r in records) for kind, records in results.items()}
    soft = {kind: aggregate(records).soft_spl for kind, records in results.items()}
    assert errors[OdometerKind.Calibrated] < errors[OdometerKind.DeadReckoning]
    assert errors[OdometerKind.ScanMatch] < errors[OdometerKind.DeadReckoning]
    ordered = [OdometerKind.GroundTruth, OdometerKind.ScanMatch, OdometerKind.Calibrated, OdometerKind.DeadReckoning]
    for better, worse in zip(ordered, ordered[1:]):
        assert soft[better] >= soft[worse] - 0.02, (better, worse, soft)



@pytest.mark.slow
def test_dead_reckoning_exact_only_without_collisions(config, bundled_maps) -> None:
    """100 noiseless open episodes localize exactly; episodes that collide do not."""
    clean_errors, collided_errors = [], []
    for map_index, grid in enumerate(bundled_maps.values()):
        for index, episode in enumerate(_episodes(grid, 25, seed=40 + map_index, line_of_sight=False)):
            record = run_episode(config, grid, episode, index, GREEDY_DR)
            (collided_errors if record.collisions else clean_errors).append(record.localization_error)
    assert len(clean_errors) >= 20
    assert max(clean_errors) < 1e-6
    assert statistics.median(collided_errors) > 0.01


@pytest.mark.slow
def test_classic_agent_end_to_end(config, bundled_maps) -> None:
    """The classic agent succeeds with true localization and degrades with noisy dead reckoning."""
    gt = RunSetting(AgentKind.Classic, OdometerKind.GroundTruth, False)
    records = {gt: [], CLASSIC_DR_NOISY: []}
    for map_index, grid in enumerate(bundled_maps.values()):
        episodes = sample_episodes(grid, 13 if map_index < 2 else 12, np.random.default_rng(60 + map_index),
                                   1.0, 4.0, max_steps=500)
        for index, episode in enumerate(episodes):
            for setting in records:
                records[setting].append(run_episode(config, grid, episode, common.derive_seed(map_index, index),
                                                    setting))
    assert len(records[gt]) == 50
    truth, noisy = aggregate(records[gt]), aggregate(records[CLASSIC_DR_NOISY])
    assert truth.success_rate >= 0.9
    assert noisy.success_rate < truth.success_rate
    assert noisy.geo_d_T > truth.geo_d_T
