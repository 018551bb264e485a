import json
import logging
import math
import os
import sys
from argparse import ArgumentParser
from typing import Any, Dict, FrozenSet, List, Optional, Sequence

from actuation import NoiseModel
from agent_base import AgentKind
from classic_nav import ClassicNavParams
from environment import SensorConfig
from metrics import RewardConfig
from odometry import OdometerKind, ScanMatchParams


OUTPUT_DIR_ENV_VAR = 'EGONAV_OUTPUT_DIR'
DEFAULT_MAP_PATHS = ['maps/open_room.map', 'maps/pillars.map', 'maps/corridor.map', 'maps/two_rooms.map']


class ConfigError(ValueError):
    pass


class Config:
    @classmethod
    def arguments_parser(cls) -> ArgumentParser:
        shared = ArgumentParser(add_help=False)
        shared.add_argument("-c", "--config", dest="config_path", metavar="FILE", required=False,
                            help="JSON run configuration; keys are the lower-case config attribute names.")
        shared.add_argument("--seed", dest="seed", type=int, required=False, help="base random seed.")
        shared.add_argument("-v", "--verbose", dest="verbose_mode", type=int, required=False,
                            help="verbose mode (should be in {0,1,2}).")
        shared.add_argument("-lp", "--logs-path", dest="logs_path", metavar="FILE", required=False,
                            help="path to store logs into. if not given logs are not saved to file.")
        shared.add_argument("-w", "--workers", dest="num_workers", type=int, required=False,
                            help="number of worker processes for episodes / scenes.")
        shared.add_argument("-o", "--output-dir", dest="output_dir", metavar="DIR", required=False,
                            help="default directory for datasets, models and reports.")

        parser = ArgumentParser(prog='egonav')
        subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
        subparsers.required = True

        collect = subparsers.add_parser('collect', parents=[shared], help='collect an egomotion dataset.')
        collect.add_argument("--spec", dest="config_path", metavar="FILE", required=False,
                             help="dataset spec (a JSON config file).")
        collect.add_argument("--out", dest="dataset_path", metavar="FILE", required=False)
        collect.add_argument("--maps", dest="dataset_scenes", nargs='+', metavar="MAP", required=False)
        collect.add_argument("--pairs", dest="pairs_per_scene", type=int, required=False)
        collect.add_argument("--trajectories", dest="trajectories_per_scene", type=int, required=False)
        collect.add_argument("--noise", dest="dataset_noise", choices=['on', 'off'], required=False)

        stats = subparsers.add_parser('stats', parents=[shared], help='per-action statistics of a dataset.')
        stats.add_argument("--data", dest="dataset_path", metavar="FILE", required=True)

        fit = subparsers.add_parser('fit-odom', parents=[shared], help='fit and save a calibrated odometer.')
        fit.add_argument("--data", dest="dataset_path", metavar="FILE", required=True)
        fit.add_argument("--save", dest="calibrated_model_path", metavar="FILE", required=False)
        fit.add_argument("--ratio", dest="split_ratio", type=float, required=False)
        fit.add_argument("--unseen", dest="unseen_scenes", nargs='*', metavar="SCENE", required=False)

        evaluate = subparsers.add_parser('eval-odom', parents=[shared], help='smooth-L1 of an odometer per split.')
        evaluate.add_argument("--data", dest="dataset_path", metavar="FILE", required=True)
        evaluate.add_argument("--load", dest="calibrated_model_path", metavar="FILE", required=False)
        evaluate.add_argument("--odometer", dest="eval_odometer", choices=[k.value for k in OdometerKind],
                              required=False)
        evaluate.add_argument("--ratio", dest="split_ratio", type=float, required=False)
        evaluate.add_argument("--unseen", dest="unseen_scenes", nargs='*', metavar="SCENE", required=False)
        evaluate.add_argument("--out", dest="eval_report_path", metavar="FILE", required=False)

        run = subparsers.add_parser('run', parents=[shared], help='run the agent x odometer x noise matrix.')
        run.add_argument("--maps", dest="map_paths", nargs='+', metavar="MAP", required=False)
        run.add_argument("--agents", dest="agents", nargs='+', choices=[k.value for k in AgentKind],
                         required=False)
        run.add_argument("--odometers", dest="odometers", nargs='+', choices=[k.value for k in OdometerKind],
                         required=False)
        run.add_argument("--noise", dest="noise", choices=['on', 'off', 'both'], required=False)
        run.add_argument("--episodes-per-map", dest="episodes_per_map", type=int, required=False)
        run.add_argument("--max-steps", dest="max_steps", type=int, required=False)
        run.add_argument("--load", dest="calibrated_model_path", metavar="FILE", required=False)
        run.add_argument("--out", dest="report_path", metavar="FILE", required=False)
        run.add_argument("--trajectories", dest="trajectories_dir", metavar="DIR", required=False,
                         help="write one CSV of true/estimated poses per episode into this directory.")
        run.add_argument("--no-sliding", dest="sliding", action='store_false', default=None,
                         help="agents stop at the first blocked substep instead of sliding along walls.")

        report = subparsers.add_parser('report', parents=[shared], help='merge run reports into a table.')
        report.add_argument("report_inputs", nargs='+', metavar="REPORT")
        report.add_argument("--out", dest="table_path", metavar="FILE", required=False)
        return parser

    def set_defaults(self):
        self.SEED = 0
        self.VERBOSE_MODE = 1
        self.NUM_WORKERS = 1
        self.OUTPUT_DIR = os.environ.get(OUTPUT_DIR_ENV_VAR) or 'output'
        self.NUM_EPISODES_TO_LOG_PROGRESS = 10

        # world
        self.MAP_PATHS = list(DEFAULT_MAP_PATHS)
        self.NUM_RAYS = 61
        self.FOV_DEGREES = 120.0
        self.MAX_RANGE = 4.0
        self.MIN_RANGE = 0.1
        self.AGENT_RADIUS = 0.05
        self.NUM_SUBSTEPS = 10
        self.SLIDING = True
        self.NOISE = {}  # overrides of the LoCoBot noise model, see NoiseModel.from_dict

        # episodes
        self.EPISODES = []  # explicit episodes: {"map": name, "start": [x, z, yaw_degrees], "goal": [x, z]}
        self.EPISODES_PER_MAP = 10
        self.MAX_STEPS = 500
        self.MIN_EPISODE_DISTANCE = 1.0
        self.MAX_EPISODE_DISTANCE = 4.0
        self.REQUIRE_LINE_OF_SIGHT = False
        self.AGENTS = [AgentKind.GreedyGoal.value]
        self.ODOMETERS = [OdometerKind.GroundTruth.value, OdometerKind.DeadReckoning.value]
        self.NOISE_SETTINGS = [True]
        self.SCAN_MATCH = {}  # overrides of ScanMatchParams fields

        # classic agent
        self.MAP_SIZE = 400
        self.MAP_RESOLUTION = 0.1
        self.OBSTACLE_THRESHOLD = 3
        self.INFLATION_CELLS = 1
        self.WAYPOINT_DISTANCE = 0.5
        self.HEADING_TOLERANCE_DEGREES = 15.0
        self.RANDOM_ACTION_PROB = 0.1
        self.STOP_RADIUS = 0.14

        # reward
        self.SUCCESS_REWARD = 1.0
        self.SLACK_REWARD = -0.01

        # egomotion dataset
        self.DATASET_SCENES = []
        self.PAIRS_PER_SCENE = 250
        self.TRAJECTORIES_PER_SCENE = 20
        self.DATASET_NOISY = True
        self.SPLIT_RATIO = 0.9
        self.UNSEEN_SCENES = None
        self.EVAL_ODOMETER = OdometerKind.Calibrated.value

    def load_from_args(self, argv: Optional[Sequence[str]] = None):
        args = self.arguments_parser().parse_args(argv)
        self.COMMAND = args.command
        self.CONFIG_PATH = args.config_path
        if self.CONFIG_PATH:
            self.load_from_json(self.CONFIG_PATH)
        # Flags override the config file.
        for name, value in vars(args).items():
            if value is None or name in ('command', 'config_path', 'noise', 'dataset_noise'):
                continue
            setattr(self, name.upper(), value)
        if args.command == 'run' and args.noise is not None:
            self.NOISE_SETTINGS = {'on': [True], 'off': [False], 'both': [False, True]}[args.noise]
        if args.command == 'collect' and args.dataset_noise is not None:
            self.DATASET_NOISY = args.dataset_noise == 'on'

    def load_from_json(self, path: str):
        with open(path, 'r') as file:
            values = json.load(file)
        self.update(values, source=path)

    @classmethod
    def file_config_keys(cls) -> FrozenSet[str]:
        """Lower-case names of the attributes `set_defaults` defines; only these may come from a file."""
        defaults_only = cls.__new__(cls)
        defaults_only.set_defaults()
        return frozenset(name.lower() for name in vars(defaults_only))

    def update(self, values: Dict[str, Any], source: str = 'dict'):
        if not isinstance(values, dict):
            raise ConfigError('Config `{}` must hold a JSON object.'.format(source))
        allowed = self.file_config_keys()
        for key, value in values.items():
            if key not in allowed:
                raise ConfigError('Unknown config key `{}` in `{}`.'.format(key, source))
            setattr(self, key.upper(), value)

    def __init__(self, set_defaults: bool = False, load_from_args: bool = False, verify: bool = False,
                 argv: Optional[Sequence[str]] = None):
        self.SEED: int = 0
        self.VERBOSE_MODE: int = 0
        self.NUM_WORKERS: int = 1
        self.OUTPUT_DIR: str = ''
        self.NUM_EPISODES_TO_LOG_PROGRESS: int = 0

        self.MAP_PATHS: List[str] = []
        self.NUM_RAYS: int = 0
        self.FOV_DEGREES: float = 0
        self.MAX_RANGE: float = 0
        self.MIN_RANGE: float = 0
        self.AGENT_RADIUS: float = 0
        self.NUM_SUBSTEPS: int = 0
        self.SLIDING: bool = True
        self.NOISE: Dict[str, Any] = {}

        self.EPISODES: List[Dict[str, Any]] = []
        self.EPISODES_PER_MAP: int = 0
        self.MAX_STEPS: int = 0
        self.MIN_EPISODE_DISTANCE: float = 0
        self.MAX_EPISODE_DISTANCE: float = 0
        self.REQUIRE_LINE_OF_SIGHT: bool = False
        self.AGENTS: List[str] = []
        self.ODOMETERS: List[str] = []
        self.NOISE_SETTINGS: List[bool] = []
        self.SCAN_MATCH: Dict[str, Any] = {}

        self.MAP_SIZE: int = 0
        self.MAP_RESOLUTION: float = 0
        self.OBSTACLE_THRESHOLD: int = 0
        self.INFLATION_CELLS: int = 0
        self.WAYPOINT_DISTANCE: float = 0
        self.HEADING_TOLERANCE_DEGREES: float = 0
        self.RANDOM_ACTION_PROB: float = 0
        self.STOP_RADIUS: float = 0

        self.SUCCESS_REWARD: float = 0
        self.SLACK_REWARD: float = 0

        self.DATASET_SCENES: List[str] = []
        self.PAIRS_PER_SCENE: int = 0
        self.TRAJECTORIES_PER_SCENE: int = 0
        self.DATASET_NOISY: bool = False
        self.SPLIT_RATIO: float = 0
        self.UNSEEN_SCENES: Optional[List[str]] = None
        self.EVAL_ODOMETER: str = ''

        # Automatically filled by `args` (or set directly).
        self.COMMAND: str = ''
        self.CONFIG_PATH: Optional[str] = None
        self.LOGS_PATH: Optional[str] = None
        self.DATASET_PATH: Optional[str] = None
        self.CALIBRATED_MODEL_PATH: Optional[str] = None
        self.REPORT_PATH: Optional[str] = None
        self.TRAJECTORIES_DIR: Optional[str] = None
        self.EVAL_REPORT_PATH: Optional[str] = None
        self.REPORT_INPUTS: List[str] = []
        self.TABLE_PATH: Optional[str] = None

        self.__logger: Optional[logging.Logger] = None

        if set_defaults:
            self.set_defaults()
        if load_from_args:
            self.load_from_args(argv)
        if verify:
            self.verify()

    @property
    def sensor_config(self) -> SensorConfig:
        return SensorConfig(num_rays=int(self.NUM_RAYS), fov=math.radians(self.FOV_DEGREES),
                            max_range=float(self.MAX_RANGE), min_range=float(self.MIN_RANGE))

    @property
    def noise_model(self) -> NoiseModel:
        return NoiseModel.from_dict(self.NOISE)

    @property
    def scan_match_params(self) -> ScanMatchParams:
        return ScanMatchParams()._replace(**self.SCAN_MATCH)

    @property
    def classic_nav_params(self) -> ClassicNavParams:
        return ClassicNavParams(map_size=int(self.MAP_SIZE), map_resolution=float(self.MAP_RESOLUTION),
                                obstacle_threshold=int(self.OBSTACLE_THRESHOLD),
                                inflation_cells=int(self.INFLATION_CELLS),
                                waypoint_distance=float(self.WAYPOINT_DISTANCE),
                                heading_tolerance=math.radians(self.HEADING_TOLERANCE_DEGREES),
                                random_action_prob=float(self.RANDOM_ACTION_PROB),
                                stop_radius=float(self.STOP_RADIUS))

    @property
    def reward_config(self) -> RewardConfig:
        return RewardConfig(s_r=float(self.SUCCESS_REWARD), slack=float(self.SLACK_REWARD))

    @property
    def agent_kinds(self) -> List[AgentKind]:
        return [AgentKind(name) for name in self.AGENTS]

    @property
    def odometer_kinds(self) -> List[OdometerKind]:
        return [OdometerKind(name) for name in self.ODOMETERS]

    @property
    def dataset_scenes(self) -> List[str]:
        return list(self.DATASET_SCENES or self.MAP_PATHS)

    @property
    def dataset_path(self) -> str:
        return self.DATASET_PATH or os.path.join(self.OUTPUT_DIR, 'egomotion.jsonl')

    @property
    def calibrated_model_path(self) -> str:
        return self.CALIBRATED_MODEL_PATH or os.path.join(self.OUTPUT_DIR, 'calibrated_odometer.json')

    @property
    def report_path(self) -> str:
        return self.REPORT_PATH or os.path.join(self.OUTPUT_DIR, 'report.json')

    @property
    def uses_calibrated_odometer(self) -> bool:
        if self.COMMAND == 'eval-odom':
            return self.EVAL_ODOMETER == OdometerKind.Calibrated.value
        return self.COMMAND in ('', 'run') and OdometerKind.Calibrated.value in self.ODOMETERS

    def verify(self):
        if self.MAX_STEPS <= 0:
            raise ConfigError('config.MAX_STEPS must be positive, got {}.'.format(self.MAX_STEPS))
        if self.NUM_WORKERS < 1:
            raise ConfigError('config.NUM_WORKERS must be at least 1, got {}.'.format(self.NUM_WORKERS))
        if self.EPISODES_PER_MAP < 0 or self.PAIRS_PER_SCENE <= 0 or self.TRAJECTORIES_PER_SCENE <= 0:
            raise ConfigError('Episode, pair and trajectory counts must be positive.')
        if not 0.0 < self.SPLIT_RATIO <= 1.0:
            raise ConfigError('config.SPLIT_RATIO must be in (0, 1], got {}.'.format(self.SPLIT_RATIO))
        if not 0.0 < self.MIN_EPISODE_DISTANCE <= self.MAX_EPISODE_DISTANCE:
            raise ConfigError('Episode distances must satisfy 0 < min <= max.')
        if self.AGENT_RADIUS < 0 or self.NUM_SUBSTEPS < 1:
            raise ConfigError('config.AGENT_RADIUS must be >= 0 and NUM_SUBSTEPS >= 1.')
        if not self.AGENTS or not self.ODOMETERS or not self.NOISE_SETTINGS:
            raise ConfigError('AGENTS, ODOMETERS and NOISE_SETTINGS must be non-empty.')
        try:
            _ = self.agent_kinds
            _ = self.odometer_kinds
            OdometerKind(self.EVAL_ODOMETER)
            self.sensor_config.verify()
            self.noise_model.verify()
            self.scan_match_params.verify()
            self.classic_nav_params.verify()
        except (ValueError, TypeError) as error:
            raise ConfigError('Invalid configuration: {}'.format(error)) from error
        if self.uses_calibrated_odometer and not os.path.isfile(self.calibrated_model_path):
            raise ConfigError('The calibrated odometer needs a fitted model, `{}` does not exist.'.format(
                self.calibrated_model_path))

    def __iter__(self):
        for attr_name in dir(self):
            if attr_name.startswith("_"):
                continue
            try:
                attr_value = getattr(self, attr_name, None)
            except Exception:
                attr_value = None
            if callable(attr_value):
                continue
            yield attr_name, attr_value

    def __getstate__(self):
        # Loggers hold stream handlers; workers rebuild their own.
        state = self.__dict__.copy()
        state['_Config__logger'] = None
        return state

    def get_logger(self) -> logging.Logger:
        if self.__logger is None:
            self.__logger = logging.getLogger('egonav')
            self.__logger.setLevel(logging.INFO)
            self.__logger.handlers = []
            self.__logger.propagate = False

            formatter = logging.Formatter('%(asctime)s %(levelname)-8s %(message)s')

            if self.VERBOSE_MODE >= 1:
                ch = logging.StreamHandler(sys.stdout)
                ch.setLevel(logging.INFO)
                ch.setFormatter(formatter)
                self.__logger.addHandler(ch)

            if self.LOGS_PATH:
                fh = logging.FileHandler(self.LOGS_PATH)
                fh.setLevel(logging.INFO)
                fh.setFormatter(formatter)
                self.__logger.addHandler(fh)

        return self.__logger

    def log(self, msg):
        self.get_logger().info(msg)

    def log_configuration(self, title: str):
        self.log('---------------------------------------------------------------------')
        self.log('{:-^69}'.format(' {} '.format(title)))
        longest_param_name_len = max(len(param_name) for param_name, _ in self)
        for param_name, param_val in self:
            self.log('{name: <{name_len}}{val}'.format(
                name=param_name, val=param_val, name_len=longest_param_name_len + 2))
        self.log('---------------------------------------------------------------------')
