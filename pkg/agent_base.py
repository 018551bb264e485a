import abc
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from actuation import Action
from environment import DepthScan
from geometry import Point2, Pose


class AgentKind(Enum):
    GreedyGoal = 'greedy_goal'
    Classic = 'classic'


class AgentObservation(NamedTuple):
    """
    Everything a navigating agent may look at on one step: the current depth scan, its own pose
    estimate in the episode start frame and its estimate of the goal in its current frame.
    """
    scan: DepthScan
    est_pose: Pose
    est_rel_goal: Point2


class Agent(abc.ABC):
    kind: AgentKind

    def __init__(self):
        self.rng: Optional[np.random.Generator] = None

    def reset(self, initial_rel_goal: Point2, rng: np.random.Generator):
        """Starts a new episode; `initial_rel_goal` is the goal in the start frame."""
        self.rng = rng
        self._reset(initial_rel_goal)

    def _reset(self, initial_rel_goal: Point2):
        pass

    @abc.abstractmethod
    def act(self, observation: AgentObservation) -> Action:
        ...

    def __repr__(self):
        return '{}()'.format(type(self).__name__)
