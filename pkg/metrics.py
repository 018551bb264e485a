from typing import NamedTuple


SUCCESS_DISTANCE = 0.2  # meters


class RewardConfig(NamedTuple):
    s_r: float = 1.0
    slack: float = -0.01


class EpisodeOutcome(NamedTuple):
    d_init: float
    d_T: float
    s: float
    p: float
    success: bool
    steps: int
    called_stop: bool = False

    def verify(self):
        if self.d_init < 0 or self.d_T < 0 or self.p < 0:
            raise ValueError('Episode distances must be non-negative, got {}.'.format(self))
        if self.success and not self.called_stop:
            raise ValueError('A successful episode must end with a stop action.')

    def __str__(self):
        return 'success: {}, d_init: {:.3f}, d_T: {:.3f}, s: {:.3f}, p: {:.3f}, steps: {}'.format(
            self.success, self.d_init, self.d_T, self.s, self.p, self.steps)


def is_success(d_T: float, called_stop: bool, success_distance: float = SUCCESS_DISTANCE) -> bool:
    if d_T < 0:
        raise ValueError('d_T must be non-negative, got {}.'.format(d_T))
    return bool(called_stop) and d_T <= success_distance


def _path_efficiency(o: EpisodeOutcome) -> float:
    if not o.s > 0:
        raise ValueError('Shortest-path length s must be positive, got {}.'.format(o.s))
    return o.s / max(o.s, o.p)


def spl(o: EpisodeOutcome) -> float:
    efficiency = _path_efficiency(o)
    return efficiency if o.success else 0.0


def soft_spl(o: EpisodeOutcome) -> float:
    """(1 - d_T / d_init) * s / max(s, p); negative when the agent ends farther away than it started."""
    if not o.d_init > 0:
        raise ValueError('SoftSPL is undefined for d_init = {} (degenerate episode).'.format(o.d_init))
    return (1.0 - o.d_T / o.d_init) * _path_efficiency(o)


def step_reward(d_prev: float, d_curr: float, terminal_success: bool, cfg: RewardConfig = RewardConfig()) -> float:
    return cfg.s_r * float(bool(terminal_success)) + (d_prev - d_curr) + cfg.slack
