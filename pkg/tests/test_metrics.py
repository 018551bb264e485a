import numpy as np
import pytest

from metrics import SUCCESS_DISTANCE, EpisodeOutcome, RewardConfig, is_success, soft_spl, spl, step_reward


def _outcome(d_init: float = 10.0, d_T: float = 0.0, s: float = 8.0, p: float = 8.0,
             success: bool = True) -> EpisodeOutcome:
    return EpisodeOutcome(d_init=d_init, d_T=d_T, s=s, p=p, success=success, steps=10, called_stop=success)


@pytest.mark.parametrize('d_T, called_stop, expected', [
    (0.15, True, True),
    (0.15, False, False),
    (0.21, True, False),
    (SUCCESS_DISTANCE, True, True),
    (0.0, True, True),
])
def test_is_success(d_T: float, called_stop: bool, expected: bool) -> None:
    """Success needs a stop within 0.2 m, boundary included."""
    assert is_success(d_T, called_stop) is expected


def test_is_success_rejects_negative_distance() -> None:
    """Distances to the goal are never negative."""
    with pytest.raises(ValueError):
        is_success(-0.1, True)


# (d_init, d_T, s, p, success, SPL, SoftSPL), evaluated by hand.
SCORE_TABLE = [
    (10.0, 0.0, 8.0, 8.0, True, 1.0, 1.0),
    (10.0, 5.0, 8.0, 16.0, False, 0.0, 0.25),
    (10.0, 15.0, 8.0, 8.0, False, 0.0, -0.5),
    (4.0, 0.1, 4.0, 5.0, True, 0.8, 0.78),
    (4.0, 0.2, 4.0, 4.0, True, 1.0, 0.95),
    (2.0, 2.0, 2.0, 3.0, False, 0.0, 0.0),
    (2.0, 4.0, 2.0, 1.0, False, 0.0, -1.0),
    (2.0, 6.0, 2.0, 4.0, False, 0.0, -1.0),
    (5.0, 0.0, 5.0, 10.0, True, 0.5, 0.5),
    (5.0, 2.5, 5.0, 5.0, False, 0.0, 0.5),
    (3.0, 0.15, 3.0, 6.0, True, 0.5, 0.475),
    (8.0, 1.0, 6.0, 12.0, False, 0.0, 0.4375),
    (8.0, 12.0, 6.0, 3.0, False, 0.0, -0.5),
    (1.0, 0.2, 1.0, 1.25, True, 0.8, 0.64),
    (1.0, 0.05, 1.0, 2.0, True, 0.5, 0.475),
    (6.0, 9.0, 4.0, 16.0, False, 0.0, -0.125),
    (2.5, 0.5, 2.5, 2.5, False, 0.0, 0.8),
    (10.0, 10.0, 10.0, 40.0, False, 0.0, 0.0),
    (4.0, 1.0, 3.0, 6.0, False, 0.0, 0.375),
    (1.5, 0.1, 1.2, 1.0, True, 1.0, 14.0 / 15.0),
]


@pytest.mark.parametrize('d_init, d_T, s, p, success, expected_spl, expected_soft_spl', SCORE_TABLE)
def test_score_table(d_init: float, d_T: float, s: float, p: float, success: bool, expected_spl: float,
                     expected_soft_spl: float) -> None:
    """SPL and SoftSPL reproduce hand-evaluated scores, negative progress included."""
    outcome = _outcome(d_init, d_T, s, p, success)
    assert spl(outcome) == pytest.approx(expected_spl, abs=1e-12)
    assert soft_spl(outcome) == pytest.approx(expected_soft_spl, abs=1e-12)
    assert is_success(d_T, success) is success


class TestSpl:

    def test_failure_scores_zero(self) -> None:
        """Failed episodes score zero."""
        assert spl(_outcome(d_T=1.0, success=False)) == 0.0

    def test_shortest_path_scores_one(self) -> None:
        """Success along the shortest path scores one."""
        assert spl(_outcome()) == 1.0

    def test_twice_the_shortest_path(self) -> None:
        """Walking twice the shortest path halves the score."""
        assert spl(_outcome(s=8.0, p=16.0)) == pytest.approx(0.5)

    def test_shorter_than_shortest_is_capped(self) -> None:
        """A path shorter than s still scores at most one."""
        assert spl(_outcome(s=8.0, p=7.5)) == 1.0

    def test_rejects_non_positive_s(self) -> None:
        """The shortest path must have positive length."""
        with pytest.raises(ValueError):
            spl(_outcome(s=0.0))


class TestSoftSpl:

    def test_perfect_episode(self) -> None:
        """Reaching the goal along the shortest path scores one."""
        assert soft_spl(_outcome()) == 1.0

    def test_half_progress_on_double_path(self) -> None:
        """Half the distance covered on a path twice too long scores a quarter."""
        assert soft_spl(_outcome(d_init=10.0, d_T=5.0, s=8.0, p=16.0, success=False)) == pytest.approx(0.25)

    def test_negative_progress(self) -> None:
        """Ending farther away than the start gives a negative score."""
        assert soft_spl(_outcome(d_init=10.0, d_T=15.0, success=False)) == pytest.approx(-0.5)

    def test_rejects_degenerate_episode(self) -> None:
        """SoftSPL is undefined when the agent starts on the goal."""
        with pytest.raises(ValueError):
            soft_spl(_outcome(d_init=0.0))

    def test_relations_with_spl(self) -> None:
        """SoftSPL is bounded by path efficiency, matches SPL at d_T = 0 and swaps back to SPL."""
        rng = np.random.default_rng(0)
        for _ in range(500):
            d_init = float(rng.uniform(0.5, 10.0))
            d_T = float(rng.uniform(0.0, 12.0))
            s, p = float(rng.uniform(0.5, 10.0)), float(rng.uniform(0.0, 20.0))
            success = is_success(d_T, bool(rng.integers(2)))
            outcome = _outcome(d_init, d_T, s, p, success)
            efficiency = s / max(s, p)
            assert 0.0 <= spl(outcome) <= 1.0
            assert soft_spl(outcome) <= efficiency + 1e-12
            assert float(outcome.success) * efficiency == pytest.approx(spl(outcome))
            at_goal = outcome._replace(d_T=0.0, success=True, called_stop=True)
            assert soft_spl(at_goal) == pytest.approx(spl(at_goal))


class TestStepReward:

    def test_progress_step(self) -> None:
        """A quarter meter of progress earns 0.24."""
        assert step_reward(5.0, 4.75, False) == pytest.approx(0.24)

    def test_terminal_success(self) -> None:
        """Stopping successfully earns the success reward plus slack."""
        assert step_reward(0.1, 0.1, True) == pytest.approx(0.99)

    def test_pure_slack(self) -> None:
        """No progress costs the slack penalty."""
        assert step_reward(3.0, 3.0, False) == pytest.approx(-0.01)

    def test_custom_config(self) -> None:
        """Reward weights come from the config."""
        assert step_reward(1.0, 1.5, True, RewardConfig(s_r=10.0, slack=0.0)) == pytest.approx(9.5)


def test_outcome_verify() -> None:
    """Successful outcomes must have called stop and distances stay non-negative."""
    _outcome().verify()
    with pytest.raises(ValueError):
        _outcome()._replace(called_stop=False).verify()
    with pytest.raises(ValueError):
        _outcome(d_T=-1.0, success=False).verify()
    assert 'success: True' in str(_outcome())
