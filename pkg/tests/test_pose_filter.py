import numpy as np
import pytest

from app.config import FilterSettings
from app.error_handling import CovarianceError, FilterError, InputError, SingularInnovationError
from estimation.pose_filter import (
    GRAVITY,
    POS,
    STATE_DIM,
    ControlInput,
    FilterState,
    NoiseConfig,
    PositionObservation,
    infer_initial_velocity,
    initial_state,
    kalman_gain_update,
    propagate,
    propagate_covariance,
    run_filter,
    update,
)
from simulation.trajectory import SynthConfig, generate_trajectory


def hover(dt=0.1, angular_velocity=(0.0, 0.0, 0.0)):
    """Level body, specific force cancelling gravity: no acceleration."""
    return ControlInput(np.array(angular_velocity, dtype=float), -GRAVITY, dt)


def no_noise(observation_var=1.0):
    return NoiseConfig(np.zeros((6, 6)), np.eye(3) * observation_var)


def rms_error(states, truth):
    estimated = np.stack([s.position for s in states])
    return float(np.sqrt(np.mean(np.sum((estimated - truth) ** 2, axis=1))))


class TestScalarKalman:
    """All blocks 1x1: the covariance helpers reduce to textbook scalar algebra."""

    def test_predicted_variance(self):
        np.testing.assert_allclose(propagate_covariance(1.0, 1.0, 1.0, 0.5), [[1.5]], atol=1e-12)

    def test_gain_and_posterior(self):
        K, P = kalman_gain_update(1.0, 1.0, 1.0)
        np.testing.assert_allclose(K, [[0.5]], atol=1e-12)
        np.testing.assert_allclose(P, [[0.5]], atol=1e-12)


class TestPropagate:
    def test_identity_motion_without_noise(self):
        state = initial_state(position=(1.0, 2.0, 3.0), position_std=0.5)
        predicted = propagate(state, hover(), no_noise())
        np.testing.assert_allclose(predicted.position, state.position, atol=1e-12)
        np.testing.assert_allclose(predicted.rotation, state.rotation, atol=1e-12)
        np.testing.assert_allclose(predicted.covariance, state.covariance, atol=1e-12)

    def test_process_noise_grows_trace(self):
        state = initial_state(position_std=0.1, velocity_std=0.1, rotation_std=0.01)
        noise = NoiseConfig.from_std(0.01, 0.1, 1.0)
        predicted = propagate(state, hover(), noise)
        assert np.trace(predicted.covariance) > np.trace(state.covariance)

    def test_quaternion_stays_unit(self):
        state = initial_state()
        for _ in range(50):
            state = propagate(state, hover(angular_velocity=(0.3, -0.2, 0.5)), no_noise())
        assert np.linalg.norm(state.rotation) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_non_psd_covariance(self):
        covariance = np.eye(STATE_DIM)
        covariance[0, 0] = -1.0
        state = FilterState(np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(3), covariance)
        with pytest.raises(CovarianceError) as excinfo:
            propagate(state, hover(), no_noise())
        assert excinfo.value.eigenvalue == pytest.approx(-1.0)
        assert "eigenvalue" in str(excinfo.value)

    @pytest.mark.parametrize("dt", [0.0, -0.1, float("nan")])
    def test_rejects_bad_dt(self, dt):
        with pytest.raises(InputError):
            hover(dt=dt)


class TestUpdate:
    def test_zero_innovation_still_shrinks_covariance(self):
        state = initial_state(position=(1.0, 2.0, 3.0), position_std=1.0)
        posterior = update(state, PositionObservation(state.position), no_noise(1.0))
        np.testing.assert_allclose(posterior.position, state.position, atol=1e-12)
        np.testing.assert_allclose(posterior.position_covariance, 0.5 * np.eye(3), atol=1e-12)

    def test_uninformative_observation(self):
        state = initial_state(position=(1.0, 2.0, 3.0), position_std=1.0)
        posterior = update(state, PositionObservation([11.0, -8.0, 3.0]), no_noise(1e12))
        np.testing.assert_allclose(posterior.position, state.position, rtol=1e-6, atol=1e-6)

    def test_singular_innovation(self):
        state = initial_state()
        with pytest.raises(SingularInnovationError) as excinfo:
            update(state, PositionObservation([1.0, 0.0, 0.0]), no_noise(0.0))
        condition = excinfo.value.condition_number
        assert not np.isfinite(condition) or condition > 1e15

    def test_update_contracts_position_block(self, rng):
        H = np.zeros((3, STATE_DIM))
        H[:, POS] = np.eye(3)
        for _ in range(200):
            A = rng.normal(size=(STATE_DIM, STATE_DIM))
            B = rng.normal(size=(3, 3))
            P = A @ A.T
            R = B @ B.T + 1e-3 * np.eye(3)
            _, posterior = kalman_gain_update(P, H, R)
            assert np.trace(posterior[POS, POS]) <= np.trace(P[POS, POS]) + 1e-9

    def test_rejects_non_finite_observation(self):
        with pytest.raises(InputError):
            PositionObservation([0.0, np.nan, 0.0])


class TestRunFilter:
    def test_needs_controls(self):
        with pytest.raises(InputError):
            run_filter([], {}, no_noise(), initial_state())

    def test_dead_reckoning_trace_is_monotone(self):
        controls = [hover() for _ in range(60)]
        states = run_filter(controls, {}, NoiseConfig.from_std(1e-3, 1e-2, 1.0), initial_state())
        traces = [np.trace(s.position_covariance) for s in states]
        assert len(states) == 60
        assert all(b >= a for a, b in zip(traces, traces[1:]))

    def test_constant_velocity_line_is_exact(self):
        dt = 0.1
        controls = [hover(dt) for _ in range(100)]
        states = run_filter(controls, {}, no_noise(), initial_state(velocity=(1.0, 0.0, 0.0)))
        expected = np.stack([[k * dt, 0.0, 0.0] for k in range(100)])
        np.testing.assert_allclose(np.stack([s.position for s in states]), expected, atol=1e-9)

    def test_frame_zero_observation_is_applied(self):
        states = run_filter(
            [hover(), hover()], {0: PositionObservation([2.0, 0.0, 0.0])}, no_noise(1.0),
            initial_state(position_std=1.0),
        )
        np.testing.assert_allclose(states[0].position, [1.0, 0.0, 0.0], atol=1e-12)

    def test_errors_carry_frame_index(self):
        controls = [hover() for _ in range(6)]
        with pytest.raises(FilterError) as excinfo:
            run_filter(controls, {3: PositionObservation([1.0, 0.0, 0.0])}, no_noise(0.0), initial_state())
        assert excinfo.value.frame == 3
        assert isinstance(excinfo.value.cause, SingularInnovationError)
        assert str(excinfo.value).startswith("frame 3:")

    def test_deterministic(self):
        controls = [hover(angular_velocity=(0.0, 0.0, 0.2)) for _ in range(30)]
        observations = {10: PositionObservation([0.5, 0.1, 0.0]), 20: PositionObservation([1.0, 0.3, 0.0])}
        noise = NoiseConfig.from_std(1e-3, 1e-2, 0.5)
        first = run_filter(controls, observations, noise, initial_state())
        second = run_filter(controls, observations, noise, initial_state())
        for a, b in zip(first, second):
            assert np.array_equal(a.position, b.position)
            assert np.array_equal(a.covariance, b.covariance)

    def test_infer_initial_velocity_reproduces_second_position(self):
        control = ControlInput(np.zeros(3), -GRAVITY + np.array([0.2, 0.0, 0.0]), 0.1)
        p0, p1 = np.zeros(3), np.array([0.3, 0.1, 0.0])
        velocity = infer_initial_velocity(p0, p1, control)
        state = propagate(initial_state(position=p0, velocity=velocity), control, no_noise())
        np.testing.assert_allclose(state.position, p1, atol=1e-12)


class TestCovarianceInvariants:
    def test_psd_and_symmetric_over_random_sequences(self, rng):
        noise = NoiseConfig.from_std(1e-2, 0.1, 0.5)
        for _ in range(1000):
            state = initial_state(rotation_std=0.01, velocity_std=0.1, position_std=0.5)
            for _ in range(3):
                control = ControlInput(rng.normal(0.0, 0.5, 3), -GRAVITY + rng.normal(0.0, 1.0, 3),
                                       rng.uniform(0.01, 0.2))
                state = propagate(state, control, noise)
                if rng.random() < 0.5:
                    state = update(state, PositionObservation(state.position + rng.normal(0.0, 0.5, 3)), noise)
                covariance = state.covariance
                np.testing.assert_allclose(covariance, covariance.T, atol=1e-12)
                assert np.linalg.eigvalsh(covariance)[0] >= -1e-9


class TestTrajectoryFiltering:
    def test_noiseless_controls_close_the_loop(self):
        cfg = SynthConfig(frame_count=400, gyro_noise_std=0.0, accel_noise_std=0.0, observation_interval=0)
        trajectory = generate_trajectory(cfg)
        truth = trajectory.truth
        states = run_filter(
            trajectory.controls, {}, no_noise(),
            initial_state(truth.positions[0], truth.rotations[0], truth.velocities[0]),
        )
        estimated = np.stack([s.position for s in states])
        np.testing.assert_allclose(estimated, truth.positions, atol=1e-6 * cfg.scale)

    @pytest.mark.slow
    def test_observations_beat_dead_reckoning(self):
        settings = FilterSettings()
        noise = NoiseConfig.from_std(settings.gyro_noise_std, settings.accel_noise_std, settings.observation_std)
        wins, filtered_rms, dead_rms = 0, [], []
        for seed in range(20):
            trajectory = generate_trajectory(SynthConfig(frame_count=600, seed=seed))
            truth = trajectory.truth
            initial = initial_state(truth.positions[0], truth.rotations[0], truth.velocities[0])
            filtered = run_filter(trajectory.controls, trajectory.observations, noise, initial)
            dead_reckoning = run_filter(trajectory.controls, {}, noise, initial)
            filtered_rms.append(rms_error(filtered, truth.positions))
            dead_rms.append(rms_error(dead_reckoning, truth.positions))
            wins += filtered_rms[-1] < dead_rms[-1]
        assert np.mean(filtered_rms) < np.mean(dead_rms)
        assert wins >= 18

    @pytest.mark.slow
    def test_lap_end_error_grows_with_noise(self):
        errors = []
        for accel_std in (0.01, 0.05, 0.2):
            per_seed = []
            for seed in range(20):
                cfg = SynthConfig(frame_count=500, seed=seed, accel_noise_std=accel_std, observation_interval=0)
                trajectory = generate_trajectory(cfg)
                truth = trajectory.truth
                states = run_filter(
                    trajectory.controls, {}, NoiseConfig.from_std(cfg.gyro_noise_std, accel_std, 1.0),
                    initial_state(truth.positions[0], truth.rotations[0], truth.velocities[0]),
                )
                per_seed.append(np.linalg.norm(states[-1].position - truth.positions[-1]))
            errors.append(np.mean(per_seed))
        assert errors[0] < errors[1] < errors[2]
