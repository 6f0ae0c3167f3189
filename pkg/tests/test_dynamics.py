import math

import numpy as np
import pytest

from trafficlab.dynamics import (
    ControlInput,
    PidState,
    VehiclePose,
    bicycle_step,
    pid_speed,
    pid_steer,
    speed_pid,
    steer_pid,
)


def eq12_oracle(x, y, psi, v, acc, delta, length, dt):
    """Independent scalar evaluation of the bicycle update."""
    wheelbase = 0.6 * length
    l_r = wheelbase / 2.0
    l_f = wheelbase / 2.0
    omega = math.atan(l_r / (l_r + l_f) * math.tan(delta))
    nx = x + v * math.cos(psi + omega) * dt
    ny = y + v * math.sin(psi + omega) * dt
    npsi = psi + v / l_r * math.sin(omega) * dt
    nv = max(v + acc * dt, 0.0)
    return nx, ny, npsi, nv


class TestBicycle:
    def test_straight_line(self):
        pose = bicycle_step(
            VehiclePose(0, 0, 0, 2.0), ControlInput(1.0, 0.0), (4.0, 1.8), 0.1
        )
        assert pose.x == pytest.approx(0.2, abs=1e-12)
        assert pose.y == pytest.approx(0.0, abs=1e-12)
        assert pose.psi == pytest.approx(0.0, abs=1e-12)
        assert pose.v == pytest.approx(2.1, abs=1e-12)

    def test_rest_stays_at_rest(self):
        pose0 = VehiclePose(3.0, -1.0, 0.7, 0.0)
        pose = bicycle_step(pose0, ControlInput(0.0, 0.2), (4.0, 1.8), 0.1)
        assert (pose.x, pose.y, pose.psi, pose.v) == (3.0, -1.0, 0.7, 0.0)

    def test_matches_hand_evaluated_update(self):
        pose = bicycle_step(
            VehiclePose(0, 0, 0, 5.0), ControlInput(0.0, 0.2), (4.0, 1.8), 0.1
        )
        ox, oy, opsi, ov = eq12_oracle(0, 0, 0, 5.0, 0.0, 0.2, 4.0, 0.1)
        assert pose.x == pytest.approx(ox, abs=1e-12)
        assert pose.y == pytest.approx(oy, abs=1e-12)
        assert pose.psi == pytest.approx(opsi, abs=1e-12)
        assert pose.v == pytest.approx(ov, abs=1e-12)

    def test_random_states_match_oracle(self, rng):
        for _ in range(300):
            x, y = rng.uniform(-50, 50, 2)
            psi = rng.uniform(-3, 3)
            v = rng.uniform(0, 10)
            acc = rng.uniform(-3, 3)
            delta = rng.uniform(-0.5, 0.5)
            length = rng.uniform(3, 6)
            got = bicycle_step(
                VehiclePose(x, y, psi, v), ControlInput(acc, delta), (length, 1.8), 0.1
            )
            ox, oy, opsi, ov = eq12_oracle(x, y, psi, v, acc, delta, length, 0.1)
            assert got.x == pytest.approx(ox, abs=1e-12)
            assert got.y == pytest.approx(oy, abs=1e-12)
            # the implementation wraps psi; compare modulo 2*pi
            assert math.cos(got.psi) == pytest.approx(math.cos(opsi), abs=1e-12)
            assert math.sin(got.psi) == pytest.approx(math.sin(opsi), abs=1e-12)
            assert got.v == pytest.approx(ov, abs=1e-12)

    def test_zero_steer_preserves_heading_exactly(self):
        pose = VehiclePose(0, 0, 1.234, 6.0)
        for _ in range(50):
            pose = bicycle_step(pose, ControlInput(0.5, 0.0), (4.5, 1.9), 0.1)
        assert pose.psi == 1.234

    def test_zero_acc_preserves_speed_exactly(self):
        pose = VehiclePose(0, 0, 0.0, 6.0)
        for _ in range(50):
            pose = bicycle_step(pose, ControlInput(0.0, 0.3), (4.5, 1.9), 0.1)
        assert pose.v == 6.0

    def test_speed_clamped_at_zero(self):
        pose = VehiclePose(0, 0, 0, 0.2)
        pose = bicycle_step(pose, ControlInput(-3.0, 0.0), (4, 1.8), 0.1)
        assert pose.v == 0.0

    def test_inputs_clamped_not_rejected(self):
        pose = bicycle_step(
            VehiclePose(0, 0, 0, 5.0), ControlInput(99.0, 2.0), (4, 1.8), 0.1
        )
        assert pose.v == pytest.approx(5.3)  # acc clamped to +3

    def test_constant_steer_traces_circle(self):
        # Analytic radius of the continuous model: l_r / sin(omega).
        length, v, delta, dt = 4.0, 5.0, 0.15, 0.01
        l_r = 0.3 * length
        omega = math.atan(0.5 * math.tan(delta))
        radius = l_r / math.sin(omega)
        pose = VehiclePose(0, 0, 0, v)
        pts = []
        for _ in range(4000):
            pose = bicycle_step(pose, ControlInput(0.0, delta), (length, 1.8), dt)
            pts.append((pose.x, pose.y))
        pts = np.asarray(pts)
        # Least-squares circle fit (Kasa).
        a = np.column_stack([2 * pts[:, 0], 2 * pts[:, 1], np.ones(len(pts))])
        b = (pts ** 2).sum(axis=1)
        sol, *_ = np.linalg.lstsq(a, b, rcond=None)
        cx, cy = sol[0], sol[1]
        r_fit = math.sqrt(sol[2] + cx * cx + cy * cy)
        assert abs(r_fit - radius) / radius < 0.01
        radii = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        assert np.max(np.abs(radii - radius)) / radius < 0.01


class TestPidSpeed:
    def test_zero_error_history(self):
        pid = speed_pid()
        assert pid_speed(pid, 5.0, 5.0, 0.1) == 0.0

    def test_first_tick_clamps(self):
        # kp*10 + kd*(10/0.1) = 10 + 5 = 15 pre-clamp.
        pid = speed_pid()
        assert pid_speed(pid, 10.0, 0.0, 0.1) == 3.0

    def test_constant_error_second_tick(self):
        pid = speed_pid()
        pid_speed(pid, 6.0, 5.0, 0.1)
        assert pid_speed(pid, 6.0, 5.0, 0.1) == pytest.approx(1.0)

    def test_closed_loop_convergence(self):
        # From rest to a 5 m/s hold within 0.1 m/s in at most 5 s.
        pid = speed_pid()
        pose = VehiclePose(0, 0, 0, 0.0)
        t_ok = None
        for i in range(100):
            acc = pid_speed(pid, 5.0, pose.v, 0.1)
            pose = bicycle_step(pose, ControlInput(acc, 0.0), (4, 1.8), 0.1)
            if t_ok is None and abs(pose.v - 5.0) <= 0.1:
                t_ok = (i + 1) * 0.1
        assert t_ok is not None and t_ok <= 5.0
        assert abs(pose.v - 5.0) <= 0.1


class TestPidSteer:
    def test_zero_error(self):
        pid = steer_pid()
        assert pid_steer(pid, (0.0, 0.0), 0.1, speed=5.0) == 0.0

    def test_saturation(self):
        pid = steer_pid()
        out = pid_steer(pid, (0.0, 2.0), 0.1, speed=5.0)
        assert out == pytest.approx(math.radians(30.0))

    def test_step_error_first_tick(self):
        # error = 0.1; kp*0.1 + ki*(0.1*0.1) + kd*(0.1/0.1)
        pid = steer_pid()
        expected = 1.4 * 0.1 + 0.05 * (0.1 * 0.1) + 0.25 * (0.1 / 0.1)
        assert pid_steer(pid, (0.0, 0.1), 0.1, speed=5.0) == pytest.approx(expected)

    def test_cross_track_steers_toward_path(self):
        pid = steer_pid()
        # Vehicle left of the path (positive cross-track): steer right.
        assert pid_steer(pid, (1.0, 0.0), 0.1, speed=5.0) < 0


def test_integral_windup_clamped():
    pid = PidState(kp=0.0, ki=1.0, kd=0.0)
    for _ in range(10000):
        pid.step(5.0, 0.1)
    assert pid.integral == 10.0
