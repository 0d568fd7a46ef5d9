import cmath
import math
from dataclasses import replace

import numpy as np
import pytest

from mmvae import arm

CFG = arm.ArmConfig()
UNIT = replace(CFG, link_lengths=(1.0, 1.0, 1.0, 1.0))


def complex_fk(q, lengths):
    """Independent oracle: chain of complex rotations."""
    z, rot = 0j, 1 + 0j
    for qi, li in zip(q, lengths):
        rot *= cmath.exp(1j * qi)
        z += li * rot
    return np.array([z.real, z.imag])


def test_fk_straight_arm():
    np.testing.assert_allclose(arm.forward_kinematics(np.zeros(4), UNIT), [4.0, 0.0])


def test_fk_rotated_arm():
    np.testing.assert_allclose(arm.forward_kinematics([math.pi / 2, 0, 0, 0], UNIT), [0.0, 4.0], atol=1e-12)


def test_fk_matches_complex_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = rng.uniform(-math.pi, math.pi, 4)
        np.testing.assert_allclose(arm.forward_kinematics(q, CFG), complex_fk(q, CFG.link_lengths), atol=1e-12)


def test_jacobian_matches_finite_differences():
    q = np.array(CFG.home)
    h = 1e-6
    numeric = np.column_stack([
        (arm.forward_kinematics(q + h * e, CFG) - arm.forward_kinematics(q - h * e, CFG)) / (2 * h)
        for e in np.eye(4)])
    np.testing.assert_allclose(arm.jacobian(q, CFG), numeric, atol=1e-8)


def test_step_zero_command_is_identity():
    s = arm.home_state(CFG)
    s2 = arm.step(s, np.zeros(4), CFG)
    np.testing.assert_array_equal(s2.q, s.q)
    np.testing.assert_array_equal(s2.v, s.v)


def test_step_saturates_at_upper_limit():
    hi = np.array(CFG.joint_limits)[:, 1]
    s = arm.state_from_q(hi, CFG)
    np.testing.assert_array_equal(arm.step(s, np.full(4, 1.0), CFG).q, hi)


def test_random_steps_match_clamped_euler_oracle():
    rng = np.random.default_rng(1)
    lim = np.array(CFG.joint_limits)
    s = arm.home_state(CFG)
    q = np.array(CFG.home)
    for _ in range(100):
        u = rng.uniform(-3, 3, 4)
        s = arm.step(s, u, CFG)
        q = np.array([min(max(qi + ui * CFG.dt, lo), hi) for qi, ui, (lo, hi) in zip(q, u, lim)])
    np.testing.assert_allclose(s.q, q, atol=1e-12)


def test_state_invariants_along_trace():
    trace = arm.babble(CFG, 5, seed=2)
    for row in trace.rows:
        q = row[arm.Q_COLS]
        e = arm.forward_kinematics(q, CFG)
        np.testing.assert_allclose(row[arm.V_COLS], arm.camera(e, CFG), atol=1e-9)
        p, s = arm.sense_touch_sound(e, CFG)
        assert (row[arm.P_COL], row[arm.S_COL]) == (p, s)
        assert (p == 1.0) == (e[1] <= CFG.key_plane_height)
        assert s == 0 or p == 1
        np.testing.assert_allclose(arm.position_from_camera(row[arm.V_COLS], CFG), e, atol=1e-9)


def test_babble_zero_amplitude_is_constant():
    cfg = replace(CFG, babble_amp_max=0.0)
    trace = arm.babble(cfg, 2, seed=0)
    assert np.all(trace.rows[:, arm.U_COLS] == 0)
    np.testing.assert_array_equal(trace.rows, np.tile(trace.rows[0], (len(trace), 1)))
    np.testing.assert_array_equal(trace.rows[0, arm.Q_COLS], CFG.home)


@pytest.mark.parametrize("seed", [0, 1, 7, 123])
def test_each_cycle_starts_and_ends_at_zero(seed):
    trace = arm.babble(CFG, 4, seed)
    for c in np.unique(trace.cycle):
        u = trace.rows[trace.cycle == c][:, arm.U_COLS]
        assert np.abs(u[0]).max() < 1e-9 and np.abs(u[-1]).max() < 1e-9


def test_babble_deterministic():
    a, b = arm.babble(CFG, 3, 5), arm.babble(CFG, 3, 5)
    np.testing.assert_array_equal(a.rows, b.rows)
    assert not np.array_equal(a.rows, arm.babble(CFG, 3, 6).rows)


def test_babble_rows_count_and_normalized_range():
    trace = arm.babble_rows(CFG, 7380, 7)
    assert len(trace) == 7380
    z = trace.normalized
    assert z.min() >= -1 and z.max() <= 1
    assert not np.any(trace.rows == -2.0)


def test_babble_touches_keys():
    trace = arm.babble_rows(CFG, 7380, 7)
    share = trace.rows[:, arm.P_COL].mean()
    assert 0.05 < share < 0.5
    assert len(np.unique(trace.rows[:, arm.S_COL])) > 3


def test_touch_above_plane_is_silent():
    assert arm.sense_touch_sound(np.array([0.5, CFG.key_plane_height + 0.01]), CFG) == (0.0, 0.0)


def test_touch_at_leftmost_key():
    p, s = arm.sense_touch_sound(np.array([CFG.key_x_range[0], 0.0]), CFG)
    assert (p, s) == (1.0, 1.0 / CFG.num_keys)


def test_sound_is_monotone_step_function():
    xs = np.linspace(CFG.key_x_range[0], CFG.key_x_range[1] - 1e-9, 400)
    s = np.array([arm.sense_touch_sound(np.array([x, 0.0]), CFG)[1] for x in xs])
    assert np.all(np.diff(s) >= 0)
    # oracle: equal-width bins
    width = (CFG.key_x_range[1] - CFG.key_x_range[0]) / CFG.num_keys
    expected = (np.floor((xs - CFG.key_x_range[0]) / width) + 1) / CFG.num_keys
    np.testing.assert_allclose(s, expected)
    assert set(np.unique(s)) == set(arm.key_values(CFG))


def test_redundant_pair():
    q1, q2 = arm.redundant_pair(CFG)
    assert np.linalg.norm(q1 - q2) > 0.1
    assert np.linalg.norm(arm.forward_kinematics(q1, CFG) - arm.forward_kinematics(q2, CFG)) < 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        replace(CFG, link_lengths=(1, 1, 0, 1))
    with pytest.raises(ValueError):
        replace(CFG, camera_R=CFG.camera_L)
    with pytest.raises(ValueError):
        replace(CFG, cycle_steps=1)
    assert arm.ArmConfig.from_dict(CFG.to_dict()) == CFG


# -- ik oracle -------------------------------------------------------------------

def test_ik_fixed_point():
    s = arm.home_state(CFG)
    u, saturated = arm.ik_oracle_step(s.q, s.v, CFG)
    assert np.linalg.norm(u) < 1e-6 and not saturated


def test_ik_step_reduces_camera_distance():
    rng = np.random.default_rng(3)
    s = arm.home_state(CFG)
    for _ in range(20):
        target = arm.camera(s.e + rng.normal(scale=0.01, size=2), CFG)
        u, _ = arm.ik_oracle_step(s.q, target, CFG)
        after = arm.step(s, u, CFG)
        assert np.linalg.norm(after.v - target) < np.linalg.norm(s.v - target)


def test_ik_unreachable_target_saturates():
    s = arm.home_state(CFG)
    u, saturated = arm.ik_oracle_step(s.q, arm.camera(np.array([10.0, 10.0]), CFG), CFG)
    assert saturated and np.all(np.isfinite(u))
    assert np.abs(u).max() == pytest.approx(CFG.babble_amp_max)


def test_ik_tracks_babble_trajectory():
    trace = arm.babble_rows(CFG, 201, 11)
    norm = trace.normalization
    s = arm.state_from_q(trace.rows[0, arm.Q_COLS], CFG)
    executed = []
    for target in trace.rows[1:, arm.V_COLS]:
        u, _ = arm.ik_oracle_step(s.q, target, CFG)
        s = arm.step(s, u, CFG)
        executed.append(s.v)
    ref = norm.normalize(trace.rows[1:, arm.V_COLS], arm.V_COLS)
    got = norm.normalize(np.array(executed), arm.V_COLS)
    assert 100 * np.mean((got - ref) ** 2) < 0.5


def test_trace_save_load_round_trip(tmp_path):
    trace = arm.babble(CFG, 2, 4)
    for name in ("t.csv", "t.bin"):
        arm.save_trace(tmp_path / name, trace, {"tag": 1})
        back, meta = arm.load_trace(tmp_path / name)
        np.testing.assert_array_equal(back.rows, trace.rows)
        np.testing.assert_array_equal(back.cycle, trace.cycle)
        assert back.normalization.digest() == trace.normalization.digest()
        assert meta["tag"] == 1
