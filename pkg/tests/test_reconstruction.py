import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secure_cbf import (
    DataWindow,
    HistoryReconstructor,
    InvalidInputError,
    NumericConfig,
    PlausibleSet,
    Reconstructor,
    SensorSubset,
    SolutionKind,
    plausible_initial_states,
    propagate_set,
    worst_case_envelope,
)
from secure_cbf.reconstruction import build_regression, classify_solution, dedup_points

from conftest import NOISELESS, random_system, simulate_outputs
from oracles import brute_force


def random_case(rng, n, p, s, t, attack_prob=0.5):
    sys = random_system(rng, n, 1, p)
    x0 = rng.uniform(-2, 2, n)
    inputs = rng.uniform(-1, 1, (t, 1))
    attack = np.zeros((t + 1, p))
    attacked = []
    if s and rng.random() < attack_prob:
        attacked = list(rng.choice(p, size=s, replace=False))
        for i in attacked:
            attack[:, i] = rng.choice([-1, 1], size=t + 1) * rng.uniform(0.5, 2.0, t + 1)
    return sys, x0, inputs, simulate_outputs(sys, x0, inputs, attack)


def compare_with_oracle(sys, x0, inputs, outputs, s):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ps = plausible_initial_states(DataWindow(inputs, outputs), sys, s, NOISELESS)
    oracle = brute_force(sys, inputs, outputs, s)
    for gamma, sol in ps.entries.items():
        kind, base, ker = oracle[gamma.indices]
        assert sol.kind.value == kind, (gamma, sol.kind, kind)
        if kind == "point":
            assert np.allclose(sol.base, base, atol=1e-6)
        elif kind == "affine":
            assert sol.kernel.dim == ker.shape[1]
            # same affine set: bases differ by a kernel vector and the kernels agree
            assert sol.kernel.distance(sol.base - base) < 1e-6
            assert np.allclose(sol.kernel.projector(), ker @ ker.T, atol=1e-6)
    assert ps.contains(x0, 1e-6)
    return ps, oracle


def test_matches_brute_force_oracle(rng):
    for _ in range(60):
        n, p = rng.integers(1, 4), rng.integers(2, 5)
        s = rng.integers(0, 2)
        t = rng.integers(0, 5)
        compare_with_oracle(*random_case(rng, n, p, s, t), s)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), p=st.integers(2, 4), s=st.integers(0, 1),
       t=st.integers(0, 4))
def test_oracle_property(seed, n, p, s, t):
    rng = np.random.default_rng(seed)
    compare_with_oracle(*random_case(rng, n, p, s, t), s)


def vehicle_window(vehicle, x_true, x_fake, attacked=(1, 3, 5), t=3, seed=0):
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-1, 1, (t, 2))
    y_true = simulate_outputs(vehicle, x_true, inputs)
    y_fake = simulate_outputs(vehicle, x_fake, inputs)
    outputs = y_true.copy()
    idx = [i - 1 for i in attacked]
    outputs[:, idx] = y_fake[:, idx]
    return DataWindow(inputs, outputs)


def test_vehicle_four_plausible_states(vehicle):
    win = vehicle_window(vehicle, np.ones(4), np.array([2.0, 2, 2, 1]))
    ps = plausible_initial_states(win, vehicle, 3, NOISELESS)
    pts = ps.points(1e-6)
    expected = [(1, 1, 1, 1), (1, 1, 2, 1), (2, 2, 1, 1), (2, 2, 2, 1)]
    assert len(pts) == 4
    for e in expected:
        assert min(np.max(np.abs(p - e)) for p in pts) < 1e-6
    assert ps.is_finite


def test_vehicle_pinned_coordinate(vehicle):
    win = vehicle_window(vehicle, np.ones(4), np.array([2.0, 2, 2, 2]))
    ps = plausible_initial_states(win, vehicle, 3, NOISELESS)
    pts = ps.points(1e-6)
    assert pts and all(abs(p[3] - 1.0) < 1e-6 for p in pts)


def test_no_attack_budget_recovers_truth(vehicle):
    x0 = np.array([0.3, -1.0, 2.0, 0.5])
    win = vehicle_window(vehicle, x0, x0)
    ps = plausible_initial_states(win, vehicle, 0, NOISELESS)
    pts = ps.points(1e-8)
    assert len(pts) == 1 and np.allclose(pts[0], x0, atol=1e-9)


def test_too_many_attacked_sensors_empties_set(vehicle):
    # s = 1 but sensors 1, 3, 5 disagree with their twins
    win = vehicle_window(vehicle, np.ones(4), np.array([2.0, 2, 2, 1]))
    ps = plausible_initial_states(win, vehicle, 1, NOISELESS)
    assert ps.nonempty() == []


def test_short_window_gives_affine_and_warns(vehicle):
    win = vehicle_window(vehicle, np.ones(4), np.ones(4), t=0)
    with pytest.warns(UserWarning):
        ps = plausible_initial_states(win, vehicle, 0, NOISELESS)
    (gamma, sol), = ps.nonempty()
    assert sol.kind is SolutionKind.POINT  # positions and velocities are all measured directly
    sys1 = random_system(np.random.default_rng(0), 3, 1, 1)
    w1 = DataWindow(np.zeros((1, 1)), simulate_outputs(sys1, np.ones(3), np.zeros((1, 1))))
    with pytest.warns(UserWarning):
        ps1 = plausible_initial_states(w1, sys1, 0, NOISELESS)
    assert ps1.nonempty()[0][1].kind is SolutionKind.AFFINE
    assert ps1.nonempty()[0][1].kernel.dim == 1
    assert ps1.contains(np.ones(3), 1e-8)


def test_classify_solution_kinds():
    O = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert classify_solution(O, [1, 2, 3], NOISELESS).kind is SolutionKind.POINT
    assert classify_solution(O, [1, 2, 4], NOISELESS).kind is SolutionKind.EMPTY
    sol = classify_solution(np.array([[1.0, 1.0]]), [2.0], NOISELESS)
    assert sol.kind is SolutionKind.AFFINE and sol.kernel.dim == 1
    assert np.allclose(sol.base, [1.0, 1.0])  # minimum-norm base
    with pytest.raises(InvalidInputError):
        classify_solution(O, [1, 2], NOISELESS)


def test_residual_threshold_is_mean_square():
    O = np.ones((4, 1))
    Y = np.array([1.0, 1.0, 1.0, 1.0]) + np.array([0.03, -0.03, 0.03, -0.03])
    # mean squared error 9e-4
    assert classify_solution(O, Y, NumericConfig(residual_tol=1e-3)).kind is SolutionKind.POINT
    assert classify_solution(O, Y, NumericConfig(residual_tol=8e-4)).kind is SolutionKind.EMPTY


def test_build_regression_removes_input_effect(rng):
    sys = random_system(rng, 3, 2, 2)
    x0 = rng.normal(size=3)
    inputs = rng.normal(size=(4, 2))
    win = DataWindow(inputs, simulate_outputs(sys, x0, inputs))
    O, Y = build_regression(win, sys, SensorSubset([1, 2]))
    assert O.shape == (10, 3)
    assert np.allclose(O @ x0, Y, atol=1e-10)


def test_data_window_validation(vehicle):
    with pytest.raises(InvalidInputError):
        DataWindow(np.zeros((2, 2)), np.zeros((2, 8)))
    with pytest.raises(InvalidInputError):
        DataWindow(np.zeros((0, 2)), np.zeros((0, 8)))
    with pytest.raises(InvalidInputError):
        DataWindow(np.zeros((1, 2)), np.zeros((2, 8)), start_time=-1)
    with pytest.raises(InvalidInputError):
        plausible_initial_states(DataWindow(np.zeros((1, 2)), np.zeros((2, 7))), vehicle, 1)
    with pytest.raises(InvalidInputError):
        plausible_initial_states(DataWindow(np.zeros((1, 2)), np.full((2, 8), np.nan)), vehicle, 1)
    with pytest.raises(InvalidInputError):
        plausible_initial_states(DataWindow(np.zeros((1, 2)), np.zeros((2, 8))), vehicle, 8)
    w = DataWindow([0.5, 0.2], [1.0, 2.0, 3.0])  # scalar sequences
    assert w.inputs.shape == (2, 1) and w.outputs.shape == (3, 1) and w.t == 2


def test_reconstructor_matches_direct(vehicle):
    win = vehicle_window(vehicle, np.ones(4), np.array([2.0, 2, 2, 1]))
    direct = plausible_initial_states(win, vehicle, 3, NOISELESS)
    cached = Reconstructor(vehicle, 3, 4, NOISELESS).reconstruct(win)
    for gamma, sol in direct.entries.items():
        other = cached.entries[gamma]
        assert sol.kind is other.kind
        if not sol.is_empty:
            assert np.allclose(sol.base, other.base, atol=1e-10)
    with pytest.raises(InvalidInputError):
        Reconstructor(vehicle, 3, 5, NOISELESS).reconstruct(win)


def test_history_reconstructor_matches_window(vehicle):
    rng = np.random.default_rng(5)
    inputs = rng.uniform(-1, 1, (6, 2))
    x0, xf = np.ones(4), np.array([2.0, 2, 2, 1])
    y = simulate_outputs(vehicle, x0, inputs)
    y[:, [0, 2, 4]] = simulate_outputs(vehicle, xf, inputs)[:, [0, 2, 4]]
    hist = HistoryReconstructor(vehicle, 3, NOISELESS)
    for k in range(7):
        hist.update(y[k], inputs[k - 1] if k else None)
    direct = plausible_initial_states(DataWindow(inputs, y), vehicle, 3, NOISELESS)
    ps0 = hist.initial()
    for gamma, sol in direct.entries.items():
        assert ps0.entries[gamma].kind is sol.kind
        if not sol.is_empty:
            assert np.allclose(ps0.entries[gamma].base, sol.base, atol=1e-8)
    now = hist.current()
    via_prop = propagate_set(direct, vehicle, inputs)
    assert now.time_index == via_prop.time_index == 6
    a = np.array(sorted(map(tuple, now.points(1e-6))))
    b = np.array(sorted(map(tuple, via_prop.points(1e-6))))
    assert np.allclose(a, b, atol=1e-8)
    with pytest.raises(InvalidInputError):
        hist.update(y[0])


def test_propagation_agrees_with_later_reconstruction(vehicle):
    rng = np.random.default_rng(3)
    inputs = rng.uniform(-1, 1, (7, 2))
    x0, xf = np.ones(4), np.array([2.0, 2, 2, 1])
    y = simulate_outputs(vehicle, x0, inputs)
    y[:, [0, 2, 4]] = simulate_outputs(vehicle, xf, inputs)[:, [0, 2, 4]]
    early = plausible_initial_states(DataWindow(inputs[:3], y[:4]), vehicle, 3, NOISELESS)
    pushed = propagate_set(early, vehicle, inputs[:4])
    later = plausible_initial_states(DataWindow(inputs[4:], y[4:], start_time=4), vehicle, 3, NOISELESS)
    assert pushed.time_index == later.time_index == 4
    for p in pushed.points(1e-8):
        assert later.contains(p, 1e-6)
    for p in later.points(1e-8):
        assert pushed.contains(p, 1e-6)


def test_propagated_affine_kernel_collapses_to_point():
    # A maps everything onto the first axis' complement, so a 1-dim kernel along e1 vanishes
    from secure_cbf import LtiSystem
    sys = LtiSystem(np.array([[0.0, 0.0], [0.0, 1.0]]), np.zeros((2, 1)), np.array([[0.0, 1.0]]))
    ps = plausible_initial_states(DataWindow(np.zeros((1, 1)), np.array([[1.0], [1.0]])), sys, 0, NOISELESS)
    assert ps.affine()
    pushed = propagate_set(ps, sys, np.zeros((1, 1)))
    assert pushed.is_finite and np.allclose(pushed.points(1e-9)[0], [0.0, 1.0])


def test_plausible_set_json_round_trip(vehicle):
    win = vehicle_window(vehicle, np.ones(4), np.array([2.0, 2, 2, 1]))
    ps = plausible_initial_states(win, vehicle, 3, NOISELESS)
    text = json.dumps(ps.to_json())
    back = PlausibleSet.from_json(json.loads(text))
    assert back.time_index == ps.time_index and back.s == ps.s
    for gamma, sol in ps.entries.items():
        assert back.entries[gamma].kind is sol.kind
        if not sol.is_empty:
            assert np.array_equal(back.entries[gamma].base, sol.base)
    obj = ps.to_json()
    assert set(obj) == {"time", "s", "entries"}
    assert {"gamma", "kind"} <= set(obj["entries"][0])


def test_dedup_keeps_best_residual():
    pts = dedup_points([(0.5, np.array([0.0])), (0.1, np.array([0.001])), (0.2, np.array([1.0]))], 0.01)
    assert len(pts) == 2 and pts[0][0] == 0.001


def test_worst_case_envelope_vehicle(vehicle):
    env = worst_case_envelope(vehicle, 1)
    assert len(env) == 28
    nontrivial = [k for _, k in env if k.dim > 0]
    assert len(nontrivial) == 2
    axes = sorted(int(np.argmax(np.abs(k.vectors[:, 0]))) for k in nontrivial)
    assert axes == [0, 2]
    for k in nontrivial:
        assert k.dim == 1
        v = np.abs(k.vectors[:, 0])
        assert abs(v.max() - 1.0) < 1e-9 and np.sort(v)[-2] < 1e-9
    with pytest.raises(InvalidInputError):
        worst_case_envelope(vehicle, 4)
    with pytest.warns(UserWarning):
        worst_case_envelope(vehicle, 3)


def test_per_sensor_residual_is_not_diluted():
    # sensor 1 disagrees, sensors 2..5 agree: pooled MSE passes, per-sensor fails
    O = np.ones((10, 1))
    Y = np.ones(10)
    Y[:2] += [0.1, -0.1]
    pooled = NumericConfig(residual_tol=3e-3)
    per_sensor = NumericConfig(residual_tol=3e-3, residual_mode="per_sensor")
    assert classify_solution(O, Y, pooled, depth=2).kind is SolutionKind.POINT
    assert classify_solution(O, Y, per_sensor, depth=2).kind is SolutionKind.EMPTY
    assert classify_solution(O, Y, per_sensor).kind is SolutionKind.POINT  # no depth: pooled fallback
    with pytest.raises(InvalidInputError):
        classify_solution(O, Y, per_sensor, depth=3)
    with pytest.raises(Exception, match="residual_mode"):
        NumericConfig(residual_mode="bogus")


def test_per_sensor_mode_agrees_across_reconstructors(vehicle):
    rng = np.random.default_rng(8)
    inputs = rng.uniform(-1, 1, (9, 2))
    y = simulate_outputs(vehicle, np.ones(4), inputs) + rng.normal(scale=0.01, size=(10, 8))
    y[:, [0, 2, 4]] += simulate_outputs(vehicle, np.array([2.0, 2, 2, 1]), inputs)[:, [0, 2, 4]] - y[:, [0, 2, 4]]
    cfg = NumericConfig(residual_tol=1e-3, residual_mode="per_sensor")
    win = DataWindow(inputs, y)
    direct = plausible_initial_states(win, vehicle, 3, cfg)
    cached = Reconstructor(vehicle, 3, 10, cfg).reconstruct(win)
    hist = HistoryReconstructor(vehicle, 3, cfg)
    for k in range(10):
        hist.update(y[k], inputs[k - 1] if k else None)
    from_hist = hist.initial()
    for gamma, sol in direct.entries.items():
        assert cached.entries[gamma].kind is sol.kind
        assert from_hist.entries[gamma].kind is sol.kind
        assert cached.entries[gamma].residual == pytest.approx(sol.residual, rel=1e-6, abs=1e-12)
        assert from_hist.entries[gamma].residual == pytest.approx(sol.residual, rel=1e-6, abs=1e-10)
