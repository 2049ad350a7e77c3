import numpy as np
import pytest

import mfclab as m


def _cfg(**kw):
    base = dict(t0=0.0, T=1.0, steps=16, n_paths=8, seed=5)
    base.update(kw)
    return m.SimConfig(**base)


def test_deterministic_terminal_only():
    model = m.model_from_json({"d": 1, "d_prime": 1, "b": ["0"], "sigma": [["0"]],
                               "l1": "0", "kappa": 1.0, "UT": "m1[0]"})
    est = m.cost_finite(model, _cfg(), np.array([[2.0], [4.0]]), m.ZeroControl())
    assert est.mean == 3.0
    assert est.std_error == 0.0
    assert est.valid


def test_constant_running_cost():
    model = m.model_from_json({"d": 1, "d_prime": 1, "b": ["0"], "sigma": [["0"]],
                               "l1": "1", "kappa": 1.0, "UT": "0"})
    est = m.cost_finite(model, _cfg(steps=25), np.array([[0.0]]), m.ZeroControl())
    assert abs(est.mean - 1.0) < 1e-12
    assert est.running_l1 == est.mean


def test_lq_zero_control_cost():
    """J = E[X_T^2]/2 = (x0^2 + sigma^2 T)/2 = 1 at x0 = 1."""
    model = m.registry_model("LQ-decoupled")
    est = m.cost_finite(model, _cfg(steps=64, n_paths=4000, seed=99),
                        np.array([[1.0]]), m.ZeroControl())
    assert abs(est.mean - 1.0) < 4.0 * est.std_error


def test_breakdown_sums_to_mean():
    model = m.registry_model("tanh-interaction")
    g = np.random.default_rng(1)
    pol = m.OpenLoopSchedule(g.normal(size=(16, 2, 1)))
    est = m.cost_finite(model, _cfg(n_paths=16), np.array([[0.2], [0.4]]), pol)
    assert est.mean == est.running_l1 + est.running_l2 + est.terminal


def test_cost_lift_identity_bitwise():
    model = m.registry_model("LQ-mean-reverting")
    cfg = _cfg(steps=12, n_paths=10, seed=17)
    x0 = np.array([[0.1], [0.9], [-0.4]])
    g = np.random.default_rng(2)
    pol = m.OpenLoopSchedule(g.normal(size=(12, 3, 1)))
    inc = m.wiener_increments(cfg, 1)
    cf = m.cost_finite(model, cfg, x0, pol, inc)
    cl = m.cost_lifted(model, cfg, x0, pol, inc)
    assert cf.mean == cl.mean
    assert cf.running_l1 == cl.running_l1
    assert cf.running_l2 == cl.running_l2
    assert cf.terminal == cl.terminal


def test_single_particle_reduces_to_standard_control():
    model = m.registry_model("LQ-decoupled")
    cfg = _cfg(steps=8, n_paths=4, seed=3)
    x0 = np.array([[0.7]])
    g = np.random.default_rng(3)
    pol = m.OpenLoopSchedule(g.normal(size=(8, 1, 1)))
    inc = m.wiener_increments(cfg, 1)
    fin = m.cost_finite(model, cfg, x0, pol, inc)
    lif = m.cost_lifted(model, cfg, x0, pol, inc)
    assert fin.mean == lif.mean


def test_policy_compare_duplicate_policy():
    model = m.registry_model("LQ-decoupled")
    comp = m.policy_compare(model, _cfg(n_paths=32), np.array([[1.0]]),
                            [m.ZeroControl(), m.ZeroControl()])
    delta, se = comp.diff_vs_best[1]
    assert delta == 0.0 and se == 0.0


def test_policy_compare_requires_two():
    model = m.registry_model("LQ-decoupled")
    with pytest.raises(ValueError):
        m.policy_compare(model, _cfg(), np.array([[1.0]]), [m.ZeroControl()])


def test_terminal_shift_moves_costs_by_constant():
    base = m.registry_model("LQ-decoupled")
    shifted = m.model_from_json({"d": 1, "d_prime": 1, "b": ["0"], "sigma": [["1"]],
                                 "l1": "0", "kappa": 1.0, "UT": "0.5*m2 + 3"})
    cfg = _cfg(steps=16, n_paths=64, seed=8)
    x0 = np.array([[0.5]])
    g = np.random.default_rng(4)
    pols = [m.ZeroControl(), m.OpenLoopSchedule(g.normal(size=(16, 1, 1)))]
    a = m.policy_compare(base, cfg, x0, pols)
    b = m.policy_compare(shifted, cfg, x0, pols)
    for ea, eb in zip(a.estimates, b.estimates):
        assert abs((eb.mean - ea.mean) - 3.0) < 1e-12
    assert a.ranking == b.ranking


def test_value_dominance(lq_u1):
    """Sampled form of V_n <= u_n: every policy's cost sits above the grid value."""
    model = m.registry_model("LQ-decoupled")
    cfg = _cfg(steps=64, n_paths=2000, seed=13)
    x0 = np.array([[1.0]])
    value = lq_u1.value_at(0.0, [1.0])
    g = np.random.default_rng(7)
    policies = [m.ZeroControl(),
                m.OpenLoopSchedule(g.normal(size=(64, 1, 1)) * 0.5),
                m.synthesize_feedback(lq_u1)]
    margin = 1e-2  # grid + time-quadrature allowance at these resolutions
    for pol in policies:
        est = m.cost_finite(model, cfg, x0, pol)
        assert est.mean >= value - margin - 3.0 * est.std_error, pol.label


def test_invalid_paths_flag_estimate():
    model = m.model_from_json({"d": 1, "d_prime": 1, "b": ["exp(x[0])"],
                               "sigma": [["0"]], "l1": "0", "kappa": 1.0, "UT": "m2"})
    est = m.cost_finite(model, _cfg(steps=40), np.array([[6.0]]), m.ZeroControl())
    assert not est.valid


def test_experiment_row_format(tmp_path):
    from mfclab.costs import EXPERIMENT_HEADER, experiment_row, write_experiment_rows

    model = m.registry_model("LQ-decoupled")
    est = m.cost_finite(model, _cfg(), np.array([[1.0]]), m.ZeroControl())
    row = experiment_row("LQ-decoupled", 1, 0.0, np.array([[1.0]]), "zero", est, 1 / 16)
    assert len(row) == len(EXPERIMENT_HEADER)
    out = tmp_path / "exp.csv"
    write_experiment_rows(out, [row])
    lines = out.read_text().strip().splitlines()
    assert lines[0].split(",")[0] == "model_id"
    assert len(lines) == 2


def test_quadrature_consistency_halving_dt():
    """Deterministic cost error from the left-endpoint rule shrinks like O(dt)."""
    model = m.model_from_json({"d": 1, "d_prime": 1, "b": ["1"], "sigma": [["0"]],
                               "l1": "x[0]", "kappa": 1.0, "UT": "0"})
    # exact: int_0^1 (x0 + s) ds = x0 + 1/2 with x0 = 0.25
    exact = 0.75
    errs = []
    for steps in (16, 32, 64):
        est = m.cost_finite(model, _cfg(steps=steps, n_paths=1), np.array([[0.25]]),
                            m.ZeroControl())
        errs.append(abs(est.mean - exact))
    assert errs[1] < 0.6 * errs[0] and errs[2] < 0.6 * errs[1]
