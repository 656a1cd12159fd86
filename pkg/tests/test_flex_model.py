import json

import numpy as np
import pytest

from pflid.flex_model import (
    BatteryParams, FixedLoadParams, FlexModel, ModelError, TdLoadParams, aggregate_polygon,
    assemble_region, contains_point, respond, support_decomposition, upsilon, validate,
)
from pflid.polyhedra import VPolytope, support_value, vertex_enumerate_2d
from pflid.solver import LpProblem, solve_lp


def one_battery(**kw):
    args = dict(p_min=[-1, -1], p_max=[1, 1], e_min=[-1, -1], e_max=[1, 1], e0=0.0, sigma=1.0)
    args.update(kw)
    return FlexModel(2, [BatteryParams(**args)])


def random_model(rng, T=2, n_vb=4):
    bats = []
    for _ in range(n_vb):
        pmin = -rng.uniform(0.2, 1.5, T)
        pmax = rng.uniform(0.2, 1.5, T)
        emin = -rng.uniform(0.5, 2, T)
        emax = rng.uniform(0.5, 2, T)
        bats.append(BatteryParams(pmin, pmax, emin, emax, rng.uniform(-0.3, 0.3),
                                  float(rng.choice([1.0, 0.98, 0.95, 0.9]))))
    td = [TdLoadParams(-rng.uniform(0, 1, T), rng.uniform(0, 1, T))]
    fixed = [FixedLoadParams(rng.uniform(0, 2, T))]
    return FlexModel(T, bats, td, fixed)


def lifted_response_objective(m, lam):
    R = assemble_region(m)
    c = R.agg.T @ lam
    p = LpProblem(c, R.H.A, (">=",) * R.H.n_rows, R.H.b, -np.inf, np.inf)
    return solve_lp(p).objective + float(lam @ R.offset)


def test_unit_retention_energy_rows_are_prefix_sums():
    R = assemble_region(one_battery())
    e_rows = [i for i, (_, kind) in enumerate(R.labels) if kind == "e_min"]
    np.testing.assert_array_equal(R.H.A[e_rows], [[1, 0], [1, 1]])
    np.testing.assert_array_equal(R.H.b[e_rows], [-1, -1])


def test_upsilon_half_retention():
    U1, U2 = upsilon(0.5, 2)
    np.testing.assert_array_equal(U1, [[1, 0], [0.5, 1]])
    np.testing.assert_array_equal(U2, [0.5, 0.25])


@pytest.mark.parametrize("T", [1, 3, 5])
def test_unit_retention_cumulative_sum_general_T(T):
    U1, U2 = upsilon(1.0, T)
    np.testing.assert_array_equal(U1, np.tril(np.ones((T, T))))
    np.testing.assert_array_equal(U2, np.ones(T))


def test_fixed_load_only_is_singleton():
    m = FlexModel(2, fixed_loads=[FixedLoadParams([0.3, -0.2])])
    for lam in ([1, 1], [-3, 2], [0, 0]):
        np.testing.assert_array_equal(respond(m, lam).p_star, [0.3, -0.2])
    np.testing.assert_array_equal(aggregate_polygon(m).vertices, [[0.3, -0.2]])


def test_battery_response_matches_vertex_oracle():
    m = one_battery(e_min=[0, 0], e_max=[2, 2])
    lam = np.array([1.0, -1.0])
    R = assemble_region(m)
    verts = vertex_enumerate_2d(R.H)  # one battery, so the lifted set is the aggregate set
    best = verts[np.argmin(verts @ lam)]
    r = respond(m, lam)
    np.testing.assert_allclose(r.p_star, best, atol=1e-9)
    assert r.objective == pytest.approx(support_value(VPolytope(verts), lam), abs=1e-9)
    assert r.unique


def test_zero_price_is_degenerate_and_lexicographic():
    m = one_battery(e_min=[0, 0], e_max=[2, 2])
    r = respond(m, [0, 0])
    assert r.objective == 0.0 and not r.unique
    # lexicographically smallest feasible aggregate: p1 = 0 (energy >= 0), then p2 = 0
    np.testing.assert_allclose(r.p_star, [0, 0], atol=1e-9)


def test_tie_along_edge_picks_lexicographic_minimum():
    m = one_battery()
    r = respond(m, [1, 1])  # whole edge p1 + p2 = -1 is optimal
    assert not r.unique
    np.testing.assert_allclose(r.p_star, [-1, 0], atol=1e-9)


def test_response_is_optimal_against_sampled_points():
    rng = np.random.default_rng(4)
    m = random_model(rng)
    V = aggregate_polygon(m).vertices
    w = rng.dirichlet(np.ones(len(V)), size=1000)
    pts = w @ V
    for lam in rng.normal(size=(20, 2)):
        r = respond(m, lam)
        assert np.all(lam @ r.p_star <= pts @ lam + 1e-7)
        assert contains_point(m, r.p_star)


def test_response_scale_invariant():
    rng = np.random.default_rng(5)
    m = random_model(rng)
    for lam in list(rng.normal(size=(10, 2))) + [np.array([1.0, 0.0]), np.zeros(2)]:
        a = respond(m, lam).p_star
        for c in (0.01, 3.0, 250.0):
            np.testing.assert_allclose(respond(m, c * lam).p_star, a, atol=1e-9)


def test_support_decomposition_sums_to_lifted_lp():
    rng = np.random.default_rng(6)
    m = random_model(rng)
    for lam in rng.normal(size=(100, 2)):
        parts = support_decomposition(m, lam)
        whole = lifted_response_objective(m, lam)
        assert sum(v for _, v in parts) == pytest.approx(whole, abs=1e-8)
        assert respond(m, lam).objective == pytest.approx(whole, abs=1e-8)


def test_support_decomposition_fixed_only():
    m = FlexModel(2, fixed_loads=[FixedLoadParams([1, 2])])
    assert support_decomposition(m, [3, -1]) == [("fixed_loads[0]", 1.0)]


def test_identical_batteries_sum():
    b = BatteryParams([-1, -1], [1, 1], [-1, -1], [1, 1], 0.0, 0.95)
    single, double = FlexModel(2, [b]), FlexModel(2, [b, b])
    lam = np.array([0.3, -0.7])
    assert respond(double, lam).objective == pytest.approx(2 * respond(single, lam).objective)


def test_aggregate_polygon_matches_responses():
    rng = np.random.default_rng(9)
    m = random_model(rng)
    V = aggregate_polygon(m)
    for lam in rng.normal(size=(50, 2)):
        assert respond(m, lam).objective == pytest.approx(support_value(V, lam), abs=1e-8)


def test_higher_T_response_feasible():
    rng = np.random.default_rng(10)
    m = random_model(rng, T=4, n_vb=2)
    validate(m)
    for lam in rng.normal(size=(10, 4)):
        r = respond(m, lam)
        assert contains_point(m, r.p_star)
        assert r.objective == pytest.approx(lifted_response_objective(m, lam), abs=1e-8)


def test_contradictory_battery_rejected():
    # starts above e_max and can only charge further
    m = one_battery(e0=2.0, e_max=[1, 1], p_min=[0.1, 0.1], p_max=[1, 1])
    with pytest.raises(ModelError) as exc:
        validate(m)
    assert exc.value.component == "batteries[0]"


def test_param_invariants():
    with pytest.raises(ModelError):
        BatteryParams([1, 1], [0, 0], [0, 0], [1, 1], 0, 1)
    with pytest.raises(ModelError):
        BatteryParams([0, 0], [1, 1], [0, 0], [1, 1], 0, 1.5)
    with pytest.raises(ModelError):
        TdLoadParams([0], [-1])
    with pytest.raises(ModelError):
        FlexModel(3, [BatteryParams([0, 0], [1, 1], [0, 0], [1, 1], 0, 1)])


def test_validate_matches_phase_one():
    rng = np.random.default_rng(12)
    verdicts = set()
    for _ in range(50):
        m = random_model(rng, n_vb=1)
        b = m.batteries[0]
        shift = rng.uniform(-1, 3)
        try:
            m2 = FlexModel(2, [BatteryParams(b.p_min, b.p_max, b.e_min + shift,
                                             b.e_max + shift, b.e0, b.sigma)])
        except ModelError:
            continue
        R = assemble_region(m2)
        phase1 = solve_lp(LpProblem(np.zeros(2), R.H.A, (">=",) * R.H.n_rows, R.H.b,
                                    -np.inf, np.inf)).optimal
        try:
            validate(m2)
            ok = True
        except ModelError:
            ok = False
        assert ok == phase1
        verdicts.add(ok)
    assert verdicts == {True, False}


def test_json_round_trip(tmp_path):
    m = random_model(np.random.default_rng(13))
    path = tmp_path / "m.json"
    m.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"T", "dt", "batteries", "td_loads", "fixed_loads"}
    assert set(doc["batteries"][0]) == {"p_min", "p_max", "e_min", "e_max", "e0", "sigma"}
    m2 = FlexModel.load(path)
    assert m2.to_json() == m.to_json()


def test_json_errors_name_the_field():
    doc = one_battery().to_json()
    del doc["batteries"][0]["e0"]
    with pytest.raises(ModelError, match=r"batteries\[0\]\.e0"):
        FlexModel.from_json(doc)
    doc = one_battery().to_json()
    doc["batteries"][0]["sigma"] = 2.0
    with pytest.raises(ModelError, match=r"batteries\[0\]"):
        FlexModel.from_json(doc)
