import itertools
import json
import time

import numpy as np
import pytest

from instances import random_flex_model
from pflid.dataset import Dataset, NoiseSpec, generate, sample_prices
from pflid.demo_assets import demo_model
from pflid.flex_model import (
    BatteryParams, FixedLoadParams, FlexModel, TdLoadParams, aggregate_polygon,
)
from pflid.identifiability import build_geometry, certify_candidate
from pflid.identification import (
    StructureError, StructureSpec, _layout, build_kkt, canonical_solutions, evaluate_loss,
    identify,
)
from pflid.polyhedra import InputError, VPolytope


def one_battery(pl, pu, el, eu, e0=0.0, sigma=1.0):
    return FlexModel(2, [BatteryParams([pl] * 2, [pu] * 2, [el] * 2, [eu] * 2, e0, sigma)])


# -- structure spec -----------------------------------------------------------


def test_structure_validation():
    with pytest.raises(StructureError):
        StructureSpec(0, 0, 0)
    with pytest.raises(StructureError):
        StructureSpec(2, sigma=(1.0,))
    with pytest.raises(StructureError):
        StructureSpec(1, sigma=(1.2,))
    with pytest.raises(StructureError):
        StructureSpec(0, 0, 1, fixed_profiles=())
    with pytest.raises(StructureError):
        StructureSpec(-1, 1)


def test_structure_round_trip_and_from_model():
    spec = StructureSpec.from_model(demo_model())
    assert (spec.n_vb, spec.n_td, spec.n_fix) == (4, 1, 1)
    assert spec.sigma == (1.0, 0.98, 0.95, 0.9)
    again = StructureSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert again == spec


def test_fixed_profile_length_checked_against_data():
    spec = StructureSpec(0, 0, 1, fixed_profiles=((1.0, 2.0, 3.0),))
    ds = Dataset(2, [[1.0, 0.0]], [[1.0, 2.0]])
    with pytest.raises(StructureError):
        identify(ds, spec)


# -- noise-free identification --------------------------------------------------


def test_demo_noise_free_identification():
    m = demo_model()
    ds = generate(m, sample_prices(50, 2, 7), seed=7)
    r = identify(ds, StructureSpec.from_model(m))
    assert r.status == "optimal"
    assert 0.0 <= r.f_value <= 1e-6
    assert r.certificate.is_optimum
    assert r.audit and r.audit[-1]["n_binding"] == 0
    for b in r.theta_hat.batteries:
        assert np.all(b.p_min <= b.p_max) and np.all(b.e_min <= b.e_max)
    doc = json.loads(json.dumps(r.to_json()))
    assert doc["f_value"]["l1"] == r.f_value
    assert FlexModel.from_json(doc["theta_hat"]).T == 2


def test_fixed_load_only_gives_singleton():
    m = FlexModel(2, fixed_loads=[FixedLoadParams([1.5, -0.5])])
    ds = generate(m, sample_prices(6, 2, 3), seed=3)
    r = identify(ds, StructureSpec.from_model(m))
    assert r.f_value == 0.0
    assert r.certificate.is_optimum
    assert len(aggregate_polygon(r.theta_hat).vertices) == 1


def test_fixed_load_with_noise_scores_mean_deviation():
    m = FlexModel(2, fixed_loads=[FixedLoadParams([1.0, 1.0])])
    ds = generate(m, sample_prices(8, 2, 4), NoiseSpec.additive(0.01 * np.eye(2)), seed=4)
    r = identify(ds, StructureSpec.from_model(m))
    expected = np.mean(np.abs(ds.powers - 1.0).sum(axis=1))
    assert r.f_value == pytest.approx(expected, abs=1e-12)
    assert not r.certificate.is_optimum


@pytest.mark.parametrize("seed", range(6))
def test_random_truth_recovered_noise_free(seed):
    rng = np.random.default_rng(seed)
    truth = random_flex_model(rng, n_vb=1 + seed % 2, n_td=1)
    ds = generate(truth, sample_prices(int(rng.integers(3, 12)), 2, seed), seed=seed)
    r = identify(ds, StructureSpec.from_model(truth), time_limit=10)
    assert r.f_value <= 1e-7
    assert r.certificate.is_optimum


def test_three_period_truth_recovered():
    rng = np.random.default_rng(11)
    truth = random_flex_model(rng, n_vb=1, n_td=1, T=3)
    ds = generate(truth, sample_prices(8, 3, 11), seed=11)
    r = identify(ds, StructureSpec.from_model(truth), time_limit=10)
    assert r.f_value <= 1e-7
    assert r.certificate.is_optimum


# -- exactness on tiny instances --------------------------------------------------


GRID = np.linspace(-1.5, 1.5, 13)


def grid_minimum(ds):
    best = np.inf
    for pl, pu, el, eu in itertools.product(GRID[GRID <= 0], GRID[GRID >= 0],
                                            GRID[GRID <= 0], GRID[GRID >= 0]):
        best = min(best, evaluate_loss(one_battery(pl, pu, el, eu), ds, tie_break="optimistic"))
    return best


def test_grid_truth_noise_free_matches_grid_minimum():
    truth = one_battery(-0.75, 1.0, -0.5, 1.25)
    ds = generate(truth, sample_prices(3, 2, 5), seed=5)
    r = identify(ds, StructureSpec.from_model(truth))
    assert grid_minimum(ds) == pytest.approx(0.0, abs=1e-12)
    assert r.f_value <= 1e-9


@pytest.mark.parametrize("seed", [0, 1])
def test_noisy_tiny_instance_at_most_grid_minimum(seed):
    truth = one_battery(-1.0, 1.0, -1.0, 1.0)
    ds = generate(truth, sample_prices(3, 2, seed), NoiseSpec.additive(0.05 ** 2 * np.eye(2)),
                  seed=seed)
    r = identify(ds, StructureSpec.from_model(truth), max_nodes=20000, time_limit=120)
    assert r.status == "optimal"
    g = grid_minimum(ds)
    # the grid is a subset of the feasible parameters, one step is 0.25
    assert r.f_value <= g + 1e-9
    assert g - r.f_value <= 0.25
    # exact optimum: random perturbations of the fitted bounds never do better
    rng = np.random.default_rng(seed)
    base = r.theta_hat.batteries[0]
    for _ in range(60):
        d = rng.normal(scale=0.05, size=(4, 2))
        lo_p, hi_p = base.p_min + d[0], base.p_max + d[1]
        lo_e, hi_e = base.e_min + d[2], base.e_max + d[3]
        if np.any(lo_p > hi_p) or np.any(lo_e > hi_e):
            continue
        cand = FlexModel(2, [BatteryParams(lo_p, hi_p, lo_e, hi_e, 0.0, 1.0)])
        try:
            loss = evaluate_loss(cand, ds, tie_break="optimistic")
        except ValueError:
            continue
        assert loss >= r.f_value - 1e-9
    assert evaluate_loss(r.theta_hat, ds, tie_break="optimistic") == pytest.approx(r.f_value, abs=1e-9)


def test_true_parameters_give_feasible_kkt_point():
    from pflid.identification import _kkt_point, _optimistic_loss

    rng = np.random.default_rng(2)
    truth = random_flex_model(rng, n_vb=2, n_td=1)
    ds = generate(truth, sample_prices(5, 2, 2), seed=2)
    lay = _layout(StructureSpec.from_model(truth), 2)
    theta = lay.theta_of(truth)
    loss, fits = _optimistic_loss(lay, theta, ds)
    assert loss <= 1e-12
    kkt = build_kkt(lay, ds, 50.0)
    x = _kkt_point(kkt, lay, theta, fits, ds)
    assert kkt.milp.lp.violation(x) <= 1e-9
    assert kkt.milp.lp.c @ x <= 1e-12


def test_small_big_m_is_escalated():
    m = demo_model()
    ds = generate(m, sample_prices(10, 2, 1), seed=1)
    r = identify(ds, StructureSpec.from_model(m), big_m=0.05)
    ms = [a["big_m"] for a in r.audit]
    assert len(ms) >= 2
    assert all(b == 2 * a for a, b in zip(ms, ms[1:]))
    assert r.f_value <= 1e-6


# -- equivalence of zero misfit and the certificate ---------------------------------


def structures_for(truth):
    spec = StructureSpec.from_model(truth)
    out = [spec]
    if spec.n_vb:
        out.append(StructureSpec(spec.n_vb - 1, spec.n_td, spec.n_fix, spec.sigma[:-1],
                                 spec.e0[:-1], spec.fixed_profiles))
    return out


def test_zero_misfit_iff_certificate_on_25_instances():
    count = 0
    seen = {True: 0, False: 0}
    for seed in itertools.count():
        rng = np.random.default_rng(100 + seed)
        truth = random_flex_model(rng, n_vb=1 + seed % 2, n_td=1)
        ds = generate(truth, sample_prices(int(rng.integers(3, 7)), 2, seed), seed=seed)
        for spec in structures_for(truth):
            r = identify(ds, spec, max_nodes=300, time_limit=3)
            zero = r.f_value <= 1e-7
            assert zero == r.certificate.is_optimum, (seed, spec, r.f_value, r.certificate)
            seen[zero] += 1
            count += 1
            if count == 25:
                break
        if count == 25:
            break
    assert seen[True] >= 10 and seen[False] >= 3


@pytest.mark.parametrize("seed", range(4))
def test_shrunk_and_inflated_candidates_fail_with_labels(seed):
    rng = np.random.default_rng(seed)
    truth = random_flex_model(rng, n_vb=1, n_td=1)
    ds = generate(truth, sample_prices(12, 2, seed), seed=seed)
    g = build_geometry(ds)
    V = g.conv.vertices
    c = V.mean(axis=0)
    assert certify_candidate(g.conv, g).is_optimum
    assert certify_candidate(VPolytope(c + 0.9 * (V - c)), g).failure == "not_superset_conv"
    assert certify_candidate(VPolytope(c + 1.1 * (V - c)), g).failure == "not_subset_pi"
    assert certify_candidate(truth, g).is_optimum
    td = truth.td_loads[0]
    w = td.p_max - td.p_min
    wide = FlexModel(2, truth.batteries, [TdLoadParams(td.p_min - 0.2, td.p_max + 0.2)],
                     truth.fixed_loads)
    narrow = FlexModel(2, truth.batteries, [TdLoadParams(td.p_min + 0.1 * w, td.p_max - 0.1 * w)],
                       truth.fixed_loads)
    assert certify_candidate(wide, g).failure == "not_subset_pi"
    assert certify_candidate(narrow, g).failure == "not_superset_conv"


# -- monotonicity in the number of batteries ---------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_adding_battery_never_increases_misfit(seed):
    m = demo_model()
    full = StructureSpec.from_model(m)
    ds = generate(m, sample_prices(5, 2, seed), NoiseSpec.additive(0.01 ** 2 * np.eye(2)),
                  seed=seed)
    prev, f_prev = None, np.inf
    for nb in range(0, 5):
        spec = StructureSpec(nb, 1, 1, full.sigma[:nb], full.e0[:nb], full.fixed_profiles)
        r = identify(ds, spec, warm_start=prev, max_nodes=200, time_limit=2)
        assert r.f_value <= f_prev + 1e-7
        prev, f_prev = r.theta_hat, r.f_value


def test_zero_width_padding_keeps_loss():
    m = demo_model()
    ds = generate(m, sample_prices(8, 2, 9), seed=9)
    small = FlexModel(2, m.batteries[:2], m.td_loads, m.fixed_loads)
    base = evaluate_loss(small, ds, tie_break="optimistic")
    full = StructureSpec.from_model(m)
    spec = StructureSpec(3, 1, 1, full.sigma[:3], full.e0[:3], full.fixed_profiles)
    r = identify(ds, spec, warm_start=small, max_nodes=50, time_limit=2)
    assert r.f_value <= base + 1e-9


# -- loss evaluation ---------------------------------------------------------------


def test_loss_zero_on_own_data_and_positive_on_wrong_model():
    m = demo_model()
    ds = generate(m, sample_prices(30, 2, 2), seed=2)
    assert evaluate_loss(m, ds) <= 1e-9
    assert evaluate_loss(m, ds, "l2") <= 1e-9
    assert evaluate_loss(m, ds, tie_break="optimistic") <= 1e-9
    wrong = FlexModel(2, m.batteries[1:], m.td_loads, m.fixed_loads)
    assert evaluate_loss(wrong, ds) > 1e-3


def test_loss_norms_on_known_offsets():
    m = FlexModel(2, fixed_loads=[FixedLoadParams([0.0, 0.0])])
    ds = Dataset(2, [[1.0, 0.0], [0.0, 1.0]], [[0.3, -0.4], [0.0, 0.2]])
    assert evaluate_loss(m, ds, "l1") == pytest.approx((0.7 + 0.2) / 2)
    assert evaluate_loss(m, ds, "l2") == pytest.approx((0.25 + 0.04) / 2)


def test_optimistic_loss_never_exceeds_lexicographic():
    m = FlexModel(2, td_loads=[TdLoadParams([0.0, 0.0], [1.0, 1.0])])
    # price (1, 0) leaves the second period free: lexicographic picks 0, data says 0.5
    ds = Dataset(2, [[1.0, 0.0]], [[0.0, 0.5]])
    assert evaluate_loss(m, ds) == pytest.approx(0.5)
    assert evaluate_loss(m, ds, tie_break="optimistic") == pytest.approx(0.0, abs=1e-12)


def test_loss_argument_checks():
    m = demo_model()
    ds = Dataset(2, [[1.0, 0.0]], [[0.0, 0.0]])
    with pytest.raises(InputError):
        evaluate_loss(m, ds, "linf")
    with pytest.raises(InputError):
        identify(ds, StructureSpec.from_model(m), norm="l2")


# -- canonical solutions -------------------------------------------------------------


def test_canonical_minimum_always_certified():
    m = demo_model()
    out = canonical_solutions(generate(m, sample_prices(15, 2, 4), seed=4))
    assert out["omega_min_certificate"].is_optimum


def test_canonical_maximum_with_axis_prices():
    m = demo_model()
    prices = np.vstack([np.eye(2), -np.eye(2), sample_prices(10, 2, 8)])
    out = canonical_solutions(generate(m, prices, seed=8))
    assert out["omega_max"] is not None
    assert out["omega_max_certificate"].is_optimum


def test_canonical_single_sample():
    ds = Dataset(2, [[0.6, 0.8]], [[1.0, 2.0]])
    out = canonical_solutions(ds)
    assert len(out["omega_min"].vertices) == 1
    assert out["omega_min_certificate"].is_optimum
    assert out["omega_max"] is None


def test_time_limit_bounds_the_whole_call():
    # noisy data makes the heuristic descent expensive; the budget must cover it too
    m = demo_model()
    ds = generate(m, sample_prices(50, 2, 7), NoiseSpec.paper_multiplicative(), seed=7)
    t0 = time.monotonic()
    r = identify(ds, StructureSpec.from_model(m), time_limit=4, max_nodes=50)
    elapsed = time.monotonic() - t0
    # one LP pivot loop or certificate may overrun the deadline slightly
    assert elapsed <= 4 + 4
    assert r.status == "budget_exceeded"
    assert 0.0 <= r.bound <= r.f_value
    assert "seconds" not in r.to_json()["solver"]
