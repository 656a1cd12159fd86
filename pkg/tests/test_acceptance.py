"""End-to-end acceptance checks, one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line (printed in the terminal summary) and
then asserts it, including the runtime budget.
"""
import itertools
import json
import time

import numpy as np

from instances import (
    milp_by_enumeration, pi_instance, random_flex_model, random_lp, random_milp, random_polygon,
)
from pflid.cli import main
from pflid.dataset import Dataset, NoiseSpec, generate, sample_prices
from pflid.demo_assets import demo_model
from pflid.flex_model import FlexModel, TdLoadParams
from pflid.identifiability import (
    ConsistencyError, build_geometry, certify_candidate, clipped_pi_vertices, delta_omega_empty,
)
from pflid.identification import StructureSpec, identify
from pflid.noise_stats import dumps, noise_cover_report, run_trace_experiment
from pflid.polyhedra import (
    HPolyhedron, VPolytope, polygon_area, support_value, vpolytope_membership,
)
from pflid.probing import ProbeOutcome, probe_until_identified, vertex_oracle
from pflid.solver import brute_force_lp, solve_lp, solve_milp

DEMO_SEED = 7


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def test_criterion_01_solver_matches_oracles(acceptance):
    t0 = time.monotonic()
    lp_bad = []
    for seed in range(200):
        p = random_lp(np.random.default_rng(seed))
        assert p.n <= 6 and p.m <= 12
        ours, ref = solve_lp(p), brute_force_lp(p)
        if ours.status != ref.status or (ref.optimal and not close(ours.objective, ref.objective, 1e-7)):
            lp_bad.append(seed)
    milp_bad = []
    for seed in range(100):
        p = random_milp(np.random.default_rng(5000 + seed))
        assert len(p.binaries) <= 10
        ours, ref = solve_milp(p), milp_by_enumeration(p)
        if (ref is None) != (ours.status == "infeasible") or (
                ref is not None and not close(ours.objective, ref, 1e-7)):
            milp_bad.append(seed)
    dt = time.monotonic() - t0
    acceptance(1, not lp_bad and not milp_bad and dt <= 60,
               f"LP mismatches {len(lp_bad)}/200, MILP mismatches {len(milp_bad)}/100", dt)


def test_criterion_02_hull_inside_pi(acceptance):
    m = demo_model()
    worst_sample, worst_vertex = np.inf, np.inf
    for seed in range(25):
        K = 10 + 2 * seed
        g = build_geometry(generate(m, sample_prices(K, 2, seed), seed=seed))
        worst_sample = min(worst_sample, float(np.min(g.Lambda @ g.Gamma.T - g.Xi[:, None])))
        for v in g.conv.vertices:
            worst_vertex = min(worst_vertex, float(np.min(g.pi.slack(v))))
    acceptance(2, worst_sample >= -1e-9 and worst_vertex >= -1e-9,
               f"min slack over samples {worst_sample:.3e}, over hull vertices {worst_vertex:.3e}")


def test_criterion_03_nested_prefixes(acceptance):
    t0 = time.monotonic()
    m = demo_model()
    full = generate(m, sample_prices(200, 2, DEMO_SEED), seed=DEMO_SEED)
    clip = (np.array([-3.0, -4.0]), np.array([8.0, 9.0]))
    box = HPolyhedron.box(*clip)
    geoms = [build_geometry(full.prefix(K)) for K in (20, 50, 200)]
    conv_areas = [polygon_area(g.conv.vertices) for g in geoms]
    pi_areas = [polygon_area(clipped_pi_vertices(g, clip)) for g in geoms]
    nested = True
    dirs = sample_prices(100, 2, 99)
    for g1, g2 in zip(geoms, geoms[1:]):
        nested &= all(vpolytope_membership(v, g2.conv)[0] for v in g1.conv.vertices)
        p1, p2 = g1.pi.intersect(box), g2.pi.intersect(box)
        nested &= all(support_value(p2, d) >= support_value(p1, d) - 1e-9 for d in dirs)
        nested &= all(support_value(g2.pi, d) >= support_value(g1.pi, d) - 1e-9 for d in dirs)
    nonempty = not delta_omega_empty(geoms[-1]).contained
    ok = (conv_areas == sorted(conv_areas) and pi_areas == sorted(pi_areas, reverse=True)
          and nested and nonempty)
    dt = time.monotonic() - t0
    acceptance(3, ok and dt <= 30,
               "conv areas " + ", ".join(f"{a:.4f}" for a in conv_areas)
               + "; clipped pi areas " + ", ".join(f"{a:.4f}" for a in pi_areas)
               + f"; nested {nested}; undetermined region nonempty at K=200 {nonempty}", dt)


def test_criterion_04_containment_methods_agree(acceptance):
    t0 = time.monotonic()
    disagreements, verdicts = 0, {True: 0, False: 0}
    for seed in range(100):
        rng = np.random.default_rng(seed)
        L, R, _ = pi_instance(rng, contained=seed % 2 == 0)
        ds = Dataset(2, L, R)
        assert 5 <= ds.K <= 40
        g = build_geometry(ds)
        try:
            v = delta_omega_empty(g, "both")
            verdicts[v.contained] += 1
        except ConsistencyError:
            disagreements += 1
    dt = time.monotonic() - t0
    acceptance(4, disagreements == 0 and dt <= 300,
               f"{disagreements} disagreements on 100 instances "
               f"({verdicts[True]} empty, {verdicts[False]} nonempty)", dt)


def test_criterion_05_noise_free_identification(acceptance):
    t0 = time.monotonic()
    m = demo_model()
    ds = generate(m, sample_prices(50, 2, DEMO_SEED), seed=DEMO_SEED)
    r = identify(ds, StructureSpec.from_model(m))
    dt = time.monotonic() - t0
    acceptance(5, r.f_value <= 1e-6 and r.certificate.is_optimum and dt <= 120,
               f"K=50 f={r.f_value:.3e} status {r.status} certificate "
               f"{'pass' if r.certificate.is_optimum else r.certificate.failure}", dt)


def _structures(truth: FlexModel):
    spec = StructureSpec.from_model(truth)
    out = [spec]
    if spec.n_vb > 1:
        out.append(StructureSpec(spec.n_vb - 1, spec.n_td, spec.n_fix, spec.sigma[:-1],
                                 spec.e0[:-1], spec.fixed_profiles))
    else:
        out.append(StructureSpec(0, spec.n_td, spec.n_fix, (), (), spec.fixed_profiles))
    return out


def test_criterion_06_zero_misfit_iff_certificate(acceptance):
    t0 = time.monotonic()
    mismatches, seen = 0, {True: 0, False: 0}
    count = 0
    for seed in itertools.count():
        rng = np.random.default_rng(300 + seed)
        truth = random_flex_model(rng, n_vb=1 + seed % 2, n_td=1)
        ds = generate(truth, sample_prices(int(rng.integers(3, 8)), 2, seed), seed=seed)
        for spec in _structures(truth):
            if count == 25:
                break
            r = identify(ds, spec, max_nodes=300, time_limit=10)
            zero = r.f_value <= 1e-7
            mismatches += zero != r.certificate.is_optimum
            seen[zero] += 1
            count += 1
        if count == 25:
            break
    labels_ok = True
    for seed in range(5):
        rng = np.random.default_rng(seed)
        truth = random_flex_model(rng, n_vb=1, n_td=1)
        g = build_geometry(generate(truth, sample_prices(12, 2, seed), seed=seed))
        V = g.conv.vertices
        c = V.mean(axis=0)
        td = truth.td_loads[0]
        w = td.p_max - td.p_min
        wide = FlexModel(2, truth.batteries, [TdLoadParams(td.p_min - 0.2, td.p_max + 0.2)],
                         truth.fixed_loads)
        narrow = FlexModel(2, truth.batteries,
                           [TdLoadParams(td.p_min + 0.1 * w, td.p_max - 0.1 * w)],
                           truth.fixed_loads)
        labels_ok &= certify_candidate(VPolytope(c + 0.9 * (V - c)), g).failure == "not_superset_conv"
        labels_ok &= certify_candidate(VPolytope(c + 1.1 * (V - c)), g).failure == "not_subset_pi"
        labels_ok &= certify_candidate(narrow, g).failure == "not_superset_conv"
        labels_ok &= certify_candidate(wide, g).failure == "not_subset_pi"
    dt = time.monotonic() - t0
    acceptance(6, mismatches == 0 and labels_ok and seen[True] > 0 and seen[False] > 0,
               f"{count} instances, {mismatches} mismatches ({seen[True]} zero, "
               f"{seen[False]} positive); shrunk/inflated labels correct {labels_ok}", dt)


def test_criterion_07_probing_converges(acceptance):
    t0 = time.monotonic()
    failures, max_probes, n_probes = [], 0, 0
    for seed in range(20):
        rng = np.random.default_rng(700 + seed)
        V = random_polygon(rng, int(rng.integers(3, 9)))
        oracle = vertex_oracle(V)
        prices = sample_prices(10, 2, seed)
        ds = Dataset(2, prices, np.array([oracle(lam) for lam in prices]))
        run = probe_until_identified(ds, oracle, budget=50)
        g = build_geometry(run.dataset)
        ok = run.status == "identified" and delta_omega_empty(g).contained
        for e in run.trace:
            if e["kind"] != "probe":
                continue
            n_probes += 1
            lam, target, resp = (np.array(e[k]) for k in ("lambda", "target", "response"))
            ok &= e["margin"] > 1e-8
            if e["outcome"] == ProbeOutcome.VERTEX_CONFIRMED.value:
                ok &= bool(np.allclose(resp, target, atol=1e-6))
            else:
                ok &= bool(lam @ target < lam @ resp - 1e-9)
        max_probes = max(max_probes, run.probes)
        if not ok:
            failures.append(seed)
    dt = time.monotonic() - t0
    acceptance(7, not failures and dt <= 60,
               f"20 polytopes, failures {failures}, most probes {max_probes}, "
               f"{n_probes} designed probes checked", dt)


def test_criterion_08_loss_converges_to_trace(acceptance):
    t0 = time.monotonic()
    m = demo_model()
    sigma2 = 0.02 ** 2
    s = run_trace_experiment(m, sigma2 * np.eye(2), [5000], 20, DEMO_SEED)[0]
    rel = abs(s.mean_loss_l2 - s.trace_sigma_p) / s.trace_sigma_p
    envelope = 2 * (s.sigma_a_sq_bound + s.sigma_b_sq_bound)
    zero = run_trace_experiment(m, np.zeros((2, 2)), [5000], 20, DEMO_SEED)[0]
    dt = time.monotonic() - t0
    acceptance(8, rel <= 0.05 and s.var_loss <= envelope and zero.mean_loss_l2 == 0.0
               and zero.var_loss == 0.0 and dt <= 120,
               f"relative gap {rel:.4f}, variance {s.var_loss:.3e} <= {envelope:.3e}, "
               f"zero-noise loss {zero.mean_loss_l2}", dt)


def test_criterion_09_noise_cover_report(acceptance):
    m = demo_model()
    a = dumps(noise_cover_report(m, 50, DEMO_SEED, NoiseSpec.paper_multiplicative()))
    b = dumps(noise_cover_report(m, 50, DEMO_SEED, NoiseSpec.paper_multiplicative()))
    doc = json.loads(a)
    acceptance(9, a == b and doc["n_directions"] == 100 and len(doc["directions"]) == 100,
               f"byte-stable {a == b}; covered fraction {doc['covered_fraction']:.2f} "
               f"(reported only), largest shortfall {doc['max_shortfall']:.3e}")


def _cli_outputs(workdir, model, structure):
    """Run every command once in ``workdir``; returns {file: bytes}."""
    w = str(workdir)
    steps = [
        ["demo", "--out", f"{w}/demo"],
        ["gen", "--model", model, "--samples", "50", "--noise", "paper-mult", "--seed", "7",
         "--out", f"{w}/noisy.json"],
        ["gen", "--model", model, "--samples", "50", "--seed", "7", "--out", f"{w}/d50.json"],
        ["gen", "--model", model, "--samples", "10", "--seed", "7", "--out", f"{w}/d10.json"],
        ["gen", "--model", model, "--samples", "20", "--seed", "7", "--format", "csv",
         "--out", f"{w}/d20.csv"],
        ["check", f"{w}/d50.json", "--method", "both", "--out", f"{w}/check.json"],
        ["identify", f"{w}/d50.json", "--structure", structure, "--out", f"{w}/ident.json"],
        ["probe", f"{w}/d10.json", "--oracle", model, "--budget", "60", "--out",
         f"{w}/trace.json", "--dataset-out", f"{w}/probed.json"],
        ["noise", "--model", model, "--sigma", "0.02", "--Ks", "100,1000", "--trials", "5",
         "--format", "csv", "--out", f"{w}/noise.csv"],
        ["cover", "--model", model, "--samples", "50", "--seed", "7", "--out", f"{w}/cover.json"],
        ["plot", f"{w}/d50.json", "--ident", f"{w}/ident.json", "--out", f"{w}/ident.svg"],
        ["plot", f"{w}/probed.json", "--clip", "-3 -4 8 9", "--out", f"{w}/probed.svg"],
    ]
    codes = [main(s) for s in steps]
    files = sorted(p for p in workdir.rglob("*") if p.is_file())
    return codes, {str(p.relative_to(workdir)): p.read_bytes() for p in files}


def test_criterion_10_cli_determinism(acceptance, tmp_path):
    t0 = time.monotonic()
    (tmp_path / "src").mkdir()
    assert main(["demo", "--out", str(tmp_path / "src")]) == 0
    model = str(tmp_path / "src" / "demo_model.json")
    structure = str(tmp_path / "src" / "demo_structure.json")
    runs = []
    for name in ("run1", "run2"):
        (tmp_path / name).mkdir()
        runs.append(_cli_outputs(tmp_path / name, model, structure))
    (codes1, files1), (codes2, files2) = runs
    differing = sorted(k for k in files1 if files1[k] != files2.get(k))
    ok = (codes1 == codes2 and set(files1) == set(files2) and not differing
          and all(c in (0, 3) for c in codes1) and any(k.endswith(".svg") for k in files1))
    dt = time.monotonic() - t0
    acceptance(10, ok, f"{len(files1)} files from {len(codes1)} commands, exit codes {codes1}, "
                       f"differing {differing}", dt)
