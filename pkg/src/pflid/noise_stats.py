"""Monte Carlo checks of how Gaussian power noise enters the l2 identification loss.

At the true model the fitted responses equal the noise-free ones, so the
per-trial loss is ``mean_k |e_k|^2``: its expectation is ``tr(Sigma_p)`` (plus
``mu^T mu`` for biased noise) and ``xi = loss - tr(Sigma_p) - mu^T mu`` has
variance at most ``M_b / K`` with
``M_b = T * sum_i (3 s_i^4 + 6 s_i^2 mu_i^2 + mu_i^4)``, ``s_i^2 = Sigma_ii``.
The cross term between fit error and noise has variance at most
``4 / K * M_a^2 * 1^T Sigma_p 1`` where ``M_a`` bounds the fit error; it
vanishes at the true model.

Trial ``j`` draws its noise for all samples from the stream
``(seed, "trace-noise", j)``: sample ``k`` uses normals ``k*T .. k*T+T-1``,
so smaller K values see prefixes of the same draws.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import NoiseSpec, generate, sample_prices
from .flex_model import FlexModel, aggregate_polygon, contains_point, respond
from .polyhedra import InputError, convex_hull_2d, vpolytope_membership
from .rng import Stream

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class XiStats:
    K: int
    trials: int
    mean_xi: float
    var_xi: float
    mean_loss_l2: float
    var_loss: float
    trace_sigma_p: float
    gap: float
    sigma_a_sq_bound: float
    sigma_b_sq_bound: float

    def to_json(self) -> dict:
        return asdict(self)


def _check_cov(cov, T: int) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape == (1, 1) and T > 1:
        cov = cov[0, 0] * np.eye(T)
    if cov.shape != (T, T):
        raise InputError(f"covariance of shape {cov.shape} for T={T}")
    try:
        NoiseSpec("additive", cov_p=cov)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return cov


def m_b(cov: np.ndarray, mu: np.ndarray) -> float:
    s2 = np.diag(cov)
    return float(len(s2) * np.sum(3 * s2 ** 2 + 6 * s2 * mu ** 2 + mu ** 4))


def _noise(seed: int, trial: int, K: int, L: np.ndarray, mu: np.ndarray) -> np.ndarray:
    T = L.shape[0]
    z = Stream(seed, "trace-noise", trial).normals(K * T).reshape(K, T)
    return z @ L.T + mu


def _responses(model: FlexModel, prices: np.ndarray) -> np.ndarray:
    return np.array([respond(model, lam).p_star for lam in prices])


def run_trace_experiment(model: FlexModel, cov_p, K_list, trials: int, seed: int,
                         mu_p=None) -> list:
    """Moments of the l2 loss at the true model for each sample count in ``K_list``.

    Prices are one seeded draw of ``max(K_list)`` samples; smaller K use
    its prefix. The model is evaluated once per price, and every trial scores
    the noisy measurements ``P* + e`` against those fitted responses.
    """
    T = model.T
    cov = _check_cov(cov_p, T)
    mu = np.zeros(T) if mu_p is None else np.asarray(mu_p, dtype=float).reshape(T)
    K_list = [int(k) for k in K_list]
    if not K_list or min(K_list) < 1 or trials < 1:
        raise InputError("need positive sample counts and at least one trial")
    Kmax = max(K_list)
    prices = sample_prices(Kmax, T, seed)
    truth = _responses(model, prices)
    fitted = truth  # the true model's own responses
    L = NoiseSpec("additive", cov_p=cov).factor(T)
    tr = float(np.trace(cov))
    shift = float(mu @ mu)
    mb = m_b(cov, mu)
    ones = np.ones(T)
    per_trial = np.empty((trials, Kmax))
    for j in range(trials):
        measured = truth + _noise(seed, j, Kmax, L, mu)
        per_trial[j] = np.sum((measured - fitted) ** 2, axis=1)
    m_a = float(np.max(np.abs(truth - fitted)))
    out = []
    for K in K_list:
        loss = per_trial[:, :K].mean(axis=1)
        xi = loss - tr - shift
        var_xi = float(np.var(xi, ddof=1)) if trials > 1 else 0.0
        out.append(XiStats(
            K=K, trials=trials, mean_xi=float(np.mean(xi)), var_xi=var_xi,
            mean_loss_l2=float(np.mean(loss)), var_loss=var_xi, trace_sigma_p=tr,
            gap=float(np.mean(loss)) - tr,
            sigma_a_sq_bound=4.0 / K * m_a ** 2 * float(ones @ cov @ ones),
            sigma_b_sq_bound=mb / K))
    return out


def stats_csv(stats: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["K", "trials", "mean_loss", "trace", "gap", "var", "sigma_a_sq_bound",
                "sigma_b_sq_bound"])
    for s in stats:
        w.writerow([s.K, s.trials, repr(s.mean_loss_l2), repr(s.trace_sigma_p), repr(s.gap),
                    repr(s.var_loss), repr(s.sigma_a_sq_bound), repr(s.sigma_b_sq_bound)])
    return buf.getvalue()


def _in_region(model: FlexModel, P, polygon) -> bool:
    if polygon is not None:
        return vpolytope_membership(P, polygon)[0]
    return contains_point(model, P)


def bias_probe(model: FlexModel, mu_p, K: int, seed: int, cov_p=None, trials: int = 1) -> dict:
    """Loss drift under biased noise and how many noisy samples leave the true region.

    The expected l2 loss at the true model is ``tr(Sigma_p) + mu^T mu``; the
    report gives the observed mean loss and its deviation from that value.
    """
    T = model.T
    cov = np.zeros((T, T)) if cov_p is None else _check_cov(cov_p, T)
    mu = np.asarray(mu_p, dtype=float).reshape(T)
    stats = run_trace_experiment(model, cov, [K], trials, seed, mu)[0]
    expected = float(np.trace(cov) + mu @ mu)
    prices = sample_prices(K, T, seed)
    truth = _responses(model, prices)
    measured = truth + _noise(seed, 0, K, NoiseSpec("additive", cov_p=cov).factor(T), mu)
    polygon = aggregate_polygon(model) if T == 2 else None
    outside = sum(not _in_region(model, P, polygon) for P in measured)
    report = {
        "schema_version": SCHEMA_VERSION,
        "K": K,
        "trials": trials,
        "mu_p": mu.tolist(),
        "trace_sigma_p": float(np.trace(cov)),
        "mean_loss_l2": stats.mean_loss_l2,
        "expected_loss": expected,
        "drift": stats.mean_loss_l2 - expected,
        "biased": bool(np.any(mu != 0)),
        "samples_outside_true_region": int(outside),
    }
    if T == 2:
        hull = convex_hull_2d(measured)
        report["noisy_hull_vertices_outside"] = int(sum(
            not _in_region(model, v, polygon) for v in hull.vertices))
    return report


def _directions(n: int, T: int, seed: int) -> np.ndarray:
    if T == 2:
        a = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(a), np.sin(a)])
    return sample_prices(n, T, seed)


def noise_cover_report(model: FlexModel, K: int = 50, seed: int = 0,
                       noise: NoiseSpec | None = None, n_directions: int = 100) -> dict:
    """Compare the hulls of noisy and noise-free responses direction by direction.

    Both datasets use the same prices; ``h(d) = max_P d^T P`` over each hull.
    A direction is covered when the noisy hull reaches at least as far as the
    noise-free one.
    """
    noise = NoiseSpec.paper_multiplicative() if noise is None else noise
    prices = sample_prices(K, model.T, seed)
    clean = generate(model, prices, seed=seed)
    noisy = generate(model, prices, noise, seed=seed)
    D = _directions(n_directions, model.T, seed)
    h_un = (clean.powers @ D.T).max(axis=0)
    h_de = (noisy.powers @ D.T).max(axis=0)
    covered = h_de >= h_un - 1e-12
    rows = [{"direction": d.tolist(), "support_noisy": float(a), "support_clean": float(b),
             "covered": bool(c)} for d, a, b, c in zip(D, h_de, h_un, covered)]
    return {
        "schema_version": SCHEMA_VERSION,
        "K": K,
        "seed": seed,
        "noise": noise.to_json(),
        "n_directions": n_directions,
        "covered_fraction": float(np.mean(covered)),
        "max_shortfall": float(np.max(h_un - h_de)),
        "directions": rows,
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1) + "\n"
