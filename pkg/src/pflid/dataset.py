"""Price sampling, noisy forward data generation and dataset files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .flex_model import FlexModel, respond
from .rng import Stream, check_seed

SCHEMA_VERSION = 1

# relative standard deviations from the 3-sigma reading of +-0.5 % meter error
# and +-10 % price error
PAPER_SIGMA_P_REL = 0.005 / 3
PAPER_SIGMA_LAMBDA_REL = 0.10 / 3

NOISE_KINDS = ("none", "additive", "multiplicative")


class DatasetError(ValueError):
    """Malformed dataset file; ``path`` points at the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Measurement-noise model.

    ``additive``: ``P~ = P* + e`` with ``e ~ N(mu_p, cov_p)``.
    ``multiplicative``: ``lam~ = (1 + e_lam) lam`` elementwise, the response is
    taken at ``lam~`` and ``P~ = (1 + e_p) P*(lam~)``. With
    ``record_perturbed_price`` the dataset stores ``lam~``; otherwise the
    nominal ``lam``.
    """

    kind: str = "none"
    cov_p: np.ndarray | None = None
    mu_p: np.ndarray | None = None
    sigma_p_rel: float = 0.0
    sigma_lambda_rel: float = 0.0
    record_perturbed_price: bool = True

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.cov_p is not None:
            cov = np.atleast_2d(np.asarray(self.cov_p, dtype=float))
            if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, atol=1e-12):
                raise ValueError("covariance must be a symmetric square matrix")
            if cov.size and np.min(np.linalg.eigvalsh(cov)) < -1e-12 * max(1.0, np.abs(cov).max()):
                raise ValueError("covariance must be positive semidefinite")
            object.__setattr__(self, "cov_p", cov)
        if self.mu_p is not None:
            object.__setattr__(self, "mu_p", np.asarray(self.mu_p, dtype=float).reshape(-1))
        if self.sigma_p_rel < 0 or self.sigma_lambda_rel < 0:
            raise ValueError("relative noise levels must be nonnegative")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls()

    @classmethod
    def additive(cls, cov_p, mu_p=None) -> "NoiseSpec":
        return cls("additive", cov_p=cov_p, mu_p=mu_p)

    @classmethod
    def paper_multiplicative(cls, **kw) -> "NoiseSpec":
        return cls("multiplicative", sigma_p_rel=PAPER_SIGMA_P_REL,
                   sigma_lambda_rel=PAPER_SIGMA_LAMBDA_REL, **kw)

    def factor(self, T: int) -> np.ndarray:
        """Matrix L with L L^T = cov_p (diagonal square root or eigen factor)."""
        if self.cov_p is None:
            return np.zeros((T, T))
        cov = self.cov_p
        if cov.shape != (T, T):
            raise ValueError(f"covariance of shape {cov.shape} for T={T}")
        if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
            return np.diag(np.sqrt(np.diag(cov)))
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.maximum(w, 0.0))

    def to_json(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == "additive":
            doc["cov_p"] = None if self.cov_p is None else self.cov_p.tolist()
            doc["mu_p"] = None if self.mu_p is None else self.mu_p.tolist()
        if self.kind == "multiplicative":
            doc["sigma_p_rel"] = self.sigma_p_rel
            doc["sigma_lambda_rel"] = self.sigma_lambda_rel
            doc["record_perturbed_price"] = self.record_perturbed_price
        return doc

    @classmethod
    def from_json(cls, doc, path: str = "noise") -> "NoiseSpec":
        if not isinstance(doc, dict):
            raise DatasetError("expected an object", path)
        try:
            return cls(doc.get("kind", "none"), cov_p=doc.get("cov_p"), mu_p=doc.get("mu_p"),
                       sigma_p_rel=float(doc.get("sigma_p_rel", 0.0)),
                       sigma_lambda_rel=float(doc.get("sigma_lambda_rel", 0.0)),
                       record_perturbed_price=bool(doc.get("record_perturbed_price", True)))
        except (TypeError, ValueError) as exc:
            raise DatasetError(str(exc), path) from None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered (price, measured power) pairs; row k is sample k."""

    T: int
    lambdas: np.ndarray
    powers: np.ndarray
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    truth_ref: str | None = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).reshape(-1, self.T)
        pw = np.asarray(self.powers, dtype=float).reshape(-1, self.T)
        if lam.shape != pw.shape:
            raise ValueError("prices and powers differ in sample count")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "powers", pw)
        object.__setattr__(self, "seed", check_seed(self.seed))

    @property
    def K(self) -> int:
        return self.lambdas.shape[0]

    def prefix(self, k: int) -> "Dataset":
        return replace(self, lambdas=self.lambdas[:k], powers=self.powers[:k])

    def append(self, lam, power) -> "Dataset":
        return replace(self, lambdas=np.vstack([self.lambdas, np.reshape(lam, (1, self.T))]),
                       powers=np.vstack([self.powers, np.reshape(power, (1, self.T))]))

    # -- files ---------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "T": self.T,
            "seed": self.seed,
            "truth_ref": self.truth_ref,
            "noise": self.noise.to_json(),
            "samples": [{"lambda": [float(v) for v in lam], "power": [float(v) for v in p]}
                        for lam, p in zip(self.lambdas, self.powers)],
        }

    def dumps(self) -> str:
        # json writes floats with repr, the shortest string that round-trips exactly
        return json.dumps(self.to_json(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k"] + [f"lambda_{t + 1}" for t in range(self.T)]
                   + [f"power_{t + 1}" for t in range(self.T)])
        for k, (lam, p) in enumerate(zip(self.lambdas, self.powers)):
            w.writerow([k] + [repr(float(v)) for v in lam] + [repr(float(v)) for v in p])
        return buf.getvalue()

    @classmethod
    def from_json(cls, doc) -> "Dataset":
        if not isinstance(doc, dict):
            raise DatasetError("expected a JSON object", "$")
        for key in ("T", "seed", "samples"):
            if key not in doc:
                raise DatasetError("missing field", key)
        T = doc["T"]
        if not isinstance(T, int) or T < 1:
            raise DatasetError("must be a positive integer", "T")
        if not isinstance(doc["seed"], int):
            raise DatasetError("must be an integer", "seed")
        samples = doc["samples"]
        if not isinstance(samples, list):
            raise DatasetError("expected a list", "samples")
        lams, pows = [], []
        for k, s in enumerate(samples):
            where = f"samples[{k}]"
            if not isinstance(s, dict):
                raise DatasetError("expected an object", where)
            for key, out in (("lambda", lams), ("power", pows)):
                vec = s.get(key)
                if not isinstance(vec, list) or len(vec) != T:
                    raise DatasetError(f"expected a list of {T} numbers", f"{where}.{key}")
                for t, v in enumerate(vec):
                    if isinstance(v, bool) or not isinstance(v, (int, float)):
                        raise DatasetError("expected a number", f"{where}.{key}[{t}]")
                out.append([float(v) for v in vec])
        noise = NoiseSpec.from_json(doc.get("noise", {"kind": "none"}))
        try:
            return cls(T, np.array(lams).reshape(-1, T), np.array(pows).reshape(-1, T),
                       noise, doc["seed"], doc.get("truth_ref"))
        except ValueError as exc:
            raise DatasetError(str(exc), "seed") from None

    @classmethod
    def loads(cls, text: str) -> "Dataset":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON at line {exc.lineno} column {exc.colno}", "$") from None
        return cls.from_json(doc)

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def model_digest(model: FlexModel) -> str:
    text = json.dumps(model.to_json(), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


def sample_prices(n: int, T: int, seed: int, dist: str = "uniform-sphere") -> np.ndarray:
    """``n`` price vectors, row k drawn from its own substream.

    ``uniform-sphere`` normalises a standard normal T-vector to unit length;
    ``gaussian`` returns the normal vector as is.
    """
    if n < 1:
        raise ValueError("need at least one price sample")
    if T < 1:
        raise ValueError("T must be positive")
    if dist not in ("uniform-sphere", "gaussian"):
        raise ValueError(f"unknown price distribution {dist!r}")
    out = np.empty((n, T))
    for k in range(n):
        z = Stream(seed, "price", k).normals(T)
        if dist == "uniform-sphere":
            norm = np.linalg.norm(z)
            while norm == 0.0:  # practically unreachable
                z = Stream(seed, "price-retry", k).normals(T)
                norm = np.linalg.norm(z)
            z = z / norm
        out[k] = z
    return out


def generate(model: FlexModel, prices, noise: NoiseSpec | None = None, seed: int = 0) -> Dataset:
    """Forward-simulate the model at each price and apply measurement noise.

    Noise for sample k comes from substreams ("noise-p", k) and
    ("noise-lambda", k), independent of the price streams.
    """
    noise = noise or NoiseSpec()
    prices = np.asarray(prices, dtype=float).reshape(-1, model.T)
    T = model.T
    lams = np.empty_like(prices)
    pows = np.empty_like(prices)
    L = noise.factor(T) if noise.kind == "additive" else None
    mu = np.zeros(T) if noise.mu_p is None else noise.mu_p
    for k, lam in enumerate(prices):
        if noise.kind == "multiplicative":
            e_lam = noise.sigma_lambda_rel * Stream(seed, "noise-lambda", k).normals(T)
            lam_used = (1.0 + e_lam) * lam
            p = respond(model, lam_used).p_star
            e_p = noise.sigma_p_rel * Stream(seed, "noise-p", k).normals(T)
            pows[k] = (1.0 + e_p) * p
            lams[k] = lam_used if noise.record_perturbed_price else lam
        else:
            p = respond(model, lam).p_star
            if noise.kind == "additive":
                e = L @ Stream(seed, "noise-p", k).normals(T) + mu
                p = p + e
            pows[k] = p
            lams[k] = lam
    return Dataset(T, lams, pows, noise, seed, model_digest(model))
