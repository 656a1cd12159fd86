"""The bundled T = 2 demonstration instance and its experiment recipes.

One fixed load, one time-decoupled load and four batteries with retention
1.0, 0.98, 0.95 and 0.9. The parameters are this package's own choice (see
the README table); they are pinned in ``assets/demo_model.json``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .flex_model import FlexModel, validate

DEMO_MODEL_FILE = "demo_model.json"
DEMO_VERSION = 1


@dataclass(frozen=True, eq=False)
class DemoInstance:
    model: FlexModel
    seed: int
    version: int = DEMO_VERSION
    recipes: dict = field(default_factory=dict)


def demo_model() -> FlexModel:
    text = resources.files("pflid").joinpath("assets", DEMO_MODEL_FILE).read_text(encoding="utf-8")
    return FlexModel.from_json(json.loads(text))


def recipes(seed: int) -> dict:
    """CLI argument lists reproducing the standard experiments with ``seed``."""
    s = str(seed)
    fig1 = []
    for K in (20, 50, 200):
        fig1.append(["gen", "--model", "{model}", "--samples", str(K), "--noise", "none",
                     "--seed", s, "--out", f"demo_K{K}.json"])
        fig1.append(["plot", f"demo_K{K}.json", "--out", f"demo_K{K}.svg"])
    return {
        "fig1": fig1,
        "identify": [
            ["gen", "--model", "{model}", "--samples", "50", "--noise", "none", "--seed", s,
             "--out", "demo_K50.json"],
            ["identify", "demo_K50.json", "--structure", "{structure}", "--out", "ident.json"],
            ["plot", "demo_K50.json", "--ident", "ident.json", "--out", "ident.svg"],
        ],
        "noise": [
            ["noise", "--model", "{model}", "--sigma", "0.02", "--Ks", "100,1000,5000",
             "--trials", "20", "--seed", s],
            ["cover", "--model", "{model}", "--samples", "50", "--seed", s, "--out", "cover.json"],
        ],
        "probe": [
            ["gen", "--model", "{model}", "--samples", "10", "--noise", "none", "--seed", s,
             "--out", "demo_K10.json"],
            ["probe", "demo_K10.json", "--oracle", "{model}", "--budget", "60",
             "--out", "trace.json"],
        ],
    }


def make_demo(seed: int = 7) -> DemoInstance:
    model = demo_model()
    validate(model)
    return DemoInstance(model, int(seed), DEMO_VERSION, recipes(seed))
