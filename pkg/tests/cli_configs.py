"""Small configs for every subcommand, written into a scratch directory."""

import json
from pathlib import Path

import numpy as np
import yaml

from mpvaluation.gaussian import GaussianModel, build_tree, save_model
from mpvaluation.tree import save_tree

IID2 = {"horizon": 2, "aux_dim": 0, "mean": [0.0, 0.0], "cov": [[1.0, 0.0], [0.0, 1.0]]}
REVEALED = {
    "horizon": 2,
    "aux_dim": 1,
    "mean": [0.0] * 4,
    "cov": [[1, 0, 0, 0], [0, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 1]],
}
MEAN_STD = {"kind": "mean_std", "c": 1.0}
COC = {"kind": "coc", "eta": 0.06, "rho": {"kind": "var", "u": 0.005}}


def write_configs(root: Path) -> dict[str, Path]:
    root.mkdir(parents=True, exist_ok=True)
    model = GaussianModel(3, 1, np.zeros(6), np.eye(6) + 0.3)
    save_model(model, root / "model.txt")
    save_tree(build_tree(model, (4, 3, 2), seed=1), root / "tree.csv")
    configs = {
        "value-tree": {"tree": "tree.csv", "schedule": COC},
        "value-gaussian": {"model": {"path": "model.txt"}, "schedule": [MEAN_STD, COC, MEAN_STD], "branching": [6, 5, 4], "seed": 3},
        "simulate": {"portfolio": "default", "exposure": 25, "replications": 40, "seed": 11},
        "converge": {
            "portfolio": "default",
            "exposures": [10, 100, 1000],
            "schedules": {"mean_std": MEAN_STD, "coc": COC},
            "branching": [4, 3, 3],
            "replications": 2,
            "seed": 5,
        },
        "compare-filtrations": {"model_F": IID2, "model_G": REVEALED, "mapping": MEAN_STD},
        "lemma-check": {"c": [0.5, 0.3, 0.2], "step": 0.02},
    }
    paths = {}
    for name, cfg in configs.items():
        p = root / f"{name}.{'json' if name == 'simulate' else 'yaml'}"
        p.write_text(json.dumps(cfg) if p.suffix == ".json" else yaml.safe_dump(cfg))
        paths[name] = p
    return paths
