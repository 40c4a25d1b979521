"""Shared bits for the experiment scripts."""

import json
from pathlib import Path

from mslm.harness import DatasetSource
from mslm.synthetic import SyntheticConfig


def synthetic_source(n_train=1000, min_len=6, max_len=12, seed=0, **kw) -> DatasetSource:
    return DatasetSource(synthetic=SyntheticConfig(n_train=n_train, min_len=min_len, max_len=max_len, seed=seed, **kw))


def best_cell(sweep_dir, fallback=(0.5, 0.075)) -> tuple[float, float]:
    """(elm, blm) chosen by a finished sweep, or ``fallback`` if none was run."""
    path = Path(sweep_dir) / "best_cell.json"
    if not path.exists():
        print(f"no {path}; using elm={fallback[0]} blm={fallback[1]}")
        return fallback
    d = json.loads(path.read_text())
    return d["elm"], d["blm"]


def dump(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
