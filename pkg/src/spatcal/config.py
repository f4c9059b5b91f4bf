"""Run configuration: every pipeline knob in one JSON-loadable record.

The effective configuration is echoed into each output directory so any
artifact can be reproduced byte-identically from the echo plus the inputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class RunConfig:
    # basis
    n_basis: int = 25
    basis_seed: int = 0
    # robust regression
    huber_c: float = 1.345
    huber_max_iter: int = 50
    huber_tol: float = 1e-8
    # robust covariance-at-distance estimation
    h_max: float = 24.5
    h_step: float = 0.5
    delta: float = 0.5
    min_pairs: int = 30
    mcd_h_frac: float = 0.75
    mcd_subsets: int = 100
    lambda_min: float = 0.1
    lambda_max: float = 500.0
    # hour filtering
    min_airbox: int = 500
    min_epa: int = 50
    # noise model
    trim: float = 0.10
    min_corr: float = 0.85
    noise_min_hours: int = 50
    # calibration
    calibration_mode: str = "adaptive"
    window_hours: int = 0          # 0 = single window over all hours
    min_anchor_hours: int = 24
    # prediction / evaluation
    sigma_xi2: float = 0.0
    n_reps: int = 20
    explore_radius_km: float = 2.0
    explore_min_neighbors: int = 5
    grid_nx: int = 40
    grid_ny: int = 64
    # execution
    seed: int = 0
    threads: int = 1

    def h_bins(self):
        import numpy as np
        return np.arange(self.h_step, self.h_max + self.h_step / 2, self.h_step)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**doc)


def save_config(path, cfg: RunConfig):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dataclasses.asdict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
