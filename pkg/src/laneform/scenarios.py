"""Built-in presets for the three corridor examples.

Each preset is a raw config dict so it goes through the same strict loader,
dotted overrides and sweeps as a user-supplied JSON file.
"""
from __future__ import annotations

import copy

SCENARIO_I = {
    "params": {"h": 0.3, "gamma0": 0.1, "gamma1": 0.2, "gamma2": 0.2, "alpha": 0.0},
    "grid": {"Lx": 1.0, "Ly": 0.1, "Nx": 100, "Ny": 10},
    "initial": {"kind": "sinusoidal", "c_r": 0.4, "c_b": 0.4, "amplitude": 0.02},
    "T_end": 5.0,
    "solver": {"scheme": "explicit", "variant": "reduced-sym"},
    "output": {"every": 0.25},
}

SCENARIO_II = {
    "params": {"h": 0.1, "gamma0": 0.001, "gamma1": 0.5, "gamma2": 0.4, "alpha": 0.2},
    "grid": {"Lx": 1.0, "Ly": 0.1, "Nx": 100, "Ny": 10},
    "initial": {"kind": "sinusoidal", "c_r": 0.4, "c_b": 0.4, "amplitude": 0.02},
    "T_end": 100.0,
    "solver": {"scheme": "explicit", "variant": "dodge-scaled"},
    "output": {"every": 2.0},
}

# Example II coefficients with weaker lateral diffusion and a nearly full corridor.
JAM_MASS = 0.495
SCENARIO_III = copy.deepcopy(SCENARIO_II)
SCENARIO_III["params"]["gamma0"] = 1e-4
SCENARIO_III["initial"].update(c_r=JAM_MASS, c_b=JAM_MASS)

PRESETS = {"I": SCENARIO_I, "II": SCENARIO_II, "III": SCENARIO_III}


def preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(PRESETS)}") from None
