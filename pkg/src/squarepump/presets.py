"""Named parameter sets.  Frequencies are in units of U unless ``units`` is ``"raw"``."""
from __future__ import annotations

import copy

# idealized limit: U / Delta = 1e6, Gamma_em / Delta = 1e-2, Gamma_l / Gamma_em = 1e-3
_IDEAL = {
    "n_sites": 7, "n_max": 3, "boundary": "periodic",
    "loss_rate": 1e-11, "emission_rate": 1e-8, "emission_width": 1e-6, "emission_span": 40.0,
    "solver": "secular", "window": 4.0,
    "mu": [0.0, 2.5, 30], "J": [0.0, 0.12, 30],
}

PRESETS = {
    "fig1b": {
        "n_sites": 1, "n_max": 6, "boundary": "open",
        "loss_rate": 1e-5, "emission_rate": 3e-4, "emission_width": 1e-2, "emission_span": 40.0,
        "solver": "secular", "window": None,
        "mu": [-0.5, 3.0, 141], "J": [0.0, 0.0, 1],
        "widths": [3.0, 1.0, 0.1, 0.01],
    },
    "fig2": dict(_IDEAL),
    # circuit-QED numbers in units of 2 pi MHz
    "fig3": {
        "units": "raw", "U": 200.0,
        "n_sites": 3, "n_max": 4, "boundary": "periodic",
        "loss_rate": 1e-3, "emission_rate": 30e-3, "emission_width": 0.5, "emission_span": 8000.0,
        "solver": "exact-iterative",
        "mu": [0.0, 2.5, 30], "J": [0.0, 0.12, 30],
    },
    "fig4": dict(_IDEAL, n_sites=5, solver="exact-iterative", window=None,
                 mu=[0.55, 0.55, 1], J=[0.0, 0.1, 41]),
    "fig8": dict(_IDEAL, loss_spectrum_rate=1e-8, loss_spectrum_width=1e-6, loss_span=40.0,
                 loss_anchor="plus"),
    "figC1": dict(_IDEAL, n_sites=4, layout=[0, 1], solver="exact-iterative", window=None,
                  mu=[0.0, 2.5, 26], J=[0.0, 0.12, 13]),
    "figC1-open": dict(_IDEAL, n_sites=4, boundary="open", layout=[0], solver="exact-iterative",
                       window=None, mu=[0.0, 2.5, 26], J=[0.0, 0.12, 13]),
    # modulated single emitter, units of 2 pi MHz
    "fig7": {
        "units": "raw", "U": 200.0,
        "n_max": 5, "loss_rate": 1e-3, "pump_rate": 0.5,
        "sweep_speeds": [7.5, 15.0, 30.0, 50.0],
        "targets": [
            {"n": 1, "mu": 0.5, "span": 0.6},
            {"n": 2, "mu": 1.5, "span": 1.6},
        ],
        # rabi (optional) skips calibration; periods sets the transient horizon
        "periods": 40,
    },
}


def get_preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
