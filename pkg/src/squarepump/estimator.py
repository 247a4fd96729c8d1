"""scikit-learn style front end: map (mu/U, J/U) rows to steady-state observables."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .observables import CSV_COLUMNS
from .sweep import SweepConfig, _solve_column

OUTPUT_COLUMNS = CSV_COLUMNS[2:]


class SteadyStateEstimator(TransformerMixin, BaseEstimator):
    """Driven-dissipative steady state as a transformer.

    ``transform`` takes an ``(n, 2)`` array of ``(mu/U, J/U)`` and returns the
    observables ``n_ph, x_bec, delta_n, entropy, fidelity, pi0, overlap, t_eff``
    (NaN where undefined or where the solve failed).  ``predict`` returns
    ``n_ph`` alone.  There is nothing to learn; ``fit`` only validates the
    configuration.

    Parameters
    ----------
    preset : str
        Named parameter set the configuration starts from.
    overrides : dict, optional
        Extra configuration keys, e.g. ``{"n_sites": 3, "solver": "exact"}``.
    """

    def __init__(self, preset: str = "fig2", overrides: Optional[dict] = None):
        self.preset = preset
        self.overrides = overrides

    def fit(self, X=None, y=None):
        self.config_ = SweepConfig.from_preset(self.preset, **(self.overrides or {}))
        self.n_features_in_ = 2
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns (mu/U, J/U), got {X.shape[1]}")
        out = np.full((len(X), len(OUTPUT_COLUMNS)), np.nan)
        for J in np.unique(X[:, 1]):
            idx = np.nonzero(X[:, 1] == J)[0]
            rows = _solve_column([self.config_], float(J), X[idx, 0])[0]
            for i, row in zip(idx, rows):
                out[i] = [np.nan if row[c] is None else row[c] for c in OUTPUT_COLUMNS]
        return out

    def predict(self, X) -> np.ndarray:
        return self.transform(X)[:, 0]

    def get_feature_names_out(self, input_features=None):
        return np.asarray(OUTPUT_COLUMNS, dtype=object)
