"""Reference forecasters used to judge the model."""
from __future__ import annotations

import numpy as np


def persistence(dataset):
    """Repeat the last observed value over the horizon: (n, tau, N, 1)."""
    last = dataset.last_values()
    return np.repeat(last[:, None, :, None], dataset.tau, axis=1)


class StationLinearRegression:
    """Per-station, per-horizon least squares on the station's own input lags.

    A small ridge term keeps the normal equations well conditioned.
    """

    def __init__(self, ridge=1e-3):
        self.ridge = ridge
        self.coef = None  # (N, T + 1, tau)

    def fit(self, dataset):
        X = dataset.X[..., 0]  # (n, T, N)
        Y = dataset.Y[..., 0]  # (n, tau, N)
        n, T, N = X.shape
        self.coef = np.empty((N, T + 1, Y.shape[1]))
        for j in range(N):
            A = np.concatenate([X[:, :, j], np.ones((n, 1))], axis=1)
            G = A.T @ A + self.ridge * np.eye(T + 1)
            self.coef[j] = np.linalg.solve(G, A.T @ Y[:, :, j])
        return self

    def predict(self, dataset):
        X = dataset.X[..., 0]
        n, T, N = X.shape
        A = np.concatenate([X, np.ones((n, 1, N))], axis=1)  # (n, T+1, N)
        out = np.einsum("ktj,jth->khj", A, self.coef)
        return out[..., None]
