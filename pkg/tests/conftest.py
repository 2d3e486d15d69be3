"""Shared helpers for the test suite: slope fits and a Kalman oracle."""

import numpy as np
import pytest


def fit_slope(deltas, values):
    """Least-squares slope of log2(values) against log2(deltas)."""
    x = np.log2(np.asarray(deltas, dtype=float))
    y = np.log2(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def kalman_filter(F, Q, H, R, m0, P0, observations):
    """Exact linear-Gaussian filter; returns per-step posterior means and covs.

    All arguments are matrices/vectors of consistent shapes; observations is
    (T, dim_y).
    """
    F, Q, H, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (F, Q, H, R))
    m = np.atleast_1d(np.asarray(m0, dtype=float)).copy()
    P = np.atleast_2d(np.asarray(P0, dtype=float)).copy()
    means, covs = [], []
    for y in np.atleast_2d(observations):
        m = F @ m
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        m = m + K @ (np.atleast_1d(y) - H @ m)
        P = P - K @ H @ P
        means.append(m.copy())
        covs.append(P.copy())
    return np.array(means), np.array(covs)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
