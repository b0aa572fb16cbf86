"""Square-root unscented Kalman filter.

The filter propagates a lower-triangular factor S with P = S @ S.T instead of
the covariance itself: the predicted factor comes from a QR triangularization
of weighted sigma deviations stacked with the process-noise square root, and
mean-point/measurement contributions enter through rank-1 Cholesky updates.
With the customary small alpha the mean-point weight is strongly negative, so
those updates are downdates; an indefinite downdate is recovered by clamping
the reconstructed covariance to the nearest positive-definite matrix.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import block_diag

from .models import DiscreteModel
from .sqrtlinalg import (
    DowndateFailure,
    cholesky,
    chol_rank1_update,
    qr_triangularize,
    triangular_solve,
)

__all__ = [
    "InvalidParams",
    "UnscentedParams",
    "FilterState",
    "NoiseSpec",
    "compute_weights",
    "sigma_points",
    "initial_state",
    "nearest_spd_factor",
    "default_noise",
    "SquareRootUKF",
]

# Eigenvalue floor used when an indefinite downdate forces a re-factorization.
SPD_FLOOR = 1e-11

# Online-estimation noise defaults: process 1e-6 on states, 1e-4 on library
# coefficients, measurement 1e-4.
DEFAULT_QX_VAR = 1e-6
DEFAULT_QTHETA_VAR = 1e-4
DEFAULT_R_VAR = 1e-4


class InvalidParams(ValueError):
    """Unscented-transform parameters outside their valid range."""


@dataclass(frozen=True)
class UnscentedParams:
    """Scaled unscented-transform parameters and the derived weights.

    ``mode`` selects the symmetric-weight denominator: "standard" uses
    1/(2(n + lam)) so the mean weights sum to one; "paper" keeps the
    1/(2(n + kappa)) variant, whose weights do not normalize when
    lam != kappa.
    """

    alpha: float
    beta: float
    kappa: float
    dim: int
    mode: str
    lam: float
    eta: float
    wm: np.ndarray
    wc: np.ndarray

    @property
    def n_points(self):
        return 2 * self.dim + 1


def compute_weights(alpha, beta, kappa, dim, mode="standard") -> UnscentedParams:
    """Build the 2*dim+1 mean/covariance weight vectors."""
    if mode not in ("standard", "paper"):
        raise ValueError(f"mode must be 'standard' or 'paper', got {mode!r}")
    if dim < 1:
        raise InvalidParams(f"state dimension must be >= 1, got {dim}")
    if not 0.0 < alpha <= 1.0:
        raise InvalidParams(f"alpha must be in (0, 1], got {alpha}")

    lam = alpha**2 * (dim + kappa) - dim
    if dim + lam <= 0.0:
        raise InvalidParams(f"dim + lambda = {dim + lam:.3e} <= 0, eta would be imaginary")
    eta = np.sqrt(dim + lam)

    w0m = lam / (lam + dim)
    w0c = w0m + 1.0 - alpha**2 + beta
    wi = 1.0 / (2.0 * (dim + lam)) if mode == "standard" else 1.0 / (2.0 * (dim + kappa))

    wm = np.full(2 * dim + 1, wi)
    wc = np.full(2 * dim + 1, wi)
    wm[0] = w0m
    wc[0] = w0c
    return UnscentedParams(alpha, beta, kappa, dim, mode, lam, eta, wm, wc)


def sigma_points(x, s, eta) -> np.ndarray:
    """Columns [x, x + eta*S, x - eta*S]; column 0 is the mean point."""
    x = np.asarray(x, dtype=float)
    spread = eta * np.asarray(s, dtype=float)
    return np.hstack([x[:, np.newaxis], x[:, np.newaxis] + spread, x[:, np.newaxis] - spread])


@dataclass(frozen=True)
class FilterState:
    """Estimate mean, square-root covariance factor and step index."""

    x: np.ndarray
    s: np.ndarray
    k: int = 0

    @property
    def cov(self):
        return self.s @ self.s.T


def initial_state(x0, p0) -> FilterState:
    """FilterState at k=0 with S0 = chol(P0)."""
    x0 = np.asarray(x0, dtype=float)
    return FilterState(x=x0, s=cholesky(p0), k=0)


@dataclass(frozen=True)
class NoiseSpec:
    """Process noise blocks and measurement noise for a (possibly joint) model."""

    q_x: np.ndarray
    r: np.ndarray
    q_theta: Optional[np.ndarray] = None

    @property
    def q_joint(self):
        if self.q_theta is None or self.q_theta.size == 0:
            return np.asarray(self.q_x, dtype=float)
        return block_diag(self.q_x, self.q_theta)


def default_noise(n_x, n_theta=0, m=1) -> NoiseSpec:
    """Diagonal NoiseSpec with the online-estimation default variances."""
    q_theta = DEFAULT_QTHETA_VAR * np.eye(n_theta) if n_theta else None
    return NoiseSpec(
        q_x=DEFAULT_QX_VAR * np.eye(n_x),
        r=DEFAULT_R_VAR * np.eye(m),
        q_theta=q_theta,
    )


def nearest_spd_factor(p, floor=SPD_FLOOR):
    """Cholesky factor of the eigenvalue-clamped symmetric part of p."""
    sym = 0.5 * (p + p.T)
    vals, vecs = np.linalg.eigh(sym)
    rebuilt = (vecs * np.maximum(vals, floor)) @ vecs.T
    return cholesky(0.5 * (rebuilt + rebuilt.T))


def _sqrt_psd(mat, name):
    """Lower Cholesky factor, admitting the exactly-zero matrix."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    if not mat.any():
        return np.zeros_like(mat)
    return cholesky(mat)


class SquareRootUKF:
    """Square-root UKF bound to one model and one constant noise pair.

    The instance is a reusable configuration object: noise square roots are
    factored once at construction and estimation state flows through
    ``FilterState`` values, so independent instances can run in parallel.

    Parameters
    ----------
    model : DiscreteModel
        Transition/observation pair; both must evaluate columnwise on
        (n, 2n+1) sigma-point batches.
    q : ndarray
        Process covariance matching the model dimension.
    r : ndarray
        Measurement covariance (m x m).
    params : UnscentedParams
        Weights from :func:`compute_weights` with dim == model.n_x.
    """

    def __init__(self, model: DiscreteModel, q, r, params: UnscentedParams):
        if params.dim != model.n_x:
            raise ValueError(f"params.dim={params.dim} does not match model.n_x={model.n_x}")
        q = np.asarray(q, dtype=float)
        r = np.asarray(r, dtype=float)
        if q.shape != (model.n_x, model.n_x):
            raise ValueError(f"q has shape {q.shape}, expected {(model.n_x, model.n_x)}")
        if r.shape != (model.m, model.m):
            raise ValueError(f"r has shape {r.shape}, expected {(model.m, model.m)}")
        self.model = model
        self.params = params
        self.q = q
        self.r = r
        self._sqrt_q = _sqrt_psd(q, "q")
        self._sqrt_r = _sqrt_psd(r, "r")
        self.downdate_recoveries = 0

    def predict(self, state: FilterState, u):
        """Propagate sigma points through the transition.

        Returns (predicted mean, predicted factor, propagated sigma points).
        """
        w = self.params
        sig = sigma_points(state.x, state.s, w.eta)
        prop = np.asarray(self.model.transition(sig, u), dtype=float)
        x_pred = prop @ w.wm
        dev = prop[:, 1:] - x_pred[:, np.newaxis]
        s_pred = qr_triangularize(np.vstack([np.sqrt(w.wc[1]) * dev.T, self._sqrt_q.T]))
        s_pred = self._rank1_with_recovery(s_pred, prop[:, 0] - x_pred, w.wc[0])
        return x_pred, s_pred, prop

    def correct(self, x_pred, s_pred, sigma_pred, y, u, k=0) -> FilterState:
        """Measurement update of a predicted mean/factor pair.

        The Kalman gain is formed by two triangular solves against the
        innovation factor, and the posterior factor by downdating with the
        columns of K @ S_y.
        """
        w = self.params
        ysig = np.atleast_2d(np.asarray(self.model.observation(sigma_pred, u), dtype=float))
        y_pred = ysig @ w.wm
        ydev_tail = ysig[:, 1:] - y_pred[:, np.newaxis]
        s_y = qr_triangularize(np.vstack([np.sqrt(w.wc[1]) * ydev_tail.T, self._sqrt_r.T]))
        s_y = self._rank1_with_recovery(s_y, ysig[:, 0] - y_pred, w.wc[0])

        xdev = sigma_pred - x_pred[:, np.newaxis]
        ydev = ysig - y_pred[:, np.newaxis]
        pxy = (xdev * w.wc) @ ydev.T

        half = triangular_solve(s_y, pxy, side="right", transpose=True)
        gain = triangular_solve(s_y, half, side="right", transpose=False)

        innovation = np.atleast_1d(np.asarray(y, dtype=float)) - y_pred
        x_new = x_pred + gain @ innovation

        s_new = s_pred
        u_mat = gain @ s_y
        for j in range(u_mat.shape[1]):
            s_new = self._rank1_with_recovery(s_new, u_mat[:, j], -1.0)
        return FilterState(x=x_new, s=s_new, k=k)

    def step(self, state: FilterState, u, y) -> FilterState:
        """One predict/correct cycle, advancing the step index."""
        x_pred, s_pred, sig = self.predict(state, u)
        return self.correct(x_pred, s_pred, sig, y, u, k=state.k + 1)

    def _rank1_with_recovery(self, s, v, weight):
        try:
            return chol_rank1_update(s, v, weight)
        except DowndateFailure:
            self.downdate_recoveries += 1
            p = s @ s.T + weight * np.outer(v, v)
            return nearest_spd_factor(p)
