"""Sparsity-promoting joint filter.

After the regular measurement correction, the coefficient block of the joint
state is pushed toward a sparse vector by repeatedly filtering a fictitious
observation: the l1 norm of the coefficients, observed as zero with variance
r_pm. The loop runs only while more than the allowed number of coefficients
exceed the sparsity barrier, and a convex blend of the pre- and post-loop
coefficients smooths the switch between candidate terms.
"""

from dataclasses import dataclass

import numpy as np

from .models import DiscreteModel
from .sqrtlinalg import DowndateFailure, NotPositiveDefinite, RankDeficient, SingularFactor
from .squkf import FilterState, SquareRootUKF, UnscentedParams, sigma_points

__all__ = [
    "SparsityConfig",
    "SparsityDiagnostics",
    "pseudo_measurement",
    "make_pseudo_observation",
    "active_count",
    "soft_switch",
    "SparseJointUKF",
]


@dataclass(frozen=True)
class SparsityConfig:
    """Tuning of the pseudo-measurement loop.

    lambda_tilde is the sparsity barrier, n_theta_act the allowed number of
    super-threshold coefficients, max_pseudo_iters the iteration cap N, gamma
    the soft-switch weight on the pre-loop coefficients, r_pm the pseudo
    measurement variance. pseudo_predict=False replaces the printed
    predict+correct pseudo iteration by a correction-only variant that does
    not advance the model clock.
    """

    lambda_tilde: float = 0.1
    n_theta_act: int = 3
    max_pseudo_iters: int = 10
    gamma: float = 0.2
    r_pm: float = 1.0
    pseudo_predict: bool = True

    def __post_init__(self):
        if self.lambda_tilde <= 0:
            raise ValueError(f"lambda_tilde must be positive, got {self.lambda_tilde}")
        if self.n_theta_act < 1:
            raise ValueError(f"n_theta_act must be >= 1, got {self.n_theta_act}")
        if self.max_pseudo_iters < 1:
            raise ValueError(f"max_pseudo_iters must be >= 1, got {self.max_pseudo_iters}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.r_pm <= 0:
            raise ValueError(f"r_pm must be positive, got {self.r_pm}")


@dataclass(frozen=True)
class SparsityDiagnostics:
    """What the pseudo loop did during one filter step."""

    iterations: int
    active_before: int
    active_after: int
    l1_before: float
    l1_after: float
    hit_iteration_cap: bool
    aborted: bool = False


def pseudo_measurement(z, n_x) -> float:
    """l1 norm of the coefficient block of a joint state vector."""
    z = np.asarray(z, dtype=float)
    return float(np.abs(z[n_x:]).sum())


def make_pseudo_observation(n_x):
    """Observation callable reading ||theta||_1 off joint sigma-point columns."""

    def observe(z, u):
        return np.abs(z[n_x:]).sum(axis=0, keepdims=True)

    return observe


def active_count(theta, lambda_tilde) -> int:
    """Number of coefficients with |theta_i| strictly above the barrier."""
    if lambda_tilde <= 0:
        raise ValueError(f"lambda_tilde must be positive, got {lambda_tilde}")
    return int((np.abs(np.asarray(theta, dtype=float)) > lambda_tilde).sum())


def soft_switch(pre: FilterState, pm: FilterState, gamma, n_x) -> FilterState:
    """Blend coefficients after the pseudo loop, keeping the corrected x block.

    The returned state takes its x part from ``pre`` (the regular measurement
    correction), its factor from ``pm``, and coefficients
    (1 - gamma) * theta_pm + gamma * theta_pre.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    if pre.x.shape != pm.x.shape:
        raise ValueError("pre and pm states differ in dimension")
    theta = (1.0 - gamma) * pm.x[n_x:] + gamma * pre.x[n_x:]
    x = np.concatenate([pre.x[:n_x], theta])
    return FilterState(x=x, s=pm.s, k=pre.k)


class SparseJointUKF:
    """Joint square-root UKF with the sparsity-promoting pseudo update.

    Wraps two SquareRootUKF instances over the same joint transition: the
    regular one with the physical observation, and a pseudo one observing
    ||theta||_1 with variance r_pm.

    Parameters
    ----------
    model : DiscreteModel
        Joint model from :func:`sparseukf.models.make_joint_model`.
    n_x : int
        Size of the physical block at the front of the joint state.
    q, r : ndarray
        Joint process covariance and measurement covariance.
    params : UnscentedParams
        Weights for the joint dimension.
    config : SparsityConfig
    """

    def __init__(self, model: DiscreteModel, n_x: int, q, r, params: UnscentedParams,
                 config: SparsityConfig = SparsityConfig()):
        n_theta = model.n_x - n_x
        if n_theta < 1:
            raise ValueError(f"joint model of dim {model.n_x} leaves no coefficient block after n_x={n_x}")
        if config.n_theta_act > n_theta:
            raise ValueError(
                f"n_theta_act={config.n_theta_act} exceeds the {n_theta} library coefficients"
            )
        self.n_x = n_x
        self.n_theta = n_theta
        self.config = config
        self.filter = SquareRootUKF(model, q, r, params)
        pseudo_model = DiscreteModel(
            n_x=model.n_x, m=1, transition=model.transition,
            observation=make_pseudo_observation(n_x),
        )
        self.pseudo_filter = SquareRootUKF(pseudo_model, q, np.array([[config.r_pm]]), params)

    @property
    def params(self):
        return self.filter.params

    def step(self, state: FilterState, u, y):
        """Full J-SQ-UKF iteration: correct, prune, soft-switch.

        Returns the new FilterState and the loop diagnostics.
        """
        corrected = self.filter.step(state, u, y)
        pm_state, diag = self.sparsity_loop(corrected, u)
        final = soft_switch(corrected, pm_state, self.config.gamma, self.n_x)
        return final, diag

    def sparsity_loop(self, state: FilterState, u):
        """Pseudo-measurement iterations on a freshly corrected state.

        Runs full pseudo filter steps while more than n_theta_act
        coefficients exceed the barrier and the iteration budget allows;
        numerical failures abort the loop, returning the last valid iterate.
        """
        cfg = self.config
        theta = state.x[self.n_x :]
        before_count = active_count(theta, cfg.lambda_tilde)
        before_l1 = float(np.abs(theta).sum())

        current = state
        j = 1
        aborted = False
        while (
            active_count(current.x[self.n_x :], cfg.lambda_tilde) > cfg.n_theta_act
            and j < cfg.max_pseudo_iters
        ):
            try:
                current = self._pseudo_step(current, u)
            except (DowndateFailure, NotPositiveDefinite, RankDeficient, SingularFactor):
                aborted = True
                break
            j += 1

        theta = current.x[self.n_x :]
        after_count = active_count(theta, cfg.lambda_tilde)
        diag = SparsityDiagnostics(
            iterations=j - 1,
            active_before=before_count,
            active_after=after_count,
            l1_before=before_l1,
            l1_after=float(np.abs(theta).sum()),
            hit_iteration_cap=not aborted and after_count > cfg.n_theta_act,
            aborted=aborted,
        )
        return current, diag

    def _pseudo_step(self, state: FilterState, u) -> FilterState:
        target = np.zeros(1)
        if self.config.pseudo_predict:
            x_pred, s_pred, sig = self.pseudo_filter.predict(state, u)
        else:
            x_pred, s_pred = state.x, state.s
            sig = sigma_points(state.x, state.s, self.params.eta)
        return self.pseudo_filter.correct(x_pred, s_pred, sig, target, u, k=state.k)
