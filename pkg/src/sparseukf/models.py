"""Benchmark dynamics, discretization and the joint state/coefficient model.

Discrete models evaluate vectorized: the state argument may be a single
vector (n,) or a batch of column vectors (n, k), which is what the sigma-point
machinery feeds them. Control input u is always scalar here.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .library import DimensionMismatch, FunctionLibrary

__all__ = [
    "GRAVITY",
    "DUFFING_PARAMS",
    "GOLF_PARAMS",
    "DiscreteModel",
    "PartialModel",
    "Benchmark",
    "first_state_observation",
    "duffing_derivative",
    "golf_derivative",
    "golf_friction_torque",
    "duffing_benchmark",
    "golf_benchmark",
    "benchmark_by_name",
    "euler_discretize",
    "euler_discretize_slot",
    "rk4_step",
    "make_joint_model",
]

GRAVITY = 9.81

# Duffing restoring/damping parameters (p1, p2, p3).
DUFFING_PARAMS = (-1.0, 3.0, 0.1)

# Golf-robot stand-ins (m, a, d, J, r, mu): mass kg, lever m, viscous N*m*s,
# inertia kg*m^2, friction radius m, friction coefficient. The published
# values live in companion work, so these are plausible small-arm magnitudes
# and fully overridable through the experiment config.
GOLF_PARAMS = (0.5, 0.15, 0.01, 0.0125, 0.01, 0.1)


@dataclass(frozen=True)
class DiscreteModel:
    """Deterministic discrete-time model x_{k+1} = f(x_k, u_k), y_k = h(x_k, u_k)."""

    n_x: int
    m: int
    transition: Callable
    observation: Callable


@dataclass(frozen=True)
class PartialModel:
    """Discrete model with a scalar slot for the unmodeled dynamics.

    ``transition(x, u, g)`` injects g where the missing term would act, so a
    perfect g reproduces the complete model.
    """

    n_x: int
    m: int
    transition: Callable
    observation: Callable


def first_state_observation(x, u=0.0):
    """y = x1 for both benchmarks; ignores any appended coefficient block."""
    return x[:1]


# --- continuous benchmark dynamics -------------------------------------------


def duffing_derivative(x, u, p=DUFFING_PARAMS):
    """Duffing oscillator xdot = (x2, -p3 x2 - p1 x1 - p2 x1^3 + u)."""
    p1, p2, p3 = p
    return np.stack([x[1], -p3 * x[1] - p1 * x[0] - p2 * x[0] ** 3 + u])


def golf_friction_torque(x, p=GOLF_PARAMS):
    """Velocity-dependent friction torque of the golf-robot arm."""
    m, a, d, _, r, mu = p
    load = np.abs(m * x[1] ** 2 * a + m * GRAVITY * np.cos(x[0]))
    return d * x[1] + 2.0 * r * mu * np.arctan(1e3 * x[1]) / np.pi * load


def golf_derivative(x, u, p=GOLF_PARAMS):
    """Golf-robot arm xdot with gravity, friction torque and geared input."""
    m, a, _, inertia, _, _ = p
    torque = -m * GRAVITY * a * np.sin(x[0]) - golf_friction_torque(x, p) + 4.0 * u
    return np.stack([x[1], torque / inertia])


@dataclass(frozen=True)
class Benchmark:
    """A continuous benchmark plus its deliberately incomplete variant.

    ``slot_derivative(x, u, g)`` is the incomplete dynamics with the scalar g
    injected exactly where the removed term acted, and ``true_g`` is the
    removed expression, so slot_derivative(x, u, true_g(x, u)) equals
    ``complete`` everywhere.
    """

    name: str
    n_x: int
    params: tuple
    complete: Callable
    incomplete: Callable
    slot_derivative: Callable
    true_g: Callable


def duffing_benchmark(p=DUFFING_PARAMS):
    """Duffing benchmark treating the cubic stiffness term as unknown."""
    p1, p2, p3 = p

    def complete(x, u):
        return duffing_derivative(x, u, p)

    def slot(x, u, g):
        return np.stack([x[1], -p3 * x[1] - p1 * x[0] - g + u])

    def incomplete(x, u):
        return slot(x, u, 0.0)

    def true_g(x, u):
        return p2 * x[0] ** 3

    return Benchmark("duffing", 2, tuple(p), complete, incomplete, slot, true_g)


def golf_benchmark(p=GOLF_PARAMS):
    """Golf-robot benchmark treating the whole friction torque as unknown."""
    m, a, _, inertia, _, _ = p

    def complete(x, u):
        return golf_derivative(x, u, p)

    def slot(x, u, g):
        torque = -m * GRAVITY * a * np.sin(x[0]) - g + 4.0 * u
        return np.stack([x[1], torque / inertia])

    def incomplete(x, u):
        return slot(x, u, 0.0)

    def true_g(x, u):
        return golf_friction_torque(x, p)

    return Benchmark("golf", 2, tuple(p), complete, incomplete, slot, true_g)


_BENCHMARKS = {"duffing": duffing_benchmark, "golf": golf_benchmark}


def benchmark_by_name(name, params=None):
    try:
        factory = _BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; available: {sorted(_BENCHMARKS)}") from None
    return factory() if params is None else factory(tuple(params))


# --- discretization -----------------------------------------------------------


def euler_discretize(derivative, dt):
    """Explicit-Euler transition x + dt * f(x, u)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    def transition(x, u):
        return x + dt * derivative(x, u)

    return transition


def euler_discretize_slot(slot_derivative, dt):
    """Explicit-Euler transition for dynamics with a scalar g slot."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    def transition(x, u, g):
        return x + dt * slot_derivative(x, u, g)

    return transition


def rk4_step(derivative, x, u, dt):
    """One classical Runge-Kutta 4 step with u held constant over the step."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    k1 = derivative(x, u)
    k2 = derivative(x + 0.5 * dt * k1, u)
    k3 = derivative(x + 0.5 * dt * k2, u)
    k4 = derivative(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# --- joint model --------------------------------------------------------------


def make_joint_model(partial: PartialModel, library: FunctionLibrary) -> DiscreteModel:
    """Augment a partial model with stationary library coefficients.

    The joint state is (x, theta); the transition feeds g = theta . Psi(x, u)
    into the partial model's slot and carries theta through unchanged. The
    observation only sees the x block.
    """
    if library.n_x != partial.n_x:
        raise DimensionMismatch(
            f"library is built for n_x={library.n_x}, model has n_x={partial.n_x}"
        )
    n_x = partial.n_x
    n = n_x + library.n_theta

    def transition(z, u):
        if z.shape[0] != n:
            raise DimensionMismatch(f"joint state has {z.shape[0]} rows, expected {n}")
        x, theta = z[:n_x], z[n_x:]
        g = (theta * library.evaluate(x, u)).sum(axis=0)
        return np.concatenate([partial.transition(x, u, g), theta], axis=0)

    def observation(z, u):
        return partial.observation(z[:n_x], u)

    return DiscreteModel(n_x=n, m=partial.m, transition=transition, observation=observation)
