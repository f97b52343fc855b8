"""Integration of the continuous microscopic system with co-evolving weights.

States follow the mean-field interaction drift (1/N) sum_j U(s_i, s_j, w_ij)
plus an optional external force; weights follow dw_ij/dt = V(s_i, s_j, w_ij).
Both right-hand sides carry independent 1/eps prefactors so the fast-network
and fast-state regimes are reachable without reparameterizing time.

Weight symmetry: when the model's V is exchange-symmetric and the initial
weight matrix is symmetric, the weight derivative matrix is built from its
upper triangle and mirrored, which keeps trajectories bitwise symmetric.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IntegrationError, InvariantViolation, ModelError, NullclineNotFound
from .models import PotentialModel, SmoothModel
from .stepping import rkf45_advance

log = logging.getLogger(__name__)

NULLCLINE_TOL = 1e-12


@dataclass
class AgentConfiguration:
    """N agent states plus the N x N weight matrix at time t."""

    states: np.ndarray        # (N, m)
    weights: np.ndarray       # (N, N), zero diagonal
    symmetric: bool = True
    t: float = 0.0

    def __post_init__(self):
        self.states = np.array(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        self.weights = np.array(self.weights, dtype=float)
        N = self.states.shape[0]
        if N < 2:
            raise InvariantViolation("need at least two agents")
        if self.weights.shape != (N, N):
            raise InvariantViolation(f"weights must be ({N}, {N}), got {self.weights.shape}")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.weights))):
            raise InvariantViolation("non-finite entries in configuration")
        if np.any(np.diagonal(self.weights) != 0.0):
            raise InvariantViolation("weight matrix must have zero diagonal")
        if self.symmetric and not np.array_equal(self.weights, self.weights.T):
            raise InvariantViolation("symmetric flag set but weight matrix is not symmetric")

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.states.shape[1]

    def replace(self, states: np.ndarray, weights: np.ndarray, t: float) -> "AgentConfiguration":
        new = object.__new__(AgentConfiguration)
        new.states = states
        new.weights = weights
        new.symmetric = self.symmetric
        new.t = t
        return new


@dataclass
class EnergyReport:
    energy: float
    dissipation: float
    t: float
    dissipation_pairwise: float = 0.0

    def __post_init__(self):
        if self.dissipation < 0:
            raise InvariantViolation("dissipation must be nonnegative")


@dataclass
class MicroTrajectory:
    times: list[float] = field(default_factory=list)
    configs: list[AgentConfiguration] = field(default_factory=list)
    aborted: bool = False
    diagnostic: str | None = None

    def final(self) -> AgentConfiguration:
        return self.configs[-1]


def _pair_grids(states: np.ndarray):
    N, m = states.shape
    si = np.broadcast_to(states[:, None, :], (N, N, m))
    sj = np.broadcast_to(states[None, :, :], (N, N, m))
    return si, sj


def _writable(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a if a.flags.writeable else a.copy()


def micro_rhs(
    cfg: AgentConfiguration,
    model: SmoothModel,
    eps_w: float = 1.0,
    eps_s: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Drift of states and weights.

    ds_i/dt = (1/eps_s) (1/N) sum_{j != i} U(s_i, s_j, w_ij) + U0(s_i)
    dw_ij/dt = (1/eps_w) V(s_i, s_j, w_ij), zero diagonal.
    """
    if not (eps_w > 0 and eps_s > 0):
        raise ModelError("eps_w and eps_s must be positive")
    states, weights = cfg.states, cfg.weights
    N = states.shape[0]
    si, sj = _pair_grids(states)
    U = _writable(model.U(si, sj, weights))
    V = _writable(model.V(si, sj, weights))
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
        raise IntegrationError(f"non-finite force evaluation at t={cfg.t:.6g}")
    idx = np.arange(N)
    U[idx, idx, :] = 0.0
    V[idx, idx] = 0.0
    ds = U.sum(axis=1) / (N * eps_s)
    if model.U0 is not None:
        ds = ds + model.U0(states)
    if cfg.symmetric and model.symmetric_V:
        V = np.triu(V, 1)
        V = V + V.T
    dw = V / eps_w
    return ds, dw


def _check_finite(states, weights, t):
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(weights))):
        raise IntegrationError(f"non-finite state during stepping at t={t:.6g}")


def integrate_micro(
    cfg: AgentConfiguration,
    model: SmoothModel,
    dt: float,
    T: float,
    eps_w: float = 1.0,
    eps_s: float = 1.0,
    method: str = "rk4",
    callback: Callable[[AgentConfiguration], None] | None = None,
    store: bool = True,
) -> MicroTrajectory:
    """Integrate the microscopic system, sampling at multiples of dt.

    method is one of "rk4", "euler" (fixed step) or "rkf45" (adaptive
    substeps between samples, abs/rel tolerances 1e-8/1e-6).  On NaN/Inf the
    trajectory is truncated at the last valid sample and flagged as aborted.
    """
    if dt <= 0:
        raise ModelError("dt must be positive")
    if T < 0:
        raise ModelError("T must be nonnegative")
    if method not in ("rk4", "euler", "rkf45"):
        raise ModelError(f"unknown method {method!r}")
    if cfg.m != model.m:
        raise ModelError(f"configuration dimension m={cfg.m} does not match model m={model.m}")

    sym = cfg.symmetric and model.symmetric_V
    n_steps = int(round(T / dt)) if T > 0 else 0

    traj = MicroTrajectory()

    def record(c: AgentConfiguration):
        if store:
            traj.times.append(c.t)
            traj.configs.append(c)
        else:
            traj.times = [c.t]
            traj.configs = [c]
        if callback is not None:
            callback(c)

    states = cfg.states.copy()
    weights = cfg.weights.copy()
    current = cfg.replace(states, weights, cfg.t)
    record(current)

    N, m = states.shape
    n_state = N * m

    def rhs_flat(y: np.ndarray) -> np.ndarray:
        c = cfg.replace(y[:n_state].reshape(N, m), y[n_state:].reshape(N, N), 0.0)
        ds, dw = micro_rhs(c, model, eps_w=eps_w, eps_s=eps_s)
        return np.concatenate([ds.ravel(), dw.ravel()])

    y = np.concatenate([states.ravel(), weights.ravel()])
    for k in range(1, n_steps + 1):
        t_k = cfg.t + k * dt
        try:
            if method == "rk4":
                k1 = rhs_flat(y)
                k2 = rhs_flat(y + 0.5 * dt * k1)
                k3 = rhs_flat(y + 0.5 * dt * k2)
                k4 = rhs_flat(y + dt * k3)
                y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            elif method == "euler":
                y = y + dt * rhs_flat(y)
            else:
                y = rkf45_advance(rhs_flat, y, dt)
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state during stepping at t={t_k:.6g}")
        except IntegrationError as exc:
            traj.aborted = True
            traj.diagnostic = str(exc)
            log.warning("integration aborted: %s", exc)
            return traj
        new_states = y[:n_state].reshape(N, m).copy()
        new_weights = y[n_state:].reshape(N, N).copy()
        current = cfg.replace(new_states, new_weights, t_k)
        if sym and not np.array_equal(new_weights, new_weights.T):
            raise InvariantViolation("weight symmetry lost during integration")
        record(current)
    return traj


def simulate_diffusive(
    cfg: AgentConfiguration,
    model: SmoothModel,
    dt: float,
    T: float,
    seed: int,
    callback: Callable[[AgentConfiguration], None] | None = None,
    store: bool = True,
) -> MicroTrajectory:
    """Euler-Maruyama for state diffusion with deterministic weight drift.

    States advance by drift*dt + sqrt(2 Q(s_i) dt) xi with xi standard normal
    per component; weights take a deterministic Euler step of V.  Fixed seed
    gives a reproducible path.
    """
    if model.Q is None:
        raise ModelError("simulate_diffusive requires a model with a state diffusion coefficient Q")
    if dt <= 0:
        raise ModelError("dt must be positive")
    rng = np.random.default_rng(seed)
    sym = cfg.symmetric and model.symmetric_V
    n_steps = int(round(T / dt)) if T > 0 else 0

    traj = MicroTrajectory()

    def record(c):
        if store:
            traj.times.append(c.t)
            traj.configs.append(c)
        else:
            traj.times = [c.t]
            traj.configs = [c]
        if callback is not None:
            callback(c)

    states = cfg.states.copy()
    weights = cfg.weights.copy()
    record(cfg.replace(states.copy(), weights.copy(), cfg.t))
    N, m = states.shape
    for k in range(1, n_steps + 1):
        c = cfg.replace(states, weights, cfg.t + (k - 1) * dt)
        ds, dw = micro_rhs(c, model, eps_w=1.0, eps_s=1.0)
        q = np.asarray(model.Q(states), dtype=float)
        xi = rng.standard_normal(size=(N, m))
        states = states + ds * dt + np.sqrt(2.0 * q * dt)[:, None] * xi
        weights = weights + dw * dt
        if sym:
            weights = np.triu(weights, 1)
            weights = weights + weights.T
        t_k = cfg.t + k * dt
        _check_finite(states, weights, t_k)
        record(cfg.replace(states.copy(), weights.copy(), t_k))
    return traj


def energy_report(cfg: AgentConfiguration, pot: PotentialModel) -> EnergyReport:
    """Energy and dissipation of a configuration under a pair potential.

    energy = (1/2N) sum_{i != j} F(s_i, s_j, w_ij).  The dissipation is the
    velocity-consistent form: with the gradient-flow velocities
    ds_i/dt = -(1/N) sum_j grad_s F and dw_ij/dt = -c d_w F,

        dissipation = sum_i |(1/N) sum_{j != i} grad_s F(s_i, s_j, w_ij)|^2
                      + (c / 2N) sum_{i != j} (d_w F(s_i, s_j, w_ij))^2

    which makes dE/dt = -dissipation an exact identity along trajectories.
    ``dissipation_pairwise`` reports the alternative non-averaged form
    sum_{i != j} (|grad_s F|^2 + c (d_w F)^2).
    """
    if cfg.m != pot.m:
        raise ModelError("configuration and potential dimensions differ")
    states, weights = cfg.states, cfg.weights
    N = states.shape[0]
    si, sj = _pair_grids(states)
    F = _writable(pot.F(si, sj, weights))
    gs = _writable(pot.eval_grad_s(si, sj, weights))
    dw = _writable(pot.eval_d_w(si, sj, weights))
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(gs)) and np.all(np.isfinite(dw))):
        raise IntegrationError("non-finite potential evaluation in energy report")
    idx = np.arange(N)
    F[idx, idx] = 0.0
    gs[idx, idx, :] = 0.0
    dw[idx, idx] = 0.0
    energy = float(F.sum()) / (2.0 * N)
    mean_grad = gs.sum(axis=1) / N                      # (N, m)
    state_term = float(np.sum(mean_grad * mean_grad))
    weight_sq = float(np.sum(dw * dw))
    dissipation = state_term + pot.c * weight_sq / (2.0 * N)
    pairwise = float(np.sum(gs * gs)) + pot.c * weight_sq
    return EnergyReport(energy=energy, dissipation=dissipation, t=cfg.t,
                        dissipation_pairwise=pairwise)


def _nullcline_array(model: SmoothModel, si: np.ndarray, sj: np.ndarray,
                     max_bracket: float = 1e6) -> np.ndarray:
    """Roots of w -> V(s, sigma, w) for broadcast state grids, elementwise."""
    shape = np.broadcast_shapes(si.shape[:-1], sj.shape[:-1])

    def V_at(w):
        return np.asarray(model.V(si, sj, w), dtype=float)

    bound = 1.0
    lo = np.full(shape, -1.0)
    hi = np.full(shape, 1.0)
    flo = V_at(lo)
    fhi = V_at(hi)
    unbracketed = np.sign(flo) == np.sign(fhi)
    while np.any(unbracketed) and bound < max_bracket:
        bound *= 4.0
        lo = np.where(unbracketed, -bound, lo)
        hi = np.where(unbracketed, bound, hi)
        flo = np.where(unbracketed, V_at(lo), flo)
        fhi = np.where(unbracketed, V_at(hi), fhi)
        unbracketed = np.sign(flo) == np.sign(fhi)
    if np.any(unbracketed & (flo != 0.0) & (fhi != 0.0)):
        raise NullclineNotFound(
            f"V has no sign change in |w| <= {max_bracket:g} for some state pair")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fm = V_at(mid)
        take_lo = np.sign(fm) == np.sign(flo)
        lo = np.where(take_lo, mid, lo)
        flo = np.where(take_lo, fm, flo)
        hi = np.where(take_lo, hi, mid)
    w = 0.5 * (lo + hi)
    # Newton polish with a small central-difference slope.
    h = 1e-7
    for _ in range(3):
        f = V_at(w)
        slope = (V_at(w + h) - V_at(w - h)) / (2.0 * h)
        step = np.where(slope != 0.0, f / np.where(slope == 0.0, 1.0, slope), 0.0)
        w = w - np.clip(step, -1.0, 1.0)
    resid = np.abs(V_at(w))
    if np.any(resid > NULLCLINE_TOL):
        raise NullclineNotFound(
            f"nullcline residual {float(resid.max()):.3e} above {NULLCLINE_TOL:g}")
    return w


def solve_weight_nullcline(model: SmoothModel, s, sigma) -> float:
    """Solve V(s, sigma, w) = 0 for w by bracketing, bisection and Newton polish."""
    si = np.asarray(s, dtype=float).reshape(1, model.m)
    sj = np.asarray(sigma, dtype=float).reshape(1, model.m)
    return float(_nullcline_array(model, si, sj)[0])


@dataclass
class StateTrajectory:
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)

    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate_reduced(
    states: np.ndarray,
    model: SmoothModel,
    dt: float,
    T: float,
) -> StateTrajectory:
    """Integrate the instantaneous-network-formation limit.

    Each pair's weight is slaved to the nullcline w = omega(s_i, s_j) and the
    states follow ds_i/dt = (1/N) sum_{j != i} U(s_i, s_j, omega(s_i, s_j)).
    """
    if dt <= 0:
        raise ModelError("dt must be positive")
    states = np.array(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    N, m = states.shape
    idx = np.arange(N)

    def rhs(flat: np.ndarray) -> np.ndarray:
        s = flat.reshape(N, m)
        si, sj = _pair_grids(s)
        omega = _nullcline_array(model, si, sj)
        U = _writable(model.U(si, sj, omega))
        U[idx, idx, :] = 0.0
        return (U.sum(axis=1) / N).ravel()

    traj = StateTrajectory(times=[0.0], states=[states.copy()])
    n_steps = int(round(T / dt)) if T > 0 else 0
    y = states.ravel()
    for k in range(1, n_steps + 1):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state in reduced dynamics at step {k}")
        traj.times.append(k * dt)
        traj.states.append(y.reshape(N, m).copy())
    return traj
