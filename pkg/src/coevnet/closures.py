"""Macroscopic six-moment ODE systems of the binary minimal model under the
conditional-distribution and Kirkwood pair closures, plus their stationary
families, stability certificates and the small-cross-creation continuation.

State ordering everywhere: (f_pp, g_pp, f_mm, g_mm, f_pm, g_pm), where f is
the linked and g the unlinked mass per ordered state pair; the cross moments
are stored once.  rho_+ = f_pp + g_pp + f_pm + g_pm and rho_- analogously;
the weighted sum f_pp + g_pp + f_mm + g_mm + 2 (f_pm + g_pm) is conserved
identically by both systems.

The conditional-closure right-hand side, with a = flip rates, b = link
creation, c = link removal:

    f_pp' = a_mp f_pm^2 / rho_m - a_pm f_pp f_pm / rho_p + b_pp g_pp - c_pp f_pp
    g_pp' = a_mp g_pm f_pm / rho_m - a_pm g_pp f_pm / rho_p - b_pp g_pp + c_pp f_pp
    f_mm' = a_pm f_pm^2 / rho_p - a_mp f_mm f_pm / rho_m + b_mm g_mm - c_mm f_mm
    g_mm' = a_pm g_pm f_pm / rho_p - a_mp g_mm f_pm / rho_m - b_mm g_mm + c_mm f_mm
    f_pm' = -a_mp f_pm^2 / (2 rho_m) + a_pm f_pp f_pm / (2 rho_p)
            - a_pm f_pm^2 / (2 rho_p) + a_mp f_mm f_pm / (2 rho_m)
            + b_pm g_pm - c_pm f_pm
    g_pm' = -a_mp g_pm f_pm / (2 rho_m) + a_pm g_pp f_pm / (2 rho_p)
            - a_pm g_pm f_pm / (2 rho_p) + a_mp g_mm f_pm / (2 rho_m)
            - b_pm g_pm + c_pm f_pm

The Kirkwood variant multiplies each flip term by h_pp/rho_p^2, h_mm/rho_m^2
or h_pm/(rho_p rho_m) according to the state pair of the passive partner and
the flip-driving third particle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    ConsensusBoundary,
    ContinuationFailed,
    IntegrationError,
    InvariantViolation,
    ModelError,
)
from .models import MinimalParams
from .moments import MinimalMoments

log = logging.getLogger(__name__)

DELTA_CONSENSUS = 1e-10
NEG_CLAMP_TOL = 1e-9


class ClosureKind(str, Enum):
    CONDITIONAL = "conditional"
    KIRKWOOD = "kirkwood"


def _kind_flag(kind) -> int:
    if isinstance(kind, ClosureKind):
        return 1 if kind is ClosureKind.KIRKWOOD else 0
    if kind in ("conditional", "cond"):
        return 0
    if kind in ("kirkwood", "kirk"):
        return 1
    raise ModelError(f"unknown closure kind {kind!r}")


# -- right-hand side (single source, optionally numba-compiled) --------------


def _rhs_arrays_py(y, r, kirk):
    f_pp = y[0]
    g_pp = y[1]
    f_mm = y[2]
    g_mm = y[3]
    f_pm = y[4]
    g_pm = y[5]
    rho_p = f_pp + g_pp + f_pm + g_pm
    rho_m = f_mm + g_mm + f_pm + g_pm
    if kirk == 1:
        h_pp = f_pp + g_pp
        h_mm = f_mm + g_mm
        h_pm = f_pm + g_pm
        kpp = h_pp / (rho_p * rho_p)
        kmm = h_mm / (rho_m * rho_m)
        kpm = h_pm / (rho_p * rho_m)
    else:
        kpp = 1.0
        kmm = 1.0
        kpm = 1.0
    a_pm = r[0]
    a_mp = r[1]
    b_pp = r[2]
    b_mm = r[3]
    b_pm = r[4]
    c_pp = r[5]
    c_mm = r[6]
    c_pm = r[7]

    u = f_pm / rho_m          # cross mass per unit minus density
    v = f_pm / rho_p
    out = np.empty(6)
    out[0] = a_mp * f_pm * u * kpp - a_pm * f_pp * v * kpm + b_pp * g_pp - c_pp * f_pp
    out[1] = a_mp * g_pm * u * kpp - a_pm * g_pp * v * kpm - b_pp * g_pp + c_pp * f_pp
    out[2] = a_pm * f_pm * v * kmm - a_mp * f_mm * u * kpm + b_mm * g_mm - c_mm * f_mm
    out[3] = a_pm * g_pm * v * kmm - a_mp * g_mm * u * kpm - b_mm * g_mm + c_mm * f_mm
    out[4] = (-a_mp * f_pm * u * kpp + a_pm * f_pp * v * kpm
              - a_pm * f_pm * v * kmm + a_mp * f_mm * u * kpm) * 0.5 \
        + b_pm * g_pm - c_pm * f_pm
    out[5] = (-a_mp * g_pm * u * kpp + a_pm * g_pp * v * kpm
              - a_pm * g_pm * v * kmm + a_mp * g_mm * u * kpm) * 0.5 \
        - b_pm * g_pm + c_pm * f_pm
    return out


def _integrate_loop_py(y0, r, kirk, dt, n_steps, stride, delta, neg_tol):
    """Fixed-step RK4 with consensus stop, negativity clamping and striding.

    Returns (records, record_steps, n_records, status, clamp_count, steps_done)
    with status 0 = completed, 1 = consensus boundary, 2 = negativity beyond
    tolerance.
    """
    n_rec_max = n_steps // stride + 1
    recs = np.empty((n_rec_max, 6))
    rec_steps = np.empty(n_rec_max, dtype=np.int64)
    recs[0, :] = y0
    rec_steps[0] = 0
    y = y0.copy()
    n_rec = 1
    clamped = 0
    status = 0
    steps_done = 0
    for step in range(1, n_steps + 1):
        rho_p = y[0] + y[1] + y[4] + y[5]
        rho_m = y[2] + y[3] + y[4] + y[5]
        if rho_p * rho_m <= delta:
            status = 1
            break
        k1 = _rhs_arrays(y, r, kirk)
        k2 = _rhs_arrays(y + (0.5 * dt) * k1, r, kirk)
        k3 = _rhs_arrays(y + (0.5 * dt) * k2, r, kirk)
        k4 = _rhs_arrays(y + dt * k3, r, kirk)
        y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = False
        for i in range(6):
            if not np.isfinite(y_new[i]):
                bad = True
        if bad:
            status = 1
            break
        for i in range(6):
            if y_new[i] < 0.0:
                if y_new[i] < -neg_tol:
                    status = 2
                    bad = True
                else:
                    y_new[i] = 0.0
                    clamped += 1
        if bad:
            break
        y = y_new
        steps_done = step
        if step % stride == 0:
            recs[n_rec, :] = y
            rec_steps[n_rec] = step
            n_rec += 1
    return recs, rec_steps, n_rec, status, clamped, steps_done


try:  # pragma: no cover - exercised implicitly
    from numba import njit

    _rhs_arrays = njit(cache=True)(_rhs_arrays_py)
    _integrate_loop = njit(cache=True)(_integrate_loop_py)
except ImportError:  # pragma: no cover
    _rhs_arrays = _rhs_arrays_py
    _integrate_loop = _integrate_loop_py
    log.warning("numba unavailable: closure integration falls back to pure python")


def closure_rhs_array(y, p: MinimalParams, kind, delta: float = DELTA_CONSENSUS) -> np.ndarray:
    """Six-component derivative for a raw moment vector (no invariant checks)."""
    y = np.asarray(y, dtype=float)
    rho_p = y[0] + y[1] + y[4] + y[5]
    rho_m = y[2] + y[3] + y[4] + y[5]
    if rho_p * rho_m <= delta:
        raise ConsensusBoundary(
            f"rho_+ rho_- = {rho_p * rho_m:.3e} at or below the consensus threshold {delta:g}")
    return _rhs_arrays(y, p.as_array(), _kind_flag(kind))


def closure_rhs(m: MinimalMoments, p: MinimalParams, kind) -> np.ndarray:
    """Derivative of the six moments under the requested pair closure."""
    return closure_rhs_array(m.as_array(), p, kind)


def weight_averaged_rhs(m, p: MinimalParams, kind,
                        rho_override: tuple[float, float] | None = None
                        ) -> tuple[float, float, float]:
    """Closed-form derivatives of (h_pp, h_mm, h_pm).

    Identical to the componentwise sums of the six-moment system; h_pm' is
    built as -(h_pp' + h_mm')/2, the conservation identity.

    ``rho_override`` substitutes external densities for the structural sums
    (rho_+ = h_pp + h_pm, rho_- = h_mm + h_pm).  The mixed stationary
    h-profile for unequal flip rates balances the equations only with the
    densities held as parameters; with equal flip rates the two readings
    coincide.
    """
    if isinstance(m, MinimalMoments):
        f_pm, h_pp, h_mm, h_pm = m.f_pm, m.h_pp, m.h_mm, m.h_pm
        rho_p, rho_m = m.rho_p, m.rho_m
    else:
        y = np.asarray(m, dtype=float)
        f_pm = y[4]
        h_pp, h_mm, h_pm = y[0] + y[1], y[2] + y[3], y[4] + y[5]
        rho_p = y[0] + y[1] + y[4] + y[5]
        rho_m = y[2] + y[3] + y[4] + y[5]
    if rho_override is not None:
        rho_p, rho_m = rho_override
    if rho_p * rho_m <= DELTA_CONSENSUS:
        raise ConsensusBoundary("consensus boundary in weight-averaged equations")
    kirk = _kind_flag(kind) == 1
    if kirk:
        kpp = h_pp / (rho_p * rho_p)
        kmm = h_mm / (rho_m * rho_m)
        kpm = h_pm / (rho_p * rho_m)
    else:
        kpp = kmm = kpm = 1.0
    dh_pp = p.alpha_mp * h_pm * f_pm / rho_m * kpp - p.alpha_pm * h_pp * f_pm / rho_p * kpm
    dh_mm = p.alpha_pm * h_pm * f_pm / rho_p * kmm - p.alpha_mp * h_mm * f_pm / rho_m * kpm
    dh_pm = -0.5 * (dh_pp + dh_mm)
    return dh_pp, dh_mm, dh_pm


# -- trajectories -------------------------------------------------------------


@dataclass
class ClosureTrajectory:
    times: np.ndarray
    moments: np.ndarray                  # (n, 6)
    kind: ClosureKind
    params: MinimalParams
    status: str = "completed"            # or "consensus_boundary"
    clamp_events: int = 0
    kirkwood_artifact: bool = False

    @property
    def rho_p(self) -> np.ndarray:
        y = self.moments
        return y[:, 0] + y[:, 1] + y[:, 4] + y[:, 5]

    @property
    def rho_m(self) -> np.ndarray:
        y = self.moments
        return y[:, 2] + y[:, 3] + y[:, 4] + y[:, 5]

    @property
    def h_pp(self) -> np.ndarray:
        return self.moments[:, 0] + self.moments[:, 1]

    @property
    def h_mm(self) -> np.ndarray:
        return self.moments[:, 2] + self.moments[:, 3]

    @property
    def h_pm(self) -> np.ndarray:
        return self.moments[:, 4] + self.moments[:, 5]

    @property
    def f_pm(self) -> np.ndarray:
        return self.moments[:, 4]

    def moment_at(self, i: int) -> MinimalMoments:
        return MinimalMoments.from_array(self.moments[i])

    def final(self) -> MinimalMoments:
        return self.moment_at(-1)


def integrate_closure(
    m0: MinimalMoments,
    p: MinimalParams,
    kind,
    dt: float,
    T: float,
    sample_stride: int = 1,
    delta_consensus: float = DELTA_CONSENSUS,
) -> ClosureTrajectory:
    """RK4 trajectory of the closure system, sampled every sample_stride steps.

    Stops early (status "consensus_boundary") when rho_+ rho_- falls to the
    consensus threshold; tiny negative undershoots in (-1e-9, 0) are clamped
    to zero and counted, larger ones raise IntegrationError.  Conservation of
    rho_+ + rho_- (and of rho_+ itself for equal flip rates) is asserted on
    every sample.
    """
    if dt <= 0:
        raise ModelError("dt must be positive")
    if T < 0:
        raise ModelError("T must be nonnegative")
    if sample_stride < 1:
        raise ModelError("sample_stride must be >= 1")
    y0 = m0.as_array()
    rho_p0 = m0.rho_p
    if not 0.0 < rho_p0 < 1.0:
        raise ModelError("initial rho_+ must lie in (0, 1)")
    kirk = _kind_flag(kind)
    n_steps = int(round(T / dt)) if T > 0 else 0
    recs, rec_steps, n_rec, status, clamped, steps_done = _integrate_loop(
        y0, p.as_array(), kirk, dt, n_steps, sample_stride,
        delta_consensus, NEG_CLAMP_TOL)
    if status == 2:
        raise IntegrationError(
            "closure integration produced a negative component beyond tolerance "
            f"after {steps_done} steps; reduce dt")
    moments = recs[:n_rec].copy()
    times = rec_steps[:n_rec] * dt
    if clamped:
        log.info("closure integration clamped %d tiny negative components", clamped)

    totals = moments.sum(axis=1) + moments[:, 4] + moments[:, 5]
    if np.max(np.abs(totals - totals[0])) > 1e-9:
        raise InvariantViolation("mass conservation violated along closure trajectory")
    rho_p = moments[:, 0] + moments[:, 1] + moments[:, 4] + moments[:, 5]
    if p.alpha_pm == p.alpha_mp and np.max(np.abs(rho_p - rho_p0)) > 1e-9:
        raise InvariantViolation("rho_+ conservation violated with equal flip rates")

    rho_m = moments[:, 2] + moments[:, 3] + moments[:, 4] + moments[:, 5]
    h_sum = moments[:, 0] + moments[:, 1] + moments[:, 2] + moments[:, 3]
    artifact = bool(np.any((h_sum < 1e-3) & (rho_p * rho_m > 0.1))) if kirk else False
    if artifact:
        log.warning("kirkwood trajectory entered the h_pp + h_mm ~ 0 artifact regime")
    return ClosureTrajectory(
        times=times, moments=moments,
        kind=ClosureKind.KIRKWOOD if kirk else ClosureKind.CONDITIONAL,
        params=p,
        status="consensus_boundary" if status == 1 else "completed",
        clamp_events=int(clamped),
        kirkwood_artifact=artifact,
    )


# -- stationary families ------------------------------------------------------


def stationary_polarized(p: MinimalParams, rho_p: float, g_pm: float) -> MinimalMoments:
    """Polarized stationary family: no cross links, within-state link balance.

    Requires beta_pm = 0; rho_+ in [0, 1] and g_pm in [0, min(rho_+, rho_-)]
    are free parameters.  The within-state masses split as
    f = beta/(beta+gamma) and g = gamma/(beta+gamma) of the available mass.
    """
    if p.beta_pm != 0.0:
        raise ModelError("the polarized stationary family requires beta_pm = 0")
    if not 0.0 <= rho_p <= 1.0:
        raise ModelError("rho_p must lie in [0, 1]")
    rho_m = 1.0 - rho_p
    if not 0.0 <= g_pm <= min(rho_p, rho_m) + 1e-15:
        raise ModelError("g_pm must lie in [0, min(rho_p, 1 - rho_p)]")
    d_p = p.beta_pp + p.gamma_pp
    d_m = p.beta_mm + p.gamma_mm
    if d_p <= 0 or d_m <= 0:
        raise ModelError("beta_pp + gamma_pp and beta_mm + gamma_mm must be positive")
    q_p = (rho_p - g_pm) / d_p
    q_m = (rho_m - g_pm) / d_m
    return MinimalMoments(
        f_pp=p.beta_pp * q_p,
        g_pp=p.gamma_pp * q_p,
        f_mm=p.beta_mm * q_m,
        g_mm=p.gamma_mm * q_m,
        f_pm=0.0,
        g_pm=g_pm,
    )


def stationary_mixed_h(p: MinimalParams, rho_p: float) -> tuple[float, float, float]:
    """Mixed stationary weight-averaged densities (h_pp, h_mm, h_pm).

    h_pp = a_mp^2 rho_p^2 / D^2, h_mm = a_pm^2 rho_m^2 / D^2,
    h_pm = a_mp a_pm rho_p rho_m / D^2 with D = a_mp rho_p + a_pm rho_m;
    for equal flip rates these reduce exactly to (rho_p^2, rho_m^2,
    rho_p rho_m).
    """
    if not (p.alpha_pm > 0 and p.alpha_mp > 0):
        raise ModelError("stationary_mixed_h requires positive flip rates")
    if not 0.0 <= rho_p <= 1.0:
        raise ModelError("rho_p must lie in [0, 1]")
    rho_m = 1.0 - rho_p
    if p.alpha_pm == p.alpha_mp:
        return rho_p * rho_p, rho_m * rho_m, rho_p * rho_m
    D = p.alpha_mp * rho_p + p.alpha_pm * rho_m
    if D == 0.0:
        raise ModelError("degenerate combination of flip rates and densities")
    return (
        (p.alpha_mp * rho_p / D) ** 2,
        (p.alpha_pm * rho_m / D) ** 2,
        p.alpha_mp * p.alpha_pm * rho_p * rho_m / (D * D),
    )


# -- linearization ------------------------------------------------------------


@dataclass
class JacobianReport:
    matrix: np.ndarray            # 6 x 6, ordering (f_pp, g_pp, f_mm, g_mm, f_pm, g_pm)
    eigenvalues: np.ndarray       # complex (6,)
    lambda_pm: float              # the decoupled f_pm diagonal entry
    kind: ClosureKind


def linearized_jacobian(p: MinimalParams, m_star: MinimalMoments, kind,
                        residual_tol: float = 1e-10) -> JacobianReport:
    """Analytic linearization around a polarized stationary point (f_pm = 0).

    All flip terms vanish with f_pm at the base point, so only derivatives
    with respect to f_pm survive in the flip part; the link part contributes
    the familiar two-level exchange blocks.  The input must be stationary to
    residual_tol and have f_pm = 0.
    """
    if m_star.f_pm != 0.0:
        raise ModelError("linearized_jacobian expects a polarized point with f_pm = 0")
    resid = float(np.max(np.abs(closure_rhs(m_star, p, kind))))
    if resid > residual_tol:
        raise ModelError(f"input is not stationary: residual {resid:.3e} > {residual_tol:g}")
    kirk = _kind_flag(kind) == 1
    rho_p, rho_m = m_star.rho_p, m_star.rho_m
    f_pp, g_pp = m_star.f_pp, m_star.g_pp
    f_mm, g_mm = m_star.f_mm, m_star.g_mm
    g_pm = m_star.g_pm
    a_pm, a_mp = p.alpha_pm, p.alpha_mp
    b_pp, b_mm, b_pm = p.beta_pp, p.beta_mm, p.beta_pm
    c_pp, c_mm, c_pm = p.gamma_pp, p.gamma_mm, p.gamma_pm
    if kirk:
        kpp = m_star.h_pp / (rho_p * rho_p)
        kmm = m_star.h_mm / (rho_m * rho_m)
        kpm = m_star.h_pm / (rho_p * rho_m)
    else:
        kpp = kmm = kpm = 1.0

    J = np.zeros((6, 6))
    J[0, 0] = -c_pp
    J[0, 1] = b_pp
    J[0, 4] = -a_pm * (f_pp / rho_p) * kpm
    J[1, 0] = c_pp
    J[1, 1] = -b_pp
    J[1, 4] = a_mp * (g_pm / rho_m) * kpp - a_pm * (g_pp / rho_p) * kpm
    J[2, 2] = -c_mm
    J[2, 3] = b_mm
    J[2, 4] = -a_mp * (f_mm / rho_m) * kpm
    J[3, 2] = c_mm
    J[3, 3] = -b_mm
    J[3, 4] = a_pm * (g_pm / rho_p) * kmm - a_mp * (g_mm / rho_m) * kpm
    J[4, 4] = (a_pm * f_pp / (2 * rho_p) + a_mp * f_mm / (2 * rho_m)) * kpm - c_pm
    J[4, 5] = b_pm
    J[5, 4] = (-a_mp * (g_pm / (2 * rho_m)) * kpp + a_pm * (g_pp / (2 * rho_p)) * kpm
               - a_pm * (g_pm / (2 * rho_p)) * kmm + a_mp * (g_mm / (2 * rho_m)) * kpm
               + c_pm)
    J[5, 5] = -b_pm
    eig = np.linalg.eigvals(J)
    return JacobianReport(matrix=J, eigenvalues=eig, lambda_pm=float(J[4, 4]),
                          kind=ClosureKind.KIRKWOOD if kirk else ClosureKind.CONDITIONAL)


def finite_difference_jacobian(y, p: MinimalParams, kind, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the closure right-hand side."""
    y = np.asarray(y, dtype=float)
    J = np.empty((6, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        J[:, j] = (closure_rhs_array(y + e, p, kind) - closure_rhs_array(y - e, p, kind)) / (2 * h)
    return J


def polarization_stable(p: MinimalParams, rho_p: float) -> tuple[bool, float]:
    """Linear-stability inequality of the polarized family; margin = lhs - rhs.

    The threshold compares the cross-link removal rate against the flip
    pressure of the mixed weight-averaged densities,

        gamma_pm > beta_pp/(beta_pp+gamma_pp) * a_pm a_mp^2 rho_p / (2 D^2)
                 + beta_mm/(beta_mm+gamma_mm) * a_mp a_pm^2 rho_m / (2 D^2),

    with D = a_mp rho_p + a_pm rho_m.  A margin above zero certifies the
    linear condition; below zero is reported but not certified unstable.
    """
    if not 0.0 <= rho_p <= 1.0:
        raise ModelError("rho_p must lie in [0, 1]")
    rho_m = 1.0 - rho_p
    d_p = p.beta_pp + p.gamma_pp
    d_m = p.beta_mm + p.gamma_mm
    if d_p <= 0 or d_m <= 0:
        raise ModelError("beta + gamma must be positive within each state")
    D = p.alpha_mp * rho_p + p.alpha_pm * rho_m
    if D == 0.0:
        rhs = 0.0
    else:
        rhs = (p.beta_pp / d_p) * p.alpha_pm * p.alpha_mp ** 2 * rho_p / (2 * D * D) \
            + (p.beta_mm / d_m) * p.alpha_mp * p.alpha_pm ** 2 * rho_m / (2 * D * D)
    margin = p.gamma_pm - rhs
    return margin > 0.0, margin


# -- decay envelopes ----------------------------------------------------------


@dataclass
class EnvelopeReport:
    holds: bool
    rate: float
    max_excess: float             # max of f_pm(t) / envelope(t) - 1
    first_violation_t: float | None = None


def decay_envelope_check(traj: ClosureTrajectory, p: MinimalParams, kind,
                         slack: float = 1e-9) -> EnvelopeReport:
    """Check f_pm(t) <= exp(-rate t) f_pm(0) (1 + slack) at every sample.

    rate = gamma_pm - (alpha_pm + alpha_mp)/2 under the conditional closure
    and gamma_pm - (alpha_pm + alpha_mp) under Kirkwood.  The bounds assume
    no cross-link creation (beta_pm = 0); a failure is reported, not raised.
    """
    kirk = _kind_flag(kind) == 1
    alpha_sum = p.alpha_pm + p.alpha_mp
    rate = p.gamma_pm - (alpha_sum if kirk else 0.5 * alpha_sum)
    if rate <= 0:
        raise ModelError("decay envelope requires a positive decay rate")
    t = traj.times - traj.times[0]
    f = traj.f_pm
    envelope = np.exp(-rate * t) * f[0] * (1.0 + slack)
    if f[0] == 0.0:
        ok = bool(np.all(f == 0.0))
        return EnvelopeReport(holds=ok, rate=rate, max_excess=float(np.max(f)))
    ratio = f / (np.exp(-rate * t) * f[0])
    excess = float(np.max(ratio) - 1.0)
    bad = np.nonzero(f > envelope)[0]
    return EnvelopeReport(
        holds=bad.size == 0,
        rate=rate,
        max_excess=excess,
        first_violation_t=float(traj.times[bad[0]]) if bad.size else None,
    )


# -- small-epsilon continuation ----------------------------------------------


@dataclass
class StationaryBranch:
    eps: float
    moments: MinimalMoments
    dfdeps: float
    residual: float
    kind: ClosureKind
    newton_iterations: int = 0

    def __post_init__(self):
        if self.residual > 1e-10:
            log.warning("stationary branch residual %.3e above 1e-10 "
                        "(exact stationarity with f_pm > 0 needs equal flip rates)",
                        self.residual)


def _phi_root_gpm(p: MinimalParams, rho_p: float, rho_m: float) -> float:
    """h_pm solving the factored cross-pair balance at f_pm = 0."""
    return 0.5 * (p.alpha_pm + p.alpha_mp) / (p.alpha_pm / rho_p + p.alpha_mp / rho_m)


def _reduced_residual(x, p_eps: MinimalParams, rho_p: float, rho_m: float, kirk_flag: int,
                      use_phi: bool) -> np.ndarray:
    f_pp, f_mm, f_pm, g_pm = x
    g_pp = rho_p - f_pm - g_pm - f_pp
    g_mm = rho_m - f_pm - g_pm - f_mm
    y = np.array([f_pp, g_pp, f_mm, g_mm, f_pm, g_pm])
    rhs = _rhs_arrays(y, p_eps.as_array(), kirk_flag)
    out = np.array([rhs[0], rhs[2], rhs[4], rhs[5]])
    if use_phi:
        # (df_pm + dg_pm) factors as f_pm * Phi; use Phi to desingularize
        # the f_pm = 0 family
        h_pm = f_pm + g_pm
        out[3] = 0.5 * (p_eps.alpha_pm + p_eps.alpha_mp) \
            - h_pm * (p_eps.alpha_pm / rho_p + p_eps.alpha_mp / rho_m)
    return out


def continue_small_epsilon(
    p: MinimalParams,
    rho_p: float,
    kind,
    max_iter: int = 50,
    tol: float = 1e-13,
) -> StationaryBranch:
    """Continue the polarized stationary family into small cross-link creation.

    The cross-creation rate eps = p.beta_pm perturbs the family; Newton
    iteration runs on the reduced four-variable system (f_pp, f_mm, f_pm,
    g_pm) with the within-state g's eliminated by the fixed densities.  For
    the conditional closure the cross-pair equations factor as f_pm * Phi,
    and replacing their sum by Phi makes the eps = 0 linearization regular;
    the branch is seeded at the polarized point whose g_pm solves Phi = 0.
    The Kirkwood reduced system is rank-deficient at equal flip rates (a
    curve of stationary points), so Newton steps use least squares there.

    Returns the branch point, its residual against the full six-component
    right-hand side, and the branch slope df_pm/d eps at 0 (one-sided
    difference).  Note exact full-system stationarity with f_pm > 0 requires
    equal flip rates; otherwise rho_+ drifts at order eps.
    """
    eps = p.beta_pm
    if not 0.0 < rho_p < 1.0:
        raise ModelError("rho_p must lie in (0, 1) for the continuation")
    for name in ("alpha_pm", "alpha_mp", "beta_pp", "beta_mm",
                 "gamma_pp", "gamma_mm", "gamma_pm"):
        if not getattr(p, name) > 0:
            raise ModelError(f"continuation requires positive rate {name}")
    kirk_flag = _kind_flag(kind)
    alpha_sum = p.alpha_pm + p.alpha_mp
    if kirk_flag and not p.gamma_pm > alpha_sum:
        raise ModelError("kirkwood continuation requires gamma_pm > alpha_pm + alpha_mp")
    if not kirk_flag and not 2 * p.gamma_pm > alpha_sum:
        raise ModelError("conditional continuation requires 2 gamma_pm > alpha_pm + alpha_mp")

    rho_m = 1.0 - rho_p
    g_star = _phi_root_gpm(p, rho_p, rho_m)
    if g_star > min(rho_p, rho_m) + 1e-12:
        raise ContinuationFailed(
            f"seed g_pm = {g_star:.4g} falls outside [0, min(rho_p, 1 - rho_p)]; "
            "no admissible branch for these flip rates and densities")

    def solve_at(eps_val: float):
        p_eps = MinimalParams(p.alpha_pm, p.alpha_mp, p.beta_pp, p.beta_mm,
                              eps_val, p.gamma_pp, p.gamma_mm, p.gamma_pm)
        seed_m = stationary_polarized(
            MinimalParams(p.alpha_pm, p.alpha_mp, p.beta_pp, p.beta_mm, 0.0,
                          p.gamma_pp, p.gamma_mm, p.gamma_pm),
            rho_p, min(g_star, min(rho_p, rho_m)))
        x = np.array([seed_m.f_pp, seed_m.f_mm, 0.0, seed_m.g_pm])
        use_phi = kirk_flag == 0
        h = 1e-7
        for it in range(1, max_iter + 1):
            G = _reduced_residual(x, p_eps, rho_p, rho_m, kirk_flag, use_phi)
            if np.max(np.abs(G)) < tol:
                return x, it
            J = np.empty((4, 4))
            for j in range(4):
                e = np.zeros(4)
                e[j] = h
                J[:, j] = (_reduced_residual(x + e, p_eps, rho_p, rho_m, kirk_flag, use_phi)
                           - _reduced_residual(x - e, p_eps, rho_p, rho_m, kirk_flag, use_phi)) / (2 * h)
            if use_phi:
                try:
                    step = np.linalg.solve(J, G)
                except np.linalg.LinAlgError as exc:
                    raise ContinuationFailed(f"singular Newton system: {exc}") from exc
            else:
                step, *_ = np.linalg.lstsq(J, G, rcond=None)
            x = x - step
        G = _reduced_residual(x, p_eps, rho_p, rho_m, kirk_flag, use_phi)
        if np.max(np.abs(G)) < 1e-10:
            return x, max_iter
        raise ContinuationFailed(
            f"Newton did not converge in {max_iter} iterations at eps = {eps_val:g} "
            f"(residual {np.max(np.abs(G)):.3e})")

    def assemble(x, eps_val):
        f_pp, f_mm, f_pm, g_pm = x
        f_pm = max(f_pm, 0.0) if f_pm > -1e-15 else f_pm
        g_pp = rho_p - f_pm - g_pm - f_pp
        g_mm = rho_m - f_pm - g_pm - f_mm
        y = np.array([f_pp, g_pp, f_mm, g_mm, f_pm, g_pm])
        if np.any(y < -1e-12):
            raise ContinuationFailed(
                f"branch at eps = {eps_val:g} left the admissible region: {y}")
        p_eps = MinimalParams(p.alpha_pm, p.alpha_mp, p.beta_pp, p.beta_mm,
                              eps_val, p.gamma_pp, p.gamma_mm, p.gamma_pm)
        resid = float(np.max(np.abs(closure_rhs_array(np.maximum(y, 0.0), p_eps, kind))))
        return np.maximum(y, 0.0), resid

    x, iters = solve_at(eps)
    y, resid = assemble(x, eps)

    delta = 1e-6
    x0, _ = solve_at(0.0)
    xd, _ = solve_at(delta)
    dfdeps = (xd[2] - x0[2]) / delta
    if not dfdeps > 0:
        raise ContinuationFailed(f"branch slope df_pm/deps = {dfdeps:.3e} is not positive")
    f_pm_val = float(y[4])
    if eps > 0 and not 0.0 < f_pm_val <= 2.0 * dfdeps * eps + 1e-12:
        raise ContinuationFailed(
            f"f_pm = {f_pm_val:.3e} is not first order in eps = {eps:g} "
            f"(slope {dfdeps:.3e})")
    return StationaryBranch(
        eps=eps,
        moments=MinimalMoments.from_array(y),
        dfdeps=float(dfdeps),
        residual=resid,
        kind=ClosureKind.KIRKWOOD if kirk_flag else ClosureKind.CONDITIONAL,
        newton_iterations=iters,
    )
