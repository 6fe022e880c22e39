"""
Monitored quantities of a run: total mass, free energy, SAV-modified energy
and the residual of the discrete energy identity of each step.

All energies use the assembled M, K and W so that the per-step identity is
checked in exactly the inner products the scheme uses.
"""
import math
from dataclasses import astuple, dataclass, fields
from typing import TYPE_CHECKING, List, Optional, Tuple

from scipy import sparse

if TYPE_CHECKING:
    from .sav_stepper import FemContext, State

SERIES_HEADER = ('step', 'time', 'mass', 'energy', 'modified_energy', 'r', 'diss_residual', 'solver_residual')


@dataclass(frozen=True)
class SeriesRecord:
    step: int
    time: float
    mass: float
    energy_E: float
    energy_mod: float
    r: float
    diss_residual: float
    solver_residual: float

    def is_finite(self) -> bool:
        return all(math.isfinite(value) for value in astuple(self))

    def as_row(self) -> Tuple:
        return tuple(getattr(self, item.name) for item in fields(self))


def total_mass(state: 'State', ctx: 'FemContext') -> float:
    """1^T M (U + N)"""
    return float(ctx.mass_of_one @ (state.U.coefficients + state.N.coefficients))


def _quadratic_energy(state: 'State', ctx: 'FemContext') -> float:
    p = ctx.params
    u, n = state.U.coefficients, state.N.coefficients
    Mu = ctx.mass @ u
    return float(
        0.5 * p.epsilon ** 2 * (u @ (ctx.stiffness @ u))
        + 0.5 * p.lam * (u @ Mu)
        + 0.5 / p.delta * (n @ (ctx.mass @ n))
        - p.chi0 * (n @ Mu)
    )


def modified_energy(state: 'State', ctx: 'FemContext') -> float:
    """Quadratic part of the free energy plus r - B"""
    return _quadratic_energy(state, ctx) + state.r - ctx.params.B


def original_energy(state: 'State', ctx: 'FemContext') -> float:
    """Free energy with f evaluated on u_h

    The (lambda/2) u^2 term and the -(lambda/2) u^2 inside f cancel; both are
    evaluated as written.
    """
    return _quadratic_energy(state, ctx) + ctx.e1(state.U)


def dissipation_terms(prev: 'State', nxt: 'State', ctx: 'FemContext',
                      weighted_mass: Optional[sparse.spmatrix] = None) -> List[float]:
    """Nonnegative terms dissipated over one step, in the order of the identity"""
    p = ctx.params
    M, K = ctx.mass, ctx.stiffness
    W = weighted_mass if weighted_mass is not None else ctx.weighted_mass(prev.U)
    du = nxt.U.coefficients - prev.U.coefficients
    dn = nxt.N.coefficients - prev.N.coefficients
    mu, sigma = nxt.MU.coefficients, nxt.SIGMA.coefficients
    gap = sigma - mu
    return [
        0.5 * p.epsilon ** 2 * float(du @ (K @ du)),
        0.5 * p.lam * float(du @ (M @ du)),
        0.5 / p.delta * float(dn @ (M @ dn)),
        p.tau * float(mu @ (K @ mu)),
        p.tau * float(sigma @ (K @ sigma)),
        p.tau * float(gap @ (W @ gap)),
    ]


def dissipation_residual(prev: 'State', nxt: 'State', ctx: 'FemContext',
                         weighted_mass: Optional[sparse.spmatrix] = None) -> float:
    """|E~^{k+1} - E~^k + dissipated terms|, zero up to round-off for an exact solve"""
    change = modified_energy(nxt, ctx) - modified_energy(prev, ctx)
    return abs(change + math.fsum(dissipation_terms(prev, nxt, ctx, weighted_mass)))


def series_record(prev: Optional['State'], state: 'State', ctx: 'FemContext',
                  weighted_mass: Optional[sparse.spmatrix] = None,
                  solver_residual: float = 0.0) -> SeriesRecord:
    """Diagnostics row for a state; prev is None at k = 0"""
    residual = 0.0 if prev is None else dissipation_residual(prev, state, ctx, weighted_mass)
    return SeriesRecord(
        step=state.k,
        time=state.t,
        mass=total_mass(state, ctx),
        energy_E=original_energy(state, ctx),
        energy_mod=modified_energy(state, ctx),
        r=state.r,
        diss_residual=residual,
        solver_residual=solver_residual,
    )


def mass_drift(records: List[SeriesRecord]) -> float:
    """Largest relative deviation of the total mass from record 0"""
    if not records:
        return 0.0
    reference = records[0].mass
    scale = max(abs(reference), 1.0)
    return max(abs(record.mass - reference) for record in records) / scale


def energy_increases(records: List[SeriesRecord], tol: float = 1e-10) -> List[int]:
    """Steps where E~^{k+1} > E~^k + tol * max(1, |E~^k|)"""
    return [
        after.step for before, after in zip(records, records[1:])
        if after.energy_mod > before.energy_mod + tol * max(1.0, abs(before.energy_mod))
    ]


def max_dissipation_residual(records: List[SeriesRecord]) -> float:
    return max((record.diss_residual for record in records), default=0.0)
