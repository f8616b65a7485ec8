"""Single-level TV-L1 optical flow: warping, thresholding and primal-dual TV steps.

The energy minimised per level is

    sum |grad u| + 1/(2 theta) ||u - v||^2 + lam * sum |rho(v)|,
    rho(v) = grad I1(x + u0) . v + I1(x + u0) - grad I1(x + u0) . u0 - I0(x),

alternating a pointwise thresholding step for ``v`` with one primal-dual
iteration for ``u``.  Gradients come from :mod:`morphflow.geometry`, so the
same code runs on Cartesian, FCC and tilted cuboid lattices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .geometry import DiffOperator, operator_for
from .lattice import LatticeDescriptor, ValidationError
from .volume import DisplacementField, Volume, sample_flat

__all__ = [
    "SolverParams",
    "WarpContext",
    "DualField",
    "build_warp_context",
    "threshold_step",
    "tv_denoise_step",
    "solve_level",
    "energy",
    "GRADIENT_NORM_SQ_BOUND",
]

# bound on ||grad||^2 used to pick the dual step; holds for every lattice here
GRADIENT_NORM_SQ_BOUND = 12.0


@dataclass
class SolverParams:
    tau: float = 0.25
    lam: float = 25.0
    theta: float = 0.2
    warps: int = 20
    inner_iters: int = 30
    sigma_dual: float | None = None
    # "prox": exact prox of ||u - v||^2 / (2 theta); "printed": (u - tau div p + v) / (1 + tau lam)
    primal_update: str = "prox"

    def __post_init__(self):
        for name in ("tau", "lam", "theta"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if int(self.warps) < 1 or int(self.inner_iters) < 1:
            raise ValidationError("warps and inner_iters must be positive integers")
        self.warps = int(self.warps)
        self.inner_iters = int(self.inner_iters)
        if self.sigma_dual is None:
            self.sigma_dual = 1.0 / (GRADIENT_NORM_SQ_BOUND * self.tau)
        if not self.sigma_dual > 0:
            raise ValidationError("sigma_dual must be positive")
        if self.tau * self.sigma_dual * GRADIENT_NORM_SQ_BOUND > 1.0 + 1e-12:
            warnings.warn(
                f"tau * sigma * L^2 = {self.tau * self.sigma_dual * GRADIENT_NORM_SQ_BOUND:.3g} "
                "exceeds 1; the primal-dual iteration may diverge",
                stacklevel=2,
            )
        if self.primal_update not in ("prox", "printed"):
            raise ValidationError(f"unknown primal_update {self.primal_update!r}")


@dataclass(eq=False)
class WarpContext:
    """Linearisation of the data term around ``u0``, frozen for one warp."""

    lattice: LatticeDescriptor
    warped: np.ndarray  # (N,)
    grad_warped: np.ndarray  # (N, 3)
    rho_const: np.ndarray  # (N,)

    def rho(self, u: np.ndarray) -> np.ndarray:
        """Linearised residual for flat displacements ``u`` of shape (3, N)."""
        return self.rho_const + np.einsum("nd,dn->n", self.grad_warped, u)


@dataclass(eq=False)
class DualField:
    """Dual variable of the TV term: one 3-vector per point and displacement component."""

    lattice: LatticeDescriptor
    p: np.ndarray  # (3, N, 3)

    @classmethod
    def zeros(cls, lattice: LatticeDescriptor) -> "DualField":
        return cls(lattice, np.zeros((3, lattice.size, 3)))


def _check_same(*lattices):
    first = lattices[0]
    for other in lattices[1:]:
        if not first.same_grid(other):
            raise ValidationError("inputs live on different lattices")


def build_warp_context(fixed: Volume, moving: Volume, u0: DisplacementField) -> WarpContext:
    _check_same(fixed.lattice, moving.lattice, u0.lattice)
    lat = fixed.lattice
    op = operator_for(lat)
    u = u0.flat()
    points = lat.sites() + u.T
    # grad I1 evaluated at x + u0, not the gradient of the warped image: the
    # latter mixes samples from unrelated positions wherever u0 jumps
    values = moving.data.reshape(-1)
    channels = np.concatenate([values[None], op.grad(values).T])
    sampled = sample_flat(lat, channels, points)
    warped = sampled[0]
    grad = np.ascontiguousarray(sampled[1:].T)
    rho_const = warped - np.einsum("nd,dn->n", grad, u) - fixed.data.reshape(-1)
    return WarpContext(fixed.lattice, warped, grad, rho_const)


def _threshold(ctx: WarpContext, u: np.ndarray, lam_theta: float) -> np.ndarray:
    g = ctx.grad_warped
    g2 = np.einsum("nd,nd->n", g, g)
    r = ctx.rho(u)
    bound = lam_theta * g2
    coef = np.where(
        r < -bound,
        lam_theta,
        np.where(r > bound, -lam_theta, -np.divide(r, g2, out=np.zeros_like(r), where=g2 > 0)),
    )
    return u + (coef[:, None] * g).T


def threshold_step(context: WarpContext, u: DisplacementField, lam: float,
                   theta: float) -> DisplacementField:
    """Pointwise minimiser of ||u - v||^2 / (2 theta) + lam |rho(v)| over v."""
    _check_same(context.lattice, u.lattice)
    v = _threshold(context, u.flat(), lam * theta)
    return DisplacementField.from_stacked(u.lattice, v)


def _project_unit_ball(p: np.ndarray) -> None:
    norm = np.sqrt(np.einsum("cnd,cnd->cn", p, p))
    p /= np.maximum(1.0, norm)[..., None]


def _tv_iteration(op: DiffOperator, u, u_bar, p, v, params: SolverParams):
    """One primal-dual step in place on flat arrays; returns the new ``u``."""
    p += params.sigma_dual * op.grad(u_bar)
    _project_unit_ball(p)
    div = op.div(p)
    tau = params.tau
    if params.primal_update == "prox":
        ratio = tau / params.theta
        u_new = (u + tau * div + ratio * v) / (1.0 + ratio)
    else:
        u_new = (u - tau * div + v) / (1.0 + tau * params.lam)
    u_bar[...] = 2.0 * u_new - u
    return u_new


def tv_denoise_step(u: DisplacementField, v: DisplacementField, dual: DualField,
                    params: SolverParams, u_bar: DisplacementField | None = None):
    """One dual ascent / primal descent / extrapolation step of the TV subproblem.

    Returns ``(u_new, dual_new, u_bar_new)``; pass ``u_bar_new`` back in to
    continue the iteration.  Inputs are not modified.
    """
    _check_same(u.lattice, v.lattice, dual.lattice)
    op = operator_for(u.lattice)
    p = dual.p.copy()
    ub = (u_bar if u_bar is not None else u).flat().copy()
    u_new = _tv_iteration(op, u.flat(), ub, p, v.flat(), params)
    lat = u.lattice
    return (
        DisplacementField.from_stacked(lat, u_new),
        DualField(lat, p),
        DisplacementField.from_stacked(lat, ub),
    )


@numba.njit(cache=True)
def _warp_iterations(u, u_bar, p, grad_w, rho_const, nbr, valid, weights,
                     lam_theta, sigma, tau, theta, lam, prox, iters):
    """Fused threshold + primal-dual loop for one warp; same arithmetic as the numpy path.

    Returns the 1-based iteration at which a non-finite value appeared, or 0.
    """
    n_faces, n = nbr.shape
    v = np.empty_like(u)
    for it in range(iters):
        for i in range(n):
            g0 = grad_w[i, 0]
            g1 = grad_w[i, 1]
            g2 = grad_w[i, 2]
            gg = g0 * g0 + g1 * g1 + g2 * g2
            r = rho_const[i] + g0 * u[0, i] + g1 * u[1, i] + g2 * u[2, i]
            bound = lam_theta * gg
            if r < -bound:
                coef = lam_theta
            elif r > bound:
                coef = -lam_theta
            elif gg > 0.0:
                coef = -r / gg
            else:
                coef = 0.0
            v[0, i] = u[0, i] + coef * g0
            v[1, i] = u[1, i] + coef * g1
            v[2, i] = u[2, i] + coef * g2
        for c in range(3):
            for i in range(n):
                gx = 0.0
                gy = 0.0
                gz = 0.0
                ui = u_bar[c, i]
                for f in range(n_faces):
                    d = u_bar[c, nbr[f, i]] - ui
                    gx += d * weights[f, 0]
                    gy += d * weights[f, 1]
                    gz += d * weights[f, 2]
                px = p[c, i, 0] + sigma * gx
                py = p[c, i, 1] + sigma * gy
                pz = p[c, i, 2] + sigma * gz
                norm = np.sqrt(px * px + py * py + pz * pz)
                scale = 1.0 / max(1.0, norm)
                p[c, i, 0] = px * scale
                p[c, i, 1] = py * scale
                p[c, i, 2] = pz * scale
        bad = False
        for c in range(3):
            for i in range(n):
                acc = 0.0
                for f in range(n_faces):
                    if valid[f, i]:
                        j = nbr[f, i]
                        acc += weights[f, 0] * (p[c, i, 0] + p[c, j, 0])
                        acc += weights[f, 1] * (p[c, i, 1] + p[c, j, 1])
                        acc += weights[f, 2] * (p[c, i, 2] + p[c, j, 2])
                if prox:
                    ratio = tau / theta
                    un = (u[c, i] + tau * acc + ratio * v[c, i]) / (1.0 + ratio)
                else:
                    un = (u[c, i] - tau * acc + v[c, i]) / (1.0 + tau * lam)
                if not np.isfinite(un):
                    bad = True
                u_bar[c, i] = 2.0 * un - u[c, i]
                u[c, i] = un
        if bad:
            return it + 1
    return 0


def energy(op: DiffOperator, u: np.ndarray, ctx: WarpContext, lam: float) -> float:
    """sum over components of |grad u| plus lam * sum |rho(u)|, for flat ``u`` (3, N)."""
    g = op.grad(u)
    tv = np.sqrt(np.einsum("cnd,cnd->cn", g, g)).sum()
    return float(tv + lam * np.abs(ctx.rho(u)).sum())


def solve_level(fixed: Volume, moving: Volume, u_init: DisplacementField,
                params: SolverParams, energies: list | None = None) -> DisplacementField:
    """Warping loop of TV-L1 on one lattice.

    The dual variable starts at zero and is kept across warps.  When
    ``energies`` is a list, the energy at the start of every warp and at the
    end is appended to it.
    """
    _check_same(fixed.lattice, moving.lattice, u_init.lattice)
    lat = fixed.lattice
    op = operator_for(lat)
    u = u_init.flat().copy()
    u_bar = u.copy()
    p = np.zeros((3, lat.size, 3))
    lam_theta = params.lam * params.theta
    ctx = None
    for j in range(params.warps):
        ctx = build_warp_context(fixed, moving, DisplacementField.from_stacked(lat, u))
        if energies is not None:
            energies.append(energy(op, u, ctx, params.lam))
        bad = _warp_iterations(
            u, u_bar, p, ctx.grad_warped, ctx.rho_const, op.neighbors, op.valid, op.weights,
            lam_theta, params.sigma_dual, params.tau, params.theta, params.lam,
            params.primal_update == "prox", params.inner_iters,
        )
        if bad:
            raise FloatingPointError(
                f"non-finite displacement at warp {j + 1}, iteration {bad} "
                f"on {lat.kind.value} lattice {lat.extents}"
            )
    if energies is not None:
        ctx = build_warp_context(fixed, moving, DisplacementField.from_stacked(lat, u))
        energies.append(energy(op, u, ctx, params.lam))
    return DisplacementField.from_stacked(lat, u)
