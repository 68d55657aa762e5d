"""Rothe semi-discretization of the relaxed (convexified) system.

Desk-scale validator for the explicit scheme: the horizon [0, T] is split
into m slices and each slice solves two convex minimization problems in
sequence, first the texture slice

    F(z) = |z - w_prev|^2 / 2 + (T/2mp) [z]^p  - (T/m) lambda3 <K'(f - K u_prev), z>,

then the image slice

    E(v) = int (T/m) Phi**(|grad+ v|) + (v - u_prev)^2 / 2
           + (T/m) (lambda1 u_prev - lambda2 w_new) v,

whose Euler-Lagrange relations are the implicit time-discrete system.
Norms and pairings are h^2-weighted grid sums; [z]^p is the ordered-pair
Gagliardo energy from nonlocalops.  The inner solver is plain gradient
descent with a halving line search - both objectives are convex and the
grids are small, so nothing heavier is warranted.

p = 1 is out of scope here: the analysis reaches it only through a
p -> 1+ limit, so callers get p in (1, 2] enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import blur as blur_mod
from . import localops, nonlocalops, potential
from .grid import ImageGrid
from .localops import FluxField
from .solver import SolverConfig


class InnerSolveError(RuntimeError):
    """Inner gradient descent exhausted its budget before the tolerance."""

    def __init__(self, which: str, residual: float, tol: float):
        super().__init__(
            f"{which} minimization stalled at gradient norm {residual:.3e} "
            f"(tolerance {tol:.3e})"
        )
        self.residual = residual


@dataclass(frozen=True)
class RotheConfig:
    """Time slicing plus inner-minimization settings.

    Physics parameters ride along in ``solver``; the grid-size guard keeps
    accidental O(N^2) runs from leaving desk scale.
    """

    m: int
    T: float
    solver: SolverConfig = field(default_factory=SolverConfig)
    inner_tol: float = 1e-8  # max-norm of the objective gradient
    inner_max_iter: int = 20000
    inner_step0: float = 1.0
    profile_smax: float = 50.0
    profile_samples: int = 4096
    size_limit: int = 32

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"slice count m must be >= 1, got {self.m}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not self.inner_tol > 0:
            raise ValueError(f"inner tolerance must be positive, got {self.inner_tol}")
        if not 1.0 < self.solver.p <= 2.0:
            raise ValueError(
                f"Rothe steps require p in (1, 2], got p = {self.solver.p}"
            )


@dataclass(frozen=True)
class SliceDiagnostics:
    index: int
    w_energy: float  # Gagliardo energy of the w slice
    u_energy: float  # envelope energy of the u slice
    sup_bound_exceeded: bool


def _descend(x0: np.ndarray, objective, gradient, cfg: RotheConfig, which: str):
    """Gradient descent with backtracking (halving) line search.

    Near the minimum the objective decrease sinks below floating-point
    resolution long before the gradient tolerance is met, so objective
    comparisons that land inside the rounding noise fall back to requiring
    a drop in the gradient norm instead.  Both slice objectives are
    strongly convex (unit modulus from the proximity term), which makes
    that fallback decrease achievable for small enough steps.

    Returns (x, iterations); the step length is re-grown after every
    accepted move so the search stays adaptive.
    """
    x = x0.copy()
    fx = objective(x)
    alpha = cfg.inner_step0
    for it in range(cfg.inner_max_iter):
        g = gradient(x)
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= cfg.inner_tol:
            return x, it
        g2 = float(np.linalg.norm(g))
        noise = 1e-12 * (1.0 + abs(fx))
        while True:
            xn = x - alpha * g
            fn = objective(xn)
            if fn < fx - noise:
                break
            if fn <= fx + noise:
                # Flat within rounding noise: accept on gradient decrease.
                if float(np.linalg.norm(gradient(xn))) < g2:
                    break
            alpha *= 0.5
            if alpha < 1e-18:
                raise InnerSolveError(which, gnorm, cfg.inner_tol)
        x, fx = xn, fn
        alpha *= 2.0
    g = gradient(x)
    raise InnerSolveError(which, float(np.max(np.abs(g))), cfg.inner_tol)


def rothe_w_step(
    w_prev: ImageGrid,
    u_prev: ImageGrid,
    f: ImageGrid,
    cfg: RotheConfig,
    plan: nonlocalops.NonlocalPlan,
    kernel: blur_mod.BlurKernel,
) -> ImageGrid:
    """Minimize the texture-slice functional F; its stationarity condition
    is the implicit fractional-diffusion relation for one time slice."""
    sol = cfg.solver
    tau = cfg.T / cfg.m
    h2 = w_prev.h**2
    p = sol.p

    blurred = blur_mod.apply_blur(kernel, u_prev)
    data = sol.lambda3 * blur_mod.apply_adjoint(
        kernel, f.with_data(f.data - blurred.data)
    ).data

    def objective(z):
        zg = w_prev.with_data(z)
        fid = 0.5 * h2 * float(np.sum((z - w_prev.data) ** 2))
        semi = (tau / (2.0 * p)) * nonlocalops.frac_seminorm_p(plan, zg)
        force = tau * h2 * float(np.sum(data * z))
        return fid + semi - force

    def gradient(z):
        zg = w_prev.with_data(z)
        lap = nonlocalops.apply_frac_p_laplacian(plan, zg).data
        return (z - w_prev.data) - tau * h2 * lap - tau * data

    z, _ = _descend(w_prev.data, objective, gradient, cfg, "texture-slice")
    return w_prev.with_data(z)


def _envelope_flux(v: ImageGrid, profile: potential.PotentialProfile) -> FluxField:
    # rho(grad+ v) on faces; gradient magnitudes beyond smax are clamped
    # with a loud warning inside rho_magnitude.
    gx = localops.forward_diff_x(v)
    gy = localops.forward_diff_y(v)
    r = np.hypot(gx, gy)
    slope = potential.rho_magnitude(profile, r, clamp=True)
    rsafe = np.where(r > 0, r, 1.0)
    scale = np.where(r > 0, slope / rsafe, 0.0)
    qx = scale * gx
    qy = scale * gy
    qx[-1, :] = 0.0
    qy[:, -1] = 0.0
    return FluxField(qx, qy, v.h)


def rothe_u_step(
    u_prev: ImageGrid,
    w_curr: ImageGrid,
    cfg: RotheConfig,
    profile: potential.PotentialProfile,
) -> ImageGrid:
    """Minimize the convexified image-slice functional E."""
    sol = cfg.solver
    tau = cfg.T / cfg.m
    h2 = u_prev.h**2
    react = tau * (sol.lambda1 * u_prev.data - sol.lambda2 * w_curr.data)

    def objective(v):
        vg = u_prev.with_data(v)
        gx = localops.forward_diff_x(vg)
        gy = localops.forward_diff_y(vg)
        r = np.hypot(gx, gy)
        env = potential.envelope_energy(profile, r, clamp=True)
        return h2 * float(
            np.sum(tau * env + 0.5 * (v - u_prev.data) ** 2 + react * v)
        )

    def gradient(v):
        vg = u_prev.with_data(v)
        div = localops.divergence(_envelope_flux(vg, profile)).data
        return (v - u_prev.data) + react - tau * div

    v, _ = _descend(u_prev.data, objective, gradient, cfg, "image-slice")
    return u_prev.with_data(v)


def rothe_run(
    f: ImageGrid,
    cfg: RotheConfig,
    kernel: blur_mod.BlurKernel,
    allow_large: bool = False,
    diagnostics: list | None = None,
) -> tuple[ImageGrid, ImageGrid]:
    """Alternate w-slice then u-slice for j = 1..m from (u = f, w = 0).

    Returns the final (u, w).  Per-slice energies and the monitored sup
    bound land in ``diagnostics`` when a list is supplied.
    """
    if not allow_large and max(f.rows, f.cols) > cfg.size_limit:
        raise ValueError(
            f"grid {f.shape} exceeds the desk-scale limit "
            f"{cfg.size_limit}; pass allow_large=True to override"
        )
    sol = cfg.solver
    plan = nonlocalops.build_plan(
        f.rows, f.cols, sol.h, sol.s, sol.p,
        mode="dense" if sol.nonlocal_mode == "auto" else sol.nonlocal_mode,
        radius=sol.radius, exclusion=sol.exclusion,
    )
    profile = potential.convexify(
        sol.gamma, sol.delta, cfg.profile_smax, cfg.profile_samples
    )

    # Monitored sup-norm ceiling in the spirit of the iteration estimates;
    # generous by construction, logged rather than enforced.
    area = f.rows * f.cols * sol.h**2
    c0 = cfg.T * (1.0 + sol.lambda1 + sol.lambda2 + sol.lambda3)
    sup_bound = math.exp(c0) * ((area + 1.0) * float(np.max(np.abs(f.data))) + 1.0)

    u = f
    w = f.with_data(np.zeros(f.shape))
    for j in range(1, cfg.m + 1):
        w = rothe_w_step(w, u, f, cfg, plan, kernel)
        u = rothe_u_step(u, w, cfg, profile)
        if diagnostics is not None:
            exceeded = bool(
                max(np.max(np.abs(u.data)), np.max(np.abs(w.data))) > sup_bound
            )
            grad_mag = np.hypot(
                localops.forward_diff_x(u), localops.forward_diff_y(u)
            )
            u_energy = float(
                np.sum(potential.envelope_value(profile, grad_mag, clamp=True))
                * u.h**2
            )
            diagnostics.append(
                SliceDiagnostics(
                    index=j,
                    w_energy=nonlocalops.frac_seminorm_p(plan, w),
                    u_energy=u_energy,
                    sup_bound_exceeded=exceeded,
                )
            )
    return u, w
