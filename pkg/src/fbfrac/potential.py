"""Radial potential, its convex envelope, and the convexity threshold.

The flux q(theta) = theta/(1+|theta|^2) + delta*|theta|^(gamma-2)*theta is
radial, so its potential reduces to the 1-D profile

    Phi(s) = ln(1 + s^2)/2 + (delta/gamma) * s^gamma,   s = |theta| >= 0,

(the unique radial antiderivative with Phi(0) = 0; tests verify it against
the flux by finite differences).  Because Phi is nondecreasing, the 2-D
convexification of the potential equals the 1-D lower convex envelope of
Phi on [0, inf) - that reduction is this module's central shortcut.  The
envelope is computed as the monotone-chain lower hull of a uniform sample
of the graph; non-convex stretches become affine "bridge" segments on
which the envelope gradient has constant magnitude.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

# Deviation below which a sample is considered in contact with its envelope;
# hull segments whose interior rises above this are bridges.
_CONTACT_TOL = 1e-9


def phi_profile(s, gamma: float, delta: float):
    """Radial potential value(s) at s >= 0."""
    s = np.asarray(s, dtype=np.float64)
    return 0.5 * np.log1p(s * s) + (delta / gamma) * s**gamma


def phi_second_derivative(s, gamma: float, delta: float):
    """Phi''(s) = (1 - s^2)/(1 + s^2)^2 + delta*(gamma-1)*s^(gamma-2)."""
    s = np.asarray(s, dtype=np.float64)
    one = 1.0 + s * s
    with np.errstate(divide="ignore"):
        reg = np.where(s > 0, s ** (gamma - 2.0), np.inf)
    return (1.0 - s * s) / (one * one) + delta * (gamma - 1.0) * reg


def q_gamma(theta, gamma: float, delta: float) -> np.ndarray:
    """Heat flux vector; theta = 0 maps to 0 by continuity (gamma > 1)."""
    theta = np.asarray(theta, dtype=np.float64)
    r = float(np.hypot(theta[0], theta[1]))
    if r == 0.0:
        return np.zeros(2)
    scale = 1.0 / (1.0 + r * r) + delta * r ** (gamma - 2.0)
    return scale * theta


def delta0(gamma: float) -> float:
    """Regularization weight above which the potential is convex."""
    if not 1.0 < gamma <= 2.0:
        raise ValueError(f"gamma must be in (1, 2], got {gamma}")
    kappa = (3.0 + math.sqrt(gamma * gamma - 2.0 * gamma + 9.0)) / gamma
    return (
        kappa ** ((2.0 - gamma) / 2.0)
        * (kappa - 1.0)
        / ((kappa + 1.0) ** 2 * (gamma - 1.0))
    )


@dataclass(frozen=True)
class PotentialProfile:
    """Sampled profile of Phi, its envelope, and the bridge intervals.

    ``samples_s`` is a uniform grid on [0, smax]; ``envelope_deriv`` holds
    the envelope's derivative at each sample (hull-segment slopes, averaged
    at hull vertices).  ``bridges`` lists (s_left, s_right, slope) for each
    maximal interval where the envelope lies strictly below Phi.
    """

    gamma: float
    delta: float
    smax: float
    samples_s: np.ndarray
    phi: np.ndarray
    envelope: np.ndarray
    envelope_deriv: np.ndarray
    bridges: tuple[tuple[float, float, float], ...]
    tail_slope: float  # exact Phi'(smax); the envelope extends linearly with it
    # Antiderivative of the interpolated derivative (trapezoid cumulative);
    # used by envelope_energy so objective and gradient agree exactly.
    _energy: np.ndarray = None

    @property
    def bridge_count(self) -> int:
        return len(self.bridges)

    def dump_csv(self, path) -> None:
        """Write (s, phi, phi_star_star, rho) rows for plotting/regression."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write("s,phi,phi_star_star,rho\n")
            for s, p, e, d in zip(
                self.samples_s, self.phi, self.envelope, self.envelope_deriv
            ):
                fh.write(f"{s!r},{p!r},{e!r},{d!r}\n")


def _lower_hull(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull vertices of a graph sorted by x."""
    hull: list[int] = []
    for k in range(len(xs)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # Pop j unless the path i -> j -> k turns strictly left.
            cross = (xs[j] - xs[i]) * (ys[k] - ys[i]) - (ys[j] - ys[i]) * (xs[k] - xs[i])
            if cross > 0.0:
                break
            hull.pop()
        hull.append(k)
    return np.asarray(hull, dtype=np.int64)


def convexify(
    gamma: float, delta: float, smax: float = 50.0, n_samples: int = 4096
) -> PotentialProfile:
    """Lower convex envelope of the sampled profile on [0, smax].

    Requires Phi to be convex beyond smax/2 so the finite window captures
    every bridge; raises ValueError otherwise.
    """
    if not 1.0 < gamma <= 2.0:
        raise ValueError(f"gamma must be in (1, 2], got {gamma}")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if n_samples < 256:
        raise ValueError(f"need at least 256 samples, got {n_samples}")
    if smax <= 0:
        raise ValueError(f"smax must be positive, got {smax}")

    s = np.linspace(0.0, smax, n_samples)
    tail = s[s >= smax / 2.0]
    if np.any(phi_second_derivative(tail, gamma, delta) < 0):
        raise ValueError(
            f"smax={smax} too small: profile not convex beyond smax/2 "
            f"for gamma={gamma}, delta={delta}"
        )

    phi = phi_profile(s, gamma, delta)
    hull = _lower_hull(s, phi)
    envelope = np.interp(s, s[hull], phi[hull])

    # Hull-segment slopes; per-sample derivative averages the two slopes
    # meeting at a vertex and is constant across bridge interiors.
    seg_slopes = np.diff(phi[hull]) / np.diff(s[hull])
    deriv = np.empty_like(s)
    for seg in range(len(seg_slopes)):
        lo, hi = hull[seg], hull[seg + 1]
        deriv[lo + 1 : hi] = seg_slopes[seg]
    vertex_slopes = np.empty(len(hull))
    vertex_slopes[0] = seg_slopes[0]
    vertex_slopes[-1] = seg_slopes[-1]
    vertex_slopes[1:-1] = 0.5 * (seg_slopes[:-1] + seg_slopes[1:])
    deriv[hull] = vertex_slopes
    # Phi'(0) = 0 exactly for gamma > 1, and 0 is always a contact point;
    # the chord slope would overestimate and plant a spurious kink at
    # zero-gradient pixels in the variational step.
    deriv[0] = 0.0

    bridges = []
    for seg in range(len(seg_slopes)):
        lo, hi = hull[seg], hull[seg + 1]
        if hi - lo > 1 and np.max(phi[lo:hi + 1] - envelope[lo:hi + 1]) > _CONTACT_TOL:
            bridges.append((float(s[lo]), float(s[hi]), float(seg_slopes[seg])))

    tail_slope = smax / (1.0 + smax * smax) + delta * smax ** (gamma - 1.0)
    ds = s[1] - s[0]
    energy = np.concatenate(
        ([0.0], np.cumsum(0.5 * ds * (deriv[1:] + deriv[:-1])))
    )
    return PotentialProfile(
        gamma, delta, smax, s, phi, envelope, deriv, tuple(bridges), tail_slope,
        energy,
    )


def rho_gamma(profile: PotentialProfile, theta) -> np.ndarray:
    """Envelope gradient at theta: interpolated derivative times theta/|theta|."""
    theta = np.asarray(theta, dtype=np.float64)
    r = float(np.hypot(theta[0], theta[1]))
    if r == 0.0:
        return np.zeros(2)
    if r > profile.smax:
        raise ValueError(f"|theta| = {r} exceeds profile domain [0, {profile.smax}]")
    m = float(np.interp(r, profile.samples_s, profile.envelope_deriv))
    return (m / r) * theta


def _check_domain(profile: PotentialProfile, r: np.ndarray, extend: bool) -> None:
    over = int(np.count_nonzero(r > profile.smax))
    if not over:
        return
    if not extend:
        raise ValueError(
            f"{over} gradient magnitudes exceed the profile domain "
            f"[0, {profile.smax}]"
        )
    warnings.warn(
        f"{over} gradient magnitudes beyond the profile domain "
        f"[0, {profile.smax}]; using the linear tail extension",
        RuntimeWarning,
        stacklevel=3,
    )


def rho_magnitude(profile: PotentialProfile, r: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Vectorized envelope-derivative lookup at radii r.

    With ``clamp`` out-of-domain radii use the exact tail slope (and a
    warning reports how many there were); otherwise they raise.
    """
    r = np.asarray(r, dtype=np.float64)
    _check_domain(profile, r, clamp)
    out = np.interp(r, profile.samples_s, profile.envelope_deriv)
    return np.where(r > profile.smax, profile.tail_slope, out)


def envelope_value(profile: PotentialProfile, r: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Vectorized envelope value lookup at radii r.

    Out-of-domain radii continue along the tail tangent when ``clamp`` is
    set (consistent with rho_magnitude, so the pair stays a convex
    function and its gradient); otherwise they raise.
    """
    r = np.asarray(r, dtype=np.float64)
    _check_domain(profile, r, clamp)
    out = np.interp(r, profile.samples_s, profile.envelope)
    tail = profile.envelope[-1] + profile.tail_slope * (r - profile.smax)
    return np.where(r > profile.smax, tail, out)


def envelope_energy(profile: PotentialProfile, r: np.ndarray, clamp: bool = False) -> np.ndarray:
    """C1 envelope surrogate whose exact derivative is rho_magnitude.

    Piecewise quadratic between samples: the antiderivative of the
    piecewise-linear derivative profile.  It differs from the hull values
    by O(ds^2) and is what the variational image step minimizes, so the
    descent direction and the objective never disagree.
    """
    s = profile.samples_s
    d = profile.envelope_deriv
    r = np.asarray(r, dtype=np.float64)
    _check_domain(profile, r, clamp)
    rc = np.minimum(r, profile.smax)
    ds = s[1] - s[0]
    idx = np.clip((rc / ds).astype(np.int64), 0, len(s) - 2)
    xi = rc - s[idx]
    val = (
        profile._energy[idx]
        + d[idx] * xi
        + 0.5 * (d[idx + 1] - d[idx]) / ds * xi * xi
    )
    return np.where(r > profile.smax, val + profile.tail_slope * (r - profile.smax), val)


def structure_constants(gamma: float, delta: float) -> tuple[float, float]:
    """Witness constants (c, C) for the growth bounds on Phi and its envelope:

    max(c*s^gamma - 1, 0) <= Phi**(s) <= Phi(s) <= C*s^gamma + 1.
    """
    return delta / gamma, delta / gamma + 1.5
