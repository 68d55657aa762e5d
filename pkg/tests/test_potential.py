import math

import numpy as np
import pytest

from fbfrac.potential import (
    convexify,
    delta0,
    envelope_energy,
    envelope_value,
    phi_profile,
    phi_second_derivative,
    q_gamma,
    rho_gamma,
    rho_magnitude,
    structure_constants,
)


def test_phi_normalization():
    assert phi_profile(0.0, 1.33, 0.28) == 0.0


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0, 5.0])
@pytest.mark.parametrize("gamma,delta", [(1.33, 0.28), (2.0, 0.125), (1.5, 0.4)])
def test_phi_derivative_matches_flux(s, gamma, delta):
    # Phi is the radial antiderivative of the flux magnitude.
    eps = 1e-5
    fd = (phi_profile(s + eps, gamma, delta) - phi_profile(s - eps, gamma, delta)) / (2 * eps)
    flux_mag = s / (1 + s * s) + delta * s ** (gamma - 1)
    assert fd == pytest.approx(flux_mag, abs=1e-6)


def test_phi_concave_without_regularization():
    # delta = 0 leaves the bare logarithmic profile, concave past s = 1.
    s, h = 2.0, 1e-3
    second = (
        phi_profile(s + h, 1.5, 0.0) - 2 * phi_profile(s, 1.5, 0.0) + phi_profile(s - h, 1.5, 0.0)
    ) / h**2
    assert second < 0


def test_q_gamma_values():
    np.testing.assert_array_equal(q_gamma([0.0, 0.0], 1.5, 0.3), [0.0, 0.0])
    np.testing.assert_allclose(q_gamma([1.0, 0.0], 2.0, 0.125), [0.625, 0.0], rtol=1e-15)


def test_q_gamma_rotational_equivariance(rng):
    for _ in range(50):
        theta = rng.normal(size=2) * 5
        ang = rng.uniform(0, 2 * math.pi)
        c, s = math.cos(ang), math.sin(ang)
        R = np.array([[c, -s], [s, c]])
        lhs = q_gamma(R @ theta, 1.4, 0.3)
        rhs = R @ q_gamma(theta, 1.4, 0.3)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_q_gamma_growth_bound():
    # |q(theta)| <= (1/2 + delta) |theta|^(gamma-1) for |theta| >= 1
    gamma, delta = 1.33, 0.28
    for r in np.linspace(1.0, 60.0, 200):
        q = np.linalg.norm(q_gamma([r, 0.0], gamma, delta))
        assert q <= (0.5 + delta) * r ** (gamma - 1) + 1e-12


def test_delta0_gamma2_exact():
    assert delta0(2.0) == 0.125


def test_delta0_range():
    with pytest.raises(ValueError):
        delta0(1.0)
    with pytest.raises(ValueError):
        delta0(2.2)


def test_delta0_exceeds_default_delta_at_low_gamma():
    # The reference configuration (delta = 0.28, gamma >= 1.28) stays in the
    # forward-backward regime.
    assert delta0(1.28) > 0.28


@pytest.mark.parametrize("gamma", [1.3, 1.6, 2.0])
def test_delta0_bracketed_by_bridge_detector(gamma):
    d0 = delta0(gamma)
    assert convexify(gamma, d0 - 1e-3).bridge_count >= 1
    assert convexify(gamma, d0 + 1e-3).bridge_count == 0


def test_convexify_no_bridge_above_threshold():
    prof = convexify(2.0, 0.2)
    assert prof.bridge_count == 0
    assert np.max(np.abs(prof.envelope - prof.phi)) <= 1e-9


def test_convexify_single_bridge():
    prof = convexify(2.0, 0.05)
    assert prof.bridge_count == 1
    lo, hi, slope = prof.bridges[0]
    assert 0 < lo < hi < prof.smax
    assert slope > 0


def test_convexify_invariants():
    for gamma, delta in ((2.0, 0.05), (1.33, 0.28), (1.5, 0.6)):
        prof = convexify(gamma, delta)
        assert np.all(prof.envelope <= prof.phi + 1e-12)
        mid = 0.5 * (prof.envelope[:-2] + prof.envelope[2:])
        assert np.all(prof.envelope[1:-1] <= mid + 1e-9)
        assert np.all(np.diff(prof.envelope_deriv) >= -1e-12)
        assert prof.envelope[0] == 0.0
        # contact outside bridges
        inside = np.zeros(len(prof.samples_s), dtype=bool)
        for lo, hi, _ in prof.bridges:
            inside |= (prof.samples_s > lo) & (prof.samples_s < hi)
        assert np.max(np.abs((prof.phi - prof.envelope)[~inside])) <= 1e-9


def test_convexify_idempotent():
    prof = convexify(1.4, 0.2)
    from fbfrac.potential import _lower_hull

    hull = _lower_hull(prof.samples_s, prof.envelope)
    again = np.interp(prof.samples_s, prof.samples_s[hull], prof.envelope[hull])
    assert np.max(np.abs(again - prof.envelope)) <= 1e-12


def test_convexify_bridge_count_monotone_in_delta():
    counts = [convexify(1.5, d).bridge_count for d in np.linspace(0.05, 0.45, 9)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == 0  # 0.45 > delta0(1.5) ~ 0.339


def test_convexify_validation():
    with pytest.raises(ValueError, match="smax"):
        convexify(1.3, 0.01, smax=20.0)
    with pytest.raises(ValueError):
        convexify(1.3, 0.3, n_samples=100)
    with pytest.raises(ValueError):
        convexify(2.5, 0.3)
    with pytest.raises(ValueError):
        convexify(1.5, 0.0)


def test_structure_bounds_on_samples():
    for gamma, delta in ((1.33, 0.28), (2.0, 0.05)):
        prof = convexify(gamma, delta)
        c, C = structure_constants(gamma, delta)
        s = prof.samples_s
        lower = np.maximum(c * s**gamma - 1.0, 0.0)
        upper = C * s**gamma + 1.0
        assert np.all(prof.envelope >= lower - 1e-9)
        assert np.all(prof.envelope <= upper + 1e-9)
        assert np.all(prof.phi <= upper + 1e-9)


def test_rho_matches_flux_off_bridges():
    gamma, delta = 1.33, 0.28
    prof = convexify(gamma, delta)

    def in_bridge(r):
        return any(lo <= r <= hi for lo, hi, _ in prof.bridges)

    checked = 0
    for r in (0.3, 0.5, 12.0, 20.0, 35.0):
        if in_bridge(r):
            continue
        theta = np.array([r * 0.6, r * 0.8])
        np.testing.assert_allclose(
            rho_gamma(prof, theta), q_gamma(theta, gamma, delta), atol=2e-3
        )
        checked += 1
    assert checked >= 3


def test_rho_constant_on_bridge():
    prof = convexify(2.0, 0.05)
    lo, hi, slope = prof.bridges[0]
    r = 0.5 * (lo + hi)
    got = rho_gamma(prof, np.array([r, 0.0]))
    assert np.linalg.norm(got) == pytest.approx(slope, abs=1e-9)


def test_rho_zero_and_domain():
    prof = convexify(1.5, 0.3)
    np.testing.assert_array_equal(rho_gamma(prof, [0.0, 0.0]), [0.0, 0.0])
    with pytest.raises(ValueError, match="domain"):
        rho_gamma(prof, [prof.smax + 1.0, 0.0])
    with pytest.raises(ValueError, match="domain"):
        rho_magnitude(prof, np.array([prof.smax + 1.0]))


def test_rho_monotone(rng):
    prof = convexify(1.33, 0.28)
    for _ in range(1000):
        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction)
        r1, r2 = rng.uniform(0, prof.smax, 2)
        t1, t2 = r1 * direction, r2 * direction
        gap = float(np.dot(rho_gamma(prof, t1) - rho_gamma(prof, t2), t1 - t2))
        assert gap >= -1e-9


def test_tail_extension_consistency():
    prof = convexify(1.5, 0.4, smax=10.0)
    r = np.array([9.0, 10.0, 12.0, 20.0])
    with pytest.warns(RuntimeWarning, match="tail"):
        vals = envelope_value(prof, r, clamp=True)
    with pytest.warns(RuntimeWarning):
        slopes = rho_magnitude(prof, r, clamp=True)
    # linear continuation with the exact terminal slope
    assert slopes[2] == slopes[3] == prof.tail_slope
    assert vals[3] - vals[2] == pytest.approx(8.0 * prof.tail_slope, rel=1e-12)


def test_envelope_energy_matches_envelope_and_derivative():
    prof = convexify(1.4, 0.25)
    r = np.linspace(0.0, prof.smax, 777)
    # the C1 surrogate stays within O(ds^2) of the hull envelope
    assert np.max(np.abs(envelope_energy(prof, r) - envelope_value(prof, r))) <= 1e-3
    # and its finite difference reproduces rho
    eps = 1e-7
    mid = r[5:-5]
    fd = (envelope_energy(prof, mid + eps) - envelope_energy(prof, mid - eps)) / (2 * eps)
    np.testing.assert_allclose(fd, rho_magnitude(prof, mid), atol=1e-5)


def test_profile_csv_dump(tmp_path):
    prof = convexify(1.5, 0.3, n_samples=256)
    path = tmp_path / "profile.csv"
    prof.dump_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "s,phi,phi_star_star,rho"
    assert len(lines) == 257


def test_second_derivative_helper():
    # sanity: matches a finite difference of phi away from zero
    s, h = 1.7, 1e-4
    gamma, delta = 1.6, 0.2
    fd = (
        phi_profile(s + h, gamma, delta)
        - 2 * phi_profile(s, gamma, delta)
        + phi_profile(s - h, gamma, delta)
    ) / h**2
    assert phi_second_derivative(s, gamma, delta) == pytest.approx(fd, abs=1e-5)
