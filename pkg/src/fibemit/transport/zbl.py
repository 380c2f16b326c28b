"""ZBL universal screened-Coulomb interaction and the binary-collision scattering angle.

Two independent routes to the centre-of-mass deflection angle are provided:

* :func:`magic_angle` -- the Biersack-Haggmark "magic formula" with the ZBL
  fit coefficients (fast, used inside the Monte Carlo kernel);
* :func:`quadrature_angle` -- direct numerical integration of the classical
  scattering integral with scipy (slow, used as a cross-check).

Reduced units: lengths in screening lengths ``a``, energies in ``Z1 Z2 e^2 / a``.
"""

import math

import numpy as np
from numba import njit
from scipy import integrate

from ..constants import BOHR_RADIUS_NM, COULOMB_EV_NM

ZBL_A = (0.18175, 0.50986, 0.28022, 0.028171)
ZBL_B = (3.1998, 0.94229, 0.40290, 0.20162)

# magic formula coefficients fitted to the universal potential
C1, C2, C3, C4, C5 = 0.99229, 0.011615, 0.0071222, 9.3066, 14.813


def screening_length(z1, z2):
    """ZBL universal screening length in nm."""
    return 0.8854 * BOHR_RADIUS_NM / (z1**0.23 + z2**0.23)


def reduced_energy(energy_ev, z1, z2, m1, m2):
    """Reduced (dimensionless) centre-of-mass energy for a lab energy in eV."""
    a = screening_length(z1, z2)
    e_cm = energy_ev * m2 / (m1 + m2)
    return e_cm * a / (z1 * z2 * COULOMB_EV_NM)


@njit(cache=True)
def screening(x):
    return (0.18175 * math.exp(-3.1998 * x) + 0.50986 * math.exp(-0.94229 * x)
            + 0.28022 * math.exp(-0.40290 * x) + 0.028171 * math.exp(-0.20162 * x))


@njit(cache=True)
def screening_deriv(x):
    return -(0.18175 * 3.1998 * math.exp(-3.1998 * x)
             + 0.50986 * 0.94229 * math.exp(-0.94229 * x)
             + 0.28022 * 0.40290 * math.exp(-0.40290 * x)
             + 0.028171 * 0.20162 * math.exp(-0.20162 * x))


@njit(cache=True)
def _apsis(eps, b):
    """Closest approach ``r0`` with ``phi(r0)`` and ``phi'(r0)``.

    Newton iteration on ``g(x) = x^2 - x phi(x) / eps - b^2`` started from one
    fixed-point step off the unscreened root; falls back to the unscreened
    root itself if that start fails to converge.
    """
    xc = 0.5 * (1.0 / eps + math.sqrt(1.0 / (eps * eps) + 4.0 * b * b))
    x = math.sqrt(b * b + xc * screening(xc) / eps)
    phi = 0.0
    dphi = 0.0
    for attempt in range(2):
        for _ in range(40):
            e1 = math.exp(-3.1998 * x)
            e2 = math.exp(-0.94229 * x)
            e3 = math.exp(-0.40290 * x)
            e4 = math.exp(-0.20162 * x)
            phi = 0.18175 * e1 + 0.50986 * e2 + 0.28022 * e3 + 0.028171 * e4
            dphi = -(0.18175 * 3.1998 * e1 + 0.50986 * 0.94229 * e2
                     + 0.28022 * 0.40290 * e3 + 0.028171 * 0.20162 * e4)
            g = x * x - x * phi / eps - b * b
            dg = 2.0 * x - (phi + x * dphi) / eps
            step = g / dg
            if abs(step) < 1e-10 * x:
                return x, phi, dphi
            x -= step
            if x <= 0.0:
                break
        x = xc
    return x, phi, dphi


@njit(cache=True)
def closest_approach(eps, b):
    """Reduced distance of closest approach."""
    return _apsis(eps, b)[0]


@njit(cache=True)
def magic_sin2_half(eps, b):
    """``(cos(theta/2), sin^2(theta/2))`` of the centre-of-mass angle, magic formula.

    ``sin^2`` is formed from ``1 - cos`` directly so grazing collisions keep
    their relative precision.
    """
    r0, phi, dphi = _apsis(eps, b)
    v = phi / r0
    dv = (dphi * r0 - phi) / (r0 * r0)
    rho = -2.0 * (eps - v) / dv
    sq = math.sqrt(eps)
    alpha = 1.0 + C1 / sq
    beta = (C2 + sq) / (C3 + sq)
    gamma = (C4 + eps) / (C5 + eps)
    if b > 0.0:
        a_ = 2.0 * alpha * eps * b**beta
    else:
        a_ = 0.0
    g_ = gamma * (math.sqrt(1.0 + a_ * a_) - a_)
    delta = a_ * (r0 - b) * g_ / (1.0 + g_)
    one_minus = (r0 - b - delta) / (r0 + rho)
    if one_minus < 0.0:
        one_minus = 0.0
    elif one_minus > 1.0:
        one_minus = 1.0
    c = 1.0 - one_minus
    return c, one_minus * (1.0 + c)


@njit(cache=True)
def magic_cos_half(eps, b):
    """cos(theta/2) of the centre-of-mass angle from the magic formula."""
    return magic_sin2_half(eps, b)[0]


@njit(cache=True)
def magic_angle(eps, b):
    """Centre-of-mass scattering angle (rad) in reduced units, magic formula."""
    c, s2 = magic_sin2_half(eps, b)
    return 2.0 * math.atan2(math.sqrt(s2), c)


def quadrature_angle(eps, b):
    """Centre-of-mass scattering angle (rad) by direct quadrature.

    With ``u = r0 / r`` the radicand is written as
    ``[v(r0) - v(r0/u)] + beta^2 (1 - u)(1 + u)`` (``v = phi(x) / (x eps)``,
    ``beta = b / r0``), a sum of non-negative terms, so it keeps its relative
    precision at the apsis. The ``(1-u)^-1/2`` endpoint singularity is left to
    QUADPACK's algebraic weight.
    """
    if b == 0.0:
        return math.pi
    r0 = closest_approach(eps, b)
    beta = b / r0
    v0 = screening(r0) / (r0 * eps)

    def integrand(u):
        u = min(u, 1.0 - 1e-12)
        if u <= 0.0:
            return 1.0
        x = r0 / u
        f = (v0 - screening(x) / (x * eps)) + beta * beta * (1.0 - u) * (1.0 + u)
        return math.sqrt((1.0 - u) / f)

    val, _ = integrate.quad(integrand, 0.0, 1.0, weight="alg", wvar=(0.0, -0.5),
                            epsabs=0.0, epsrel=1e-11, limit=400)
    return math.pi - 2.0 * beta * val


def rutherford_angle(eps, b):
    """Unscreened Coulomb angle, ``tan(theta/2) = 1 / (2 eps b)``."""
    if b == 0.0:
        return math.pi
    return 2.0 * math.atan(1.0 / (2.0 * eps * b))


def scattering_angle(energy, impact_parameter, z1, z2, m1, m2, method="magic"):
    """Centre-of-mass scattering angle in radians.

    ``energy`` is the lab-frame projectile energy in eV and
    ``impact_parameter`` is in nm.
    """
    if energy <= 0:
        raise ValueError("energy must be positive")
    if impact_parameter < 0:
        raise ValueError("impact parameter must be non-negative")
    eps = reduced_energy(energy, z1, z2, m1, m2)
    b = impact_parameter / screening_length(z1, z2)
    if method == "magic":
        return float(magic_angle(eps, b))
    if method == "quadrature":
        return quadrature_angle(eps, b)
    raise ValueError(f"unknown method {method!r}")


def magic_angle_array(eps, b):
    eps = np.asarray(eps, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast(eps, b).shape)
    for i, (e, bb) in enumerate(np.broadcast(eps, b)):
        out.flat[i] = magic_angle(e, bb)
    return out
