"""Model data and pointwise physics: species tables, coupling constants,
diffusion profiles, boundary values, and the size-modified Slotboom transform.

Units: lengths in angstrom, concentrations in mol/L, potentials dimensionless
(multiples of kT/e). Diffusion constants are used as given; in the steady
state only their ratios influence concentrations and potential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.constants as sc

from .errors import FeasibilityError

TEMPERATURE = 298.15  # Kelvin


def compute_coupling_constants(T=TEMPERATURE):
    """Return (alpha, beta, tau, gamma) from CODATA physical constants.

    alpha scales atomic point charges, beta scales ionic charge density,
    tau scales membrane surface charge, gamma converts A^3 * mol/L into a
    dimensionless volume fraction.
    """
    kT = sc.Boltzmann * T
    e0 = sc.epsilon_0
    ec = sc.elementary_charge
    alpha = 1.0e10 * ec**2 / (e0 * kT)
    beta = sc.Avogadro * ec**2 / (1.0e17 * e0 * kT)
    tau = 1.0e-12 * ec / (e0 * kT)
    gamma = 1.0e-27 * sc.Avogadro
    return alpha, beta, tau, gamma


_ALPHA, _BETA, _TAU, _GAMMA = compute_coupling_constants()


def volume_from_radius(radius):
    """Ball volume 4*pi*r^3/3 in A^3 for a radius in A."""
    return 4.0 * math.pi * radius**3 / 3.0


@dataclass(frozen=True)
class IonSpecies:
    """One ionic species: charge number, ion volume (A^3), bulk
    concentration (mol/L), bulk and channel diffusion constants."""

    name: str
    Z: int
    v: float
    c_b: float
    D_b: float
    D_c: float

    def __post_init__(self):
        if self.c_b <= 0:
            raise ValueError("bulk concentration must be positive: %s" % self.name)
        if self.D_b <= 0 or self.D_c <= 0:
            raise ValueError("diffusion constants must be positive: %s" % self.name)
        if self.v < 0:
            raise ValueError("ion volume must be nonnegative: %s" % self.name)


class SpeciesSet:
    """Ordered collection of at most 8 species with cached numpy views.

    Sizes are either all positive (size-modified mode) or all zero (classical
    PNP reduction); mixing is rejected.  In reduction mode the reference
    volume v0 is conventionally 1 and every size term is bypassed.
    """

    def __init__(self, species):
        species = tuple(species)
        if not 1 <= len(species) <= 8:
            raise ValueError("expected 1..8 species, got %d" % len(species))
        self.species = species
        self.Z = np.array([s.Z for s in species], dtype=float)
        self.v = np.array([s.v for s in species], dtype=float)
        self.c_b = np.array([s.c_b for s in species], dtype=float)
        self.D_b = np.array([s.D_b for s in species], dtype=float)
        self.D_c = np.array([s.D_c for s in species], dtype=float)
        if np.all(self.v == 0.0):
            self.size_mode = False
            self.v0 = 1.0
        elif np.all(self.v > 0.0):
            self.size_mode = True
            self.v0 = float(self.v.min())
        else:
            raise ValueError("ion volumes must be all positive or all zero")

    def __len__(self):
        return len(self.species)

    def __iter__(self):
        return iter(self.species)

    @property
    def names(self):
        return [s.name for s in self.species]

    @property
    def v_ratio(self):
        """Exponents v_i / v0 (zeros in reduction mode)."""
        if not self.size_mode:
            return np.zeros(len(self))
        return self.v / self.v0

    def check_bulk_feasible(self, gamma):
        """Raise if the bulk packing fraction gamma*sum(v_i c_i^b) >= 1."""
        frac = gamma * float(self.v @ self.c_b)
        if frac >= 1.0:
            raise FeasibilityError(
                "bulk volume fraction %.6f >= 1; species set infeasible" % frac
            )


#: Ionic radii (A) behind the four-species mixture Cl-, NO3-, Na+, K+.
MIXTURE_RADII = {"Cl-": 1.81, "NO3-": 2.64, "Na+": 0.95, "K+": 1.33}
MIXTURE_BULK_DIFFUSION = {"Cl-": 0.203, "NO3-": 0.190, "Na+": 0.133, "K+": 0.196}
MIXTURE_CHARGES = {"Cl-": -1, "NO3-": -1, "Na+": 1, "K+": 1}


def mixture_species(c_b=0.1, theta=0.055, sized=True):
    """The NaCl + KNO3 four-species set (Cl-, NO3-, Na+, K+).

    ``theta`` sets the channel diffusion D_c = theta * D_b. With
    ``sized=False`` every ion volume is zeroed (classical PNP reduction).
    """
    out = []
    for name in ("Cl-", "NO3-", "Na+", "K+"):
        v = volume_from_radius(MIXTURE_RADII[name]) if sized else 0.0
        D_b = MIXTURE_BULK_DIFFUSION[name]
        out.append(
            IonSpecies(name, MIXTURE_CHARGES[name], v, c_b, D_b, theta * D_b)
        )
    return SpeciesSet(out)


@dataclass(frozen=True)
class ModelConstants:
    """All scalar model parameters of a run."""

    alpha: float = _ALPHA
    beta: float = _BETA
    tau: float = _TAU
    gamma: float = _GAMMA
    eps_p: float = 2.0
    eps_m: float = 2.0
    eps_s: float = 80.0
    u_b: float = 0.0  # dimensionless potential at z = L_z1
    u_t: float = 0.0  # dimensionless potential at z = L_z2
    sigma: float = 0.0  # membrane surface charge, uC/cm^2
    eta: float = 3.0  # diffusion buffer thickness, A
    cap: float = 45.0  # exponent truncation bound M
    omega: float = 0.41  # damping of the outer block iteration
    eps_outer: float = 1.0e-4
    eps_newton: float = 1.0e-8

    def __post_init__(self):
        if not 0.0 < self.omega < 1.0:
            raise ValueError("damping omega must lie in (0, 1)")
        if min(self.alpha, self.beta, self.tau, self.gamma, self.cap) <= 0:
            raise ValueError("alpha, beta, tau, gamma, cap must be positive")

    def with_(self, **kw):
        return replace(self, **kw)


def capped_exp(x, cap):
    """exp with the argument clamped to [-cap, cap] (overflow guard M)."""
    return np.exp(np.clip(x, -cap, cap))


def diffusion_profile(sp: IonSpecies, z, z1, z2, eta):
    """Piecewise diffusion coefficient of one species as a function of z.

    Bulk value outside the membrane slab, channel value in its interior,
    and a C1 monotone cubic-Hermite blend across the two buffer layers of
    thickness ``eta`` just inside z1 and z2.
    """
    z = np.asarray(z, dtype=float)
    out = np.full(z.shape, sp.D_b)
    mid = (z >= z1 + eta) & (z <= z2 - eta)
    out[mid] = sp.D_c
    if eta > 0:
        lo = (z >= z1) & (z < z1 + eta)
        t = (z[lo] - z1) / eta
        out[lo] = sp.D_b + (sp.D_c - sp.D_b) * t * t * (3.0 - 2.0 * t)
        hi = (z > z2 - eta) & (z <= z2)
        t = (z[hi] - (z2 - eta)) / eta
        out[hi] = sp.D_c + (sp.D_b - sp.D_c) * t * t * (3.0 - 2.0 * t)
    return out


#: Below this the packing is saturated beyond double-precision resolution;
#: 1 - gamma*sum(v c) evaluated in floats can then round to either sign.
WATER_FLOOR = 1.0e-14


def water_fraction(species: SpeciesSet, c, gamma):
    """1 - gamma * sum_j v_j c_j, the local water volume fraction.

    ``c`` has shape (n,) or (n, N).  Raises FeasibilityError on a genuine
    violation; values within roundoff of full packing are clamped to
    WATER_FLOOR so the fractional powers stay finite and positive.
    """
    c = np.asarray(c, dtype=float)
    w = 1.0 - gamma * np.tensordot(species.v, c, axes=1)
    if np.any(w < -1.0e-12):
        raise FeasibilityError("volume-fraction constraint violated: min water fraction %.3e" % np.min(w))
    return np.maximum(w, WATER_FLOOR)


def boundary_conc(species: SpeciesSet, side, constants: ModelConstants):
    """Transformed Dirichlet data g_bar_i on the bottom or top surface.

    g_bar_i = c_i^b exp(Z_i u) / (1 - gamma sum v_j c_j^b)^(v_i/v0) with
    u = u_b (side='bottom') or u_t (side='top').  Returns an (n,) array.
    """
    if side == "bottom":
        u = constants.u_b
    elif side == "top":
        u = constants.u_t
    else:
        raise ValueError("side must be 'bottom' or 'top'")
    species.check_bulk_feasible(constants.gamma)
    w_b = water_fraction(species, species.c_b, constants.gamma)
    gbar = species.c_b * capped_exp(species.Z * u, constants.cap)
    if species.size_mode:
        gbar = gbar / w_b ** species.v_ratio
    return gbar


def slotboom_forward(u, c, species: SpeciesSet, constants: ModelConstants):
    """Size-modified Slotboom transform c -> c_bar at one point or nodewise.

    c_bar_i = c_i exp(Z_i u) / w^(v_i/v0), w = 1 - gamma sum_j v_j c_j.
    ``c`` has shape (n,) or (n, N); ``u`` is scalar or (N,).
    """
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0.0):
        raise FeasibilityError("concentrations must be positive")
    w = water_fraction(species, c, constants.gamma)
    ez = capped_exp(np.multiply.outer(species.Z, u), constants.cap)
    cbar = c * ez
    if species.size_mode:
        cbar = cbar / np.power.outer(w, species.v_ratio).T if c.ndim == 2 else cbar / w ** species.v_ratio
    return cbar


def transformed_diffusion(species: SpeciesSet, i, u, c, d_value, constants: ModelConstants):
    """Transformed diffusion coefficient D_hat_i at one point or nodewise.

    D_hat_i = D_i(r) exp(-Z_i u) w^(v_i/v0) with the exponent clamped to
    +-cap.  ``d_value`` is the raw diffusion coefficient D_i at the same
    point(s); shapes follow slotboom_forward.
    """
    w = water_fraction(species, c, constants.gamma)
    dhat = d_value * capped_exp(-species.Z[i] * np.asarray(u, dtype=float), constants.cap)
    if species.size_mode:
        dhat = dhat * w ** species.v_ratio[i]
    return dhat


def electrochemical_potential(species: SpeciesSet, i, u, c, constants: ModelConstants):
    """Diagnostic mu_i / (kT gamma) = Z_i u + ln(c_i/c_i^b) - (v_i/v0) ln w."""
    c = np.asarray(c, dtype=float)
    if np.any(c[i] <= 0.0):
        raise FeasibilityError("c_%d must be positive" % i)
    w = water_fraction(species, c, constants.gamma)
    val = species.Z[i] * np.asarray(u, dtype=float) + np.log(c[i] / species.c_b[i])
    if species.size_mode:
        val = val - species.v_ratio[i] * np.log(w)
    return val
