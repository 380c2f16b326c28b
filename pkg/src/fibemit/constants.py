"""Physical constants and the element table used across the package."""

from fractions import Fraction

# exact SI value (2019 redefinition)
ELEMENTARY_CHARGE = 1.602176634e-19
ELEMENTARY_CHARGE_EXACT = Fraction(1602176634, 10**28)

# e^2 / (4 pi eps0) in eV nm
COULOMB_EV_NM = 1.4399645
BOHR_RADIUS_NM = 0.0529177210903

# symbol -> (atomic number, standard atomic weight in amu)
ELEMENTS = {
    "C": (6, 12.011),
    "Al": (13, 26.982),
    "Si": (14, 28.085),
    "Fe": (26, 55.845),
    "Cu": (29, 63.546),
    "Ce": (58, 140.116),
    "Lu": (71, 174.967),
    "Pt": (78, 195.084),
    "Bi": (83, 208.980),
}


def element(symbol):
    """Return ``(Z, mass_amu)`` for an element symbol."""
    try:
        return ELEMENTS[symbol]
    except KeyError:
        raise ValueError(f"unknown element {symbol!r}") from None
