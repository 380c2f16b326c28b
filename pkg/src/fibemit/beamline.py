"""Ion-source emission spectrum, Wien-filter species selection and beam current."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .constants import element

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
DEFAULT_PEAK_WIDTH = 0.25  # FWHM, amu/e
DEFAULT_WINDOW = 1.0  # amu/e
DEFAULT_EMISSION = 10e-6  # A
# mass filtering and aperture losses lumped into one factor, back-solved so
# that 10 uA total emission gives about 1 pA of C+
DEFAULT_COLLIMATION = 1e-12 / (DEFAULT_EMISSION * 0.0018)


@dataclass(frozen=True)
class IonSpecies:
    label: str
    mass: float
    charge: int = 1
    relative_intensity: float = 0.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"{self.label}: mass must be positive")
        if int(self.charge) != self.charge or self.charge < 1:
            raise ValueError(f"{self.label}: charge must be a positive integer")
        if not 0.0 <= self.relative_intensity <= 1.0:
            raise ValueError(f"{self.label}: relative intensity must lie in [0, 1]")

    @property
    def m_over_q(self):
        return self.mass / self.charge

    @classmethod
    def of(cls, symbol, charge=1, relative_intensity=0.0, atoms=1):
        """Species built from the element table; ``atoms`` > 1 gives a cluster ion."""
        _, m = element(symbol)
        # clusters carry a subscript marker so C_2+ is not mistaken for C2+
        label = symbol + (f"_{atoms}" if atoms > 1 else "") + ("+" if charge == 1 else f"{charge}+")
        return cls(label, m * atoms, charge, relative_intensity)


def default_source():
    """Ce-C alloy source composition; metallic contaminants enter with zero intensity."""
    table = [
        IonSpecies.of("Ce", 2, 0.863),
        IonSpecies.of("Ce", 1, 0.029),
        IonSpecies.of("Ce", 3, 0.012),
        IonSpecies.of("C", 1, 0.0018),
        IonSpecies.of("C", 1, 0.0006, atoms=2),
        IonSpecies.of("C", 1, 0.0004, atoms=3),
    ]
    table += [IonSpecies.of(s, 1, 0.0) for s in ("Al", "Fe", "Cu", "Lu", "Pt", "Bi")]
    check_source(table)
    return table


def check_source(table):
    total = sum(s.relative_intensity for s in table)
    if total > 1.0 + 1e-12:
        raise ValueError(f"relative intensities sum to {total:.6g} > 1")
    return table


@dataclass
class MassSpectrum:
    labels: list
    m_over_q: np.ndarray
    intensity: np.ndarray
    width: np.ndarray
    normalization: str = ""

    def __post_init__(self):
        self.m_over_q = np.asarray(self.m_over_q, dtype=float)
        self.intensity = np.asarray(self.intensity, dtype=float)
        self.width = np.broadcast_to(np.asarray(self.width, dtype=float), self.m_over_q.shape).copy()
        if np.any(self.intensity < 0):
            raise ValueError("peak intensities must be non-negative")
        if np.any(self.width <= 0):
            raise ValueError("peak widths must be positive")

    def peak(self, label):
        i = self.labels.index(label)
        return float(self.m_over_q[i]), float(self.intensity[i])

    def evaluate(self, grid):
        """Sum of the Gaussian peaks on an m/q grid (peak heights = intensities)."""
        grid = np.asarray(grid, dtype=float)[:, None]
        sig = self.width * FWHM_TO_SIGMA
        return np.sum(self.intensity * np.exp(-0.5 * ((grid - self.m_over_q) / sig) ** 2), axis=1)

    def to_csv(self, grid=None):
        if grid is None:
            grid = np.arange(0.0, 250.0 + 1e-9, 0.01)
        y = self.evaluate(grid)
        rows = ["m_over_q,intensity"] + [f"{x:.6g},{v:.6g}" for x, v in zip(grid, y)]
        return "\n".join(rows) + "\n"


def build_spectrum(source_table, peak_width=DEFAULT_PEAK_WIDTH):
    """One Gaussian per species at m/q, normalised to the most abundant one."""
    if not source_table:
        raise ValueError("source table is empty")
    if peak_width <= 0:
        raise ValueError("peak width must be positive")
    merged = {}
    for s in source_table:
        key = (s.mass, s.charge)
        if key in merged:
            lab, inten = merged[key]
            merged[key] = (lab, inten + s.relative_intensity)
        else:
            merged[key] = (s.label, s.relative_intensity)
    labels = [v[0] for v in merged.values()]
    mq = np.array([m / q for m, q in merged])
    inten = np.array([v[1] for v in merged.values()])
    top = inten.max()
    if top <= 0:
        raise ValueError("source table has no emitting species")
    ref = labels[int(np.argmax(inten))]
    return MassSpectrum(labels, mq, inten / top, peak_width, ref)


@dataclass
class Transmission:
    fractions: dict = field(default_factory=dict)
    warning: str | None = None

    def __getitem__(self, label):
        return self.fractions[label]


def select_species(spectrum, target_m_over_q, window=DEFAULT_WINDOW):
    """Fraction of each peak passed by a rectangular m/q window centred on the target."""
    if window <= 0:
        raise ValueError("window must be positive")
    lo = target_m_over_q - 0.5 * window
    hi = target_m_over_q + 0.5 * window
    mu = spectrum.m_over_q
    sig = spectrum.width * FWHM_TO_SIGMA * math.sqrt(2.0)
    if math.isinf(window):
        frac = np.ones_like(mu)
    else:
        frac = 0.5 * (erf((hi - mu) / sig) - erf((lo - mu) / sig))
    frac = np.clip(frac, 0.0, 1.0)
    if not np.any((mu >= lo) & (mu <= hi)):
        msg = f"no peak within [{lo:.4g}, {hi:.4g}] amu/e"
        warnings.warn(msg, stacklevel=2)
        return Transmission({k: 0.0 for k in spectrum.labels}, msg)
    return Transmission(dict(zip(spectrum.labels, map(float, frac))))


@dataclass(frozen=True)
class FilteredBeam:
    species: IonSpecies
    current: float
    spot_fwhm: float = 40.0
    potential_kv: float = 20.0

    def __post_init__(self):
        if self.current <= 0:
            raise ValueError("beam current must be positive")
        if self.spot_fwhm <= 0:
            raise ValueError("spot FWHM must be positive")

    @property
    def landing_energy(self):
        """Landing energy in keV (acceleration potential times charge state)."""
        return self.potential_kv * self.species.charge


def beam_current(total_emission, species, transmission, collimation=DEFAULT_COLLIMATION):
    """Filtered current in A: emission x abundance x transmission x collimation."""
    for name, v in (("total_emission", total_emission), ("transmission", transmission),
                    ("collimation", collimation)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative")
    current = total_emission * species.relative_intensity * transmission * collimation
    if current <= 0:
        raise ValueError("beam current is zero; beam unusable")
    return current


def filtered_beam(species, potential_kv, total_emission=DEFAULT_EMISSION, window=DEFAULT_WINDOW,
                  collimation=DEFAULT_COLLIMATION, spot_fwhm=40.0, source=None,
                  peak_width=DEFAULT_PEAK_WIDTH):
    """Select ``species`` from the source spectrum and return the resulting beam."""
    source = default_source() if source is None else source
    spec = build_spectrum(source, peak_width)
    match = [s for s in source if s.label == species.label]
    if not match:
        raise ValueError(f"{species.label} not in source table")
    tr = select_species(spec, species.m_over_q, window)
    cur = beam_current(total_emission, match[0], tr[species.label], collimation)
    return FilteredBeam(match[0], cur, spot_fwhm, potential_kv)
