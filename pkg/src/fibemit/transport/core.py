import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np

from ..constants import element
from . import kernel
from .zbl import reduced_energy, screening_length

E_MIN_EV = 10.0
E_MAX_EV = 100e3


@dataclass(frozen=True)
class Ion:
    symbol: str
    atomic_number: int
    mass: float

    @classmethod
    def of(cls, symbol):
        z, m = element(symbol)
        return cls(symbol, z, m)


@dataclass(frozen=True)
class TargetMaterial:
    """Monatomic amorphous target. Density in atoms/cm^3, energies in eV."""

    atomic_number: int
    mass: float
    atomic_density: float
    displacement_energy: float
    surface_binding: float
    symbol: str = ""

    def __post_init__(self):
        if self.atomic_density <= 0:
            raise ValueError("atomic density must be positive")
        if self.displacement_energy <= 0:
            raise ValueError("displacement energy must be positive")

    @property
    def density_nm3(self):
        return self.atomic_density * 1e-21

    @property
    def free_path(self):
        """Mean interatomic spacing N^(-1/3) in nm."""
        return self.density_nm3 ** (-1.0 / 3.0)

    @property
    def max_impact_parameter(self):
        return self.free_path / math.sqrt(math.pi)


SILICON = TargetMaterial(14, 28.085, 4.977e22, 15.0, 4.7, "Si")


@dataclass(frozen=True)
class TransportSettings:
    cutoff_ev: float = 5.0
    bin_width_nm: float = 1.0
    max_depth_nm: float = 1000.0
    full_cascade: bool = False
    scattering: str = "magic-table"  # or "magic", "gauss-mehler"
    # scales Lindhard-Scharff stopping; calibrated on keV C and Si ranges in Si
    stopping_correction: float = 1.35
    vacancy_model: str = "nrt"  # or "events": one per displacing collision
    workers: int | None = None
    block_size: int = 2048


@dataclass(frozen=True)
class RngStream:
    """Identifies the random stream of one history."""

    seed: int
    index: int = 0


@dataclass(frozen=True)
class CollisionEvent:
    depth: float
    energy_transferred: float
    recoil_generated: bool


@dataclass
class Trajectory:
    stop_depth: float | None
    backscattered: bool
    events: list
    electronic_loss: float
    nuclear_loss: float
    residual_energy: float
    vacancies: int


@dataclass
class ImplantProfile:
    depth_bins: np.ndarray
    stopped_ion_counts: np.ndarray
    vacancy_counts: np.ndarray
    histories: int
    mean_range: float = float("nan")
    straggle: float = float("nan")
    vacancy_peak_depth: float = float("nan")
    ion: str = ""
    energy_kev: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def bin_centers(self):
        return 0.5 * (self.depth_bins[1:] + self.depth_bins[:-1])

    @property
    def stopped(self):
        return int(self.stopped_ion_counts.sum())

    def density(self):
        """Stopped-ion depth distribution normalised to one ion (1/nm)."""
        return self.stopped_ion_counts / (self.histories * np.diff(self.depth_bins))

    def vacancy_density(self):
        """Vacancies per ion per nm."""
        return self.vacancy_counts / (self.histories * np.diff(self.depth_bins))

    @property
    def vacancies_per_ion(self):
        return float(self.vacancy_counts.sum()) / self.histories

    def to_csv(self, header=None):
        lines = []
        if header:
            lines.append("# " + json.dumps(header, sort_keys=True))
        lines.append("depth_nm_bin_center,stopped_ions,vacancies")
        for c, s, v in zip(self.bin_centers, self.stopped_ion_counts, self.vacancy_counts):
            lines.append(f"{c:.6g},{int(s)},{int(v)}")
        return "\n".join(lines) + "\n"

    def stats_dict(self):
        return {
            "mean_range_nm": self.mean_range,
            "straggle_nm": self.straggle,
            "vacancy_peak_nm": self.vacancy_peak_depth,
            "histories": self.histories,
        }


def _pair_params(z1, m1, z2, m2, atomic_density, correction):
    a = screening_length(z1, z2)
    kl = (correction * 1.212 * z1 ** (7 / 6) * z2
          / ((z1 ** (2 / 3) + z2 ** (2 / 3)) ** 1.5 * math.sqrt(m1)))  # eV A^2 / sqrt(eV)
    kl *= atomic_density * 1e-24 * 10.0  # -> eV/nm per sqrt(eV)
    p = np.empty(kernel.NPAIR)
    p[kernel.P_EPS_FACTOR] = reduced_energy(1.0, z1, z2, m1, m2)
    p[kernel.P_INV_SCREEN] = 1.0 / a
    p[kernel.P_GAMMA] = 4.0 * m1 * m2 / (m1 + m2) ** 2
    p[kernel.P_MASS_RATIO] = m1 / m2
    p[kernel.P_KL] = kl
    return p


def _damage_constants(target):
    z, m = target.atomic_number, target.mass
    el = 30.724 * z * z * math.sqrt(2 * z ** (2 / 3)) * 2.0
    kdam = 0.1337 * z ** (1 / 6) * math.sqrt(z / m)
    return el, kdam


SCATTERING = ("magic-table", "magic", "gauss-mehler")
TABLE_SHAPE = (400, 240)


def _scatter_code(name):
    if name == "magic-table":
        return kernel.SCATTER_TABLE
    if name == "magic":
        return kernel.SCATTER_MAGIC
    if name == "gauss-mehler":
        return kernel.SCATTER_GAUSS_MEHLER
    raise ValueError(f"unknown scattering method {name!r}")


@lru_cache(maxsize=32)
def _magic_table(eps_factor, inv_screen, pmax, e_max):
    """Magic-formula ``log sin^2(theta/2)`` table covering 0.5 eV .. e_max."""
    return kernel.build_table(0.5 * eps_factor, 1.01 * e_max * eps_factor, 1e-4,
                              1.0001 * pmax * inv_screen, TABLE_SHAPE[0], TABLE_SHAPE[1],
                              kernel.SCATTER_MAGIC)


def electronic_stopping(energy, ion, target=SILICON, correction=1.0):
    """Lindhard-Scharff electronic stopping in eV/nm for ``energy`` in eV."""
    energy = np.asarray(energy, dtype=float)
    if np.any(energy < E_MIN_EV) or np.any(energy > E_MAX_EV):
        raise ValueError(f"energy outside validated window [{E_MIN_EV}, {E_MAX_EV}] eV")
    p = _pair_params(ion.atomic_number, ion.mass, target.atomic_number, target.mass,
                     target.atomic_density, correction)
    out = p[kernel.P_KL] * np.sqrt(energy)
    return float(out) if out.ndim == 0 else out


def kernel_seed(seed):
    """A 64-bit seed as the signed integer the compiled kernel takes (same bits)."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed - 2**64 if seed >= 2**63 else seed


@dataclass
class _Setup:
    ion: np.ndarray
    itab: np.ndarray
    ihead: np.ndarray
    rec: np.ndarray
    rtab: np.ndarray
    rhead: np.ndarray
    el: float
    kdam: float
    nrt: bool
    method: int


def _setup(ion, target, settings, e0_ev):
    method = _scatter_code(settings.scattering)
    ionp = _pair_params(ion.atomic_number, ion.mass, target.atomic_number, target.mass,
                        target.atomic_density, settings.stopping_correction)
    recp = _pair_params(target.atomic_number, target.mass, target.atomic_number,
                        target.mass, target.atomic_density, settings.stopping_correction)
    el, kdam = _damage_constants(target)
    pmax = target.max_impact_parameter
    e_max = max(E_MAX_EV, e0_ev)
    if method == kernel.SCATTER_TABLE:
        itab, ihead = _magic_table(ionp[kernel.P_EPS_FACTOR], ionp[kernel.P_INV_SCREEN], pmax, e_max)
        rtab, rhead = _magic_table(recp[kernel.P_EPS_FACTOR], recp[kernel.P_INV_SCREEN], pmax, e_max)
    else:
        itab = rtab = np.zeros((2, 2))
        ihead = rhead = np.zeros(4)
    if settings.vacancy_model not in ("events", "nrt"):
        raise ValueError(f"unknown vacancy model {settings.vacancy_model!r}")
    return _Setup(ionp, itab, ihead, recp, rtab, rhead, el, kdam,
                  settings.vacancy_model == "nrt", method)


def simulate_history(ion, energy_kev, target=SILICON, rng_stream=RngStream(0, 0),
                     settings=TransportSettings(), max_events=200000):
    """Transport a single ion at normal incidence and return its trajectory record."""
    if energy_kev <= 0:
        raise ValueError("energy must be positive")
    su = _setup(ion, target, settings, energy_kev * 1e3)
    nbins = int(math.ceil(settings.max_depth_nm / settings.bin_width_nm))
    vac = np.zeros(nbins, dtype=np.int64)
    ev_d = np.empty(max_events)
    ev_e = np.empty(max_events)
    z, back, eel, enuc, eres, nev, nvac = kernel.run_history(
        energy_kev * 1e3, su.ion, su.itab, su.ihead, su.rec, su.rtab, su.rhead,
        target.free_path, target.max_impact_parameter, target.displacement_energy,
        settings.cutoff_ev, su.el, su.kdam, su.nrt, su.method, settings.full_cascade,
        kernel_seed(rng_stream.seed), rng_stream.index, vac, settings.bin_width_nm,
        np.empty((256, 5)), ev_d, ev_e)
    ed = target.displacement_energy
    n = min(nev, max_events)
    events = [CollisionEvent(float(d), float(t), bool(t >= ed)) for d, t in zip(ev_d[:n], ev_e[:n])]
    return Trajectory(None if back else float(z), bool(back), events, float(eel),
                      float(enuc), float(eres), int(nvac))


def simulate_ensemble(ion, energy_kev, target=SILICON, histories=10000, seed=0,
                      settings=TransportSettings(), return_energies=False):
    """Aggregate ``histories`` independent ions into an :class:`ImplantProfile`.

    Output depends only on the inputs and ``seed``; ``settings.workers`` only
    changes wall time.
    """
    if histories < 1:
        raise ValueError("histories must be >= 1")
    if energy_kev <= 0:
        raise ValueError("energy must be positive")
    su = _setup(ion, target, settings, energy_kev * 1e3)
    kseed = kernel_seed(seed)
    bw = settings.bin_width_nm
    nbins = int(math.ceil(settings.max_depth_nm / bw))
    prev = numba.get_num_threads()
    if settings.workers:
        numba.set_num_threads(min(settings.workers, numba.config.NUMBA_NUM_THREADS))
    try:
        depths, backs, energies = [], [], []
        vac = np.zeros(nbins, dtype=np.int64)
        for start in range(0, histories, settings.block_size):
            count = min(settings.block_size, histories - start)
            d, b, en, v = kernel.run_block(
                energy_kev * 1e3, su.ion, su.itab, su.ihead, su.rec, su.rtab, su.rhead,
                target.free_path, target.max_impact_parameter, target.displacement_energy,
                settings.cutoff_ev, su.el, su.kdam, su.nrt, su.method, settings.full_cascade,
                kseed, start, count, nbins, bw)
            depths.append(d)
            backs.append(b)
            energies.append(en)
            vac += v.sum(axis=0)
    finally:
        numba.set_num_threads(prev)
    depths = np.concatenate(depths)
    backs = np.concatenate(backs)
    stopped = depths[~backs]
    idx = np.clip((stopped / bw).astype(np.int64), 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins).astype(np.int64)
    last = max(np.flatnonzero(counts).max(initial=0), np.flatnonzero(vac).max(initial=0))
    nkeep = int(last) + 2
    edges = np.arange(nkeep + 1) * bw
    prof = ImplantProfile(edges, counts[:nkeep], vac[:nkeep], histories,
                          ion=ion.symbol, energy_kev=float(energy_kev))
    prof.meta["backscattered"] = int(backs.sum())
    if prof.stopped:
        stats = profile_stats(prof)
        prof.mean_range = stats["mean_range"]
        prof.straggle = stats["straggle"]
        prof.vacancy_peak_depth = stats["vacancy_peak_depth"]
    if return_energies:
        return prof, np.concatenate(energies)
    return prof


def profile_stats(profile):
    """Histogram moments and the smoothed vacancy-peak depth."""
    counts = np.asarray(profile.stopped_ion_counts, dtype=float)
    if counts.sum() <= 0:
        raise ValueError("profile has no stopped ions")
    centers = 0.5 * (profile.depth_bins[1:] + profile.depth_bins[:-1])
    mean = float(np.sum(counts * centers) / counts.sum())
    var = float(np.sum(counts * (centers - mean) ** 2) / counts.sum())
    vac = np.asarray(profile.vacancy_counts, dtype=float)
    if vac.sum() > 0:
        smooth = np.convolve(vac, np.ones(3) / 3.0, mode="same")
        peak = float(centers[int(np.argmax(smooth))])
    else:
        peak = float("nan")
    return {"mean_range": mean, "straggle": math.sqrt(max(var, 0.0)), "vacancy_peak_depth": peak}
