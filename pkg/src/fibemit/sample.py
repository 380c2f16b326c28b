"""Layered wafer state and phenomenological W/G emitter activation.

Emitters are not modelled microscopically. A spot or broad exposure carries
its ion count and damage; :func:`activate_emitters` turns those into Poisson
emitter counts with yields calibrated on the single-step and two-step
protocols.
"""

import copy
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

CALIBRATED_ANNEAL = (500.0, 2.0)  # deg C, hours
NM_PER_CM = 1e7
NM2_PER_CM2 = 1e14
# vacancies per 20 keV C ion in Si with the default transport settings; the
# W yield is expressed per ion of this damage
REFERENCE_VACANCIES = 208.0


class AnnealWarning(UserWarning):
    pass


@dataclass
class ActivationModel:
    yield_single: float = 1.0 / 2000.0
    n_min_two_step: float = 150.0
    alpha_two_step: float = 0.6
    w_threshold_ions: float = 1600.0
    # fraction of step-3 interstitials captured by an overlapping pair layer
    pair_capture: float = 0.95
    brightness_w: float = 2.0e4  # photons/s per emitter at the detector
    brightness_g: float = 2.0e4
    collection_area_um2: float = 25.0  # area a broad-implant spectrum integrates over

    def __post_init__(self):
        for name in ("yield_single", "n_min_two_step", "alpha_two_step", "w_threshold_ions",
                     "brightness_w", "brightness_g", "collection_area_um2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.pair_capture <= 1.0:
            raise ValueError("pair_capture must lie in [0, 1]")

    @property
    def k_two_step(self):
        """Two-step coefficient so that ``k * n_min**alpha`` is one emitter."""
        return self.n_min_two_step ** (-self.alpha_two_step)

    @property
    def noise_floor(self):
        """Count rate of one G centre; by calibration the detection floor of the yield plot."""
        return self.brightness_g

    def expected_g(self, n, two_step):
        n = np.asarray(n, dtype=float)
        if two_step:
            return self.k_two_step * n ** self.alpha_two_step
        return self.yield_single * n

    def expected_w(self, damage_ions):
        return np.asarray(damage_ions, dtype=float) / self.w_threshold_ions


@dataclass
class Wafer:
    """Silicon wafer on a 1-D depth grid (nm); densities in cm^-3."""

    residual_carbon: float = 5e14
    depth_edges: np.ndarray = field(default_factory=lambda: np.arange(0.0, 1001.0, 1.0))
    implanted_c: np.ndarray = None
    substitutional_c: np.ndarray = None
    pairs: np.ndarray = None
    interstitials: np.ndarray = None
    damage: np.ndarray = None
    history: list = field(default_factory=list)
    exposures: list = field(default_factory=list)
    spots: dict = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.residual_carbon < 0:
            raise ValueError("residual carbon must be non-negative")
        n = len(self.depth_edges) - 1
        for name in ("implanted_c", "substitutional_c", "pairs", "interstitials", "damage"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n))
        if self.spots is None:
            self.spots = _empty_spots()

    @classmethod
    def high_purity(cls):
        return cls(residual_carbon=5e14)

    @property
    def bin_centers(self):
        return 0.5 * (self.depth_edges[1:] + self.depth_edges[:-1])

    @property
    def annealed(self):
        return [(h["temperature_C"], h["duration_h"]) for h in self.history if h["op"] == "anneal"]

    def copy(self):
        return copy.deepcopy(self)

    def physical_state(self):
        """Everything except the operation log (used for idempotence checks)."""
        return (self.implanted_c.tobytes(), self.substitutional_c.tobytes(), self.pairs.tobytes(),
                self.interstitials.tobytes(), self.damage.tobytes(),
                json.dumps([e for e in self.exposures], sort_keys=True),
                {k: v.tobytes() for k, v in self.spots.items()}.__repr__())

    def layers(self):
        """Non-empty depth bins as a list of layer records."""
        out = []
        arrays = (self.implanted_c + self.substitutional_c, self.pairs, self.interstitials)
        for i in np.flatnonzero(arrays[0] + arrays[1] + arrays[2] > 0):
            out.append({
                "top_nm": float(self.depth_edges[i]),
                "bottom_nm": float(self.depth_edges[i + 1]),
                "implanted_C": float(arrays[0][i]),
                "substitutional_pair_density": float(arrays[1][i]),
                "Si_interstitial_density": float(arrays[2][i]),
            })
        return out

    def to_json(self):
        doc = {
            "residual_carbon": self.residual_carbon,
            "layers": self.layers(),
            "annealed": [list(a) for a in self.annealed],
            "history": self.history,
            "spots": int(self.spots["n_actual"].size),
            "flags": self.flags,
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


_SPOT_FIELDS = ("x", "y", "n_expected", "n_actual", "damage_ions", "pair_overlap", "generation")


def _empty_spots():
    return {k: np.zeros(0, dtype=np.int64 if k in ("n_actual", "generation") else float)
            for k in _SPOT_FIELDS}


def _resample(profile_edges, values, edges):
    """Conserve the integral of a histogram when moving it to new bin edges."""
    cum = np.concatenate([[0.0], np.cumsum(values)])
    c = np.interp(edges, profile_edges, cum, left=0.0, right=cum[-1])
    return np.diff(c)


def _layer_density(profile, counts, edges):
    """Per-ion density (1/nm) of a profile histogram on the wafer grid."""
    total = profile.histories
    return _resample(profile.depth_bins, np.asarray(counts, dtype=float) / total, edges) / np.diff(edges)


def overlap_integral(a, b, edges):
    """Overlap of two depth distributions after normalising each to unit area."""
    w = np.diff(edges)
    sa = np.sum(a * w)
    sb = np.sum(b * w)
    if sa <= 0 or sb <= 0:
        return 0.0
    return float(np.sum(np.minimum(a / sa, b / sb) * w))


def generation(wafer):
    return len(wafer.annealed)


def _check_profile(profile, species, energy_kev):
    if profile.ion != species or not math.isclose(profile.energy_kev, energy_kev, rel_tol=1e-9):
        raise ValueError(f"profile is for {profile.ion} at {profile.energy_kev} keV, "
                         f"not {species} at {energy_kev} keV")


def implant_broad(wafer, species, energy_kev, fluence, profile, model=None):
    """Broad-beam implant of ``fluence`` ions/cm^2 using a matching transport profile."""
    if fluence < 0:
        raise ValueError("fluence must be non-negative")
    _check_profile(profile, species, energy_kev)
    if fluence == 0:
        return wafer
    model = model or ActivationModel()
    out = wafer.copy()
    edges = out.depth_edges
    ions = _layer_density(profile, profile.stopped_ion_counts, edges) * fluence * NM_PER_CM
    vac = _layer_density(profile, profile.vacancy_counts, edges) * fluence * NM_PER_CM
    if species == "C":
        out.implanted_c += ions
    else:
        out.interstitials += ions
    out.damage += vac
    area_nm2 = model.collection_area_um2 * 1e6
    n_area = fluence * area_nm2 / NM2_PER_CM2
    # residual carbon inside the damaged layer can also form G centres
    damaged = vac > 0.01 * vac.max() if vac.max() > 0 else np.zeros_like(vac, bool)
    depth_nm = float(np.sum(np.diff(edges)[damaged]))
    residual_atoms = out.residual_carbon * area_nm2 / NM2_PER_CM2 * depth_nm / NM_PER_CM
    out.exposures.append({
        "species": species,
        "energy_keV": float(energy_kev),
        "fluence": float(fluence),
        "ions_in_area": float(n_area),
        "carbon_atoms": float(n_area if species == "C" else 0.0) + residual_atoms,
        "damage_ions": float(n_area * profile.vacancies_per_ion / REFERENCE_VACANCIES),
        "generation": generation(out),
    })
    out.history.append({"op": "implant_broad", "species": species, "energy_keV": float(energy_kev),
                        "fluence": float(fluence)})
    return out


def anneal(wafer, temperature, duration, pair_efficiency=1.0):
    """Thermal anneal: erases damage-related emitters and pairs up implanted carbon.

    A fraction ``pair_efficiency`` of the implanted carbon becomes
    substitutional pairs, the rest stays as isolated substitutional carbon.
    Only (500 C, 2 h) is calibrated; other points warn and apply the same rule.
    Repeating an anneal does not change the physical state.
    """
    if not 0.0 <= pair_efficiency <= 1.0:
        raise ValueError("pair efficiency must lie in [0, 1]")
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if duration == 0:
        return wafer
    if not any(h["op"].startswith("implant") for h in wafer.history):
        raise ValueError("anneal needs a wafer with implantation history")
    out = wafer.copy()
    if (float(temperature), float(duration)) != CALIBRATED_ANNEAL:
        msg = f"anneal at {temperature} C for {duration} h is outside the calibrated point; extrapolated"
        warnings.warn(msg, AnnealWarning, stacklevel=2)
        out.flags.append(msg)
    eta = pair_efficiency
    out.pairs += eta * out.implanted_c
    out.substitutional_c += (1.0 - eta) * out.implanted_c
    out.implanted_c[:] = 0.0
    out.interstitials[:] = 0.0
    out.damage[:] = 0.0
    out.history.append({"op": "anneal", "temperature_C": float(temperature), "duration_h": float(duration)})
    return out


def implant_spots(wafer, x, y, n_expected, species, energy_kev, profile, seed,
                  jitter_nm=10.0):
    """Local FIB exposures; the delivered ion count of each spot is Poisson(n_expected)."""
    _check_profile(profile, species, energy_kev)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_expected = np.broadcast_to(np.asarray(n_expected, dtype=float), x.shape)
    if np.any(n_expected <= 0):
        raise ValueError("expected ion counts must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), len(wafer.history)]))
    n_actual = rng.poisson(n_expected).astype(np.int64)
    if jitter_nm > 0:
        x = x + rng.normal(0.0, jitter_nm, x.shape)
        y = y + rng.normal(0.0, jitter_nm, y.shape)
    out = wafer.copy()
    edges = out.depth_edges
    vac = _layer_density(profile, profile.vacancy_counts, edges)
    ov = overlap_integral(out.pairs, vac, edges) if out.pairs.any() else 0.0
    new = {
        "x": x, "y": y, "n_expected": n_expected.copy(), "n_actual": n_actual,
        "damage_ions": n_actual * (profile.vacancies_per_ion / REFERENCE_VACANCIES),
        "pair_overlap": np.full(x.shape, ov),
        "generation": np.full(x.shape, generation(out), dtype=np.int64),
    }
    out.spots = {k: np.concatenate([out.spots[k], new[k]]) for k in _SPOT_FIELDS}
    out.history.append({"op": "implant_spots", "species": species, "energy_keV": float(energy_kev),
                        "count": int(x.size), "seed": int(seed), "pair_overlap": ov})
    return out


def implant_spot(wafer, site, species, energy_kev, n_expected, profile, seed, jitter_nm=10.0):
    return implant_spots(wafer, [site[0]], [site[1]], [n_expected], species, energy_kev,
                         profile, seed, jitter_nm)


@dataclass
class EmitterField:
    x: np.ndarray
    y: np.ndarray
    n_w: np.ndarray
    n_g: np.ndarray
    rate: np.ndarray
    two_step: np.ndarray = None
    n_ions: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.x.size)

    @property
    def sites(self):
        return [(float(a), float(b), int(w), int(g), float(r))
                for a, b, w, g, r in zip(self.x, self.y, self.n_w, self.n_g, self.rate)]

    @property
    def empty(self):
        return not (np.any(self.n_w) or np.any(self.n_g))

    def to_csv(self, header=None):
        lines = ["# " + json.dumps(header, sort_keys=True)] if header else []
        lines.append("x_nm,y_nm,n_W,n_G,rate_cps")
        for a, b, w, g, r in self.sites:
            lines.append(f"{a:.6g},{b:.6g},{w},{g},{r:.6g}")
        return "\n".join(lines) + "\n"


def activate_emitters(wafer, model=None, seed=0):
    """Sample W and G emitter counts for every live spot and broad exposure.

    Spots or exposures made before the most recent anneal have been erased.
    """
    model = model or ActivationModel()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A17]))
    gen = generation(wafer)
    xs, ys, lw, lg, two, nion = [], [], [], [], [], []
    for e in wafer.exposures:
        if e["generation"] != gen:
            continue
        xs.append(0.0)
        ys.append(0.0)
        lg.append(model.yield_single * e["carbon_atoms"])
        lw.append(model.expected_w(e["damage_ions"]))
        two.append(False)
        nion.append(e["ions_in_area"])
    sp = wafer.spots
    live = sp["generation"] == gen
    n = sp["n_actual"][live].astype(float)
    ov = sp["pair_overlap"][live]
    two_step = ov > 0
    # below the threshold ion count a spot forms no detectable defect; the
    # pre-existing pair layer lifts this for G
    above = n >= model.w_threshold_ions
    lam_g = np.where(two_step, model.expected_g(n, True),
                     np.where(above, model.expected_g(n, False), 0.0))
    lam_w = np.where(above, model.expected_w(sp["damage_ions"][live]), 0.0)
    lam_w = np.where(two_step, (1.0 - model.pair_capture) * lam_w, lam_w)
    x = np.concatenate([np.asarray(xs, float), sp["x"][live]])
    y = np.concatenate([np.asarray(ys, float), sp["y"][live]])
    lam_g = np.concatenate([np.asarray(lg, float), lam_g])
    lam_w = np.concatenate([np.asarray(lw, float), lam_w])
    n_g = rng.poisson(lam_g)
    n_w = rng.poisson(lam_w)
    rate = n_w * model.brightness_w + n_g * model.brightness_g
    return EmitterField(x, y, n_w, n_g, rate,
                        np.concatenate([np.asarray(two, bool), two_step]),
                        np.concatenate([np.asarray(nion, float), n]),
                        {"expected_w": lam_w, "expected_g": lam_g})


@dataclass(frozen=True)
class YieldFit:
    k: float
    alpha: float
    n_min: float
    protocol: str = ""

    def __post_init__(self):
        if self.k <= 0 or self.n_min <= 0:
            raise ValueError("k and n_min must be positive")
        if not 0 < self.alpha <= 2:
            raise ValueError("alpha must lie in (0, 2]")

    def to_dict(self):
        return {"k": self.k, "alpha": self.alpha, "n_min": self.n_min, "protocol": self.protocol}


class PowerLawYield(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``log rate = log k + alpha log n`` above a noise floor."""

    def __init__(self, noise_floor=0.0):
        self.noise_floor = noise_floor

    def fit(self, X, y):
        n = column_or_1d(np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0])
        r = column_or_1d(y).astype(float)
        if n.shape != r.shape:
            raise ValueError("X and y differ in length")
        if np.any(r <= 0):
            warnings.warn(f"{int(np.sum(r <= 0))} non-positive rates excluded", stacklevel=2)
        keep = (r > max(self.noise_floor, 0.0)) & (n > 0)
        if keep.sum() < 3:
            raise ValueError(f"need at least 3 points above the noise floor, got {int(keep.sum())}")
        self.alpha_, logk = np.polyfit(np.log(n[keep]), np.log(r[keep]), 1)
        self.k_ = float(np.exp(logk))
        self.alpha_ = float(self.alpha_)
        self.n_used_ = int(keep.sum())
        if self.noise_floor > 0:
            self.n_min_ = float((self.noise_floor / self.k_) ** (1.0 / self.alpha_))
        else:
            self.n_min_ = float("nan")
        return self

    def predict(self, X):
        check_is_fitted(self, "k_")
        n = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        return self.k_ * n**self.alpha_


def fit_power_law(points, noise_floor, protocol=""):
    """Fit ``(n, rate)`` points and extrapolate to the noise floor."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    est = PowerLawYield(noise_floor).fit(pts[:, :1], pts[:, 1])
    return YieldFit(est.k_, est.alpha_, est.n_min_, protocol)


def yield_points(field_, n_expected, model=None):
    """Mean G-centre photon rate per expected-ion group, as ``(n, rate)`` rows.

    ``n_expected`` labels the spot sites of ``field_`` in order.
    """
    model = model or ActivationModel()
    n_expected = np.asarray(n_expected, dtype=float)
    g = field_.n_g[field_.n_g.size - n_expected.size:] * model.brightness_g
    return [(float(n), float(np.mean(g[n_expected == n]))) for n in np.unique(n_expected)]
