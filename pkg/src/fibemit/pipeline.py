"""Config-driven protocol runner behind ``fibemit pipeline``."""

import json
import os

import numpy as np

from . import beamline, optics, patterning, photonstats, sample
from .config import config_hash, with_defaults
from .constants import element
from .patterning import atomic_write
from .transport import Ion, TransportSettings, simulate_ensemble


def derive_seed(*keys):
    """64-bit seed derived from integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def _fmt_json(doc):
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True) + "\n"


class Pipeline:
    def __init__(self, doc, out_dir):
        self.raw = doc
        self.cfg = with_defaults(doc)
        self.seed = int(doc["seed"])
        self.hash = config_hash(doc)
        self.out = out_dir
        self.files = []
        self.profiles = {}
        s = self.cfg["sample"]
        self.model = sample.ActivationModel(**{k: s[k] for k in (
            "yield_single", "n_min_two_step", "alpha_two_step", "w_threshold_ions", "pair_capture",
            "brightness_w", "brightness_g", "collection_area_um2") if k in s})
        self.wafer = sample.Wafer(residual_carbon=s["residual_carbon"])

    # -- helpers -----------------------------------------------------------
    def meta(self, step=None, **extra):
        m = {"config_sha256": self.hash, "seed": self.seed}
        if step is not None:
            m["step"] = step
        m.update(extra)
        return m

    def write(self, name, text):
        os.makedirs(self.out, exist_ok=True)
        atomic_write(os.path.join(self.out, name), text)
        self.files.append(name)

    def write_json(self, name, doc, step=None):
        self.write(name, _fmt_json({**doc, **self.meta(step)}))

    def settings(self):
        t = self.cfg["transport"]
        return TransportSettings(cutoff_ev=t["cutoff_ev"], bin_width_nm=t["bin_width_nm"],
                                 max_depth_nm=t["max_depth_nm"], full_cascade=t["full_cascade"],
                                 scattering=t["scattering"], stopping_correction=t["stopping_correction"],
                                 vacancy_model=t["vacancy_model"], workers=t["workers"])

    def profile(self, symbol, energy_kev):
        key = (symbol, float(energy_kev))
        if key not in self.profiles:
            z, _ = element(symbol)
            seed = derive_seed(self.seed, z, round(energy_kev * 1000))
            self.profiles[key] = simulate_ensemble(Ion.of(symbol), energy_kev,
                                                   histories=self.cfg["transport"]["histories"],
                                                   seed=seed, settings=self.settings())
            p = self.profiles[key]
            tag = f"profile_{symbol}_{energy_kev:g}keV"
            self.write(tag + ".csv", p.to_csv(self.meta(transport_seed=seed)))
            self.write_json(tag + "_stats.json", {**p.stats_dict(), "transport_seed": seed})
        return self.profiles[key]

    def beam(self, symbol, charge, potential_kv):
        b = self.cfg["beamline"]
        source = self.source()
        label = beamline.IonSpecies.of(symbol, charge).label
        match = [s for s in source if s.label == label]
        if not match:
            raise ValueError(f"{label} is not in the source table")
        coll = b["collimation"] if b["collimation"] is not None else beamline.DEFAULT_COLLIMATION
        return beamline.filtered_beam(match[0], potential_kv, b["total_emission_A"], b["window"], coll,
                                      b["spot_fwhm_nm"], source, b["peak_width"])

    def source(self):
        if "source" not in self.raw:
            return beamline.default_source()
        table = [beamline.IonSpecies.of(s["symbol"], s["charge"], s["relative_intensity"], s.get("atoms", 1))
                 for s in self.raw["source"]]
        return beamline.check_source(table)

    def activate(self, step):
        return sample.activate_emitters(self.wafer, self.model, derive_seed(self.seed, step, 1))

    def compose(self, field_):
        o = self.cfg["optics"]
        return optics.field_spectrum(field_, longpass=o["longpass_nm"], noise_floor=o["noise_floor"],
                                     brightness_w=self.model.brightness_w,
                                     brightness_g=self.model.brightness_g)

    # -- steps -------------------------------------------------------------
    def step_mass_spectrum(self, i, st):
        spec = beamline.build_spectrum(self.source(), self.cfg["beamline"]["peak_width"])
        text = spec.to_csv()
        self.write(st.get("name", "mass_spectrum") + ".csv",
                   "# " + json.dumps(self.meta(i), sort_keys=True) + "\n" + text)

    def step_implant_broad(self, i, st):
        energy = st["potential_kv"] * st["charge"]
        prof = self.profile(st["species"], energy)
        self.wafer = sample.implant_broad(self.wafer, st["species"], energy, st["fluence"], prof, self.model)
        self.write(f"step{i:02d}_wafer.json", self._wafer_json(i))

    def step_anneal(self, i, st):
        self.wafer = sample.anneal(self.wafer, st["temperature_C"], st["duration_h"],
                                   self.cfg["sample"]["pair_efficiency"])
        self.write(f"step{i:02d}_wafer.json", self._wafer_json(i))

    def _wafer_json(self, i):
        doc = json.loads(self.wafer.to_json())
        return _fmt_json({**doc, **self.meta(i)})

    def _expose(self, i, x, y, n, symbol, energy):
        prof = self.profile(symbol, energy)
        self.wafer = sample.implant_spots(self.wafer, x, y, n, symbol, energy, prof,
                                          derive_seed(self.seed, i, 0),
                                          self.cfg["sample"]["jitter_nm"])

    def step_implant_grid(self, i, st):
        beam = self.beam(st["species"], st["charge"], st["potential_kv"])
        plan = patterning.plan_grid(st["rows"], st["cols"], st["pitch_nm"], beam, seed=self.seed,
                                    created=self.cfg["patterning"]["created"])
        plan.header["config_sha256"] = self.hash
        name = st.get("name", f"step{i:02d}")
        self.write(name + "_plan.csv", patterning.format_plan(plan))
        x = np.array([s.x_nm for s in plan.spots])
        y = np.array([s.y_nm for s in plan.spots])
        n = np.array([s.expected_ions for s in plan.spots])
        self._expose(i, x, y, n, st["species"], beam.landing_energy)
        self.write(f"step{i:02d}_wafer.json", self._wafer_json(i))

    def step_spectrum(self, i, st):
        field_ = self.activate(i)
        spec = self.compose(field_)
        name = st["name"]
        self.write(name + "_spectrum.csv", spec.to_csv(self.meta(i)))
        self.write(name + "_emitters.csv", field_.to_csv(self.meta(i)))
        doc = {"n_W": int(field_.n_w.sum()), "n_G": int(field_.n_g.sum())}
        try:
            r = optics.zpl_ratio(spec)
            doc.update(ratio_G_over_W=r.value, I_G=r.i_g, I_W=r.i_w, lower_bound=r.lower_bound,
                       upper_bound=r.upper_bound)
        except ValueError as exc:
            doc.update(ratio_G_over_W=None, reason=str(exc))
        self.write_json(name + "_ratio.json", doc, i)

    def step_scan(self, i, st):
        o = self.cfg["optics"]
        field_ = self.activate(i)
        m = optics.confocal_scan(field_, o["psf_fwhm_nm"], o["pixel_nm"], o["longpass_nm"],
                                 o["background_cps"], o["dwell_s"], derive_seed(self.seed, i, 2),
                                 brightness_w=self.model.brightness_w, brightness_g=self.model.brightness_g)
        name = st["name"]
        self.write(name + "_map.csv", m.to_csv(self.meta(i)))
        live = self.wafer.spots["generation"] == sample.generation(self.wafer)
        nexp = self.wafer.spots["n_expected"][live]
        xs, ys = self.wafer.spots["x"][live], self.wafer.spots["y"][live]
        hit = optics.detect_spots(m, xs, ys) if xs.size else np.zeros(0, bool)
        rows = [{"n_expected": float(n), "spots": int(np.sum(nexp == n)),
                 "detected": int(np.sum(hit[nexp == n]))} for n in np.unique(nexp)]
        self.write_json(name + "_map.json", {**m.metadata(), "rows": rows, "shape": list(m.rate.shape)}, i)
        self.write(name + "_emitters.csv", field_.to_csv(self.meta(i)))

    def step_yield_scan(self, i, st):
        energy = st["potential_kv"] * st["charge"]
        n = np.repeat(np.asarray(st["n"], float), st["spots_per_n"])
        x = np.arange(n.size) % 100 * 2000.0
        y = np.arange(n.size) // 100 * 2000.0
        saved = self.wafer
        self._expose(i, x, y, n, st["species"], energy)
        two = bool(self.wafer.history[-1]["pair_overlap"] > 0)
        field_ = self.activate(i)
        self.wafer = saved
        pts = sample.yield_points(field_, n, self.model)
        name = st["name"]
        lines = ["# " + json.dumps(self.meta(i), sort_keys=True), "n_ions,rate_cps"]
        lines += [f"{a:.6g},{b:.6g}" for a, b in pts]
        self.write(name + "_points.csv", "\n".join(lines) + "\n")
        fit = sample.fit_power_law(pts, self.model.noise_floor, "two_step" if two else "single_step")
        self.write_json(name + "_fit.json", {**fit.to_dict(), "noise_floor": self.model.noise_floor}, i)

    def step_reset(self, i, st):
        self.wafer = sample.Wafer(residual_carbon=self.cfg["sample"]["residual_carbon"])

    def step_g2(self, i, st):
        p = self.cfg["photonstats"]
        a, b = photonstats.simulate_stream(st["emitters"], st["emission_rate"], p["lifetime_ns"],
                                           st["background_rate"], st["duration_s"],
                                           derive_seed(self.seed, i, 3), p["jitter_ns"])
        h = photonstats.g2_histogram(a, b, p["bin_ns"], p["window_ns"], p["mode"])
        rho = p["rho"]
        if rho is None:
            total = st["emitters"] * st["emission_rate"]
            rho = photonstats.signal_fraction(total, st["background_rate"]) if total > 0 else None
        fit = photonstats.fit_g2(h, rho)
        name = st["name"]
        self.write(name + "_g2.csv", h.to_csv(self.meta(i)))
        self.write_json(name + "_g2fit.json", {**fit.to_dict(), "coincidences": h.coincidences}, i)

    def run(self):
        for i, st in enumerate(self.cfg["steps"]):
            getattr(self, "step_" + st["op"])(i, st)
        self.write_json("run.json", {"files": sorted(set(self.files))})
        return self.files
