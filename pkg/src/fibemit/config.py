"""Run configuration: strict JSON schema, defaults and a canonical hash."""

import copy
import hashlib
import json
import os
from importlib import resources

import jsonschema

ENV_OUTPUT_DIR = "FIBEMIT_OUTPUT_DIR"
BUNDLED = ("fig2a", "fig2b", "fig3", "fig4", "fig5")


class ConfigError(ValueError):
    pass


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


NUM = {"type": "number"}
POS = {"type": "number", "exclusiveMinimum": 0}
NONNEG = {"type": "number", "minimum": 0}
INT = {"type": "integer"}
STR = {"type": "string"}
NUMLIST = {"type": "array", "items": POS, "minItems": 1}

SPECIES = _obj({"label": STR, "symbol": STR, "atoms": {"type": "integer", "minimum": 1},
                "charge": {"type": "integer", "minimum": 1},
                "relative_intensity": {"type": "number", "minimum": 0, "maximum": 1}},
               ["symbol", "charge", "relative_intensity"])

ION = {"species": {"type": "string", "enum": ["C", "Si"]},
       "charge": {"type": "integer", "minimum": 1}, "potential_kv": POS}

STEPS = {
    "mass_spectrum": _obj({"op": {"const": "mass_spectrum"}, "name": STR}, ["op"]),
    "implant_broad": _obj({"op": {"const": "implant_broad"}, "fluence": NONNEG, **ION},
                          ["op", "species", "charge", "potential_kv", "fluence"]),
    "anneal": _obj({"op": {"const": "anneal"}, "temperature_C": NUM, "duration_h": NONNEG},
                   ["op", "temperature_C", "duration_h"]),
    "implant_grid": _obj({"op": {"const": "implant_grid"}, "rows": NUMLIST,
                          "cols": {"type": "integer", "minimum": 1}, "pitch_nm": POS,
                          "name": STR, **ION},
                         ["op", "species", "charge", "potential_kv", "rows", "cols", "pitch_nm"]),
    "spectrum": _obj({"op": {"const": "spectrum"}, "name": STR}, ["op", "name"]),
    "scan": _obj({"op": {"const": "scan"}, "name": STR}, ["op", "name"]),
    "yield_scan": _obj({"op": {"const": "yield_scan"}, "name": STR, "n": NUMLIST,
                        "spots_per_n": {"type": "integer", "minimum": 1}, **ION},
                       ["op", "name", "n", "spots_per_n", "species", "charge", "potential_kv"]),
    "reset": _obj({"op": {"const": "reset"}}, ["op"]),
    "g2": _obj({"op": {"const": "g2"}, "name": STR, "emitters": {"type": "integer", "minimum": 0},
                "emission_rate": NONNEG, "background_rate": NONNEG, "duration_s": POS},
               ["op", "name", "emitters", "emission_rate", "background_rate", "duration_s"]),
}

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "output_dir": STR,
    "description": STR,
    "source": {"type": "array", "items": SPECIES, "minItems": 1},
    "beamline": _obj({"total_emission_A": NONNEG, "window": POS, "collimation": NONNEG,
                      "peak_width": POS, "spot_fwhm_nm": POS}),
    "transport": _obj({"histories": {"type": "integer", "minimum": 1}, "cutoff_ev": POS,
                       "bin_width_nm": POS, "max_depth_nm": POS, "full_cascade": {"type": "boolean"},
                       "scattering": {"enum": ["magic-table", "magic", "gauss-mehler"]},
                       "stopping_correction": POS, "vacancy_model": {"enum": ["nrt", "events"]},
                       "workers": {"type": "integer", "minimum": 1}}),
    "sample": _obj({"residual_carbon": NONNEG, "pair_efficiency": {"type": "number", "minimum": 0, "maximum": 1},
                    "yield_single": POS, "n_min_two_step": POS, "alpha_two_step": POS,
                    "w_threshold_ions": POS, "pair_capture": {"type": "number", "minimum": 0, "maximum": 1},
                    "brightness_w": POS, "brightness_g": POS, "collection_area_um2": POS,
                    "jitter_nm": NONNEG}),
    "optics": _obj({"longpass_nm": POS, "noise_floor": NONNEG, "psf_fwhm_nm": POS, "pixel_nm": POS,
                    "background_cps": NONNEG, "dwell_s": POS}),
    "photonstats": _obj({"bin_ns": POS, "window_ns": POS, "mode": {"enum": ["full", "start-stop"]},
                         "lifetime_ns": NONNEG, "jitter_ns": NONNEG, "rho": POS}),
    "patterning": _obj({"created": STR}),
    "steps": {"type": "array", "items": {"type": "object", "required": ["op"],
                                         "properties": {"op": {"enum": list(STEPS)}}}},
}, ["seed"])

DEFAULTS = {
    "beamline": {"total_emission_A": 10e-6, "window": 1.0, "collimation": None, "peak_width": 0.25,
                 "spot_fwhm_nm": 40.0},
    "transport": {"histories": 20000, "cutoff_ev": 5.0, "bin_width_nm": 1.0, "max_depth_nm": 1000.0,
                  "full_cascade": False, "scattering": "magic-table", "stopping_correction": 1.35,
                  "vacancy_model": "nrt", "workers": None},
    "sample": {"residual_carbon": 5e14, "pair_efficiency": 1.0, "jitter_nm": 10.0},
    "optics": {"longpass_nm": 1200.0, "noise_floor": 50.0, "psf_fwhm_nm": 700.0, "pixel_nm": 100.0,
               "background_cps": 500.0, "dwell_s": 0.1},
    "photonstats": {"bin_ns": 0.5, "window_ns": 100.0, "mode": "full", "lifetime_ns": 5.0,
                    "jitter_ns": 0.1, "rho": None},
    "patterning": {"created": None},
}


def _messages(errors):
    out = []
    for e in errors:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        out.append(f"{where}: {e.message}")
    return out


def validate(doc):
    """Raise :class:`ConfigError` listing every schema violation."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = _messages(sorted(v.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))))
    for i, step in enumerate(doc.get("steps", []) if isinstance(doc, dict) else []):
        if isinstance(step, dict) and step.get("op") in STEPS:
            sv = jsonschema.Draft202012Validator(STEPS[step["op"]])
            errs += [f"steps/{i}/{m}" for m in _messages(sv.iter_errors(step))]
    if errs:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errs))
    return doc


def load(path_or_name):
    """Read a config file, or a bundled example by name (e.g. ``fig4``)."""
    text = None
    if os.path.exists(path_or_name):
        with open(path_or_name, encoding="utf-8") as fh:
            text = fh.read()
    else:
        name = os.path.basename(path_or_name).removesuffix(".json")
        if name in BUNDLED:
            text = resources.files("fibemit.configs").joinpath(name + ".json").read_text("utf-8")
    if text is None:
        raise ConfigError(f"config {path_or_name!r} not found")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return validate(doc)


def with_defaults(doc):
    out = copy.deepcopy(doc)
    for sec, vals in DEFAULTS.items():
        out[sec] = {**vals, **out.get(sec, {})}
    out.setdefault("steps", [])
    return out


def config_hash(doc):
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def output_dir(cli_value=None, doc=None):
    if cli_value:
        return cli_value
    if doc and doc.get("output_dir"):
        return doc["output_dir"]
    return os.environ.get(ENV_OUTPUT_DIR, "fibemit-out")
