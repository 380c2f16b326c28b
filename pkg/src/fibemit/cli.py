"""``fibemit`` command line: range, pipeline, g2, fit-yield and columns."""

import argparse
import json
import os
import sys
import warnings

from . import config as cfgmod
from .config import ConfigError, config_hash
from .patterning import atomic_write

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _out_dir(value):
    d = cfgmod.output_dir(value)
    os.makedirs(d, exist_ok=True)
    return d


def _dump(doc):
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def cmd_range(args):
    from .transport import Ion, TransportSettings, simulate_ensemble

    params = {"ion": args.ion, "charge": args.charge, "energy_kev": args.energy_kev,
              "histories": args.histories, "seed": args.seed}
    h = config_hash(params)
    settings = TransportSettings(workers=args.workers) if args.workers else TransportSettings()
    prof = simulate_ensemble(Ion.of(args.ion), args.energy_kev, histories=args.histories,
                             seed=args.seed, settings=settings)
    out = _out_dir(args.out)
    stem = f"range_{args.ion}_{args.energy_kev:g}keV"
    meta = {"config_sha256": h, "seed": args.seed, **params}
    atomic_write(os.path.join(out, stem + ".csv"), prof.to_csv(meta))
    stats = {**prof.stats_dict(), "config_sha256": h, "seed": args.seed,
             "backscattered": prof.meta.get("backscattered", 0)}
    atomic_write(os.path.join(out, stem + "_stats.json"), _dump(stats))
    print(_dump(stats), end="")
    return EXIT_OK


def cmd_pipeline(args):
    from .pipeline import Pipeline

    doc = cfgmod.load(args.config)
    out = cfgmod.output_dir(args.out, doc)
    files = Pipeline(doc, out).run()
    print(f"wrote {len(set(files))} files to {out}")
    return EXIT_OK


def cmd_g2(args):
    from . import photonstats

    if (args.input is None) == (args.simulate is None):
        raise UsageError("give exactly one of --input or --simulate")
    if args.input:
        with open(args.input, encoding="utf-8") as fh:
            a, b = photonstats.read_streams(fh.read())
        params = {"input": os.path.basename(args.input)}
    else:
        try:
            params = json.loads(args.simulate)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--simulate is not valid JSON: {exc}") from None
        allowed = {"emitters", "emission_rate", "lifetime_ns", "background_rate", "duration_s", "jitter_ns"}
        bad = sorted(set(params) - allowed)
        if bad:
            raise ConfigError(f"unknown --simulate keys: {', '.join(bad)}")
        a, b = photonstats.simulate_stream(params.get("emitters", 1), params.get("emission_rate", 1e5),
                                           params.get("lifetime_ns", 5.0), params.get("background_rate", 0.0),
                                           params.get("duration_s", 10.0), args.seed,
                                           params.get("jitter_ns", 0.1))
    params = {**params, "seed": args.seed, "bin_ns": args.bin_ns, "window_ns": args.window_ns,
              "mode": args.mode, "rho": args.rho}
    h = config_hash(params)
    hist = photonstats.g2_histogram(a, b, args.bin_ns, args.window_ns, args.mode)
    fit = photonstats.fit_g2(hist, args.rho)
    out = _out_dir(args.out)
    meta = {"config_sha256": h, "seed": args.seed}
    atomic_write(os.path.join(out, "g2_histogram.csv"), hist.to_csv(meta))
    doc = {**fit.to_dict(), "coincidences": hist.coincidences, **meta}
    atomic_write(os.path.join(out, "g2_fit.json"), _dump(doc))
    print(_dump(doc), end="")
    return EXIT_OK


def read_points(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            parts = line.replace(",", " ").split()
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                raise ConfigError(f"{path}:{k}: expected 'n,rate'") from None
    return rows


def cmd_fit_yield(args):
    from .sample import fit_power_law

    pts = read_points(args.input)
    fit = fit_power_law(pts, args.noise_floor)
    h = config_hash({"points": pts, "noise_floor": args.noise_floor})
    doc = {**fit.to_dict(), "noise_floor": args.noise_floor, "config_sha256": h, "seed": None}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write(os.path.join(args.out, "yield_fit.json"), _dump(doc))
    print(_dump(doc), end="")
    return EXIT_OK


def cmd_columns(args):
    """Whitespace-separated columns with a commented header, for gnuplot."""
    with open(args.input, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                sys.stdout.write(line + "\n")
            elif line and line[0].isalpha():
                sys.stdout.write("# " + line.replace(",", " ") + "\n")
            else:
                sys.stdout.write(line.replace(",", " ") + "\n")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fibemit", description="FIB emitter fabrication simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("range", help="ion range and vacancy profile in silicon")
    r.add_argument("--ion", required=True, choices=["C", "Si"])
    r.add_argument("--charge", type=_positive_int, default=1)
    r.add_argument("--energy-kev", type=_positive_float, required=True)
    r.add_argument("--histories", type=_positive_int, default=100000)
    r.add_argument("--seed", type=_seed, default=0)
    r.add_argument("--workers", type=_positive_int, default=None)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_range)

    pl = sub.add_parser("pipeline", help="run a protocol config (path or bundled name)")
    pl.add_argument("--config", required=True)
    pl.add_argument("--out", default=None)
    pl.set_defaults(func=cmd_pipeline)

    g = sub.add_parser("g2", help="g2 histogram and antibunching fit")
    g.add_argument("--input", default=None, help="stream CSV (channel,t_seconds)")
    g.add_argument("--simulate", default=None, help="JSON object of stream parameters")
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--bin-ns", type=_positive_float, default=0.5)
    g.add_argument("--window-ns", type=_positive_float, default=100.0)
    g.add_argument("--mode", choices=["full", "start-stop"], default="full")
    g.add_argument("--rho", type=_positive_float, default=None, help="signal fraction for correction")
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_g2)

    f = sub.add_parser("fit-yield", help="power-law fit of (n, rate) points")
    f.add_argument("--input", required=True)
    f.add_argument("--noise-floor", type=float, required=True)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit_yield)

    c = sub.add_parser("columns", help="convert an output CSV to gnuplot columns")
    c.add_argument("--input", required=True)
    c.set_defaults(func=cmd_columns)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    # numba probes for TBB and warns when an old one is present; it falls back to OpenMP
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"fibemit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"fibemit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
