"""Exposure planning: dwell times from beam current, spot grids and the plan file."""

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from fractions import Fraction

from .beamline import FilteredBeam
from .constants import ELEMENTARY_CHARGE_EXACT

COLUMNS = ("x_nm", "y_nm", "species", "charge", "energy_keV", "expected_ions", "dwell_us")
NM2_PER_CM2 = 10**14


class PlanParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _sig6(x):
    return float(f"{x:.6g}")


def _fmt(x):
    return f"{x:.6g}"


def exact_dwell(n_ions, beam, charge=None):
    """Dwell in seconds as an exact :class:`~fractions.Fraction`.

    ``beam`` is a :class:`FilteredBeam` or a current in amperes (then
    ``charge`` defaults to 1).
    """
    if isinstance(beam, FilteredBeam):
        current = beam.current
        charge = beam.species.charge if charge is None else charge
    else:
        current = beam
        charge = 1 if charge is None else charge
    if n_ions <= 0:
        raise ValueError("ion count must be positive")
    if current <= 0 or charge <= 0:
        raise ValueError("current and charge must be positive")
    return Fraction(n_ions) * charge * ELEMENTARY_CHARGE_EXACT / Fraction(current)


def dwell_time(n_ions, beam, charge=None):
    """Dwell in microseconds for ``n_ions``, rounded to the nearest nanosecond."""
    ns = round(exact_dwell(n_ions, beam, charge) * 10**9)
    if ns <= 0:
        raise ValueError("dwell rounds to zero at 1 ns resolution")
    return ns / 1000


def fluence_to_ions(fluence, area_nm2):
    """Expected ions for a fluence in cm^-2 over an area in nm^2."""
    if fluence < 0 or area_nm2 < 0:
        raise ValueError("fluence and area must be non-negative")
    return fluence * area_nm2 / NM2_PER_CM2


def default_created():
    """Plan timestamp; honours SOURCE_DATE_EPOCH so reruns are byte-identical."""
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class ExposureSpot:
    x_nm: float
    y_nm: float
    species: str
    charge: int
    energy_keV: float
    expected_ions: float
    dwell_us: float

    def __post_init__(self):
        if self.dwell_us <= 0:
            raise ValueError("dwell must be positive")
        if self.expected_ions <= 0:
            raise ValueError("expected ions must be positive")


@dataclass
class ExposurePlan:
    header: dict
    spots: list = field(default_factory=list)

    def __post_init__(self):
        if self.header.get("beam_current_A", 0) <= 0:
            raise ValueError("plan header needs a positive beam current")
        wf = self.header.get("write_field_nm")
        if wf is not None:
            for s in self.spots:
                if not (0 <= s.x_nm <= wf[0] and 0 <= s.y_nm <= wf[1]):
                    raise ValueError(f"spot ({s.x_nm}, {s.y_nm}) outside write field")

    @property
    def total_time_us(self):
        return sum(s.dwell_us for s in self.spots)

    def rows(self):
        return [asdict(s) for s in self.spots]


def plan_grid(rows, cols, pitch, beam, seed=0, created=None):
    """Row-major grid; row ``i`` gets ``rows[i]`` expected ions per spot."""
    if cols < 1 or len(rows) < 1:
        raise ValueError("grid needs at least one row and one column")
    if pitch <= beam.spot_fwhm:
        raise ValueError(f"pitch {pitch} nm does not exceed spot FWHM {beam.spot_fwhm} nm")
    sp = beam.species
    energy = _sig6(beam.landing_energy)
    spots = []
    for i, n in enumerate(rows):
        n = _sig6(n)
        dwell = dwell_time(n, beam)
        for j in range(cols):
            spots.append(ExposureSpot(_sig6(j * pitch), _sig6(i * pitch), sp.label, sp.charge,
                                      energy, n, dwell))
    header = {
        "beam_current_A": beam.current,
        "species": sp.label,
        "charge": sp.charge,
        "energy_keV": energy,
        "spot_fwhm_nm": beam.spot_fwhm,
        "created": created or default_created(),
        "seed": int(seed),
        "write_field_nm": [_sig6((cols - 1) * pitch), _sig6((len(rows) - 1) * pitch)],
    }
    return ExposurePlan(header, spots)


def format_plan(plan):
    lines = ["# " + json.dumps(plan.header, sort_keys=True), ",".join(COLUMNS)]
    for s in plan.spots:
        lines.append(",".join([_fmt(s.x_nm), _fmt(s.y_nm), s.species, str(s.charge),
                               _fmt(s.energy_keV), _fmt(s.expected_ions), f"{s.dwell_us:.3f}"]))
    return "\n".join(lines) + "\n"


def atomic_write(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_plan(plan, path):
    atomic_write(path, format_plan(plan))


def parse_plan(text):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith("# "):
        raise PlanParseError(1, "missing '# ' JSON header")
    try:
        header = json.loads(lines[0][2:])
    except json.JSONDecodeError as exc:
        raise PlanParseError(1, f"bad header JSON: {exc.msg}") from None
    if not isinstance(header, dict):
        raise PlanParseError(1, "header must be a JSON object")
    if len(lines) < 2 or lines[1] != ",".join(COLUMNS):
        raise PlanParseError(2, "expected column line " + ",".join(COLUMNS))
    spots = []
    for k, line in enumerate(lines[2:], start=3):
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise PlanParseError(k, f"expected {len(COLUMNS)} fields, got {len(parts)}")
        try:
            x, y, e, n, d = (float(parts[i]) for i in (0, 1, 4, 5, 6))
            q = int(parts[3])
        except ValueError as exc:
            raise PlanParseError(k, str(exc)) from None
        if not all(map(math.isfinite, (x, y, e, n, d))):
            raise PlanParseError(k, "non-finite value")
        try:
            spots.append(ExposureSpot(x, y, parts[2], q, e, n, d))
        except ValueError as exc:
            raise PlanParseError(k, str(exc)) from None
    try:
        return ExposurePlan(header, spots)
    except ValueError as exc:
        raise PlanParseError(1, str(exc)) from None


def read_plan(path):
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    if "\r" in text:
        raise PlanParseError(text[: text.index("\r")].count("\n") + 1, "CR line ending")
    return parse_plan(text)
