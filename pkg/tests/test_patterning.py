from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from fibemit import patterning as pt
from fibemit.beamline import FilteredBeam, IonSpecies
from fibemit.constants import ELEMENTARY_CHARGE

C_PLUS = IonSpecies.of("C", 1, 0.0018)
BEAM = FilteredBeam(C_PLUS, 1e-12, 40.0, 20.0)
FIG3_ROWS = [1100, 1300, 1500, 1600, 2000, 2300, 3000, 4000, 5000, 6000]


def hand_dwell_seconds(n, current, charge=1):
    # decimal long-hand, independent of the Fraction path in the package
    return float(Decimal(n) * charge * Decimal("1.602176634e-19") / Decimal(repr(current)))


def test_dwell_for_2000_ions_at_1pA():
    exact = pt.exact_dwell(2000, 1e-12)
    assert float(exact) == pytest.approx(hand_dwell_seconds(2000, 1e-12), rel=1e-12)
    assert float(exact) == pytest.approx(2000 * 1.602177e-19 / 1e-12, rel=1e-6)
    # rounded to the 1 ns grid
    assert pt.dwell_time(2000, 1e-12) == 320.435


def test_dwell_rounded_to_nanoseconds():
    us = pt.dwell_time(7, 3.3e-12)
    assert Fraction(us).limit_denominator(1000) * 1000 == round(Fraction(us) * 1000)


def test_dwell_errors():
    with pytest.raises(ValueError):
        pt.dwell_time(0, BEAM)
    with pytest.raises(ValueError):
        pt.dwell_time(10, 0.0)
    with pytest.raises(ValueError):
        pt.dwell_time(10, 1e-12, charge=0)


@given(st.integers(1, 10**6), st.floats(1e-13, 1e-11))
def test_doubling_current_halves_dwell(n, current):
    a = pt.dwell_time(n, current)
    b = pt.dwell_time(n, 2 * current)
    assert b == pytest.approx(a / 2, abs=1e-3)


@given(st.integers(1, 10**5), st.integers(1, 3))
def test_dwell_uses_charge_state(n, q):
    beam = FilteredBeam(IonSpecies.of("Ce", q, 0.1), 2e-12)
    assert pt.dwell_time(n, beam) == pytest.approx(hand_dwell_seconds(n, 2e-12, q) * 1e6, abs=1e-3)


def test_fluence_examples():
    assert pt.fluence_to_ions(1e12, 1963.5) == pytest.approx(19.635, rel=1e-12)
    assert pt.fluence_to_ions(1e12, 1e6) == pytest.approx(1e4, rel=1e-12)
    assert pt.fluence_to_ions(1e12, 0.0) == 0.0
    with pytest.raises(ValueError):
        pt.fluence_to_ions(-1.0, 1.0)


def test_grid_layout_and_dwell_scaling():
    plan = pt.plan_grid(FIG3_ROWS, 10, 2000.0, BEAM, seed=3)
    assert len(plan.spots) == 100
    first = [s for s in plan.spots if s.x_nm == 0.0]
    assert [s.expected_ions for s in first] == FIG3_ROWS
    per_ion = float(pt.exact_dwell(1, BEAM)) * 1e6
    for s in first:
        assert abs(s.dwell_us - per_ion * s.expected_ions) <= 0.5e-3 + 1e-9  # 1 ns grid
    assert plan.spots[1].x_nm == 2000.0 and plan.spots[1].y_nm == 0.0
    assert plan.header["seed"] == 3 and plan.header["beam_current_A"] == 1e-12


def test_single_spot_grid():
    plan = pt.plan_grid([500], 1, 100.0, BEAM)
    assert len(plan.spots) == 1


def test_overlapping_spots_rejected():
    with pytest.raises(ValueError):
        pt.plan_grid([500], 3, 40.0, BEAM)


def test_charge_conservation():
    plan = pt.plan_grid(FIG3_ROWS, 10, 2000.0, BEAM)
    delivered = sum(s.dwell_us * 1e-6 * BEAM.current for s in plan.spots)
    wanted = sum(s.expected_ions * s.charge * ELEMENTARY_CHARGE for s in plan.spots)
    assert delivered == pytest.approx(wanted, rel=1e-6)
    assert plan.total_time_us == sum(s.dwell_us for s in plan.spots)


def test_created_is_reproducible(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "86400")
    assert pt.plan_grid([10], 1, 100.0, BEAM).header["created"] == "1970-01-02T00:00:00Z"


@given(st.lists(st.floats(1.0, 1e5), min_size=1, max_size=5),
       st.integers(1, 5), st.floats(50.0, 5000.0), st.floats(1e-13, 1e-10))
@settings(max_examples=60, deadline=None)
def test_round_trip_bit_exact(rows, cols, pitch, current):
    beam = FilteredBeam(C_PLUS, current, 40.0, 20.0)
    plan = pt.plan_grid(rows, cols, pitch, beam, seed=9, created="2024-01-01T00:00:00Z")
    text = pt.format_plan(plan)
    back = pt.parse_plan(text)
    assert back == plan
    assert pt.format_plan(back) == text
    for s in back.spots:
        assert s.dwell_us == pt.dwell_time(s.expected_ions, beam)


def test_write_and_read_file(tmp_path):
    plan = pt.plan_grid(FIG3_ROWS[:3], 2, 1000.0, BEAM)
    path = tmp_path / "plan.csv"
    pt.write_plan(plan, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.decode().splitlines()[1] == ",".join(pt.COLUMNS)
    assert pt.read_plan(path) == plan
    assert [p.name for p in tmp_path.iterdir()] == ["plan.csv"]


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("# {not json\n", 1),
    ('# {"beam_current_A": 1e-12}\nx,y\n', 2),
    ('# {"beam_current_A": 1e-12}\n' + ",".join(pt.COLUMNS) + "\n0,0,C+,1,20,10,1.0\n0,0,C+,1,20\n", 4),
    ('# {"beam_current_A": 1e-12}\n' + ",".join(pt.COLUMNS) + "\n0,0,C+,one,20,10,1.0\n", 3),
    ('# {"beam_current_A": 1e-12}\n' + ",".join(pt.COLUMNS) + "\n0,0,C+,1,20,10,-1.0\n", 3),
    ('# {"beam_current_A": 0}\n' + ",".join(pt.COLUMNS) + "\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(pt.PlanParseError) as info:
        pt.parse_plan(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_crlf_rejected(tmp_path):
    plan = pt.plan_grid([10], 1, 100.0, BEAM)
    path = tmp_path / "p.csv"
    path.write_bytes(pt.format_plan(plan).replace("\n", "\r\n").encode())
    with pytest.raises(pt.PlanParseError):
        pt.read_plan(path)


def test_spots_outside_write_field_rejected():
    spot = pt.ExposureSpot(5000.0, 0.0, "C+", 1, 20.0, 10.0, 1.0)
    with pytest.raises(ValueError):
        pt.ExposurePlan({"beam_current_A": 1e-12, "write_field_nm": [1000.0, 1000.0]}, [spot])
