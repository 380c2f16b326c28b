import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from fibemit import beamline as bl
from fibemit.beamline import IonSpecies


def _two_peak():
    return [IonSpecies.of("Ce", 2, 0.863), IonSpecies.of("C", 1, 0.0018)]


def test_peak_positions_and_normalisation():
    spec = bl.build_spectrum(_two_peak())
    mq, inten = spec.peak("Ce2+")
    assert mq == pytest.approx(70.06, abs=0.01)
    assert inten == 1.0
    mq, inten = spec.peak("C+")
    assert mq == pytest.approx(12.011, abs=1e-3)
    assert inten == pytest.approx(0.0018 / 0.863, rel=1e-12)


def test_single_species_normalises_to_one():
    spec = bl.build_spectrum([IonSpecies.of("C", 1, 0.3)])
    assert spec.intensity.tolist() == [1.0]


def test_carbon_share_of_default_source():
    carbon = sum(s.relative_intensity for s in bl.default_source() if s.label.startswith("C") and "Ce" not in s.label)
    assert carbon == pytest.approx(0.0028, abs=1e-12)


def test_contaminants_listed_with_zero_intensity():
    table = {s.label: s.relative_intensity for s in bl.default_source()}
    for sym in ("Al", "Fe", "Cu", "Lu", "Pt", "Bi"):
        assert table[sym + "+"] == 0.0


def test_duplicates_merged_and_empty_rejected():
    spec = bl.build_spectrum([IonSpecies.of("C", 1, 0.1), IonSpecies.of("C", 1, 0.2),
                              IonSpecies.of("Ce", 2, 0.6)])
    assert len(spec.labels) == 2
    assert spec.peak("C+")[1] == pytest.approx(0.3 / 0.6)
    with pytest.raises(ValueError):
        bl.build_spectrum([])
    with pytest.raises(ValueError):
        bl.build_spectrum(_two_peak(), peak_width=0.0)


def test_species_invariants():
    with pytest.raises(ValueError):
        IonSpecies("x", 0.0, 1)
    with pytest.raises(ValueError):
        IonSpecies("x", 12.0, 0)
    with pytest.raises(ValueError):
        IonSpecies("x", 12.0, 1, 1.5)
    with pytest.raises(ValueError):
        bl.check_source([IonSpecies.of("C", 1, 0.7), IonSpecies.of("Ce", 2, 0.6)])


def _window_integral(mu, fwhm, lo, hi):
    mpmath.mp.dps = 40
    s = mpmath.mpf(fwhm) / (2 * mpmath.sqrt(2 * mpmath.log(2)))
    pdf = lambda x: mpmath.exp(-(x - mu) ** 2 / (2 * s * s)) / (s * mpmath.sqrt(2 * mpmath.pi))
    return mpmath.quad(pdf, [lo, mu, hi] if lo < mu < hi else [lo, hi])


def test_wien_filter_selects_carbon():
    spec = bl.build_spectrum(bl.default_source())
    tr = bl.select_species(spec, 12.011, 1.0)
    assert tr["C+"] > 0.99
    assert tr["Ce2+"] < 1e-6
    lo, hi = 12.011 - 0.5, 12.011 + 0.5
    c_mq = spec.peak("C+")[0]
    assert tr["C+"] == pytest.approx(float(_window_integral(c_mq, bl.DEFAULT_PEAK_WIDTH, lo, hi)), rel=1e-9)
    assert float(_window_integral(spec.peak("Ce2+")[0], bl.DEFAULT_PEAK_WIDTH, lo, hi)) < 1e-6


def test_infinite_window_passes_everything():
    spec = bl.build_spectrum(bl.default_source())
    tr = bl.select_species(spec, 50.0, math.inf)
    assert all(v == 1.0 for v in tr.fractions.values())


def test_window_between_peaks_blocks_everything():
    spec = bl.build_spectrum(_two_peak())
    with pytest.warns(UserWarning):
        tr = bl.select_species(spec, 40.0, 0.01)
    assert tr.warning and all(v == 0.0 for v in tr.fractions.values())


@given(st.floats(5.0, 150.0), st.floats(0.01, 20.0), st.floats(0.01, 20.0))
def test_transmission_bounded_and_monotone(target, w1, w2):
    spec = bl.build_spectrum(bl.default_source())
    lo, hi = sorted((w1, w2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = bl.select_species(spec, target, lo), bl.select_species(spec, target, hi)
    if a.warning is None and b.warning is None:
        for k in spec.labels:
            assert 0.0 <= a[k] <= b[k] + 1e-15 <= 1.0 + 1e-15


def test_collimation_oracle_and_pA_beam():
    assert bl.DEFAULT_COLLIMATION == pytest.approx(1e-12 / (10e-6 * 0.0018), rel=1e-12)
    c = IonSpecies.of("C", 1, 0.0018)
    assert bl.beam_current(10e-6, c, 1.0) == pytest.approx(1e-12, rel=1e-12)
    beam = bl.filtered_beam(c, 20.0)
    assert beam.current == pytest.approx(1e-12, rel=1e-5)
    assert beam.landing_energy == 20.0


def test_cerium_beam_current():
    ce = IonSpecies.of("Ce", 2, 0.863)
    assert bl.beam_current(10e-6, ce, 1.0, 1.0) == pytest.approx(8.63e-6, rel=1e-12)


def test_zero_current_is_error():
    c = IonSpecies.of("C", 1, 0.0018)
    with pytest.raises(ValueError):
        bl.beam_current(10e-6, c, 1.0, 0.0)
    with pytest.raises(ValueError):
        bl.beam_current(-1.0, c, 1.0, 1.0)


@given(st.floats(1e-9, 1e-3), st.floats(0.01, 1.0), st.floats(1e-6, 1.0), st.floats(0.1, 10.0))
def test_current_linear_in_each_factor(emission, transmission, collimation, scale):
    sp = IonSpecies.of("C", 1, 0.0018)
    base = bl.beam_current(emission, sp, transmission, collimation)
    assert bl.beam_current(emission * scale, sp, transmission, collimation) == pytest.approx(base * scale)
    assert bl.beam_current(emission, sp, transmission, collimation * scale) == pytest.approx(base * scale)


def test_landing_energy_scales_with_charge():
    si2 = IonSpecies.of("Si", 2, 0.1)
    beam = bl.FilteredBeam(si2, 1e-12, 40.0, 20.0)
    assert beam.landing_energy == 40.0
    with pytest.raises(ValueError):
        bl.FilteredBeam(si2, 0.0)


def test_spectrum_csv():
    spec = bl.build_spectrum(bl.default_source())
    grid = np.arange(60.0, 80.0, 0.05)
    text = spec.to_csv(grid)
    lines = text.splitlines()
    assert lines[0] == "m_over_q,intensity"
    vals = np.array([float(l.split(",")[1]) for l in lines[1:]])
    assert vals.max() == pytest.approx(1.0, rel=1e-2)  # grid misses the exact centre
    assert np.all(vals >= 0)
    assert "\r" not in text
