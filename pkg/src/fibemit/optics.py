"""PL spectra of W and G centres, ZPL ratios and confocal maps."""

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

GRID = np.round(np.linspace(1150.0, 1450.0, 3001), 1)
LONGPASS_NM = 1200.0
ZPL_HALF_WINDOW = 4.0
FWHM_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


@dataclass(frozen=True)
class EmitterSpectrumModel:
    zpl_wavelength: float
    zpl_linewidth: float = 1.0  # Lorentzian FWHM, nm
    debye_waller: float = 0.3
    psb_center_offset: float = 30.0  # nm to the red of the ZPL
    psb_width: float = 40.0  # Gaussian FWHM, nm
    e_line: float = 0.0  # share of the total in the 1380 nm E line (G only)
    e_line_wavelength: float = 1380.0
    e_line_width: float = 3.0

    def __post_init__(self):
        if not 1150.0 <= self.zpl_wavelength <= 1450.0:
            raise ValueError("ZPL wavelength must lie in [1150, 1450] nm")
        if not 0.0 < self.debye_waller <= 1.0:
            raise ValueError("Debye-Waller fraction must lie in (0, 1]")
        if self.zpl_linewidth <= 0 or self.psb_width <= 0:
            raise ValueError("line widths must be positive")
        if not 0.0 <= self.e_line < 1.0 - self.debye_waller + 1e-12:
            raise ValueError("E line share must fit inside the sideband share")


W_MODEL = EmitterSpectrumModel(1218.0, 1.0, 0.25, 30.0, 40.0)
G_MODEL = EmitterSpectrumModel(1278.0, 1.0, 0.35, 30.0, 40.0, e_line=0.05)
DEFAULT_MODELS = {"W": W_MODEL, "G": G_MODEL}


@dataclass
class Spectrum:
    wavelength: np.ndarray
    intensity: np.ndarray
    noise_floor: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.wavelength = np.asarray(self.wavelength, dtype=float)
        self.intensity = np.asarray(self.intensity, dtype=float)
        if np.any(np.diff(self.wavelength) <= 0):
            raise ValueError("wavelength grid must be strictly increasing")
        if np.any(self.intensity < 0):
            raise ValueError("intensity must be non-negative")

    def scaled(self, c):
        return replace(self, intensity=self.intensity * c, noise_floor=self.noise_floor * c)

    def integral(self, lo=-np.inf, hi=np.inf):
        sel = (self.wavelength >= lo) & (self.wavelength <= hi)
        return float(np.trapezoid(self.intensity[sel], self.wavelength[sel]))

    def to_csv(self, header=None):
        lines = ["# " + json.dumps(header, sort_keys=True)] if header else []
        lines.append("wavelength_nm,counts_per_s")
        lines += [f"{w:.6g},{v:.6g}" for w, v in zip(self.wavelength, self.intensity)]
        return "\n".join(lines) + "\n"


def _unit_area(y, grid):
    a = np.trapezoid(y, grid)
    return y / a if a > 0 else y


def _lorentz(grid, x0, fwhm):
    g = 0.5 * fwhm
    return g / np.pi / ((grid - x0) ** 2 + g * g)


def _gauss(grid, x0, fwhm):
    s = fwhm / FWHM_SIGMA
    return np.exp(-0.5 * ((grid - x0) / s) ** 2)


def emitter_components(model, grid=GRID):
    """ZPL and sideband parts of one emitter, each normalised on ``grid``."""
    zpl = model.debye_waller * _unit_area(_lorentz(grid, model.zpl_wavelength, model.zpl_linewidth), grid)
    psb = (1.0 - model.debye_waller - model.e_line) * _unit_area(
        _gauss(grid, model.zpl_wavelength + model.psb_center_offset, model.psb_width), grid)
    if model.e_line > 0:
        psb = psb + model.e_line * _unit_area(_gauss(grid, model.e_line_wavelength, model.e_line_width), grid)
    return zpl, psb


def emitter_spectrum(kind, model=None, grid=GRID, brightness=1.0):
    """Spectrum of a single W or G centre; integrates to ``brightness`` on the grid."""
    if kind not in DEFAULT_MODELS:
        raise ValueError(f"unknown emitter type {kind!r}")
    model = model or DEFAULT_MODELS[kind]
    zpl, psb = emitter_components(model, grid)
    return Spectrum(grid, brightness * (zpl + psb), 0.0, {"type": kind})


def longpass_fraction(kind, model=None, longpass=LONGPASS_NM, grid=GRID):
    """Share of an emitter's emission transmitted by the longpass filter."""
    s = emitter_spectrum(kind, model, grid)
    return s.integral(longpass, np.inf)


def compose_spectrum(n_w, n_g, models=None, longpass=LONGPASS_NM, noise_floor=50.0,
                     brightness_w=2.0e4, brightness_g=2.0e4, grid=GRID):
    """Site spectrum: emitter sum, blocked below the longpass edge, plus a flat floor."""
    if not grid[0] <= longpass <= grid[-1]:
        raise ValueError("longpass edge outside the wavelength grid")
    models = {**DEFAULT_MODELS, **(models or {})}
    sig = (n_w * emitter_spectrum("W", models["W"], grid, brightness_w).intensity
           + n_g * emitter_spectrum("G", models["G"], grid, brightness_g).intensity)
    sig = np.where(grid < longpass, 0.0, sig)
    return Spectrum(grid, sig + noise_floor, noise_floor,
                    {"n_W": int(n_w), "n_G": int(n_g), "longpass_nm": longpass})


def field_spectrum(field_, models=None, longpass=LONGPASS_NM, noise_floor=50.0,
                   brightness_w=2.0e4, brightness_g=2.0e4, grid=GRID):
    """Spectrum collected from all sites of an emitter field at once."""
    return compose_spectrum(int(np.sum(field_.n_w)), int(np.sum(field_.n_g)), models, longpass,
                            noise_floor, brightness_w, brightness_g, grid)


class SpectrumSynthesizer(TransformerMixin, BaseEstimator):
    """Map ``(n_W, n_G)`` rows to spectra sampled on the wavelength grid."""

    def __init__(self, longpass=LONGPASS_NM, noise_floor=50.0, brightness_w=2.0e4,
                 brightness_g=2.0e4, w_model=W_MODEL, g_model=G_MODEL):
        self.longpass = longpass
        self.noise_floor = noise_floor
        self.brightness_w = brightness_w
        self.brightness_g = brightness_g
        self.w_model = w_model
        self.g_model = g_model

    def fit(self, X=None, y=None):
        self.wavelength_ = GRID
        self.basis_ = np.vstack([
            emitter_spectrum("W", self.w_model, GRID, self.brightness_w).intensity,
            emitter_spectrum("G", self.g_model, GRID, self.brightness_g).intensity,
        ])
        self.basis_[:, GRID < self.longpass] = 0.0
        return self

    def transform(self, X):
        if not hasattr(self, "basis_"):
            self.fit()
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("expected columns (n_W, n_G)")
        if np.any(X < 0):
            raise ValueError("emitter counts must be non-negative")
        return X @ self.basis_ + self.noise_floor


@dataclass(frozen=True)
class ZplRatio:
    value: float
    i_g: float
    i_w: float
    lower_bound: bool = False
    upper_bound: bool = False

    def __float__(self):
        return self.value


def zpl_area(spectrum, center, half=ZPL_HALF_WINDOW, side=2.0):
    """Peak area in ``center +- half`` above a line through the adjacent side bands."""
    w = spectrum.wavelength
    y = spectrum.intensity
    if center - half - side < w[0] or center + half + side > w[-1]:
        raise ValueError(f"ZPL window around {center} nm leaves the grid")
    left = (w >= center - half - side) & (w < center - half)
    right = (w > center + half) & (w <= center + half + side)
    xl, yl = w[left].mean(), y[left].mean()
    xr, yr = w[right].mean(), y[right].mean()
    sel = (w >= center - half) & (w <= center + half)
    bg = yl + (yr - yl) * (w[sel] - xl) / (xr - xl)
    return float(np.trapezoid(y[sel] - bg, w[sel]))


def detection_limit(spectrum):
    """Smallest ZPL area told apart from the floor: one floor height over 1 nm."""
    return float(spectrum.noise_floor) * 1.0


def zpl_ratio(spectrum, g_center=1278.0, w_center=1218.0):
    """I_G / I_W from background-subtracted ZPL areas.

    A peak below the detection limit is replaced by the limit and the result
    is flagged as a bound. Both peaks missing is an error.
    """
    ig = zpl_area(spectrum, g_center)
    iw = zpl_area(spectrum, w_center)
    lim = detection_limit(spectrum)
    g_ok = ig > lim
    w_ok = iw > lim
    if not g_ok and not w_ok:
        raise ValueError("both ZPLs are at the noise floor; ratio undefined")
    if not w_ok:
        return ZplRatio(ig / lim, ig, iw, lower_bound=True)
    if not g_ok:
        return ZplRatio(lim / iw, ig, iw, upper_bound=True)
    return ZplRatio(ig / iw, ig, iw)


@dataclass
class PLMap:
    x: np.ndarray
    y: np.ndarray
    rate: np.ndarray  # shape (len(y), len(x)), counts/s
    psf_fwhm: float
    longpass: float
    pixel: float
    background: float = 0.0
    dwell_s: float = 0.0

    def __post_init__(self):
        if self.psf_fwhm <= 0:
            raise ValueError("PSF FWHM must be positive")
        if np.any(self.rate < 0):
            raise ValueError("map rates must be non-negative")

    def metadata(self):
        return {"pixel_nm": self.pixel, "psf_fwhm_nm": self.psf_fwhm, "longpass_nm": self.longpass,
                "x0_nm": float(self.x[0]), "y0_nm": float(self.y[0]),
                "background_cps": self.background, "dwell_s": self.dwell_s}

    def to_csv(self, header=None):
        """Rate matrix, one pixel row per line; optional ``#`` JSON header line."""
        lines = ["# " + json.dumps(header, sort_keys=True)] if header else []
        lines += [",".join(f"{v:.6g}" for v in row) for row in self.rate]
        return "\n".join(lines) + "\n"

    def value_at(self, xs, ys):
        i = np.clip(np.rint((np.asarray(ys) - self.y[0]) / self.pixel).astype(int), 0, self.y.size - 1)
        j = np.clip(np.rint((np.asarray(xs) - self.x[0]) / self.pixel).astype(int), 0, self.x.size - 1)
        return self.rate[i, j]


def _filtered_rates(field_, models, longpass, brightness_w, brightness_g):
    models = {**DEFAULT_MODELS, **(models or {})}
    fw = longpass_fraction("W", models["W"], longpass)
    fg = longpass_fraction("G", models["G"], longpass)
    return field_.n_w * brightness_w * fw + field_.n_g * brightness_g * fg


def confocal_scan(field_, psf_fwhm=700.0, pixel=100.0, longpass=LONGPASS_NM, background=500.0,
                  dwell_s=0.1, seed=0, extent=None, models=None, brightness_w=2.0e4,
                  brightness_g=2.0e4, noise=True):
    """Raster a Gaussian PSF over the field; Poisson counting noise per pixel.

    ``extent`` is ``(xmin, xmax, ymin, ymax)`` in nm; by default the site
    bounding box padded by two PSF widths.
    """
    if pixel <= 0:
        raise ValueError("pixel must be positive")
    if extent is None:
        pad = 2.0 * psf_fwhm
        if len(field_):
            extent = (field_.x.min() - pad, field_.x.max() + pad, field_.y.min() - pad, field_.y.max() + pad)
        else:
            extent = (-pad, pad, -pad, pad)
    xs = extent[0] + pixel * np.arange(int(np.floor((extent[1] - extent[0]) / pixel)) + 1)
    ys = extent[2] + pixel * np.arange(int(np.floor((extent[3] - extent[2]) / pixel)) + 1)
    amp = _filtered_rates(field_, models, longpass, brightness_w, brightness_g)
    rate = np.full((ys.size, xs.size), float(background))
    c = 4.0 * np.log(2.0) / psf_fwhm**2
    reach = 3.0 * psf_fwhm
    for a, sx, sy in zip(amp, field_.x, field_.y):
        if a <= 0:
            continue
        jx = (xs > sx - reach) & (xs < sx + reach)
        iy = (ys > sy - reach) & (ys < sy + reach)
        gx = np.exp(-c * (xs[jx] - sx) ** 2)
        gy = np.exp(-c * (ys[iy] - sy) ** 2)
        rate[np.ix_(iy, jx)] += a * np.outer(gy, gx)
    if noise:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9A7]))
        rate = rng.poisson(rate * dwell_s) / dwell_s
    return PLMap(xs, ys, rate, psf_fwhm, longpass, pixel, float(background), float(dwell_s))


def detect_spots(pl_map, xs, ys, nsigma=3.0):
    """Whether the pixel at each position exceeds background + ``nsigma`` counting sigma."""
    bg = pl_map.background
    sigma = np.sqrt(bg / pl_map.dwell_s) if pl_map.dwell_s > 0 else 0.0
    return pl_map.value_at(xs, ys) > bg + nsigma * sigma


def fit_spot_fwhm(pl_map, x0, y0, half_size=None):
    """FWHM (nm) of a circular Gaussian fitted to the map around ``(x0, y0)``."""
    half = half_size or 2.0 * pl_map.psf_fwhm
    jx = np.abs(pl_map.x - x0) <= half
    iy = np.abs(pl_map.y - y0) <= half
    X, Y = np.meshgrid(pl_map.x[jx], pl_map.y[iy])
    Z = pl_map.rate[np.ix_(iy, jx)]

    def model(xy, a, xc, yc, s, b):
        return a * np.exp(-((xy[0] - xc) ** 2 + (xy[1] - yc) ** 2) / (2 * s * s)) + b

    p0 = (Z.max() - Z.min(), x0, y0, pl_map.psf_fwhm / FWHM_SIGMA, Z.min())
    popt, _ = curve_fit(model, (X.ravel(), Y.ravel()), Z.ravel(), p0=p0)
    return abs(popt[3]) * FWHM_SIGMA
