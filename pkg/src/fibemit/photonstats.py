"""HBT photon streams and second-order correlation estimation."""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted


class FitError(RuntimeError):
    pass


@dataclass
class PhotonStream:
    timestamps: np.ndarray  # s, ascending
    channel: str
    duration: float

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if self.channel not in ("A", "B"):
            raise ValueError("channel must be 'A' or 'B'")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be sorted")
        if self.timestamps.size and (self.timestamps[0] < 0 or self.timestamps[-1] > self.duration):
            raise ValueError("timestamps outside [0, duration]")

    def __len__(self):
        return int(self.timestamps.size)


def _emitter_times(rng, rate, lifetime, duration):
    """Renewal process: exponential excitation wait followed by exponential decay."""
    wait = 1.0 / rate - lifetime
    if wait <= 0:
        raise ValueError(f"emission rate {rate:g} cps exceeds 1/lifetime")
    chunks = []
    t0 = 0.0
    n = int(rate * duration * 1.05) + 64
    while t0 < duration:
        gaps = rng.exponential(wait, n) + rng.exponential(lifetime, n)
        t = t0 + np.cumsum(gaps)
        chunks.append(t)
        t0 = t[-1]
        n = max(64, n // 10)
    t = np.concatenate(chunks)
    return t[t < duration]


def simulate_stream(n_emitters, emission_rate, lifetime_ns, background_rate, duration, seed=0,
                    jitter_ns=0.1):
    """Two-detector photon streams from ``n_emitters`` two-level emitters plus background.

    ``emission_rate`` is the detected rate per emitter, ``background_rate``
    the total uncorrelated rate; each photon goes to A or B with probability 1/2.
    """
    if n_emitters < 0 or emission_rate < 0 or background_rate < 0 or lifetime_ns < 0:
        raise ValueError("rates, lifetime and emitter count must be non-negative")
    if duration <= 0:
        raise ValueError("duration must be positive")
    if n_emitters * emission_rate == 0 and background_rate == 0:
        raise ValueError("all rates are zero")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x62]))
    tau = lifetime_ns * 1e-9
    parts = []
    if emission_rate > 0:
        for _ in range(int(n_emitters)):
            parts.append(_emitter_times(rng, emission_rate, tau, duration))
    if background_rate > 0:
        parts.append(rng.uniform(0.0, duration, rng.poisson(background_rate * duration)))
    t = np.concatenate(parts)
    if jitter_ns > 0:
        t = t + rng.normal(0.0, jitter_ns * 1e-9, t.size)
    t = np.clip(t, 0.0, duration)
    to_a = rng.random(t.size) < 0.5
    return (PhotonStream(np.sort(t[to_a]), "A", duration),
            PhotonStream(np.sort(t[~to_a]), "B", duration))


@dataclass
class G2Histogram:
    tau: np.ndarray  # bin centres, ns
    counts: np.ndarray
    baseline: float
    g2: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def coincidences(self):
        return int(self.counts.sum())

    def to_csv(self, header=None):
        lines = ["# " + json.dumps(header, sort_keys=True)] if header else []
        lines.append("tau_ns,g2,sigma")
        lines += [f"{t:.6g},{g:.6g},{s:.6g}" for t, g, s in zip(self.tau, self.g2, self.sigma)]
        return "\n".join(lines) + "\n"


def _pair_delays(a, b, w):
    """All delays ``b - a`` within ``[-w, w]`` (full cross-correlation)."""
    lo = np.searchsorted(b, a - w, side="left")
    hi = np.searchsorted(b, a + w, side="right")
    cnt = hi - lo
    total = int(cnt.sum())
    if total == 0:
        return np.zeros(0)
    ia = np.repeat(np.arange(a.size), cnt)
    offs = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    return b[lo[ia] + offs] - a[ia]


def _start_stop_delays(a, b, w):
    """Delay from each start to the next stop on the other channel, both directions."""
    out = []
    j = np.searchsorted(b, a, side="left")
    ok = j < b.size
    d = b[j[ok]] - a[ok]
    out.append(d[d <= w])
    i = np.searchsorted(a, b, side="right")
    ok = i < a.size
    d = a[i[ok]] - b[ok]
    out.append(-d[(d <= w) & (d > 0)])
    return np.concatenate(out)


def g2_histogram(stream_a, stream_b, bin_ns=0.5, window_ns=100.0, mode="full", baseline_fraction=0.2):
    """Coincidence histogram of B relative to A, normalised by the long-delay baseline.

    The baseline is the mean count of the outer ``baseline_fraction`` of bins
    on each side; ``sigma`` is the Poisson error of each bin propagated
    through that normalisation.
    """
    if bin_ns <= 0 or window_ns <= bin_ns:
        raise ValueError("need bin > 0 and window > bin")
    if len(stream_a) == 0 or len(stream_b) == 0:
        raise ValueError("empty photon stream")
    nb = int(round(window_ns / bin_ns))
    edges = (np.arange(-nb, nb + 1) * bin_ns) * 1e-9
    w = edges[-1]
    a, b = stream_a.timestamps, stream_b.timestamps
    if mode == "full":
        d = _pair_delays(a, b, w)
    elif mode == "start-stop":
        d = _start_stop_delays(a, b, w)
    else:
        raise ValueError(f"unknown correlation mode {mode!r}")
    counts, _ = np.histogram(d, edges)
    tau = 0.5 * (edges[1:] + edges[:-1]) * 1e9
    k = max(1, int(baseline_fraction * nb))
    base = float(np.mean(np.concatenate([counts[:k], counts[-k:]])))
    if base <= 0:
        # too few events for a measured baseline; use the Poisson expectation
        base = a.size * b.size * bin_ns * 1e-9 / stream_a.duration
    g2 = counts / base
    sigma = np.sqrt(counts) / base
    return G2Histogram(tau, counts, base, g2, sigma, {"bin_ns": bin_ns, "window_ns": window_ns, "mode": mode})


def g2_model(tau, g2_zero, tau0):
    return 1.0 - (1.0 - g2_zero) * np.exp(-np.abs(tau) / tau0)


class AntibunchingFit(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``1 - (1 - g0) exp(-|tau| / tau0)``."""

    def __init__(self, tau0_guess=5.0):
        self.tau0_guess = tau0_guess

    def fit(self, X, y, sigma=None):
        tau = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        y = np.asarray(y, dtype=float)
        if tau.size < 10:
            raise ValueError("need at least 10 bins")
        if sigma is not None:
            sigma = np.asarray(sigma, dtype=float)
            floor = sigma[sigma > 0].min() if np.any(sigma > 0) else 1.0
            sigma = np.where(sigma > 0, sigma, floor)
        span = np.abs(tau).max()
        step = np.min(np.diff(np.unique(tau)))
        try:
            popt, pcov = curve_fit(g2_model, tau, y, p0=(min(max(y.min(), 0.0), 1.0), self.tau0_guess),
                                   sigma=sigma, absolute_sigma=sigma is not None,
                                   bounds=([0.0, 0.05 * step], [10.0, span]), maxfev=20000)
        except (RuntimeError, ValueError) as exc:
            res = float(np.sum((y - 1.0) ** 2))
            raise FitError(f"g2 fit did not converge ({exc}); residual vs flat = {res:.4g}") from None
        self.g2_zero_, self.tau0_ = float(popt[0]), float(popt[1])
        err = np.sqrt(np.clip(np.diag(pcov), 0, None))
        self.g2_zero_err_, self.tau0_err_ = float(err[0]), float(err[1])
        self.residual_ = float(np.sum((y - g2_model(tau, *popt)) ** 2))
        return self

    def predict(self, X):
        check_is_fitted(self, "g2_zero_")
        tau = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        return g2_model(tau, self.g2_zero_, self.tau0_)


@dataclass(frozen=True)
class G2Fit:
    g2_zero: float
    antibunching_time: float
    g2_zero_err: float = float("nan")
    signal_fraction: float = float("nan")
    g2_zero_corrected: float = float("nan")
    clamped: bool = False

    def to_dict(self):
        return {"g2_zero": self.g2_zero, "g2_zero_err": self.g2_zero_err,
                "antibunching_time_ns": self.antibunching_time,
                "signal_fraction": self.signal_fraction,
                "g2_zero_corrected": self.g2_zero_corrected, "clamped": self.clamped}


def fit_g2(hist, rho=None):
    """Fit the dip of a histogram; with ``rho`` also background-correct g2(0)."""
    est = AntibunchingFit().fit(hist.tau, hist.g2, hist.sigma)
    if rho is None:
        return G2Fit(est.g2_zero_, est.tau0_, est.g2_zero_err_)
    corr, clamped = background_correct(est.g2_zero_, rho)
    return G2Fit(est.g2_zero_, est.tau0_, est.g2_zero_err_, float(rho), float(corr), clamped)


def background_correct(g2_zero, rho):
    """Remove uncorrelated background with signal fraction ``rho``.

    Returns ``(corrected, clamped)``; small negative values from noise are
    clamped to zero and flagged.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError("signal fraction must lie in (0, 1]")
    c = (g2_zero - (1.0 - rho * rho)) / (rho * rho)
    if c < 0:
        return 0.0, True
    return c, False


def signal_fraction(signal_rate, background_rate):
    return signal_rate / (signal_rate + background_rate)


def write_streams(a, b):
    """CSV with one ``channel,t_seconds`` row per photon, time ordered."""
    t = np.concatenate([a.timestamps, b.timestamps])
    ch = np.array(["A"] * len(a) + ["B"] * len(b))
    order = np.argsort(t, kind="stable")
    lines = [f"# {{\"duration_s\": {a.duration!r}}}", "channel,t_seconds"]
    lines += [f"{c},{v!r}" for c, v in zip(ch[order], t[order].tolist())]
    return "\n".join(lines) + "\n"


def read_streams(text):
    lines = text.strip("\n").split("\n")
    duration = None
    if lines[0].startswith("#"):
        duration = json.loads(lines[0][1:]).get("duration_s")
        lines = lines[1:]
    if lines[0] != "channel,t_seconds":
        raise ValueError("expected header 'channel,t_seconds'")
    ta, tb = [], []
    for k, line in enumerate(lines[1:], start=2):
        try:
            c, v = line.split(",")
            (ta if c == "A" else tb if c == "B" else None).append(float(v))
        except (ValueError, AttributeError):
            raise ValueError(f"line {k}: malformed row {line!r}") from None
    ta, tb = np.sort(ta), np.sort(tb)
    if duration is None:
        duration = float(max(ta.max(initial=0), tb.max(initial=0))) or 1.0
    if not math.isfinite(duration):
        raise ValueError("bad duration")
    return PhotonStream(ta, "A", duration), PhotonStream(tb, "B", duration)
