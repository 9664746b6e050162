"""Numeric substrate: IIR design and filtering, FFT, correlation, resampling smoother.

Filters are designed the classical way: a normalized analog lowpass
prototype (Butterworth or Chebyshev type I) is frequency-transformed to the
target band using pre-warped edges, mapped to the z-plane by the bilinear
transform, and factored into second-order sections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import signal as _sig

from .errors import (
    DesignInfeasible,
    InvalidFilterSpec,
    NonFiniteInput,
    NumericalInstability,
    SpeedBelowMinimum,
    UndefinedCorrelation,
    InsufficientData,
)

MAX_ORDER = 40
SPEC_TOLERANCE_DB = 0.1


class FilterKind(str, Enum):
    LOWPASS = "Lowpass"
    HIGHPASS = "Highpass"
    BANDSTOP = "Bandstop"


class FilterFamily(str, Enum):
    BUTTERWORTH = "Butterworth"
    CHEBYSHEV_I = "ChebyshevI"


def _as_edges(value) -> tuple:
    if value is None:
        return ()
    if np.isscalar(value):
        return (float(value),)
    return tuple(float(v) for v in value)


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind
    family: FilterFamily
    sample_rate_hz: float
    passband_hz: tuple
    stopband_hz: tuple = ()
    passband_ripple_db: float = 1.0
    stopband_atten_db: float = 80.0
    fixed_order: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FilterKind(self.kind))
        object.__setattr__(self, "family", FilterFamily(self.family))
        object.__setattr__(self, "passband_hz", _as_edges(self.passband_hz))
        object.__setattr__(self, "stopband_hz", _as_edges(self.stopband_hz))
        self._validate()

    def _validate(self):
        fs = self.sample_rate_hz
        if not fs > 0:
            raise InvalidFilterSpec("sample_rate_hz must be positive")
        if not (self.passband_ripple_db > 0 and self.stopband_atten_db > 0):
            raise InvalidFilterSpec("ripple and attenuation must be positive")
        if self.fixed_order is not None and self.fixed_order < 1:
            raise InvalidFilterSpec("fixed_order must be positive")
        pb, sb = self.passband_hz, self.stopband_hz
        for f in pb + sb:
            if not 0 < f < fs / 2:
                raise InvalidFilterSpec(f"edge {f} Hz outside (0, {fs / 2}) Hz")
        need_stop = self.fixed_order is None
        if self.kind is FilterKind.BANDSTOP:
            if len(pb) != 2 or not pb[0] < pb[1]:
                raise InvalidFilterSpec("bandstop needs two increasing passband edges")
            if sb:
                if len(sb) != 2 or not pb[0] < sb[0] < sb[1] < pb[1]:
                    raise InvalidFilterSpec("bandstop stop edges must lie inside the passband edges")
            elif need_stop:
                raise InvalidFilterSpec("stopband_hz required without fixed_order")
            if self.fixed_order is not None and self.fixed_order % 2:
                raise InvalidFilterSpec("bandstop order must be even")
            return
        if len(pb) != 1:
            raise InvalidFilterSpec(f"{self.kind.value} needs one passband edge")
        if not sb:
            if need_stop:
                raise InvalidFilterSpec("stopband_hz required without fixed_order")
            return
        if len(sb) != 1:
            raise InvalidFilterSpec(f"{self.kind.value} needs one stopband edge")
        if self.kind is FilterKind.LOWPASS and not pb[0] < sb[0]:
            raise InvalidFilterSpec("lowpass needs passband < stopband")
        if self.kind is FilterKind.HIGHPASS and not sb[0] < pb[0]:
            raise InvalidFilterSpec("highpass needs stopband < passband")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "family": self.family.value,
            "sample_rate_hz": self.sample_rate_hz,
            "passband_hz": list(self.passband_hz),
            "stopband_hz": list(self.stopband_hz),
            "passband_ripple_db": self.passband_ripple_db,
            "stopband_atten_db": self.stopband_atten_db,
            "fixed_order": self.fixed_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterSpec":
        return cls(
            kind=d["kind"],
            family=d["family"],
            sample_rate_hz=float(d["sample_rate_hz"]),
            passband_hz=d["passband_hz"],
            stopband_hz=d.get("stopband_hz") or (),
            passband_ripple_db=float(d.get("passband_ripple_db", 1.0)),
            stopband_atten_db=float(d.get("stopband_atten_db", 80.0)),
            fixed_order=d.get("fixed_order"),
        )


# Filter settings used in the field deployment this pipeline models.
DEFAULT_BANDSTOP = FilterSpec(
    kind=FilterKind.BANDSTOP,
    family=FilterFamily.CHEBYSHEV_I,
    sample_rate_hz=1000.0,
    passband_hz=(25.0, 100.0),
    passband_ripple_db=1.0,
    fixed_order=2,
)
DEFAULT_HIGHPASS = FilterSpec(
    kind=FilterKind.HIGHPASS,
    family=FilterFamily.BUTTERWORTH,
    sample_rate_hz=2000.0,
    passband_hz=10.0,
    stopband_hz=0.1,
    passband_ripple_db=1.0,
    stopband_atten_db=80.0,
)
DEFAULT_LOWPASS = FilterSpec(
    kind=FilterKind.LOWPASS,
    family=FilterFamily.BUTTERWORTH,
    sample_rate_hz=2000.0,
    passband_hz=40.0,
    stopband_hz=120.0,
    passband_ripple_db=1.0,
    stopband_atten_db=80.0,
)


@dataclass(frozen=True)
class Section:
    b: tuple  # (b0, b1, b2)
    a: tuple  # (1, a1, a2)

    def is_stable(self) -> bool:
        a1, a2 = self.a[1], self.a[2]
        return abs(a2) < 1.0 and abs(a1) < 1.0 + a2


@dataclass(frozen=True)
class IirFilter:
    sections: tuple
    overall_gain: float = 1.0
    order: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))

    @property
    def sos(self) -> np.ndarray:
        """Second-order sections in scipy layout, gain folded into the first row."""
        if not self.sections:
            return np.array([[self.overall_gain, 0.0, 0.0, 1.0, 0.0, 0.0]])
        rows = np.array([list(s.b) + list(s.a) for s in self.sections], dtype=float)
        rows[0, :3] *= self.overall_gain
        return rows

    def is_stable(self) -> bool:
        return all(s.is_stable() for s in self.sections)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "overall_gain": self.overall_gain,
            "sections": [{"b": list(s.b), "a": list(s.a)} for s in self.sections],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IirFilter":
        return cls(
            sections=tuple(Section(tuple(s["b"]), tuple(s["a"])) for s in d["sections"]),
            overall_gain=float(d["overall_gain"]),
            order=int(d.get("order", 0)),
        )


IDENTITY_FILTER = IirFilter(sections=(Section((1.0, 0.0, 0.0), (1.0, 0.0, 0.0)),))


# ------------------------------------------------------------------ design


def prewarp(freq_hz, sample_rate_hz):
    """Analog angular frequency that the bilinear transform maps onto ``freq_hz``."""
    return 2.0 * sample_rate_hz * np.tan(np.pi * np.asarray(freq_hz, dtype=float) / sample_rate_hz)


def _ripple_eps(ripple_db: float) -> float:
    return math.sqrt(10.0 ** (ripple_db / 10.0) - 1.0)


def analog_prototype(family: FilterFamily, order: int, ripple_db: float):
    """Lowpass prototype (z, p, k) with exactly ``ripple_db`` loss at 1 rad/s."""
    eps = _ripple_eps(ripple_db)
    m = np.arange(order)
    if family is FilterFamily.BUTTERWORTH:
        radius = eps ** (-1.0 / order)
        poles = radius * np.exp(1j * np.pi * (2 * m + order + 1) / (2 * order))
        gain = np.prod(-poles).real
    else:
        mu = math.asinh(1.0 / eps) / order
        theta = np.pi * (2 * m + 1) / (2 * order)
        poles = -math.sinh(mu) * np.sin(theta) + 1j * math.cosh(mu) * np.cos(theta)
        gain = np.prod(-poles).real
        if order % 2 == 0:
            gain /= math.sqrt(1.0 + eps * eps)
    return np.array([], dtype=complex), poles, float(gain)


def minimum_order(family: FilterFamily, stop_ratio: float, ripple_db: float, atten_db: float) -> int:
    """Smallest prototype order reaching ``atten_db`` at normalized frequency ``stop_ratio``."""
    if stop_ratio <= 1.0:
        raise DesignInfeasible("stopband edge does not lie beyond the passband edge")
    d = (10.0 ** (atten_db / 10.0) - 1.0) / (10.0 ** (ripple_db / 10.0) - 1.0)
    if family is FilterFamily.BUTTERWORTH:
        n = math.log(d) / (2.0 * math.log(stop_ratio))
    else:
        n = math.acosh(math.sqrt(d)) / math.acosh(stop_ratio)
    return max(1, math.ceil(n - 1e-9))


def _prototype_stop_ratio(spec: FilterSpec) -> float:
    fs = spec.sample_rate_hz
    wp = prewarp(spec.passband_hz, fs)
    ws = prewarp(spec.stopband_hz, fs)
    if spec.kind is FilterKind.LOWPASS:
        return float(ws[0] / wp[0])
    if spec.kind is FilterKind.HIGHPASS:
        return float(wp[0] / ws[0])
    w0sq = wp[0] * wp[1]
    bw = wp[1] - wp[0]
    return float(np.min(np.abs(bw * ws / (w0sq - ws**2))))


def _transform(spec: FilterSpec, z, p, k):
    """Map the unit prototype onto the pre-warped analog band of ``spec``."""
    wp = prewarp(spec.passband_hz, spec.sample_rate_hz)
    degree = len(p) - len(z)
    if spec.kind is FilterKind.LOWPASS:
        w = wp[0]
        return z * w, p * w, k * w**degree
    if spec.kind is FilterKind.HIGHPASS:
        w = wp[0]
        k_hp = k * np.real(np.prod(-z) / np.prod(-p))
        z_hp = np.concatenate([w / z, np.zeros(degree)])
        return z_hp, w / p, float(k_hp)
    w0 = math.sqrt(wp[0] * wp[1])
    bw = wp[1] - wp[0]
    half = bw / 2.0

    def _roots(x):
        q = half / x
        disc = np.sqrt(q * q - w0 * w0 + 0j)
        return np.concatenate([q + disc, q - disc])

    z_bs = _roots(z) if len(z) else np.array([], dtype=complex)
    z_bs = np.concatenate([z_bs, np.full(degree, 1j * w0), np.full(degree, -1j * w0)])
    p_bs = _roots(p)
    k_bs = k * np.real(np.prod(-z) / np.prod(-p))
    return z_bs, p_bs, float(k_bs)


def _bilinear(z, p, k, fs):
    fs2 = 2.0 * fs
    degree = len(p) - len(z)
    zd = np.concatenate([(fs2 + z) / (fs2 - z), -np.ones(degree)])
    pd = (fs2 + p) / (fs2 - p)
    kd = k * np.real(np.prod(fs2 - z) / np.prod(fs2 - p))
    return zd, pd, float(kd)


def _root_groups(roots, tol=1e-9):
    """Split roots into conjugate pairs / real pairs; at most one real singleton."""
    roots = np.asarray(roots, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(roots)))) if roots.size else 1.0
    cplx = [r for r in roots if r.imag > tol * scale]
    reals = sorted(float(r.real) for r in roots if abs(r.imag) <= tol * scale)
    groups = [(complex(r), complex(r).conjugate()) for r in cplx]
    while len(reals) >= 2:
        groups.append((complex(reals.pop()), complex(reals.pop())))
    if reals:
        groups.append((complex(reals.pop()),))
    return groups


def _poly(group) -> tuple:
    if len(group) == 0:
        return (1.0, 0.0, 0.0)
    if len(group) == 1:
        return (1.0, -group[0].real, 0.0)
    r1, r2 = group
    return (1.0, float(-(r1 + r2).real), float((r1 * r2).real))


def _evaluate_section(b, a, zinv):
    num = b[0] + b[1] * zinv + b[2] * zinv * zinv
    den = a[0] + a[1] * zinv + a[2] * zinv * zinv
    return num / den


def _zpk_to_filter(zd, pd, kd, kind: FilterKind, order: int) -> IirFilter:
    pole_groups = _root_groups(pd)
    zero_groups = _root_groups(zd)
    # Poles nearest the unit circle get the nearest zeros first.
    pole_groups.sort(key=lambda g: -max(abs(r) for r in g))
    # A first-order pole must take a first-order zero and vice versa.
    single_zero = [g for g in zero_groups if len(g) == 1]
    pair_zero = [g for g in zero_groups if len(g) == 2]
    ref = -1.0 if kind is FilterKind.HIGHPASS else 1.0
    sections = []
    gain = kd
    for pg in pole_groups:
        pool = single_zero if len(pg) == 1 else pair_zero
        if not pool:
            pool = pair_zero or single_zero
        zg = ()
        if pool:
            target = pg[0]
            idx = min(range(len(pool)), key=lambda i: abs(pool[i][0] - target))
            zg = pool.pop(idx)
        b = _poly(zg)
        a = _poly(pg)
        h = abs(_evaluate_section(b, a, 1.0 / ref))
        if h > 0 and np.isfinite(h):
            b = tuple(c / h for c in b)
            gain *= h
        sections.append(Section(b=b, a=a))
    if single_zero or pair_zero:
        raise NumericalInstability("unpaired zeros left after section factoring")
    return IirFilter(sections=tuple(sections), overall_gain=float(gain), order=order)


def _realize(spec: FilterSpec, prototype_order: int) -> IirFilter:
    z, p, k = analog_prototype(spec.family, prototype_order, spec.passband_ripple_db)
    z, p, k = _transform(spec, z, p, k)
    zd, pd, kd = _bilinear(z, p, k, spec.sample_rate_hz)
    order = len(pd)
    filt = _zpk_to_filter(zd, pd, kd, spec.kind, order)
    if not filt.is_stable() or not np.isfinite(filt.overall_gain):
        raise NumericalInstability(f"unstable realization at order {order}")
    return filt


def meets_spec(filt: IirFilter, spec: FilterSpec, tol_db: float = SPEC_TOLERANCE_DB) -> bool:
    fs = spec.sample_rate_hz
    pass_db = magnitude_db(filt, spec.passband_hz, fs)
    if np.any(pass_db < -spec.passband_ripple_db - tol_db):
        return False
    if spec.stopband_hz:
        stop_db = magnitude_db(filt, spec.stopband_hz, fs)
        if np.any(stop_db > -spec.stopband_atten_db + tol_db):
            return False
    return True


def design_filter(spec: FilterSpec) -> IirFilter:
    """Realize ``spec`` as a cascade of second-order sections.

    With ``fixed_order`` the order is taken as given (for a bandstop it is the
    digital order, twice the prototype order) and only the passband ripple is
    guaranteed. Otherwise the smallest order up to 40 meeting both edges is used.
    """
    if spec.fixed_order is not None:
        proto = spec.fixed_order // 2 if spec.kind is FilterKind.BANDSTOP else spec.fixed_order
        return _realize(spec, proto)
    try:
        n = minimum_order(
            spec.family,
            _prototype_stop_ratio(spec),
            spec.passband_ripple_db,
            spec.stopband_atten_db,
        )
    except (ValueError, OverflowError) as exc:
        raise DesignInfeasible(str(exc)) from exc
    per_order = 2 if spec.kind is FilterKind.BANDSTOP else 1
    while n * per_order <= MAX_ORDER:
        filt = _realize(spec, n)
        if meets_spec(filt, spec):
            return filt
        n += 1
    raise DesignInfeasible(f"no order <= {MAX_ORDER} meets {spec}")


# -------------------------------------------------------------- evaluation


def frequency_response(filt: IirFilter, freqs_hz, sample_rate_hz: float) -> np.ndarray:
    freqs = np.atleast_1d(np.asarray(freqs_hz, dtype=float))
    zinv = np.exp(-2j * np.pi * freqs / sample_rate_hz)
    h = np.full(freqs.shape, complex(filt.overall_gain))
    for s in filt.sections:
        h = h * _evaluate_section(s.b, s.a, zinv)
    return h


def magnitude_db(filt: IirFilter, freqs_hz, sample_rate_hz: float) -> np.ndarray:
    mag = np.abs(frequency_response(filt, freqs_hz, sample_rate_hz))
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(mag)


def apply_filter(filt: IirFilter, x) -> np.ndarray:
    """Causal direct-form-II-transposed filtering from zero initial state."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.copy()
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("signal contains NaN or infinity")
    return _sig.sosfilt(filt.sos, x)


# ------------------------------------------------- speed normalization


def interpolate_normalize(wave, v_kmh: float, v_min_kmh: float) -> np.ndarray:
    """Two-tap speed-weighted smoother: ``(1 - r) * x[i] + r * x[i+1]``, r = v_min / v.

    Output has one sample fewer than the input.
    """
    if not v_min_kmh > 0:
        raise ValueError("v_min_kmh must be positive")
    if v_kmh < v_min_kmh:
        raise SpeedBelowMinimum(f"v={v_kmh} km/h below minimum {v_min_kmh} km/h")
    wave = np.asarray(wave, dtype=float)
    r = v_min_kmh / v_kmh
    return (1.0 - r) * wave[:-1] + r * wave[1:]


def resample_to_speed(wave, v_kmh: float, v_ref_kmh: float) -> np.ndarray:
    """Linear-interpolation resampling so the passage looks as if driven at ``v_ref_kmh``.

    Output sample ``i`` reads the input at fractional index ``i * v_ref / v``,
    so one output sample always covers ``v_ref / 3.6 / fs`` meters of road
    whatever the true speed. The two-tap smoother above is the first step of
    this walk.
    """
    if not (v_kmh > 0 and v_ref_kmh > 0):
        raise ValueError("speeds must be positive")
    wave = np.asarray(wave, dtype=float)
    if wave.size < 2:
        raise InsufficientData("need at least 2 samples to resample")
    step = v_ref_kmh / v_kmh
    count = int(math.floor((wave.size - 1) / step + 1e-9)) + 1
    pos = np.arange(count) * step
    return np.interp(pos, np.arange(wave.size), wave)


# -------------------------------------------------------------------- FFT


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def next_power_of_two(n: int) -> int:
    return 1 << max(0, math.ceil(math.log2(max(1, n))))


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT; len(x) must be a power of two."""
    x = np.asarray(x, dtype=complex)
    n = x.size
    if not is_power_of_two(n):
        raise ValueError(f"FFT length {n} is not a power of two")
    a = x[_bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(-1, size)
        even = blocks[:, :half]
        odd = blocks[:, half:] * twiddle
        a = np.concatenate([even + odd, even - odd], axis=1).reshape(n)
        size *= 2
    return a


def _ifft(x) -> np.ndarray:
    return np.conj(fft(np.conj(x))) / x.size


def chirp_fft(x) -> np.ndarray:
    """DFT of any length via Bluestein's chirp, built on the radix-2 :func:`fft`."""
    x = np.asarray(x, dtype=complex)
    n = x.size
    if is_power_of_two(n):
        return fft(x)
    k = np.arange(n)
    # Reduce k^2 modulo 2n before the exponent so long transforms keep their phase precision.
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = next_power_of_two(2 * n - 1)
    a = np.zeros(m, dtype=complex)
    a[:n] = x * chirp
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:][::-1])
    return chirp * _ifft(fft(a) * fft(b))[:n]


def fft_magnitude(x, pad_to: int) -> np.ndarray:
    """Magnitudes of bins ``0 .. pad_to // 2`` of the zero-padded DFT."""
    x = np.asarray(x, dtype=float)
    if pad_to < 1:
        raise ValueError(f"pad_to={pad_to} must be positive")
    if pad_to < x.size:
        raise ValueError(f"pad_to={pad_to} shorter than signal ({x.size})")
    padded = np.zeros(pad_to)
    padded[: x.size] = x
    return np.abs(chirp_fft(padded)[: pad_to // 2 + 1])


# ------------------------------------------------------------ correlation


def normalized_correlation(x, y, shift: int) -> float:
    """Pearson coefficient of ``x[0:m]`` against ``y[shift:shift+m]``.

    ``m = min(len(x), len(y) - shift)``. Raises UndefinedCorrelation when either
    window is flat.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if shift < 0 or shift >= y.size:
        raise ValueError(f"shift {shift} outside [0, {y.size})")
    m = min(x.size, y.size - shift)
    if m < 2:
        raise InsufficientData(f"overlap of {m} samples is too short")
    a = x[:m]
    b = y[shift : shift + m]
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedCorrelation("flat window")
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if denom == 0.0:
        raise UndefinedCorrelation("zero variance")
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def response_table(filt: IirFilter, sample_rate_hz: float, n_points: int = 512,
                   freqs_hz: Optional[Sequence[float]] = None):
    """(freq_hz, magnitude_db) pairs for plotting."""
    if freqs_hz is None:
        freqs_hz = np.linspace(0.0, sample_rate_hz / 2, n_points, endpoint=False)
    freqs = np.asarray(freqs_hz, dtype=float)
    return list(zip(freqs.tolist(), magnitude_db(filt, freqs, sample_rate_hz).tolist()))
