"""Time-series scenarios: loads and available PV power over a set of days."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class LoadSpec:
    """Fixed-power-factor load drawing ``series[profile]`` kW at one node."""

    id: str
    bus: object
    phase: str
    profile: str
    power_factor: float = 0.95

    def __post_init__(self):
        if not 0 < self.power_factor <= 1:
            raise ValidationError(f"load {self.id}: power factor must be in (0, 1]")

    @property
    def tan_phi(self):
        return math.tan(math.acos(self.power_factor))


@dataclass(frozen=True)
class ScenarioSet:
    """Per-period series (kW) for ``len(days)`` consecutive days.

    ``series`` maps a column id to an array of length
    ``len(days) * periods_per_day``.  ``split`` tags each day label as
    ``"train"`` or ``"test"``.
    """

    dt: float
    periods_per_day: int
    days: tuple
    series: dict
    loads: tuple = ()
    split: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.periods_per_day < 1:
            raise ValidationError("periods_per_day must be >= 1")
        days = tuple(self.days)
        if len(set(days)) != len(days):
            raise ValidationError("duplicate day labels")
        object.__setattr__(self, "days", days)
        n = len(days) * self.periods_per_day
        clean = {}
        for name, arr in self.series.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n,):
                raise ValidationError(f"series {name}: expected {n} values, got {arr.shape}")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValidationError(f"series {name}: values must be finite and non-negative")
            arr = arr.copy()
            arr.setflags(write=False)
            clean[name] = arr
        object.__setattr__(self, "series", clean)
        object.__setattr__(self, "loads", tuple(self.loads))
        for ld in self.loads:
            if ld.profile not in clean:
                raise ValidationError(f"load {ld.id}: profile column {ld.profile!r} not found")
        split = dict(self.split)
        for d, tag in split.items():
            if tag not in ("train", "test"):
                raise ValidationError(f"day {d}: split tag must be train or test")
            if d not in days:
                raise ValidationError(f"split refers to unknown day {d!r}")
        object.__setattr__(self, "split", split)

    @property
    def horizon(self):
        return len(self.days) * self.periods_per_day

    def column(self, name):
        try:
            return self.series[name]
        except KeyError:
            raise ValidationError(f"profile column {name!r} not found") from None

    def day(self, label):
        """Sub-scenario with a single day."""
        return self.select([label])

    def select(self, labels):
        idx = []
        for lab in labels:
            if lab not in self.days:
                raise ValidationError(f"unknown day {lab!r}")
            k = self.days.index(lab)
            idx.append(np.arange(k * self.periods_per_day, (k + 1) * self.periods_per_day))
        idx = np.concatenate(idx) if idx else np.zeros(0, dtype=int)
        return ScenarioSet(self.dt, self.periods_per_day, tuple(labels),
                           {k: v[idx] for k, v in self.series.items()}, self.loads,
                           {d: t for d, t in self.split.items() if d in labels})

    def tagged(self, tag):
        return [d for d in self.days if self.split.get(d) == tag]

    def node_loads(self, net):
        """Aggregate fixed loads per node: ``(p, q)`` arrays of shape (T, N), kW/kvar."""
        p = np.zeros((self.horizon, net.n_nodes))
        q = np.zeros_like(p)
        for ld in self.loads:
            if not net.has_node(ld.bus, ld.phase):
                raise ValidationError(f"load {ld.id}: node ({ld.bus}, {ld.phase}) not in network")
            i = net.node(ld.bus, ld.phase)
            p[:, i] += self.series[ld.profile]
            q[:, i] += self.series[ld.profile] * ld.tan_phi
        return p, q


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape parameters for :func:`generate_synthetic_scenarios`.

    ``load_peaks`` and ``pv_ratings`` map column ids to peak kW.  Noise
    levels are relative standard deviations; ``cloud_range`` bounds the daily
    clear-sky factor.
    """

    load_peaks: dict
    pv_ratings: dict
    n_days: int = 30
    periods_per_day: int = 24
    solar_noon: float = 12.5
    sunrise: float = 6.0
    sunset: float = 19.0
    load_noise: float = 0.05
    pv_noise: float = 0.05
    cloud_range: tuple = (0.7, 1.0)
    n_test_days: int = 3
    day_prefix: str = "d"


def diurnal_load_shape(hours):
    """Residential-style profile: night base, morning bump, evening peak (max 1)."""
    h = np.asarray(hours, dtype=float)
    shape = (0.35 + 0.25 * np.exp(-0.5 * ((h - 8.0) / 1.5) ** 2)
             + 0.65 * np.exp(-0.5 * ((h - 19.5) / 2.0) ** 2)
             + 0.15 * np.exp(-0.5 * ((h - 13.0) / 2.5) ** 2))
    return shape / shape.max()


def clear_sky_shape(hours, sunrise=6.0, sunset=19.0, noon=12.5):
    """Bell-shaped PV output (max 1 at ``noon``), zero outside daylight."""
    h = np.asarray(hours, dtype=float)
    half = max(noon - sunrise, sunset - noon)
    x = np.clip((h - noon) / half, -1.0, 1.0)
    out = np.cos(0.5 * np.pi * x) ** 1.5
    out[(h <= sunrise) | (h >= sunset)] = 0.0
    return out


def generate_synthetic_scenarios(spec: SyntheticSpec, loads=(), seed=0):
    """Seeded synthetic load and PV series.

    Every PV column shares the day's irradiance (clear-sky shape scaled by a
    daily cloud factor, plus small noise); loads follow the diurnal shape
    with independent noise.  The last ``n_test_days`` days are tagged test.
    """
    rng = np.random.default_rng(seed)
    ppd = spec.periods_per_day
    dt = 24.0 / ppd
    hours = (np.arange(ppd) + 0.5) * dt
    base_load = diurnal_load_shape(hours)
    base_pv = clear_sky_shape(hours, spec.sunrise, spec.sunset, spec.solar_noon)
    lo, hi = spec.cloud_range
    series = {}
    irr = []
    for _ in range(spec.n_days):
        k = rng.uniform(lo, hi)
        noise = 1 + spec.pv_noise * rng.standard_normal(ppd)
        irr.append(np.clip(base_pv * k * noise, 0.0, 1.0))
    irr = np.concatenate(irr)
    for name in sorted(spec.pv_ratings):
        series[name] = spec.pv_ratings[name] * irr
    for name in sorted(spec.load_peaks):
        noise = 1 + spec.load_noise * rng.standard_normal(spec.n_days * ppd)
        series[name] = spec.load_peaks[name] * np.clip(np.tile(base_load, spec.n_days) * noise, 0, None)
    days = tuple(f"{spec.day_prefix}{k:02d}" for k in range(spec.n_days))
    n_test = min(spec.n_test_days, spec.n_days)
    split = {d: ("test" if k >= spec.n_days - n_test else "train") for k, d in enumerate(days)}
    return ScenarioSet(dt, ppd, days, series, tuple(loads), split)
