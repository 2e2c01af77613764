"""PV units, battery storage and shiftable loads.

Powers are in kW / kvar / kVA and energy in kWh; the OPF converts to pu.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PvUnit:
    """Single-phase inverter-based PV.

    ``q_mode`` selects the reactive envelope: ``"cone"`` limits
    ``|q| <= p * tan(acos(pf_min))`` together with the apparent-power circle,
    ``"box"`` uses the fixed bounds ``q_min * s_rated <= q <= q_max * s_rated``.
    """

    id: str
    bus: object
    phase: str
    s_rated: float
    profile: str
    pf_min: float = 0.9
    q_mode: str = "cone"
    q_min: float = -1.0
    q_max: float = 1.0

    def __post_init__(self):
        if not 0 < self.pf_min <= 1:
            raise ValidationError(f"PV {self.id}: pf_min must be in (0, 1]")
        if self.s_rated <= 0:
            raise ValidationError(f"PV {self.id}: s_rated must be positive")
        if self.q_mode not in ("cone", "box"):
            raise ValidationError(f"PV {self.id}: unknown q_mode {self.q_mode!r}")
        if self.q_min > self.q_max:
            raise ValidationError(f"PV {self.id}: q_min exceeds q_max")
        if self.q_mode == "box":
            tan_phi = math.tan(math.acos(self.pf_min))
            if max(abs(self.q_min), abs(self.q_max)) > tan_phi + 1e-12:
                raise ValidationError(
                    f"PV {self.id}: q bounds inconsistent with pf_min at rated power")

    @property
    def tan_phi(self):
        return math.tan(math.acos(self.pf_min))

    def q_limits(self, p, p_avail=None):
        """Reactive range (kvar) for active dispatch ``p`` (kW)."""
        if self.q_mode == "box":
            return self.q_min * self.s_rated, self.q_max * self.s_rated
        q_cone = p * self.tan_phi
        q_circle = math.sqrt(max(self.s_rated ** 2 - p ** 2, 0.0))
        q = min(q_cone, q_circle)
        return -q, q


@dataclass(frozen=True)
class Bess:
    id: str
    bus: object
    phase: str
    e_cap: float
    p_max: float
    s_max: float
    e_start: float
    soc_min: float = 0.1
    soc_max: float = 0.9
    eta: float = 0.95

    def __post_init__(self):
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValidationError(f"BESS {self.id}: need 0 <= soc_min < soc_max <= 1")
        if not 0 < self.eta <= 1:
            raise ValidationError(f"BESS {self.id}: eta must be in (0, 1]")
        if self.e_cap <= 0 or self.p_max < 0 or self.s_max < 0:
            raise ValidationError(f"BESS {self.id}: ratings must be positive")
        lo, hi = self.e_bounds
        if not lo - 1e-9 <= self.e_start <= hi + 1e-9:
            raise ValidationError(f"BESS {self.id}: e_start outside SoC bounds")

    @property
    def e_bounds(self):
        return self.soc_min * self.e_cap, self.soc_max * self.e_cap


@dataclass(frozen=True)
class FlexLoad:
    """Load able to move ``p_shift`` kW between periods, preserving daily energy."""

    id: str
    bus: object
    phase: str
    p_shift: float
    profile: str
    power_factor: float = 0.95

    def __post_init__(self):
        if self.p_shift < 0:
            raise ValidationError(f"flexible load {self.id}: p_shift must be >= 0")
        if not 0 < self.power_factor <= 1:
            raise ValidationError(f"flexible load {self.id}: invalid power factor")


@dataclass(frozen=True)
class LoadPoint:
    p: float
    power_factor: float = 0.95

    def __post_init__(self):
        if not 0 < self.power_factor <= 1:
            raise ValidationError("power factor must be in (0, 1]")

    @property
    def q(self):
        return self.p * math.tan(math.acos(self.power_factor))


def bess_energy_step(e_prev, p_ch, p_dis, dt, bess: Bess, tol=1e-9):
    """Stored energy after one period of charging ``p_ch`` / discharging ``p_dis``.

    Raises
    ------
    ValidationError
        Simultaneous charge and discharge, or powers outside ``[0, p_max]``.
    InfeasibleError
        Resulting energy outside the SoC window.
    """
    if p_ch > tol and p_dis > tol:
        raise ValidationError(f"BESS {bess.id}: simultaneous charge and discharge")
    for name, val in (("p_ch", p_ch), ("p_dis", p_dis)):
        if val < -tol or val > bess.p_max + tol:
            raise ValidationError(f"BESS {bess.id}: {name}={val} outside [0, {bess.p_max}]")
    e = e_prev + (bess.eta * p_ch - p_dis / bess.eta) * dt
    lo, hi = bess.e_bounds
    if e < lo - tol:
        raise InfeasibleError(f"BESS {bess.id}: energy {e:.6g} below soc_min bound {lo:.6g}")
    if e > hi + tol:
        raise InfeasibleError(f"BESS {bess.id}: energy {e:.6g} above soc_max bound {hi:.6g}")
    return e


def bess_q_limit(p_ch, p_dis, bess: Bess):
    """Reactive headroom ``sqrt(s_max^2 - max(p_ch, p_dis)^2)`` (kvar)."""
    p = max(p_ch, p_dis)
    if p > bess.s_max:
        log.warning("BESS %s: active power %.4g exceeds s_max %.4g", bess.id, p, bess.s_max)
        return 0.0
    return math.sqrt(bess.s_max ** 2 - p ** 2)


def flexload_schedule_check(n_seq, flex: FlexLoad, base=None):
    """Validate a day of shift indicators.

    Returns ``True`` when the sequence sums to zero and, if ``base`` (kW) is
    given, every shifted load stays non-negative.

    Raises
    ------
    ValidationError
        Entries outside {-1, 0, 1}.
    InfeasibleError
        Non-zero daily sum ("energy not conserved"); ``residual`` attribute set.
    """
    n = np.asarray(n_seq)
    if n.size and not np.all(np.isin(n, (-1, 0, 1))):
        raise ValidationError("shift indicators must be in {-1, 0, 1}")
    residual = int(n.sum())
    if residual != 0:
        err = InfeasibleError(f"flexible load {flex.id}: energy not conserved, residual {residual:+d}")
        err.residual = residual
        raise err
    if base is not None and np.any(np.asarray(base) + n * flex.p_shift < -1e-9):
        return False
    return True


def bess_headroom(e, bess: Bess, dt):
    """Max charge and discharge power (kW) keeping the next energy within bounds."""
    lo, hi = bess.e_bounds
    p_ch = min(bess.p_max, max(hi - e, 0.0) / (bess.eta * dt))
    p_dis = min(bess.p_max, max(e - lo, 0.0) * bess.eta / dt)
    return p_ch, p_dis


@dataclass(frozen=True)
class DerSet:
    """All controllable resources of a study, in a fixed order."""

    pv: tuple = ()
    bess: tuple = ()
    flex: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "pv", tuple(self.pv))
        object.__setattr__(self, "bess", tuple(self.bess))
        object.__setattr__(self, "flex", tuple(self.flex))
        ids = [d.id for d in self.all()]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate DER ids")

    def all(self):
        return self.pv + self.bess + self.flex

    def by_id(self, der_id):
        for d in self.all():
            if d.id == der_id:
                return d
        raise KeyError(der_id)

    def validate(self, net, scenario=None):
        """Check every unit sits on an existing node and its profile column exists.

        All problems are collected and reported together.
        """
        problems = []
        for d in self.all():
            if not net.has_node(d.bus, d.phase):
                problems.append(f"{d.id}: node ({d.bus}, {d.phase}) not in network")
            ref = getattr(d, "profile", None)
            if scenario is not None and ref is not None and ref not in scenario.series:
                problems.append(f"{d.id}: profile column {ref!r} not found")
        if problems:
            raise ValidationError("; ".join(problems))
        return True
