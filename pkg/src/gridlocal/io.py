"""Plain-text input files: feeder, DER table, loads, profiles and forecast errors.

Every file is a CSV with a one-line header.  Units are fixed by the column
names (``_kw``, ``_kva``, ``_kwh``, ``_ohm_per_km``, ``_a``).  Parse errors
name the file, the line and the column; cross-reference problems are
collected and reported together.

Files
-----
buses.csv
    ``bus, phases, kind`` with phases like ``abc`` and kind ``slack`` or ``pq``.
linecodes.csv
    ``code, row, col, r_ohm_per_km, x_ohm_per_km``; one row per matrix entry of
    a 3x3 (phases) or 4x4 (phases and neutral) primitive impedance.
branches.csv
    ``name, from_bus, to_bus, code, length_km, ampacity_a``.  Transformers use
    ``length_km = 1`` and an impedance in ohm.
ders.csv
    ``id, kind, bus, phase, profile`` plus the kind's rating columns (see
    :data:`DER_COLUMNS`).  Empty cells take the defaults.
loads.csv
    ``id, bus, phase, profile, power_factor``.
profiles.csv
    ``day, split, t`` followed by one kW column per profile.
error_model.csv
    ``parameter, value`` rows: ``family``, ``low``/``high`` or ``mean``/``std``,
    ``mode``, ``correlation`` and, for the empirical family, one ``sample`` row
    per value.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .der import Bess, DerSet, FlexLoad, PvUnit
from .errors import ValidationError
from .network import BranchSpec, Bus, Grounding, NetworkModel, TapChanger
from .scenario import LoadSpec, ScenarioSet
from .uncertainty import ForecastErrorModel

INPUT_FILES = ("buses", "linecodes", "branches", "ders", "loads", "profiles", "error_model")

#: optional rating columns per DER kind: (column, field, default)
DER_COLUMNS = {
    "pv": (("s_rated_kva", "s_rated", None), ("pf_min", "pf_min", 0.9), ("q_mode", "q_mode", "cone"),
           ("q_min", "q_min", -1.0), ("q_max", "q_max", 1.0)),
    "bess": (("e_cap_kwh", "e_cap", None), ("p_max_kw", "p_max", None), ("s_max_kva", "s_max", None),
             ("e_start_kwh", "e_start", None), ("soc_min", "soc_min", 0.1), ("soc_max", "soc_max", 0.9),
             ("eta", "eta", 0.95)),
    "flex": (("p_shift_kw", "p_shift", None), ("power_factor", "power_factor", 0.95)),
}
TEXT_FIELDS = {"q_mode"}


@dataclass(frozen=True)
class NetworkSettings:
    """Feeder-wide settings that are not part of the branch table."""

    base_power_kva: float = 100.0
    base_voltage_v: float = 400.0
    slack_pu: float = 1.0
    tap_step_pu: float = 0.0
    tap_min: int = 0
    tap_max: int = 0
    pole_ohm: float | None = None
    transformer_ohm: float | None = None

    def tap_changer(self):
        rot = np.exp(-2j * np.pi / 3)
        v = self.slack_pu
        return TapChanger(self.tap_step_pu, self.tap_min, self.tap_max, (v, v * rot, v * np.conj(rot)))

    def grounding(self):
        if self.pole_ohm is None:
            return None
        return Grounding(self.pole_ohm, 3.0 if self.transformer_ohm is None else self.transformer_ohm)


# ----------------------------------------------------------------------------
# generic CSV reading
# ----------------------------------------------------------------------------

class _Row(dict):
    """A CSV record that remembers where it came from."""

    path: str = ""
    line: int = 0

    def where(self, column):
        return f"{self.path}: line {self.line} column {column!r}"

    def text(self, column):
        value = self.get(column, "")
        if value == "":
            raise ValidationError(f"{self.where(column)}: value missing")
        return value

    def number(self, column, default=None):
        value = self.get(column, "")
        if value == "":
            if default is None:
                raise ValidationError(f"{self.where(column)}: value missing")
            return default
        try:
            x = float(value)
        except ValueError:
            raise ValidationError(f"{self.where(column)}: {value!r} is not a number") from None
        if not np.isfinite(x):
            raise ValidationError(f"{self.where(column)}: value must be finite")
        return x

    def integer(self, column, default=None):
        x = self.number(column, default)
        if x != int(x):
            raise ValidationError(f"{self.where(column)}: {self.get(column)!r} is not an integer")
        return int(x)


def read_table(path, required, optional=()):
    """Rows of a CSV file as :class:`dict` objects carrying their line number.

    Raises
    ------
    ValidationError
        Missing file, missing header columns, unknown columns or ragged rows.
    """
    if not os.path.isfile(path):
        raise ValidationError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: line 1: header missing")
    head = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in head]
    if missing:
        raise ValidationError(f"{path}: line 1: missing columns {missing}")
    if optional is not None:
        unknown = [c for c in head if c not in required and c not in optional]
        if unknown:
            raise ValidationError(f"{path}: line 1: unknown columns {unknown}")
    if len(set(head)) != len(head):
        raise ValidationError(f"{path}: line 1: duplicate column names")
    out = []
    for k, raw in enumerate(rows[1:], start=2):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(head):
            raise ValidationError(f"{path}: line {k}: expected {len(head)} columns, found {len(raw)}")
        row = _Row(zip(head, (c.strip() for c in raw)))
        row.path, row.line = path, k
        out.append(row)
    return head, out


def parse_bus_id(text):
    """Bus ids are integers when they look like one, strings otherwise."""
    try:
        return int(text)
    except ValueError:
        return text


# ----------------------------------------------------------------------------
# feeder
# ----------------------------------------------------------------------------

def load_linecodes(path):
    """Primitive impedance matrices (ohm/km) by code."""
    _, rows = read_table(path, ("code", "row", "col", "r_ohm_per_km", "x_ohm_per_km"))
    entries = {}
    for r in rows:
        i, j = r.integer("row"), r.integer("col")
        if not (0 <= i < 4 and 0 <= j < 4):
            raise ValidationError(f"{r.where('row')}: matrix indices must lie in 0..3")
        key = (r.text("code"), i, j)
        if key in entries:
            raise ValidationError(f"{path}: line {r.line}: duplicate entry {key}")
        entries[key] = complex(r.number("r_ohm_per_km"), r.number("x_ohm_per_km"))
    codes = {}
    for code in sorted({k[0] for k in entries}):
        size = 1 + max(max(i, j) for c, i, j in entries if c == code)
        if size not in (3, 4):
            raise ValidationError(f"{path}: code {code!r}: matrix must be 3x3 or 4x4")
        z = np.zeros((size, size), dtype=complex)
        gaps = []
        for i in range(size):
            for j in range(size):
                if (code, i, j) in entries:
                    z[i, j] = entries[(code, i, j)]
                elif (code, j, i) in entries:
                    z[i, j] = entries[(code, j, i)]
                else:
                    gaps.append((i, j))
        if gaps:
            raise ValidationError(f"{path}: code {code!r}: missing entries {gaps}")
        codes[code] = z
    return codes


def load_network(buses_path, branches_path, linecodes_path, settings: NetworkSettings | None = None):
    settings = settings or NetworkSettings()
    _, bus_rows = read_table(buses_path, ("bus", "phases"), ("kind",))
    buses = []
    for r in bus_rows:
        buses.append(Bus(parse_bus_id(r.text("bus")), tuple(r.text("phases")), r.get("kind") or "pq"))
    codes = load_linecodes(linecodes_path)
    _, br_rows = read_table(branches_path, ("from_bus", "to_bus", "code", "length_km", "ampacity_a"), ("name",))
    known = {b.id for b in buses}
    problems = []
    for r in br_rows:
        for col in ("from_bus", "to_bus"):
            if parse_bus_id(r.text(col)) not in known:
                problems.append(f"{r.where(col)}: unknown bus {r[col]!r}")
        if r.text("code") not in codes:
            problems.append(f"{r.where('code')}: unknown line code {r['code']!r}")
    if problems:
        raise ValidationError("; ".join(problems))
    branches = [BranchSpec(parse_bus_id(r["from_bus"]), parse_bus_id(r["to_bus"]), codes[r["code"]],
                           r.number("length_km"), r.number("ampacity_a"), r.get("name", ""))
                for r in br_rows]
    return NetworkModel.build(buses, branches, settings.tap_changer(), settings.base_power_kva,
                              settings.base_voltage_v, settings.grounding())


# ----------------------------------------------------------------------------
# DERs, loads, profiles, error model
# ----------------------------------------------------------------------------

def load_ders(path):
    optional = {c for cols in DER_COLUMNS.values() for c, _, _ in cols}
    _, rows = read_table(path, ("id", "kind", "bus", "phase", "profile"), optional)
    groups = {"pv": [], "bess": [], "flex": []}
    for r in rows:
        kind = r.text("kind")
        if kind not in DER_COLUMNS:
            raise ValidationError(f"{r.where('kind')}: unknown DER kind {kind!r}")
        kw = {}
        for col, name, default in DER_COLUMNS[kind]:
            kw[name] = (r.get(col) or default) if name in TEXT_FIELDS else r.number(col, default)
        common = (r.text("id"), parse_bus_id(r.text("bus")), r.text("phase"))
        try:
            if kind == "pv":
                unit = PvUnit(*common, kw.pop("s_rated"), r.text("profile"), **kw)
            elif kind == "bess":
                unit = Bess(*common, **kw)
            else:
                unit = FlexLoad(*common, kw["p_shift"], r.text("profile"), kw["power_factor"])
        except ValidationError as exc:
            raise ValidationError(f"{path}: line {r.line}: {exc}") from None
        groups[kind].append(unit)
    return DerSet(tuple(groups["pv"]), tuple(groups["bess"]), tuple(groups["flex"]))


def load_loads(path):
    _, rows = read_table(path, ("id", "bus", "phase", "profile"), ("power_factor",))
    out = []
    for r in rows:
        try:
            out.append(LoadSpec(r.text("id"), parse_bus_id(r.text("bus")), r.text("phase"), r.text("profile"),
                                r.number("power_factor", 0.95)))
        except ValidationError as exc:
            raise ValidationError(f"{path}: line {r.line}: {exc}") from None
    return tuple(out)


def load_profiles(path, loads=(), dt=None):
    """Profiles as a :class:`ScenarioSet` (loads attached after the caller's checks).

    Rows must form a complete (day x period) grid with periods numbered from 0
    within each day; the period length defaults to ``24 h / periods per day``.
    """
    head, rows = read_table(path, ("day", "split", "t"), None)
    cols = [c for c in head if c not in ("day", "split", "t")]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    days, split, per_day = [], {}, {}
    for r in rows:
        d = r.text("day")
        if d not in per_day:
            if days and d in days:
                raise ValidationError(f"{path}: line {r.line}: rows of day {d!r} are not contiguous")
            days.append(d)
            per_day[d] = []
            split[d] = r.text("split")
        elif r.text("split") != split[d]:
            raise ValidationError(f"{r.where('split')}: day {d!r} has conflicting split tags")
        t = r.integer("t")
        if t != len(per_day[d]):
            raise ValidationError(f"{r.where('t')}: expected period {len(per_day[d])}, found {t}")
        per_day[d].append(r)
    ppd = len(per_day[days[0]])
    short = [d for d in days if len(per_day[d]) != ppd]
    if short:
        raise ValidationError(f"{path}: days {short} do not have {ppd} periods")
    series = {c: np.array([r.number(c) for d in days for r in per_day[d]]) for c in cols}
    for c in cols:
        bad = np.flatnonzero(series[c] < 0)
        if bad.size:
            r = per_day[days[bad[0] // ppd]][bad[0] % ppd]
            raise ValidationError(f"{r.where(c)}: power must be non-negative")
    return ScenarioSet(24.0 / ppd if dt is None else dt, ppd, tuple(days), series, tuple(loads),
                       {d: s for d, s in split.items() if s})


def load_error_model(path):
    _, rows = read_table(path, ("parameter", "value"))
    params, samples = {}, []
    for r in rows:
        key = r.text("parameter")
        if key == "sample":
            samples.append(r.number("value"))
        elif key in ("family", "mode", "correlation"):
            params[key] = r.text("value")
        elif key in ("low", "high", "mean", "std"):
            params[key] = r.number("value")
        else:
            raise ValidationError(f"{r.where('parameter')}: unknown parameter {key!r}")
    family = params.get("family", "uniform")
    kw = {"mode": params.get("mode", "multiplicative"), "correlation": params.get("correlation", "perfect")}
    try:
        if family == "uniform":
            return ForecastErrorModel("uniform", (params.get("low", -0.1), params.get("high", 0.1)), **kw)
        if family == "normal":
            return ForecastErrorModel("normal", (params.get("mean", 0.0), params.get("std", 0.05)), **kw)
        if family == "empirical":
            return ForecastErrorModel("empirical", (), table=np.array(samples), **kw)
        return ForecastErrorModel(family, (), **kw)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def cross_check(net, ders, loads, series):
    """Every dangling reference between the tables, as a list of messages."""
    problems = []
    for d in ders.all():
        if not net.has_node(d.bus, d.phase):
            problems.append(f"DER {d.id}: node ({d.bus}, {d.phase}) not in network")
        ref = getattr(d, "profile", None)
        if ref is not None and ref not in series:
            problems.append(f"DER {d.id}: profile column {ref!r} not found")
    for ld in loads:
        if not net.has_node(ld.bus, ld.phase):
            problems.append(f"load {ld.id}: node ({ld.bus}, {ld.phase}) not in network")
        if ld.profile not in series:
            problems.append(f"load {ld.id}: profile column {ld.profile!r} not found")
    return problems


def load_inputs(paths: dict, settings: NetworkSettings | None = None):
    """Read and cross-validate a study from its input files.

    Parameters
    ----------
    paths : dict
        File path per key of :data:`INPUT_FILES`; ``error_model`` is optional
        (uniform +-10 % when absent).

    Returns
    -------
    (NetworkModel, DerSet, ScenarioSet, ForecastErrorModel)

    Raises
    ------
    ValidationError
        Parse errors with line and column, or the full list of dangling
        references.
    """
    missing = [k for k in INPUT_FILES if k != "error_model" and not paths.get(k)]
    if missing:
        raise ValidationError(f"input files not configured: {missing}")
    net = load_network(paths["buses"], paths["branches"], paths["linecodes"], settings)
    ders = load_ders(paths["ders"])
    loads = load_loads(paths["loads"])
    scen = load_profiles(paths["profiles"])
    problems = cross_check(net, ders, loads, scen.series)
    if problems:
        raise ValidationError("dangling references: " + "; ".join(problems))
    scen = ScenarioSet(scen.dt, scen.periods_per_day, scen.days, scen.series, loads, scen.split)
    model = load_error_model(paths["error_model"]) if paths.get("error_model") else ForecastErrorModel()
    return net, ders, scen, model


# ----------------------------------------------------------------------------
# writing
# ----------------------------------------------------------------------------

def _writer(path, header):
    fh = open(path, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


def network_settings(net: NetworkModel):
    """Settings reproducing ``net`` (balanced slack voltages assumed)."""
    g = net.grounding
    tap = net.tap
    return NetworkSettings(net.base_power, net.base_voltage, abs(tap.slack_voltage[0]), tap.step_voltage,
                           tap.tap_min, tap.tap_max, g.pole_ohm if g else None,
                           g.transformer_ohm if g else None)


def write_inputs(directory, net, ders, scen, model: ForecastErrorModel | None = None):
    """Export a study to the input file set; returns the path per file key.

    Each branch gets its own line code so the impedances round-trip exactly.
    """
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, f"{k}.csv") for k in INPUT_FILES}
    fh, w = _writer(paths["buses"], ["bus", "phases", "kind"])
    with fh:
        for b in net.buses:
            w.writerow([b.id, "".join(b.phases), b.kind])
    fh, w = _writer(paths["linecodes"], ["code", "row", "col", "r_ohm_per_km", "x_ohm_per_km"])
    with fh:
        for k, br in enumerate(net.branches):
            z = br.primitive_z
            for i in range(z.shape[0]):
                for j in range(z.shape[1]):
                    w.writerow([f"z{k}", i, j, repr(float(z[i, j].real)), repr(float(z[i, j].imag))])
    fh, w = _writer(paths["branches"], ["name", "from_bus", "to_bus", "code", "length_km", "ampacity_a"])
    with fh:
        for k, br in enumerate(net.branches):
            w.writerow([br.name, br.from_bus, br.to_bus, f"z{k}", repr(float(br.length)), repr(float(br.ampacity))])
    cols = [c for kind in ("pv", "bess", "flex") for c, _, _ in DER_COLUMNS[kind]]
    cols = list(dict.fromkeys(cols))
    fh, w = _writer(paths["ders"], ["id", "kind", "bus", "phase", "profile", *cols])
    with fh:
        for kind, units in (("pv", ders.pv), ("bess", ders.bess), ("flex", ders.flex)):
            for u in units:
                vals = {c: getattr(u, name) for c, name, _ in DER_COLUMNS[kind]}
                w.writerow([u.id, kind, u.bus, u.phase, getattr(u, "profile", ""),
                            *(repr(vals[c]) if isinstance(vals.get(c), float) else vals.get(c, "") for c in cols)])
    fh, w = _writer(paths["loads"], ["id", "bus", "phase", "profile", "power_factor"])
    with fh:
        for ld in scen.loads:
            w.writerow([ld.id, ld.bus, ld.phase, ld.profile, repr(float(ld.power_factor))])
    names = sorted(scen.series)
    fh, w = _writer(paths["profiles"], ["day", "split", "t", *names])
    with fh:
        ppd = scen.periods_per_day
        for k, d in enumerate(scen.days):
            for t in range(ppd):
                w.writerow([d, scen.split.get(d, ""), t,
                            *(repr(float(scen.series[c][k * ppd + t])) for c in names)])
    model = model or ForecastErrorModel()
    fh, w = _writer(paths["error_model"], ["parameter", "value"])
    with fh:
        w.writerow(["family", model.family])
        if model.family == "uniform":
            w.writerows([["low", repr(float(model.params[0]))], ["high", repr(float(model.params[1]))]])
        elif model.family == "normal":
            w.writerows([["mean", repr(float(model.params[0]))], ["std", repr(float(model.params[1]))]])
        elif model.family == "empirical":
            w.writerows([["sample", repr(float(x))] for x in np.ravel(model.table)])
        w.writerow(["mode", model.mode])
        w.writerow(["correlation", model.correlation])
    return paths
