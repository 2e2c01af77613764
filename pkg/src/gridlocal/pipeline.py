"""Run configuration and the staged study pipeline.

Stages and their artifacts (relative to the output directory):

``opf``
    ``opf/<day>.csv`` chance-constrained setpoints per training day,
    ``opf/outer_loop.csv`` outer-loop diagnostics and
    ``datasets/<der>.csv`` the training tables.
``design``
    ``design/controllers.json`` the controller bundle.
``simulate``
    ``simulate/<method>_summary.csv``, ``<method>_traces.csv`` and
    ``<method>_events.csv`` for the grid-code, centralized-OPF and
    learned-local methods.
``report``
    ``report/summary.csv`` the comparison table and, if enabled,
    ``report/traces.svg``.

Every stage reads its inputs from disk, so stages can be rerun one at a
time.  Each finished stage leaves a ``.stamp`` file with a fingerprint of
the configuration, the input data and the upstream stamps; ``all`` skips
stages whose stamp is current, which makes an interrupted run resumable.
Files are written to a temporary name and renamed when complete.
"""
from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import os

import numpy as np

from . import __version__
from .cases import cigre19_case, two_bus_study_case
from .ctrl_design import FitConfig, SetpointDataset, build_datasets, design_controllers, load_bundle, save_bundle
from .errors import StageDependencyError, ValidationError
from .io import INPUT_FILES, NetworkSettings, load_inputs
from .opf import OpfConfig
from .plotting import plot_traces, read_trace
from .rt_sim import DroopCurve, MethodSpec, SimConfig, simulate_method, write_summary, write_traces
from .uncertainty import CcConfig, ForecastErrorModel, solve_cc_opf

log = logging.getLogger(__name__)

STAGES = ("opf", "design", "simulate", "report")
METHODS = ("grid_code", "centralized_opf", "learned_local")
CASES = ("cigre19", "two_bus")


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

def _section(cls, base, data, name):
    """``base`` with the fields in ``data`` replaced; lists become tuples."""
    data = dict(data or {})
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - fields)
    if unknown:
        raise ValidationError(f"config section {name!r}: unknown keys {unknown}")
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return dataclasses.replace(base, **data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"config section {name!r}: {exc}") from None


def _case_defaults(case):
    """OPF and outer-loop defaults of the built-in studies."""
    if case == "cigre19":
        # margin updates of the current limits jitter near 2e-3 pu on this feeder
        return OpfConfig(c_p=0.1, c_q=0.001, c_h=100.0, v_max=1.05), CcConfig(outer_tol_i=5e-3)
    return OpfConfig(), CcConfig()


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on.

    ``case`` selects a built-in study (``cigre19`` or ``two_bus``, sized by
    ``case_options``) instead of input ``files``.  ``seeds`` holds the
    scenario seed of built-in studies and the Monte-Carlo seed of the
    outer loop; there are no time-based defaults.  ``simulate_days`` lists
    the days to operate (default: the days tagged test).
    """

    case: str | None = None
    case_options: dict = dataclasses.field(default_factory=dict)
    files: dict = dataclasses.field(default_factory=dict)
    network: NetworkSettings = NetworkSettings()
    opf: OpfConfig = OpfConfig()
    cc: CcConfig = CcConfig()
    fit: FitConfig = FitConfig()
    sim: SimConfig = SimConfig()
    droop: DroopCurve = DroopCurve()
    error_model: dict = dataclasses.field(default_factory=dict)
    seeds: dict = dataclasses.field(default_factory=lambda: {"scenario": 7, "cc": 1})
    out: str = "run"
    plots: bool = True
    simulate_days: tuple = ()

    @classmethod
    def from_dict(cls, data, base_dir="."):
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"config: unknown keys {unknown}")
        case = data.get("case")
        if case is not None and case not in CASES:
            raise ValidationError(f"config: unknown case {case!r}, expected one of {CASES}")
        files = {k: os.path.normpath(os.path.join(base_dir, v)) for k, v in (data.get("files") or {}).items()}
        bad = sorted(set(files) - set(INPUT_FILES))
        if bad:
            raise ValidationError(f"config section 'files': unknown keys {bad}")
        if case is None:
            absent = [k for k in INPUT_FILES if k != "error_model" and k not in files]
            if absent:
                raise ValidationError(f"config: no case given and input files missing: {absent}")
            gone = [v for v in files.values() if not os.path.isfile(v)]
            if gone:
                raise ValidationError(f"config: input files not found: {gone}")
        seeds = {"scenario": 7, "cc": 1}
        for k, v in (data.get("seeds") or {}).items():
            if k not in seeds:
                raise ValidationError(f"config section 'seeds': unknown key {k!r}")
            if not isinstance(v, int) or isinstance(v, bool):
                raise ValidationError(f"config section 'seeds': {k} must be an integer")
            seeds[k] = v
        if "seed" in (data.get("cc") or {}):
            raise ValidationError("config: set the Monte-Carlo seed under 'seeds', not 'cc'")
        opf0, cc0 = _case_defaults(case)
        opts = dict(data.get("case_options") or {})
        bad = sorted(set(opts) - {"n_days", "n_test_days"})
        if bad:
            raise ValidationError(f"config section 'case_options': unknown keys {bad}")
        out = data.get("out", "run")
        return cls(case=case, case_options=opts, files=files,
                   network=_section(NetworkSettings, NetworkSettings(), data.get("network"), "network"),
                   opf=_section(OpfConfig, opf0, data.get("opf"), "opf"),
                   cc=_section(CcConfig, cc0, data.get("cc"), "cc"),
                   fit=_section(FitConfig, FitConfig(), data.get("fit"), "fit"),
                   sim=_section(SimConfig, SimConfig(), data.get("sim"), "sim"),
                   droop=_section(DroopCurve, DroopCurve(), data.get("droop"), "droop"),
                   error_model=dict(data.get("error_model") or {}), seeds=seeds,
                   out=out if os.path.isabs(out) else os.path.normpath(os.path.join(base_dir, out)),
                   plots=bool(data.get("plots", True)), simulate_days=tuple(data.get("simulate_days", ())))

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"{path}: config file not found") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    def with_overrides(self, seed=None, out=None):
        """Command-line overrides: ``seed`` replaces every seed."""
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seeds={k: int(seed) for k in cfg.seeds})
        if out is not None:
            cfg = dataclasses.replace(cfg, out=os.path.abspath(out))
        return cfg

    def cc_config(self):
        return dataclasses.replace(self.cc, seed=self.seeds["cc"])

    def fingerprint(self):
        """Canonical JSON of every setting that influences results."""
        doc = {"version": __version__, "case": self.case, "case_options": self.case_options,
               "network": dataclasses.asdict(self.network), "opf": dataclasses.asdict(self.opf),
               "cc": dataclasses.asdict(self.cc_config()), "fit": dataclasses.asdict(self.fit),
               "sim": dataclasses.asdict(self.sim), "droop": dataclasses.asdict(self.droop),
               "error_model": self.error_model, "seeds": self.seeds, "simulate_days": list(self.simulate_days),
               "plots": self.plots}
        return json.dumps(doc, sort_keys=True, default=repr)


def _error_model(spec):
    if not spec:
        return ForecastErrorModel()
    spec = dict(spec)
    family = spec.pop("family", "uniform")
    params = tuple(spec.pop("params", (-0.1, 0.1) if family == "uniform" else ()))
    try:
        return ForecastErrorModel(family, params, **spec)
    except TypeError as exc:
        raise ValidationError(f"config section 'error_model': {exc}") from None


@dataclasses.dataclass(frozen=True)
class Study:
    net: object
    ders: object
    scenario: object
    error_model: ForecastErrorModel
    opf: OpfConfig


def load_study(cfg: RunConfig) -> Study:
    """Feeder, DERs, scenarios and error model of a run."""
    if cfg.case == "cigre19":
        net, ders, scen, _ = cigre19_case(seed=cfg.seeds["scenario"], **cfg.case_options)
        model = _error_model(cfg.error_model)
    elif cfg.case == "two_bus":
        net, ders, scen, _ = two_bus_study_case(seed=cfg.seeds["scenario"], **cfg.case_options)
        model = _error_model(cfg.error_model)
    else:
        net, ders, scen, model = load_inputs(cfg.files, cfg.network)
        if cfg.error_model:
            model = _error_model(cfg.error_model)
    ders.validate(net, scen)
    opf = dataclasses.replace(cfg.opf, horizon=scen.periods_per_day, dt=scen.dt)
    return Study(net, ders, scen, model, opf)


# ----------------------------------------------------------------------------
# file helpers
# ----------------------------------------------------------------------------

@contextlib.contextmanager
def _atomic(path):
    """Yield a temporary path; rename it to ``path`` on success."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".part"
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _inputs_digest(cfg: RunConfig):
    h = hashlib.sha256(cfg.fingerprint().encode())
    for key in sorted(cfg.files):
        with open(cfg.files[key], "rb") as fh:
            h.update(key.encode())
            h.update(fh.read())
    return h


def _stamp_path(cfg, stage):
    return os.path.join(cfg.out, stage, ".stamp")


def _read_stamp(cfg, stage):
    try:
        with open(_stamp_path(cfg, stage)) as fh:
            return fh.read().strip()
    except FileNotFoundError:
        return None


def _expected_stamp(cfg, stage):
    h = _inputs_digest(cfg)
    h.update(stage.encode())
    for up in STAGES[:STAGES.index(stage)]:
        h.update((_read_stamp(cfg, up) or "").encode())
    return h.hexdigest()


def _write_stamp(cfg, stage):
    with _atomic(_stamp_path(cfg, stage)) as tmp, open(tmp, "w") as fh:
        fh.write(_expected_stamp(cfg, stage) + "\n")


def _require(cfg, stage, upstream):
    if _read_stamp(cfg, upstream) is None:
        raise StageDependencyError(f"stage {stage!r} needs the output of stage {upstream!r}; "
                                   f"run `gridlocal {upstream}` first (output directory {cfg.out})")


def up_to_date(cfg, stage):
    return _read_stamp(cfg, stage) == _expected_stamp(cfg, stage)


# ----------------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------------

def stage_opf(cfg: RunConfig, study: Study):
    """Chance-constrained OPF per training day, battery energy carried over."""
    scen, ders = study.scenario, study.ders
    days = scen.tagged("train")
    if not days:
        raise ValidationError("no days tagged train in the scenario set")
    cc = cfg.cc_config()
    outdir = os.path.join(cfg.out, "opf")
    solutions, diag = [], []
    e_start = None
    for day in days:
        sol, _, k = solve_cc_opf(study.net, ders, scen.day(day), study.opf, cc, study.error_model, e_start)
        e_start = {b.id: float(sol.e_bat[i, -1]) for i, b in enumerate(ders.bess)}
        cycling = bool(sol.outer_history) and sol.outer_history[-1].get("diagnostic") == "cycling suspected"
        diag.append([day, k, int(sol.converged), int(cycling), f"{sol.objective:.6f}",
                     *(f"{sol.slacks[n]:.8f}" for n in ("eta_v", "eta_i", "eta_vuf"))])
        with _atomic(os.path.join(outdir, f"{day}.csv")) as tmp:
            sol.to_csv(tmp, day)
        solutions.append((day, sol))
        log.info("opf %s: %d outer iterations", day, k)
    with _atomic(os.path.join(outdir, "outer_loop.csv")) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "outer_iterations", "converged", "cycling", "objective[CHF]", "eta_v[pu]",
                    "eta_i[pu]", "eta_vuf[pu]"])
        w.writerows(diag)
    datasets = build_datasets(study.net, ders, scen, solutions)
    for der_id, ds in sorted(datasets.items()):
        with _atomic(os.path.join(cfg.out, "datasets", f"{der_id}.csv")) as tmp:
            ds.to_csv(tmp)
    with _atomic(os.path.join(cfg.out, "datasets", "index.csv")) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["der", "kind", "rows"])
        for der_id, ds in sorted(datasets.items()):
            w.writerow([der_id, ds.kind, len(ds)])
    return [os.path.join(outdir, f"{d}.csv") for d in days]


def _read_datasets(cfg):
    index = os.path.join(cfg.out, "datasets", "index.csv")
    with open(index, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {r["der"]: SetpointDataset.from_csv(os.path.join(cfg.out, "datasets", f"{r['der']}.csv"))
            for r in rows}


def stage_design(cfg: RunConfig, study: Study):
    _require(cfg, "design", "opf")
    controllers = design_controllers(_read_datasets(cfg), cfg.fit)
    path = os.path.join(cfg.out, "design", "controllers.json")
    with _atomic(path) as tmp:
        save_bundle(tmp, controllers)
    return [path]


def _events_csv(path, events):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "period", "der", "kind", "detail"])
        for e in events:
            detail = {k: v for k, v in e.items() if k not in ("day", "period", "der", "kind")}
            w.writerow([e.get("day", ""), e.get("period", ""), e.get("der", ""), e["kind"],
                        json.dumps(detail, sort_keys=True, default=_json_float)])


def _json_float(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x).__name__)


def stage_simulate(cfg: RunConfig, study: Study, stage_override=False):
    _require(cfg, "simulate", "design")
    scen = study.scenario
    days = list(cfg.simulate_days) or scen.tagged("test")
    if not days:
        raise ValidationError("no days to simulate: tag test days or set simulate_days")
    train = scen.tagged("train")
    leaked = [d for d in days if d in train]
    if leaked and not stage_override:
        raise ValidationError(f"days {leaked} are tagged train; the learned method may not be evaluated on "
                              f"them (pass --stage-override to do it anyway)")
    test = scen.select(days)
    controllers = load_bundle(os.path.join(cfg.out, "design", "controllers.json"))
    specs = {"grid_code": MethodSpec("grid_code", cfg.droop),
             "centralized_opf": MethodSpec("centralized_opf", study.opf),
             "learned_local": MethodSpec("learned_local", controllers)}
    outdir = os.path.join(cfg.out, "simulate")
    paths = []
    for name in METHODS:
        rep = simulate_method(study.net, study.ders, test, specs[name], study.opf, cfg.sim,
                              train_days=() if stage_override else train)
        for suffix, writer in (("summary", lambda p: write_summary(p, [rep])),
                               ("traces", lambda p: write_traces(p, study.net, study.ders, rep)),
                               ("events", lambda p: _events_csv(p, rep.events))):
            path = os.path.join(outdir, f"{name}_{suffix}.csv")
            with _atomic(path) as tmp:
                writer(tmp)
            paths.append(path)
        log.info("simulate %s: %s", name, rep.summary_row())
    return paths


def stage_report(cfg: RunConfig, study: Study):
    _require(cfg, "report", "simulate")
    simdir = os.path.join(cfg.out, "simulate")
    lines = []
    for name in METHODS:
        with open(os.path.join(simdir, f"{name}_summary.csv")) as fh:
            head, *rows = fh.read().splitlines()
        lines += rows
    path = os.path.join(cfg.out, "report", "summary.csv")
    with _atomic(path) as tmp, open(tmp, "w") as fh:
        fh.write("\n".join([head, *lines]) + "\n")
    paths = [path]
    if cfg.plots:
        traces = {name: read_trace(os.path.join(simdir, f"{name}_traces.csv")) for name in METHODS}
        svg = os.path.join(cfg.out, "report", "traces.svg")
        with _atomic(svg) as tmp:
            plot_traces(tmp, traces, study.opf.v_max)
        paths.append(svg)
    return paths


def run_pipeline(cfg: RunConfig, stage="all", stage_override=False):
    """Run one stage, or every stage that is not up to date for ``all``.

    Returns
    -------
    (int, list of str)
        Exit status 0 and the artifact paths written.  Failures raise.
    """
    if stage != "all" and stage not in STAGES:
        raise ValidationError(f"unknown stage {stage!r}")
    study = load_study(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    todo = STAGES if stage == "all" else (stage,)
    written = []
    for st in todo:
        if stage == "all" and up_to_date(cfg, st):
            log.info("stage %s is up to date", st)
            continue
        if st == "opf":
            written += stage_opf(cfg, study)
        elif st == "design":
            written += stage_design(cfg, study)
        elif st == "simulate":
            written += stage_simulate(cfg, study, stage_override)
        else:
            written += stage_report(cfg, study)
        _write_stamp(cfg, st)
        # downstream results are stale now
        for later in STAGES[STAGES.index(st) + 1:]:
            if _read_stamp(cfg, later) is not None and not up_to_date(cfg, later):
                os.remove(_stamp_path(cfg, later))
    return 0, written
