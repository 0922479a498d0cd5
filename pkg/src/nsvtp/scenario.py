"""Scenario files and the end-to-end simulate pipeline.

A scenario is one JSON object; every key is optional::

    {
      "layers": [                         # bottom-up, index = layer
        {"id": "cpu-core-017", "role": "core", "grade": "high"},
        {"id": "hv-01", "role": "hypervisor"},
        {"id": "os-01", "role": "guest-os"},
        {"id": "rt-01", "role": "runtime"},
        {"id": "app-01", "role": "app"}
      ],
      "pool": [{"id": "cpu-core-101", "role": "core", "grade": "high"}],
      "failures": [{"component": "cpu-core-017", "time": 12.5}],
      "rotation_delay": 0.0,
      "hop_delay": 0.0,
      "workload": {"t_comp": 1.0, "rho": 1.0, "cycles": 100},
      "delta": 0.01,
      "model": {"P0": 142.2, "P3": 107.8, "f_min": 1.0, "f_max": 3.0, "n_dvfs": 3.0, "l_max": 3.0},
      "nsvtp": true,
      "tx_mode": "tx",                    # or "direct"
      "seed": 0,
      "trace_path": null,
      "report_path": null
    }

A layer or pool entry may name a ``blueprint`` file (scheme language); core
entries without one get the generated DVFS blueprint for their grade.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dvfs import CyclePattern, DvfsModelParams, eta
from .errors import ConfigError, NsvtpError
from .scheme import parse_blueprint
from .sim import (
    DVFS_SCHEME,
    Component,
    Grade,
    Pool,
    Simulator,
    StackTopology,
    TxMode,
    Workload,
    core_blueprint,
    middle_decodes,
    transition_latency,
)

DEFAULT_LAYERS = (
    {"id": "cpu-core-017", "role": "core", "grade": "high"},
    {"id": "hv-01", "role": "hypervisor"},
    {"id": "os-01", "role": "guest-os"},
    {"id": "rt-01", "role": "runtime"},
    {"id": "app-01", "role": "app"},
)

_KEYS = {
    "layers", "pool", "failures", "rotation_delay", "hop_delay", "workload", "delta",
    "model", "nsvtp", "tx_mode", "seed", "trace_path", "report_path",
}


@dataclass
class ScenarioConfig:
    layers: list = field(default_factory=lambda: [dict(d) for d in DEFAULT_LAYERS])
    pool: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    rotation_delay: float = 0.0
    hop_delay: float = 0.0
    t_comp: float = 1.0
    rho: float = 1.0
    cycles: int = 100
    delta: float = 0.01
    model: DvfsModelParams = field(default_factory=DvfsModelParams)
    nsvtp: bool = True
    tx_mode: TxMode = TxMode.VIA_TX
    seed: int = 0
    trace_path: str | None = None
    report_path: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def cycle(self) -> CyclePattern:
        return CyclePattern(self.t_comp, self.rho, self.delta)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "ScenarioConfig":
        if not isinstance(doc, dict):
            raise ConfigError("scenario must be a JSON object")
        unknown = sorted(set(doc) - _KEYS)
        if unknown:
            raise ConfigError(f"unknown scenario key {unknown[0]!r}")
        cfg = cls()
        if base_dir is not None:
            cfg.base_dir = base_dir
        try:
            for key in ("layers", "pool", "failures"):
                if key in doc:
                    setattr(cfg, key, list(doc[key]))
            for key in ("rotation_delay", "hop_delay", "delta"):
                if key in doc:
                    setattr(cfg, key, float(doc[key]))
            work = doc.get("workload", {})
            cfg.t_comp = float(work.get("t_comp", cfg.t_comp))
            cfg.rho = float(work.get("rho", cfg.rho))
            cfg.cycles = int(work.get("cycles", cfg.cycles))
            if "model" in doc:
                cfg.model = DvfsModelParams(**{k: float(v) for k, v in doc["model"].items()})
            cfg.nsvtp = bool(doc.get("nsvtp", cfg.nsvtp))
            cfg.tx_mode = TxMode(doc.get("tx_mode", cfg.tx_mode))
            cfg.seed = int(doc.get("seed", cfg.seed))
            cfg.trace_path = doc.get("trace_path", cfg.trace_path)
            cfg.report_path = doc.get("report_path", cfg.report_path)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from None
        return cls.from_dict(doc, base_dir=path.parent)

    def validate(self) -> "ScenarioConfig":
        """Check every precondition before anything is simulated."""
        try:
            cycle = self.cycle
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.cycles < 1:
            raise ConfigError("workload needs at least one cycle")
        if self.nsvtp and not cycle.feasible:
            raise ConfigError(
                f"delta={self.delta:g} s leaves no room for two transitions in "
                f"t_comp/rho={cycle.t_commute:g} s"
            )
        if self.hop_delay < 0 or self.rotation_delay < 0:
            raise ConfigError("delays must be non-negative")
        if len(self.layers) < 2:
            raise ConfigError("a stack needs at least a southern and a northern layer")
        for entry in [*self.layers, *self.pool]:
            if not isinstance(entry, dict) or "id" not in entry or "role" not in entry:
                raise ConfigError(f"component entries need 'id' and 'role': {entry!r}")
            if entry.get("grade", "low") not in ("low", "high"):
                raise ConfigError(f"unknown grade {entry['grade']!r}")
        ids = [e["id"] for e in [*self.layers, *self.pool]]
        if len(ids) != len(set(ids)):
            raise ConfigError("component IDs must be unique across layers and pool")
        for f in self.failures:
            if f.get("component") not in ids or not float(f.get("time", -1)) >= 0:
                raise ConfigError(f"bad failure entry {f!r}")
        self.build()  # blueprint files parse and topology links are legal
        return self

    def _component(self, entry: dict) -> Component:
        grade = Grade(entry.get("grade", "low"))
        blueprint = None
        if "blueprint" in entry:
            path = self.base_dir / entry["blueprint"]
            try:
                blueprint = parse_blueprint(path.read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read blueprint {path}: {exc}") from None
            except NsvtpError as exc:
                raise ConfigError(f"{path}: {type(exc).__name__}: {exc}") from None
        elif entry["role"] == self.layers[0]["role"]:
            blueprint = core_blueprint(self.model, self.delta, grade)
        return Component(entry["id"], entry["role"], grade, blueprint)

    def build(self) -> tuple[StackTopology, str, str]:
        comps = [self._component(e) for e in self.layers]
        pool = Pool(self._component(e) for e in self.pool)
        try:
            topo = StackTopology([comps], pool=pool)
        except NsvtpError as exc:
            raise ConfigError(str(exc)) from None
        for c in comps + pool.spares:
            if c.blueprint is not None and c.blueprint.has_scheme(DVFS_SCHEME):
                if transition_latency(c.blueprint) != self.delta:
                    raise ConfigError(
                        f"{c.id}: blueprint latency {transition_latency(c.blueprint)!r} "
                        f"differs from delta {self.delta!r}"
                    )
        return topo, comps[-1].id, comps[0].id

    def simulator(self, nsvtp: bool | None = None) -> Simulator:
        topo, north, south = self.build()
        sim = Simulator(
            topo, self.model, north=north, south=south,
            nsvtp=self.nsvtp if nsvtp is None else nsvtp,
            tx_mode=self.tx_mode, hop_delay=self.hop_delay,
            rotation_delay=self.rotation_delay, seed=self.seed,
        )
        sim.load_workload(Workload(self.cycle, self.cycles))
        for f in self.failures:
            sim.fail_component(f["component"], float(f["time"]))
        return sim.start()


@dataclass
class SimulationReport:
    baseline_J: float
    nsvtp_J: float
    eta_sim: float
    eta_closed_form: float | None
    abs_diff: float | None
    middle_decodes: int = 0
    main_results: int = 0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2) + "\n"


@dataclass
class SimulationRun:
    report: SimulationReport
    sim: Simulator
    baseline: Simulator


def run_scenario(cfg: ScenarioConfig) -> SimulationRun:
    """Run the scenario and its NSVTP-off twin; the ratio of their energies is eta_sim."""
    cfg.validate()
    horizon = cfg.cycles * cfg.cycle.period
    baseline = cfg.simulator(nsvtp=False).run()
    sim = cfg.simulator().run() if cfg.nsvtp else baseline
    if sim.errors:
        raise sim.errors[0]
    e_base = baseline.ledger.energy(horizon)
    e_run = sim.ledger.energy(horizon)
    closed = None
    if cfg.cycle.feasible:
        closed = eta(cfg.model, cfg.cycle, generalized=True)
    eta_sim = e_run / e_base
    report = SimulationReport(
        baseline_J=e_base,
        nsvtp_J=e_run,
        eta_sim=eta_sim,
        eta_closed_form=closed,
        abs_diff=None if closed is None else abs(eta_sim - closed),
        middle_decodes=middle_decodes(sim.topo, sim.north_slot, sim.south_slot),
        main_results=len(sim.results),
    )
    return SimulationRun(report, sim, baseline)
