"""Config-driven experiment batches with hash-tagged deterministic reports.

A single JSON document selects one of five canonical experiments, the
mode system, a sweep, and numeric settings. Validation is strict: unknown
keys are rejected so a typo cannot silently fall back to a default. Every
data row ends with a hash of the semantic config, and all randomness comes
from one seeded generator drawn before dispatch, so re-running a config
reproduces each row byte for byte. Volatile facts (timestamps, wall
times) live only in the report metadata, never in rows.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from math import comb
from time import perf_counter

import numpy as np

from .errors import ConfigError, RangeError
from .exact import evolved_marginal
from .fock import egorov_check
from .hf import (HFConfig, KappaFactor, OrbitalSet, evolve_hf_density,
                 evolve_hf_orbitals, evolve_kappa, quasi_free_marginal)
from .modes import ModeSystem
from .sector import PSectorOperator, trace_norm
from .tree import (QuadratureSpec, TheoryConstants, count_elementary_terms,
                   hf_vs_tree_gap, tree_series)

REPORT_VERSION = "0.1.0"
EXPERIMENTS = ("convergence", "tree-truncation", "egorov", "conservation",
               "graph-count")
FORMATS = ("csv", "json")
ORBITAL_PRESETS = ("ground", "random")
HASH_LENGTH = 16
CONSERVATION_SAMPLES = 6


def _require_keys(raw: dict, allowed, required, where: str):
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {where}")
    for key in required:
        if key not in raw:
            raise ConfigError(f"missing key '{key}' in {where}")


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer")
    return value


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number")
    return float(value)


@dataclass(frozen=True)
class SystemSpec:
    """Mode-system preset: hopping chain with a soft-Coulomb pair kernel."""

    d: int | None
    coupling: float
    h_preset: str = "chain"
    w_preset: str = "soft-coulomb"

    def build(self, d: int) -> ModeSystem:
        return ModeSystem.chain(d, self.coupling)

    @classmethod
    def from_dict(cls, raw: dict) -> "SystemSpec":
        _require_keys(raw, {"d", "coupling", "h", "w"}, {"coupling"}, "system")
        d = raw.get("d")
        if d is not None:
            d = _as_int(d, "system.d")
            if d < 1:
                raise ConfigError("system.d must be positive")
        coupling = _as_number(raw["coupling"], "system.coupling")
        if coupling < 0:
            raise ConfigError("system.coupling must be non-negative")
        h_preset = raw.get("h", "chain")
        w_preset = raw.get("w", "soft-coulomb")
        if h_preset != "chain":
            raise ConfigError(f"unknown one-body preset '{h_preset}'")
        if w_preset != "soft-coulomb":
            raise ConfigError(f"unknown pair preset '{w_preset}'")
        return cls(d=d, coupling=coupling, h_preset=h_preset, w_preset=w_preset)


def _validate_count_time_entry(entry: dict, index: int, experiment: str,
                               d_fixed: int | None) -> dict:
    where = f"sweep[{index}]"
    _require_keys(entry, {"N", "t", "p"}, {"N", "t"}, where)
    if "p" in entry and experiment != "convergence":
        raise ConfigError(f"unknown key 'p' in {where}")
    n = _as_int(entry["N"], f"{where}.N")
    t = _as_number(entry["t"], f"{where}.t")
    p = _as_int(entry.get("p", 1), f"{where}.p")
    if n < 1:
        raise ConfigError(f"{where}.N must be positive")
    if t < 0:
        raise ConfigError(f"{where}.t must be non-negative")
    if not 1 <= p <= n:
        raise ConfigError(f"{where}.p must lie in [1, N]")
    if d_fixed is not None and n > d_fixed:
        raise ConfigError(f"{where}.N exceeds the mode count {d_fixed}")
    if experiment == "tree-truncation" and t > 0.5:
        raise ConfigError(f"{where}.t must not exceed 0.5")
    if experiment == "conservation" and t <= 0:
        raise ConfigError(f"{where}.t must be positive")
    return {"N": n, "t": t, "p": p}


def _validate_order_entry(entry: dict, index: int) -> dict:
    where = f"sweep[{index}]"
    _require_keys(entry, {"p", "k", "l"}, {"p", "k", "l"}, where)
    p = _as_int(entry["p"], f"{where}.p")
    k = _as_int(entry["k"], f"{where}.k")
    l = _as_int(entry["l"], f"{where}.l")
    if not 1 <= p <= 3:
        raise ConfigError(f"{where}.p must lie in [1, 3]")
    if not 0 <= k <= 5:
        raise ConfigError(f"{where}.k must lie in [0, 5]")
    if not 0 <= l <= k:
        raise ConfigError(f"{where}.l must lie in [0, k]")
    return {"p": p, "k": k, "l": l}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description with a stable semantic hash."""

    experiment: str
    system: SystemSpec
    sweep: tuple
    integrator: HFConfig
    quadrature: QuadratureSpec
    seed: int
    orbitals: str
    out_path: str | None
    out_format: str

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {"experiment", "system", "sweep", "integrator", "quadrature",
                   "seed", "orbitals", "output"}
        _require_keys(raw, allowed, {"experiment", "system", "sweep", "seed"},
                      "config")
        experiment = raw["experiment"]
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment '{experiment}'")
        if not isinstance(raw["system"], dict):
            raise ConfigError("system must be an object")
        system = SystemSpec.from_dict(raw["system"])
        sweep_raw = raw["sweep"]
        if not isinstance(sweep_raw, list) or not sweep_raw:
            raise ConfigError("sweep must be a non-empty list")
        sweep = []
        for i, entry in enumerate(sweep_raw):
            if not isinstance(entry, dict):
                raise ConfigError(f"sweep[{i}] must be an object")
            if experiment == "graph-count":
                sweep.append(_validate_order_entry(entry, i))
            else:
                sweep.append(_validate_count_time_entry(entry, i, experiment,
                                                        system.d))
        integrator_raw = raw.get("integrator", {})
        _require_keys(integrator_raw, {"dt"}, (), "integrator")
        quadrature_raw = raw.get("quadrature", {})
        _require_keys(quadrature_raw, {"nodes_per_level", "k_max"}, (),
                      "quadrature")
        try:
            integrator = HFConfig(dt=_as_number(integrator_raw.get("dt", 1e-3),
                                                "integrator.dt"))
            quadrature = QuadratureSpec(
                nodes_per_level=_as_int(
                    quadrature_raw.get("nodes_per_level", 6),
                    "quadrature.nodes_per_level"),
                k_max=_as_int(quadrature_raw.get("k_max", 3),
                              "quadrature.k_max"))
        except RangeError as err:
            raise ConfigError(f"invalid numeric settings: {err}") from err
        seed = _as_int(raw["seed"], "seed")
        orbitals = raw.get("orbitals", "ground")
        if orbitals not in ORBITAL_PRESETS:
            raise ConfigError(f"unknown orbital preset '{orbitals}'")
        output_raw = raw.get("output", {})
        _require_keys(output_raw, {"path", "format"}, (), "output")
        out_path = output_raw.get("path")
        if out_path is not None and not isinstance(out_path, str):
            raise ConfigError("output.path must be a string")
        out_format = output_raw.get("format", "csv")
        if out_format not in FORMATS:
            raise ConfigError(f"unknown output format '{out_format}'")
        return cls(experiment=experiment, system=system, sweep=tuple(sweep),
                   integrator=integrator, quadrature=quadrature, seed=seed,
                   orbitals=orbitals, out_path=out_path,
                   out_format=out_format)

    def hash_payload(self) -> dict:
        """Semantic content only; output routing does not change results."""
        return {
            "experiment": self.experiment,
            "system": {"d": self.system.d, "coupling": self.system.coupling,
                       "h": self.system.h_preset, "w": self.system.w_preset},
            "sweep": list(self.sweep),
            "integrator": {"dt": self.integrator.dt},
            "quadrature": {"nodes_per_level": self.quadrature.nodes_per_level,
                           "k_max": self.quadrature.k_max},
            "seed": self.seed,
            "orbitals": self.orbitals,
        }

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.hash_payload(), sort_keys=True,
                               separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:HASH_LENGTH]


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"{path}:{err.lineno}:{err.colno}: {err.msg}") from err
    return ExperimentConfig.from_dict(raw)


@dataclass
class ExperimentReport:
    """Ordered data rows plus provenance metadata."""

    experiment: str
    columns: tuple
    rows: list
    metadata: dict

    def to_csv(self) -> str:
        lines = [f"# fermiflow-report {REPORT_VERSION}",
                 f"# experiment: {self.experiment}"]
        for key in sorted(self.metadata):
            lines.append(f"# {key}: {self.metadata[key]}")
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_cell(value) for value in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {"version": REPORT_VERSION, "experiment": self.experiment,
                   "metadata": self.metadata, "columns": list(self.columns),
                   "rows": [list(row) for row in self.rows]}
        return json.dumps(payload, indent=2, sort_keys=True,
                          default=_json_value) + "\n"

    def render(self, fmt: str) -> str:
        if fmt not in FORMATS:
            raise ConfigError(f"unknown output format '{fmt}'")
        return self.to_csv() if fmt == "csv" else self.to_json()

    def write(self, path: str, fmt: str):
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.render(fmt))


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _json_value(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def ground_mode_projector(system: ModeSystem) -> PSectorOperator:
    """Rank-one observable occupying the lowest one-body eigenmode."""
    _, vecs = np.linalg.eigh(system.h)
    ground = vecs[:, 0]
    return PSectorOperator(system.d, 1,
                           np.outer(ground, ground.conj()).astype(complex))


def _random_hermitian(rng: np.random.Generator, d: int) -> np.ndarray:
    raw = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    herm = 0.5 * (raw + raw.conj().T)
    return herm / np.linalg.norm(herm, 2)


def _fit_slope(counts, values) -> float:
    pairs = [(n, v) for n, v in zip(counts, values) if v > 0]
    if len(pairs) < 2 or len({n for n, _ in pairs}) < 2:
        return float("nan")
    ns, vs = zip(*pairs)
    return float(np.polyfit(np.log(ns), np.log(vs), 1)[0])


def _entry_dimension(cfg: ExperimentConfig, n: int) -> int:
    d = cfg.system.d if cfg.system.d is not None else 2 * n
    if n > d:
        raise ConfigError(f"sweep count {n} exceeds the mode count {d}")
    return d


def _prepare_orbitals(cfg: ExperimentConfig, rng: np.random.Generator,
                      system: ModeSystem, n: int) -> OrbitalSet:
    if cfg.orbitals == "ground":
        return OrbitalSet.ground_state(system, n)
    return OrbitalSet.random(rng, system.d, n)


def _pool_map(work, payloads):
    """Evaluate rows concurrently but keep the sweep order."""
    if len(payloads) == 1:
        return [work(payloads[0])]
    with ThreadPoolExecutor(max_workers=min(len(payloads), 4)) as pool:
        return list(pool.map(work, payloads))


def _timed_pool(work, payloads):
    def timed(payload):
        start = perf_counter()
        result = work(payload)
        return result, perf_counter() - start

    outcomes = _pool_map(timed, payloads)
    results = [r for r, _ in outcomes]
    seconds = [round(s, 3) for _, s in outcomes]
    return results, seconds


def _base_metadata(cfg: ExperimentConfig, seconds) -> dict:
    return {
        "config": json.dumps(cfg.hash_payload(), sort_keys=True,
                             separators=(",", ":")),
        "config_hash": cfg.config_hash,
        "generated_utc": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": json.dumps(seconds),
    }


def run_convergence(cfg: ExperimentConfig,
                    override_time_guard: bool = False) -> ExperimentReport:
    """Trace-norm gap between exact and mean-field marginals over a sweep."""
    rng = np.random.default_rng(cfg.seed)
    payloads = []
    for entry in cfg.sweep:
        d = _entry_dimension(cfg, entry["N"])
        system = cfg.system.build(d)
        payloads.append((entry, system,
                         _prepare_orbitals(cfg, rng, system, entry["N"])))

    def work(payload):
        entry, system, orbitals = payload
        n, t, p = entry["N"], entry["t"], entry["p"]
        exact = evolved_marginal(orbitals.as_orthonormal(), system, t, p)
        flow = evolve_hf_orbitals(orbitals, system, np.array([0.0, t]),
                                  cfg.integrator)
        fitted = quasi_free_marginal(flow.final().density(), p)
        gap = trace_norm(exact.mat - fitted.mat)
        return n, p, t, gap, p * p / n

    results, seconds = _timed_pool(work, payloads)
    slope = _fit_slope([r[0] for r in results], [r[3] for r in results])
    rows = [(n, p, t, gap, bound, slope, cfg.config_hash)
            for n, p, t, gap, bound in results]
    return ExperimentReport(
        experiment=cfg.experiment,
        columns=("N", "p", "t", "trace_norm_gap", "marginal_bound",
                 "fitted_slope", "config_hash"),
        rows=rows, metadata=_base_metadata(cfg, seconds))


def run_tree_truncation(cfg: ExperimentConfig,
                        override_time_guard: bool = False) -> ExperimentReport:
    """Partial sums of the loop-free series against the mean-field pairing."""
    rng = np.random.default_rng(cfg.seed)
    payloads = []
    for entry in cfg.sweep:
        d = _entry_dimension(cfg, entry["N"])
        system = cfg.system.build(d)
        payloads.append((entry, system,
                         _prepare_orbitals(cfg, rng, system, entry["N"]),
                         _random_hermitian(rng, d)))

    def work(payload):
        entry, system, orbitals, amat = payload
        n, t = entry["N"], entry["t"]
        a = PSectorOperator(system.d, 1, amat)
        gamma = orbitals.density()
        series = tree_series(a, gamma, t, cfg.quadrature, system,
                             override_time_guard=override_time_guard)
        gap = hf_vs_tree_gap(a, gamma, system, t, cfg.quadrature,
                             override_time_guard=override_time_guard,
                             hf_dt=cfg.integrator.dt)
        rows = []
        for order, partial in enumerate(series.partial_sums):
            rows.append((n, t, order, float(partial.real),
                         float(abs(partial - gap.hf_value)),
                         float(series.quad_errors[order]), cfg.config_hash))
        return rows

    results, seconds = _timed_pool(work, payloads)
    rows = [row for chunk in results for row in chunk]
    return ExperimentReport(
        experiment=cfg.experiment,
        columns=("N", "t", "K", "partial_sum", "hf_gap", "quad_error",
                 "config_hash"),
        rows=rows, metadata=_base_metadata(cfg, seconds))


def run_egorov(cfg: ExperimentConfig,
               override_time_guard: bool = False) -> ExperimentReport:
    """Quantisation-vs-flow gap for the ground-mode projector over a sweep."""
    payloads = []
    for entry in cfg.sweep:
        payloads.append((entry, _entry_dimension(cfg, entry["N"])))

    def work(payload):
        entry, d = payload
        system = cfg.system.build(d)
        n, t = entry["N"], entry["t"]
        report = egorov_check(ground_mode_projector(system), system, t, n,
                              cfg.quadrature,
                              override_time_guard=override_time_guard)
        return n, t, report.norm_difference, report.tree_tail_estimate, \
            report.quad_error

    results, seconds = _timed_pool(work, payloads)
    slope = _fit_slope([r[0] for r in results], [r[2] for r in results])
    rows = [(n, t, diff, slope, tail, quad, cfg.config_hash)
            for n, t, diff, tail, quad in results]
    metadata = _base_metadata(cfg, seconds)
    kappa = cfg.system.build(_entry_dimension(cfg, cfg.sweep[0]["N"])).kappa
    if kappa > 0:
        metadata["t_report"] = repr(TheoryConstants(kappa).t_report)
        metadata["kappa"] = repr(kappa)
    return ExperimentReport(
        experiment=cfg.experiment,
        columns=("N", "t", "norm_difference", "slope_fit",
                 "tree_tail_estimate", "quad_error", "config_hash"),
        rows=rows, metadata=metadata)


def _density_of(formulation: str, state):
    if formulation == "orbital":
        return state.density()
    if formulation == "kappa":
        return state @ state.conj().T
    return state


def run_conservation(cfg: ExperimentConfig,
                     override_time_guard: bool = False) -> ExperimentReport:
    """Invariant drifts along all three mean-field formulations."""
    rng = np.random.default_rng(cfg.seed)
    payloads = []
    for entry in cfg.sweep:
        d = _entry_dimension(cfg, entry["N"])
        system = cfg.system.build(d)
        payloads.append((entry, system,
                         _prepare_orbitals(cfg, rng, system, entry["N"])))

    def work(payload):
        entry, system, orbitals = payload
        grid = np.linspace(0.0, entry["t"], CONSERVATION_SAMPLES)
        gamma0 = orbitals.density()
        flows = {
            "orbital": evolve_hf_orbitals(orbitals, system, grid,
                                          cfg.integrator),
            "density": evolve_hf_density(gamma0, system, grid,
                                         cfg.integrator),
            "kappa": evolve_kappa(KappaFactor.from_density(gamma0), system,
                                  grid, cfg.integrator),
        }
        rows = []
        for name, traj in flows.items():
            spectra = [np.linalg.eigvalsh(_density_of(name, s))
                       for s in traj.states]
            for i, t in enumerate(traj.times):
                gram = (float(traj.gram_drift[i]) if name == "orbital"
                        else float("nan"))
                rows.append((
                    name, float(t),
                    float(abs(traj.energy[i] - traj.energy[0])), gram,
                    float(abs(traj.trace[i] - traj.trace[0])),
                    float(np.max(np.abs(spectra[i] - spectra[0]))),
                    cfg.config_hash))
        cross = trace_norm(_density_of("kappa", flows["kappa"].states[-1])
                           - flows["density"].states[-1])
        return rows, cross

    results, seconds = _timed_pool(work, payloads)
    rows = [row for chunk, _ in results for row in chunk]
    metadata = _base_metadata(cfg, seconds)
    metadata["kappa_vs_density_trace_gap"] = json.dumps(
        [repr(cross) for _, cross in results])
    return ExperimentReport(
        experiment=cfg.experiment,
        columns=("formulation", "t", "energy_drift", "gram_drift",
                 "trace_drift", "spectrum_drift", "config_hash"),
        rows=rows, metadata=metadata)


def run_graph_count(cfg: ExperimentConfig,
                    override_time_guard: bool = False) -> ExperimentReport:
    """Exhaustive expansion sizes against their combinatorial ceilings."""

    def work(entry):
        p, k, l = entry["p"], entry["k"], entry["l"]
        count = count_elementary_terms(p, k, l)
        bound = 2 ** k * comb(k, l) * comb(2 * p + 3 * k, k) \
            * (p + k - l) ** l
        aux = 4 ** p * 32 ** k
        satisfied = count <= bound and (l != 0 or count <= aux)
        return p, k, l, count, bound, aux, satisfied, cfg.config_hash

    results, seconds = _timed_pool(work, list(cfg.sweep))
    return ExperimentReport(
        experiment=cfg.experiment,
        columns=("p", "k", "l", "count", "bound", "aux_bound", "satisfied",
                 "config_hash"),
        rows=list(results), metadata=_base_metadata(cfg, seconds))


_RUNNERS = {
    "convergence": run_convergence,
    "tree-truncation": run_tree_truncation,
    "egorov": run_egorov,
    "conservation": run_conservation,
    "graph-count": run_graph_count,
}


def run(cfg: ExperimentConfig,
        override_time_guard: bool = False) -> ExperimentReport:
    """Dispatch a validated config to its experiment runner."""
    return _RUNNERS[cfg.experiment](cfg, override_time_guard)
