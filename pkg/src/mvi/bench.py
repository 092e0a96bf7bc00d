"""Configuration-driven experiment harness.

A YAML config (versioned with ``config_version``) names a problem instance, a
list of algorithm cells, seeds, metrics, and budgets. Budgets default to
consumed samples so methods that spend tau transitions (and m streams) per
update are compared fairly; iteration budgets sit behind ``budget_iters``.
Every (algorithm, seed) cell is independent; cells may run on a process pool
(worker count from the MVI_WORKERS environment variable), and output rows are
collected and sorted so the CSVs are byte-identical regardless of worker
count.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import glm_ar, gridworld
from .chains import BatchSpec, MixingParams, robust_tau
from .geometry import ProblemParams, WholeSpace, bregman
from .policy_eval import (PolicyEvalVi, chain_oracle, compile_vi, estimate_noise,
                          induce_chain, load_mdp_text, weighted_error)
from .schedules import (SCHEDULE_ALIASES, ConfigError, RobustConstant,
                        make_schedule)
from .solvers import DivergenceError, SolverConfig, run_solver

CONFIG_VERSION = 1
CSV_COLUMNS = ("algorithm", "seed", "iter", "samples", "gamma", "lambda",
               "weighted_error", "bregman_to_star", "bellman_residual")
KNOWN_METRICS = ("weighted_error", "bregman_to_star", "bellman_residual")
THRESHOLDS = (0.5, 0.2, 0.1)


class ValidationError(ConfigError):
    """Config rejected; message names the offending field."""


@dataclass
class AlgorithmSpec:
    id: str
    algorithm: str
    schedule: str
    overrides: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    problem: dict
    algorithms: list[AlgorithmSpec]
    seeds: list[int]
    metrics: list[str]
    output: str
    tau: int = 8
    batch: int = 1
    budget_samples: Optional[int] = None
    budget_iters: Optional[int] = None
    trace_stride: Any = "auto"
    noise: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ValidationError("config root must be a mapping")
        version = raw.get("config_version")
        if version != CONFIG_VERSION:
            raise ValidationError(f"config_version: expected {CONFIG_VERSION}, got {version!r}")
        problem = raw.get("problem")
        if not isinstance(problem, dict) or "kind" not in problem:
            raise ValidationError("problem: must be a mapping with a 'kind' key")
        if problem["kind"] not in ("gridworld", "glm", "mdp_file"):
            raise ValidationError(f"problem.kind: unknown kind {problem['kind']!r}")
        algos_raw = raw.get("algorithms")
        if not algos_raw:
            raise ValidationError("algorithms: need at least one algorithm")
        algorithms = []
        for i, a in enumerate(algos_raw):
            for key in ("algorithm", "schedule"):
                if key not in a:
                    raise ValidationError(f"algorithms[{i}].{key}: missing")
            algorithms.append(AlgorithmSpec(
                id=str(a.get("id", a["schedule"])), algorithm=a["algorithm"],
                schedule=a["schedule"], overrides=dict(a.get("overrides", {}))))
        ids = [a.id for a in algorithms]
        if len(set(ids)) != len(ids):
            raise ValidationError("algorithms: duplicate algorithm ids")
        seeds = raw.get("seeds")
        if not seeds and seeds != 0:
            raise ValidationError("seeds: need at least one seed")
        seeds = [int(s) for s in (seeds if isinstance(seeds, list) else [seeds])]
        metrics = raw.get("metrics", ["weighted_error"])
        for m in metrics:
            if m not in KNOWN_METRICS:
                raise ValidationError(f"metrics: unknown metric {m!r}; known: {KNOWN_METRICS}")
        defaults = raw.get("defaults", {})
        budget_samples = defaults.get("budget_samples")
        budget_iters = defaults.get("budget_iters")
        if budget_samples is None and budget_iters is None:
            raise ValidationError("defaults: set budget_samples or budget_iters")
        output = raw.get("output")
        if not output:
            raise ValidationError("output: missing output directory")
        tau = int(defaults.get("tau", 8))
        if tau < 1:
            raise ValidationError("defaults.tau: must be >= 1")
        batch = int(defaults.get("batch", 1))
        if batch < 1:
            raise ValidationError("defaults.batch: must be >= 1")
        return cls(problem=problem, algorithms=algorithms, seeds=seeds,
                   metrics=list(metrics), output=str(output), tau=tau, batch=batch,
                   budget_samples=budget_samples, budget_iters=budget_iters,
                   trace_stride=raw.get("trace_stride", "auto"),
                   noise=dict(raw.get("noise", {})))


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------

@dataclass
class BuiltProblem:
    """Compiled instance shared read-only by every cell."""

    kind: str
    x1: np.ndarray
    x_star: Optional[np.ndarray]
    base_params: ProblemParams
    mixing: Optional[MixingParams]
    vi: Optional[PolicyEvalVi] = None
    glm: Optional[glm_ar.ArGlmProblem] = None

    def oracle_factory(self, seed: int):
        if self.vi is not None:
            vi = self.vi
            return lambda i: chain_oracle(vi, seed, i)
        glm = self.glm
        return lambda i: glm_ar.glm_oracle(glm, seed, i)

    def exact_operator(self):
        if self.vi is not None:
            return self.vi.exact
        if self.glm is not None and self.glm.link == "identity":
            return self.glm.exact_identity()
        return None

    def metric_fn(self, name: str):
        if name == "weighted_error":
            if self.vi is None:
                raise ValidationError("metrics: weighted_error needs a policy-evaluation problem")
            vi = self.vi
            return lambda x: weighted_error(vi, x)
        if name == "bregman_to_star":
            if self.x_star is None:
                raise ValidationError("metrics: bregman_to_star needs a known solution")
            x_star = self.x_star
            return lambda x: bregman(x, x_star)
        if name == "bellman_residual":
            exact = self.exact_operator()
            if exact is None:
                raise ValidationError("metrics: bellman_residual needs an exact operator")
            return lambda x: float(np.linalg.norm(exact(x)))
        raise ValidationError(f"metrics: unknown metric {name!r}")


def _build_features(problem: dict, n_states: int) -> np.ndarray:
    feats = problem.get("features", {"kind": "tabular"})
    kind = feats.get("kind", "tabular")
    if kind == "tabular":
        return np.eye(n_states)
    if kind == "random_projection":
        dim = feats.get("dim")
        if not dim:
            raise ValidationError("problem.features.dim: required for random_projection")
        return gridworld.random_projection_features(n_states, int(dim), int(feats.get("seed", 0)))
    raise ValidationError(f"problem.features.kind: unknown kind {kind!r}")


def build_problem(config: ExperimentConfig) -> BuiltProblem:
    kind = config.problem["kind"]
    if kind == "gridworld":
        table = dict(config.problem.get("gridworld", {}))
        if "goal" in table and table["goal"] is not None:
            table["goal"] = tuple(table["goal"])
        if "traps" in table and table["traps"] is not None:
            table["traps"] = frozenset(tuple(c) for c in table["traps"])
        spec = gridworld.GridSpec(**table)
        mdp, policy = gridworld.build(spec)
        chain = induce_chain(mdp, policy)
        phi = _build_features(config.problem, mdp.n_states)
        vi = compile_vi(chain, phi, mdp.beta)
        return _finish_policy_eval(config, vi)
    if kind == "mdp_file":
        path = config.problem.get("mdp_file", {}).get("path") or config.problem.get("path")
        if not path or not Path(path).exists():
            raise ValidationError(f"problem.mdp_file.path: missing file {path!r}")
        mdp = load_mdp_text(path)
        policy_kind = config.problem.get("policy", "uniform")
        if policy_kind != "uniform":
            raise ValidationError("problem.policy: only 'uniform' is supported for mdp_file")
        from .policy_eval import Policy
        nu = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
        chain = induce_chain(mdp, Policy(nu))
        phi = _build_features(config.problem, mdp.n_states)
        vi = compile_vi(chain, phi, mdp.beta)
        return _finish_policy_eval(config, vi)
    # glm
    table = dict(config.problem.get("glm", {}))
    dim = int(table.get("dim", 4))
    seed = int(table.get("seed", 0))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 555)))
    spectral = float(table.get("spectral", 0.6))
    b = rng.standard_normal((dim, dim))
    b *= spectral / max(np.abs(np.linalg.eigvals(b)))
    q = np.eye(dim) * float(table.get("noise_scale", 1.0))
    x_star = rng.standard_normal(dim) * float(table.get("x_star_scale", 1.0))
    glm = glm_ar.ArGlmProblem(b_mat=b, noise_cov=q, x_star=x_star,
                              link=table.get("link", "identity"),
                              label_noise_sd=float(table.get("label_noise_sd", 0.1)))
    cov = glm.stationary_cov()
    eigs = np.linalg.eigvalsh(cov)
    params = ProblemParams(mu=float(eigs[0]), lip=float(eigs[-1]),
                           sigma=float(config.noise.get("sigma") or 0.0),
                           varsigma=float(config.noise.get("varsigma") or 0.0))
    return BuiltProblem(kind="glm", x1=np.zeros(dim), x_star=x_star.copy(),
                        base_params=params, mixing=_mixing_from(config), glm=glm)


def _mixing_from(config: ExperimentConfig) -> Optional[MixingParams]:
    c = config.noise.get("c_mix")
    rho = config.noise.get("rho_mix")
    if c is None or rho is None:
        return None
    return MixingParams(float(c), float(rho))


def _finish_policy_eval(config: ExperimentConfig, vi: PolicyEvalVi) -> BuiltProblem:
    sigma = config.noise.get("sigma")
    varsigma = config.noise.get("varsigma")
    if sigma is None or varsigma is None:
        sig_hat, vsig_hat = estimate_noise(vi)
        sigma = sig_hat if sigma is None else float(sigma)
        varsigma = vsig_hat if varsigma is None else float(varsigma)
    params = ProblemParams(mu=vi.mu, lip=vi.lip, lip_bar=vi.lip_bar,
                           sigma=float(sigma), varsigma=float(varsigma))
    return BuiltProblem(kind="policy_eval", x1=np.zeros(vi.dim),
                        x_star=vi.theta_star.copy(), base_params=params,
                        mixing=_mixing_from(config), vi=vi)


# ---------------------------------------------------------------------------
# Cell execution
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    algorithm: str
    seed: int
    rows: list[tuple]            # (iter, samples, gamma, lambda, {metric: value})
    wall_time: float
    failed: Optional[str] = None


def _cell_components(problem: BuiltProblem, config: ExperimentConfig,
                     spec: AlgorithmSpec):
    """Schedule, params, tau, and batch for one algorithm cell."""
    over = spec.overrides
    params = problem.base_params
    if "L" in over and over["L"] is not None:
        params = params.with_lip(float(over["L"]))
    tau = int(over.get("tau", config.tau))
    batch_m = int(over.get("batch", config.batch))
    budget_samples = over.get("budget", config.budget_samples)
    budget_iters = config.budget_iters if budget_samples is None else None

    v1 = None
    if problem.x_star is not None:
        v1 = bregman(problem.x1, problem.x_star)
    if params.diam is None and v1 is not None and v1 > 0:
        # unbounded-region surrogate: ball of twice the initial-error radius
        params = replace(params, diam=4.0 * math.sqrt(2.0 * v1))
    if params.ball_g is None and problem.x_star is not None:
        params = replace(params, ball_g=2.0 * float(np.linalg.norm(problem.x_star)))

    canonical = SCHEDULE_ALIASES.get(spec.schedule, spec.schedule).replace("-", "_")
    kwargs: dict[str, Any] = {}
    if canonical in ("td_constant", "ctd_constant", "ftd_constant", "robust_constant"):
        if budget_iters is not None:
            k = int(budget_iters)
        else:
            per_update = batch_m * (1 if spec.algorithm == "td" else tau)
            if canonical == "robust_constant":
                # m = k + 1 streams of tau transitions per update: k(k+1)tau <= budget
                k = int((math.sqrt(1.0 + 4.0 * budget_samples / tau) - 1.0) / 2.0)
            else:
                k = int(budget_samples // per_update)
        if canonical != "robust_constant":
            kwargs["k"] = max(k, 1)
        else:
            kwargs["k"] = max(k, 2)
    if canonical in ("td_constant", "ctd_constant", "ftd_constant",
                     "ctd_restart", "ftd_restart"):
        kwargs["v1"] = v1 if v1 is not None and v1 > 0 else 1.0
    schedule = make_schedule(canonical, **kwargs)
    if isinstance(schedule, RobustConstant) and problem.mixing is not None and "tau" not in over:
        tau = robust_tau(schedule.gamma(params), problem.mixing, schedule.k)
    return schedule, params, tau, batch_m, budget_samples, budget_iters


def run_cell(problem: BuiltProblem, config: ExperimentConfig,
             spec: AlgorithmSpec, seed: int) -> RunRecord:
    start = time.perf_counter()
    schedule, params, tau, batch_m, budget_samples, budget_iters = \
        _cell_components(problem, config, spec)
    metric_fns = {m: problem.metric_fn(m) for m in config.metrics}
    cfg = SolverConfig(
        algorithm=spec.algorithm, schedule=schedule,
        oracle_factory=problem.oracle_factory(seed), params=params,
        x1=problem.x1, tau=tau, region=WholeSpace(),
        batch=BatchSpec(m=batch_m),
        max_samples=budget_samples, max_iters=budget_iters,
        trace_stride=config.trace_stride, x_star=problem.x_star,
        extra_metrics=metric_fns, seed=seed,
        force_batch=int(spec.overrides["batch"]) if "batch" in spec.overrides else None)
    try:
        run = run_solver(cfg)
    except DivergenceError as exc:
        return RunRecord(algorithm=spec.id, seed=seed, rows=[],
                         wall_time=time.perf_counter() - start, failed=str(exc))
    rows = [(p.t, p.samples_consumed, p.gamma, p.lam, dict(p.extra)) for p in run.trace]
    return RunRecord(algorithm=spec.id, seed=seed, rows=rows,
                     wall_time=time.perf_counter() - start)


_POOL_STATE: dict = {}


def _pool_init(problem, config):
    _POOL_STATE["problem"] = problem
    _POOL_STATE["config"] = config


def _pool_cell(args):
    algo_index, seed = args
    config = _POOL_STATE["config"]
    return run_cell(_POOL_STATE["problem"], config, config.algorithms[algo_index], seed)


def worker_count() -> int:
    raw = os.environ.get("MVI_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(config: ExperimentConfig,
                   problem: Optional[BuiltProblem] = None) -> list[RunRecord]:
    """Execute every (algorithm, seed) cell and write the CSV outputs."""
    if problem is None:
        problem = build_problem(config)
    for spec in config.algorithms:  # fail fast on bad cells before running any
        _cell_components(problem, config, spec)
        for m in config.metrics:
            problem.metric_fn(m)

    cells = [(i, seed) for i in range(len(config.algorithms)) for seed in config.seeds]
    workers = worker_count()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_pool_init,
                                 initargs=(problem, config)) as pool:
            records = list(pool.map(_pool_cell, cells))
    else:
        records = [run_cell(problem, config, config.algorithms[i], seed)
                   for i, seed in cells]
    records.sort(key=lambda r: (r.algorithm, r.seed))
    write_outputs(config, records)
    return records


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    return repr(float(value))


def write_outputs(config: ExperimentConfig, records: list[RunRecord]) -> None:
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    header = ",".join(CSV_COLUMNS)
    by_algo: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_algo.setdefault(rec.algorithm, []).append(rec)

    for algo, recs in sorted(by_algo.items()):
        path = out / f"{algo}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for rec in sorted(recs, key=lambda r: r.seed):
                if rec.failed is not None:
                    fh.write(f"{algo},{rec.seed},,,,,,,\n")
                    continue
                for t, samples, gamma, lam, extra in rec.rows:
                    cells = [algo, str(rec.seed), str(t), str(samples),
                             _fmt(gamma), _fmt(lam)]
                    for metric in KNOWN_METRICS:
                        cells.append(_fmt(extra[metric]) if metric in extra else "")
                    fh.write(",".join(cells) + "\n")

    _write_aggregate(out / "aggregate.csv", config, records)
    failures = [r for r in records if r.failed is not None]
    with open(out / "failures.txt", "w", encoding="utf-8", newline="\n") as fh:
        for rec in failures:
            fh.write(f"{rec.algorithm},{rec.seed},{rec.failed}\n")


def _write_aggregate(path: Path, config: ExperimentConfig,
                     records: list[RunRecord]) -> None:
    """Per-(algorithm, iter) means and standard errors across seeds."""
    groups: dict[tuple[str, int], list] = {}
    for rec in records:
        if rec.failed is not None:
            continue
        for t, samples, _g, _l, extra in rec.rows:
            groups.setdefault((rec.algorithm, t), []).append((samples, extra))
    cols = ["algorithm", "iter", "samples", "n_seeds"]
    for m in config.metrics:
        cols += [f"{m}_mean", f"{m}_stderr"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for (algo, t), vals in sorted(groups.items()):
            samples = vals[0][0]
            n = len(vals)
            cells = [algo, str(t), str(samples), str(n)]
            for m in config.metrics:
                xs = np.array([extra[m] for _s, extra in vals if m in extra])
                if xs.size == 0:
                    cells += ["", ""]
                    continue
                mean = float(xs.mean())
                stderr = float(xs.std(ddof=1) / math.sqrt(xs.size)) if xs.size > 1 else ""
                cells.append(_fmt(mean))
                cells.append(_fmt(stderr) if stderr != "" else "")
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def compare_report(records: list[RunRecord], metric: str = "weighted_error",
                   thresholds: tuple = THRESHOLDS) -> list[dict]:
    """Final-error summary plus samples-to-threshold per algorithm."""
    if not records:
        raise ValidationError("compare_report needs at least one record")
    by_algo: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_algo.setdefault(rec.algorithm, []).append(rec)
    table = []
    for algo, recs in sorted(by_algo.items()):
        finals, hits = [], {thr: [] for thr in thresholds}
        budget = 0
        n_failed = 0
        for rec in recs:
            if rec.failed is not None or not rec.rows:
                n_failed += rec.failed is not None
                continue
            rows = [(t, s, e) for t, s, _g, _l, e in rec.rows if metric in e]
            if not rows:
                continue
            finals.append(rows[-1][2][metric])
            budget = max(budget, rows[-1][1])
            for thr in thresholds:
                first = next((s for _t, s, e in rows if e[metric] <= thr), None)
                hits[thr].append(first)
        entry = {"algorithm": algo, "n_runs": len(finals), "n_failed": n_failed}
        if finals:
            xs = np.array(finals)
            entry["final_mean"] = float(xs.mean())
            entry["final_stderr"] = (float(xs.std(ddof=1) / math.sqrt(xs.size))
                                     if xs.size > 1 else None)
        for thr in thresholds:
            vals = hits[thr]
            if vals and all(v is not None for v in vals):
                entry[f"samples_to_{thr}"] = float(np.mean(vals))
            else:
                entry[f"samples_to_{thr}"] = "> budget"
        table.append(entry)
    return table


def records_from_csv_dir(path: str, metrics=KNOWN_METRICS) -> list[RunRecord]:
    """Rebuild records from the per-algorithm CSVs in a directory."""
    records: dict[tuple[str, int], RunRecord] = {}
    root = Path(path)
    files = sorted(p for p in root.glob("*.csv") if p.name != "aggregate.csv")
    if not files:
        raise ValidationError(f"no per-algorithm CSV files under {path!r}")
    for f in files:
        with open(f, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if header != list(CSV_COLUMNS):
                raise ValidationError(f"{f.name}: unexpected CSV header")
            for line in fh:
                parts = line.rstrip("\n").split(",")
                algo, seed = parts[0], int(parts[1])
                key = (algo, seed)
                if key not in records:
                    records[key] = RunRecord(algorithm=algo, seed=seed, rows=[],
                                             wall_time=0.0)
                if parts[2] == "":
                    records[key].failed = "recorded failure"
                    continue
                extra = {}
                for name, cell in zip(KNOWN_METRICS, parts[6:9]):
                    if cell != "":
                        extra[name] = float(cell)
                records[key].rows.append((int(parts[2]), int(parts[3]),
                                          float(parts[4]), float(parts[5]), extra))
    return sorted(records.values(), key=lambda r: (r.algorithm, r.seed))
