"""Configuration-driven experiment harness.

One INI-style config describes a full twin experiment: synthesize clean +
noisy measurements from a known coefficient, recover the coefficient by
conjugate gradients, build the Laplace posterior, sample it, and write the
artifacts (measurement CSVs, iteration log, reconstruction, ensemble summary
with confidence bands, skewness report) plus one relative-error summary row
per (α, ε, N, μ-rule) combination averaged over a seed list. Fixed config +
seed ⇒ byte-identical CSV output.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, SolverError
from .fem import DiffusionTensor
from .inversion import InverseProblem, MU_RULES, ObjectiveConfig, mu_from_rule, relative_error
from .measure import (
    MeasurementOperator,
    WeightFunction,
    add_noise,
    add_noise_direct,
    direct_flux_data,
    forward_map,
)
from .mesh import build_mesh
from .solver import ForwardProblem
from .sources import build_source_system
from .timefrac import TemporalGrid
from .uq import PosteriorModel, assemble_jacobian, confidence_interval, sample_posterior, skewness

# Closed-form coefficients of the shipped example problems, with each
# example's default accessible boundary.
EXACT_COEFFICIENTS = {
    "example1": (1, lambda x: x**2 * (1 - x**2), "right"),
    "example2": (1, lambda x: x * (1 - x) ** 2, "left"),
    "example3": (1, lambda x: x * (1 - x), "left+right"),
    "example4": (1, lambda x: np.where(x <= 2.0 / 3.0, x, -2 * x + 2), "left+right"),
    "example5": (
        1,
        lambda x: np.where((x > 0.5) & (x <= 0.8), 0.4, 0.0),
        "left+right",
    ),
    "example6": (2, lambda x, y: x**2 * (1 - x) * y * (1 - y) ** 2, "bottom+right"),
    "example7": (2, lambda x, y: x * (1 - x) * y * (1 - y), "all"),
}


def exact_coefficient(name: str, mesh) -> np.ndarray:
    """Nodal values of a named example coefficient on a mesh."""
    key = name.strip().lower()
    if key not in EXACT_COEFFICIENTS:
        raise ConfigError(f"unknown coefficient selector {name!r}")
    dim, func, _ = EXACT_COEFFICIENTS[key]
    if dim != mesh.dimension:
        raise ConfigError(f"coefficient {name!r} is {dim}D but the mesh is {mesh.dimension}D")
    if dim == 1:
        return func(mesh.nodes[:, 0])
    return func(mesh.nodes[:, 0], mesh.nodes[:, 1])


@dataclass
class ExperimentConfig:
    """Validated experiment description (one value per field, lists in sweeps)."""

    dimension: int = 1
    elements: int = 300
    nt: int = 100
    T: float = 1.0
    alphas: tuple[float, ...] = (0.3,)
    basis: str = "trig"
    Ns: tuple[int, ...] = (5,)
    segment: str = "right"
    weight: str = "one_minus_t"
    data: str = "average"  # average | direct | both
    coefficient: str = "example1"
    epsilons: tuple[float, ...] = (1e-4,)
    noise_scale: str = "relative"
    n_seeds: int = 5
    base_seed: int = 1001
    mu_rules: tuple[str, ...] = ("delta_3_2",)
    mu_explicit: float = 0.0
    cgm_eps: float = 1e-6
    max_iter: int = 200
    stall_rel: float = 1e-3
    q_min: float = 0.0
    q_max: str | float = "auto"
    Ne: int = 10000
    confidence: float = 0.95
    out_dir: str = "out"
    source_text: str = ""

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigError(f"problem.dimension must be 1 or 2, got {self.dimension}")
        if self.data not in ("average", "direct", "both"):
            raise ConfigError(f"measurement.data must be average|direct|both, got {self.data!r}")
        for rule in self.mu_rules:
            if rule not in MU_RULES:
                raise ConfigError(f"regularization.mu_rule {rule!r} not in {MU_RULES}")
        if self.n_seeds < 1:
            raise ConfigError("noise.seeds must be at least 1")
        bad = [e for e in self.epsilons if e < 0]
        if bad:
            raise ConfigError(f"noise.epsilon values must be nonnegative, got {bad}")

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.base_seed + k for k in range(self.n_seeds))

    def config_hash(self) -> str:
        text = self.source_text or repr(self)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _parse_list(raw: str, conv):
    return tuple(conv(tok) for tok in raw.replace(",", " ").split())


def load_config(path) -> ExperimentConfig:
    """Parse and validate an INI experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    def get(section, key, conv, default):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: [{section}] {key} = {raw!r}: {exc}") from exc

    q_max_raw = get("cgm", "q_max", str, "auto")
    cfg = ExperimentConfig(
        dimension=get("problem", "dimension", int, 1),
        elements=get("problem", "elements", int, 300),
        nt=get("problem", "nt", int, 100),
        T=get("problem", "T", float, 1.0),
        alphas=get("problem", "alpha", lambda s: _parse_list(s, float), (0.3,)),
        basis=get("sources", "basis", str, "trig"),
        Ns=get("sources", "N", lambda s: _parse_list(s, int), (5,)),
        segment=get("measurement", "segment", str, "right"),
        weight=get("measurement", "weight", str, "one_minus_t"),
        data=get("measurement", "data", str, "average"),
        coefficient=get("truth", "coefficient", str, "example1"),
        epsilons=get("noise", "epsilon", lambda s: _parse_list(s, float), (1e-4,)),
        noise_scale=get("noise", "scale", str, "relative"),
        n_seeds=get("noise", "seeds", int, 5),
        base_seed=get("noise", "base_seed", int, 1001),
        mu_rules=get("regularization", "mu_rule", lambda s: _parse_list(s, str), ("delta_3_2",)),
        mu_explicit=get("regularization", "mu", float, 0.0),
        cgm_eps=get("cgm", "eps", float, 1e-6),
        max_iter=get("cgm", "max_iter", int, 200),
        stall_rel=get("cgm", "stall_rel", float, 1e-3),
        q_min=get("cgm", "q_min", float, 0.0),
        q_max="auto" if q_max_raw == "auto" else float(q_max_raw),
        Ne=get("uq", "Ne", int, 10000),
        confidence=get("uq", "confidence", float, 0.95),
        out_dir=get("output", "dir", str, "out"),
        source_text=text,
    )
    return cfg


def _version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        )
        if desc.returncode == 0:
            return f"{__version__}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class _Workspace:
    """Assembled operators shared by all jobs of one (alpha, N) cell."""

    problem: ForwardProblem
    sources: object
    op_average: MeasurementOperator | None
    op_direct: MeasurementOperator | None
    clean_average: object | None
    clean_direct: object | None
    q_exact: np.ndarray


class ExperimentRunner:
    """Executes the sweep described by an ExperimentConfig."""

    def __init__(self, config: ExperimentConfig, out_dir=None):
        self.config = config
        self.out = Path(out_dir) if out_dir is not None else Path(config.out_dir)
        self.version = _version_string()
        self._header_base = (
            f"config_sha256={config.config_hash()}",
            f"version={self.version}",
        )
        self.failures: list[str] = []

    # -- assembly ------------------------------------------------------------

    def _workspace(self, alpha: float, N: int, kind_needed: str) -> _Workspace:
        cfg = self.config
        mesh = build_mesh(cfg.dimension, cfg.elements)
        grid = TemporalGrid(T=cfg.T, nt=cfg.nt, alpha=alpha)
        problem = ForwardProblem(mesh, grid, DiffusionTensor(1.0))
        q_exact = exact_coefficient(cfg.coefficient, mesh)
        sources = build_source_system(mesh, grid, cfg.basis, N)
        weight = WeightFunction.from_name(cfg.weight)
        op_avg = clean_avg = op_dir = clean_dir = None
        if kind_needed in ("average", "both"):
            op_avg = MeasurementOperator(problem, sources, weight, cfg.segment, kind="average")
            clean_avg = forward_map(problem, q_exact, sources, weight, cfg.segment)
        if kind_needed in ("direct", "both"):
            op_dir = MeasurementOperator(problem, sources, None, cfg.segment, kind="direct")
            clean_dir = direct_flux_data(problem, q_exact, sources, cfg.segment)
        return _Workspace(problem, sources, op_avg, op_dir, clean_avg, clean_dir, q_exact)

    def _q_max(self, q_exact: np.ndarray) -> float:
        if self.config.q_max == "auto":
            return 2.0 * float(q_exact.max())
        return float(self.config.q_max)

    # -- single job ------------------------------------------------------------

    def _run_job(self, ws: _Workspace, kind: str, epsilon: float, mu_rule: str, seed: int, job_dir: Path):
        cfg = self.config
        job_dir.mkdir(parents=True, exist_ok=True)
        headers = self._header_base + (f"seed={seed}",)
        t_start = time.perf_counter()

        if kind == "average":
            op, clean = ws.op_average, ws.clean_average
            noisy = add_noise(clean, epsilon, seed=seed, scale=cfg.noise_scale)
            clean.to_csv(job_dir / "measurements_clean.csv", headers)
            noisy.to_csv(job_dir / "measurements_noisy.csv", headers)
            noisy.to_json(job_dir / "measurements_noisy.json")
        else:
            op, clean = ws.op_direct, ws.clean_direct
            noisy = add_noise_direct(clean, epsilon, seed=seed, scale=cfg.noise_scale)
            np.save(job_dir / "traces_noisy.npy", noisy.values)
            with open(job_dir / "traces_meta.json", "w", encoding="utf-8", newline="\n") as fh:
                json.dump(
                    {
                        "shape": list(noisy.values.shape),
                        "epsilon": epsilon,
                        "delta": noisy.delta,
                        "seed": seed,
                    },
                    fh,
                    indent=2,
                )
                fh.write("\n")

        mu = mu_from_rule(mu_rule, noisy.delta, cfg.mu_explicit) if epsilon > 0 else (
            cfg.mu_explicit if mu_rule == "explicit" else 0.0
        )
        obj = ObjectiveConfig(mu=mu, q_min=cfg.q_min, q_max=self._q_max(ws.q_exact))
        inverse = InverseProblem(op, noisy, obj)
        result = inverse.run_cgm(
            eps=cfg.cgm_eps, max_iter=cfg.max_iter, stall_rel=cfg.stall_rel
        )
        self._write_cgm_log(job_dir / "cgm_log.csv", headers, result)
        self._write_field(job_dir / "reconstruction.csv", headers, ws.problem, result.q_map)

        estimate = result.q_map
        uq_done = False
        if kind == "average" and mu > 0 and noisy.delta > 0:
            P = assemble_jacobian(op, result.q_map)
            model = PosteriorModel.build(result.q_map, P, mu, noisy.delta)
            ens = sample_posterior(model, cfg.Ne, seed=seed + 1_000_000, keep_samples=False)
            ci = confidence_interval(model, cfg.confidence, cfg.Ne)
            estimate = ens.mean
            self._write_ensemble(job_dir / "ensemble_summary.csv", headers, ws.problem, ens, ci)
            sk = skewness(np.clip(ens.mean, 0.0, None), ws.problem.mesh, ws.problem.fem)
            sk.to_json(job_dir / "skewness.json")
            uq_done = True

        r_e = relative_error(estimate, ws.q_exact, ws.problem.fem)
        run_meta = {
            "kind": kind,
            "epsilon": epsilon,
            "mu_rule": mu_rule,
            "mu": mu,
            "delta": noisy.delta,
            "seed": seed,
            "iterations": result.iterations,
            "converged": result.converged,
            "stop_reason": result.stop_reason,
            "J": result.J,
            "relative_error": r_e,
            "uq": uq_done,
            "runtime_s": round(time.perf_counter() - t_start, 3),
            "version": self.version,
            "config_sha256": cfg.config_hash(),
        }
        with open(job_dir / "run.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(run_meta, fh, indent=2)
            fh.write("\n")
        return r_e, result.iterations, noisy.delta, mu

    # -- artifact writers -------------------------------------------------------

    def _write_rows(self, path: Path, headers, columns, rows):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in headers:
                fh.write(f"# {line}\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    def _write_cgm_log(self, path, headers, result):
        self._write_rows(
            path,
            headers,
            ["iter", "J", "grad_norm", "E_k", "beta", "gamma"],
            result.log.rows(),
        )

    def _write_field(self, path, headers, problem, values):
        mesh = problem.mesh
        if mesh.dimension == 1:
            cols = ["node_index", "x", "q"]
            rows = ((m, mesh.nodes[m, 0], values[m]) for m in range(mesh.num_nodes))
        else:
            cols = ["node_index", "x", "y", "q"]
            rows = (
                (m, mesh.nodes[m, 0], mesh.nodes[m, 1], values[m]) for m in range(mesh.num_nodes)
            )
        self._write_rows(path, headers, cols, rows)

    def _write_ensemble(self, path, headers, problem, ens, ci):
        mesh = problem.mesh
        sd = np.sqrt(np.clip(np.diag(ens.cov), 0.0, None))
        lo = ens.mean - ci.halfwidths
        hi = ens.mean + ci.halfwidths
        if mesh.dimension == 1:
            cols = ["node", "x", "mean", "sd", "ci_lo", "ci_hi"]
            rows = (
                (m, mesh.nodes[m, 0], ens.mean[m], sd[m], lo[m], hi[m])
                for m in range(mesh.num_nodes)
            )
        else:
            cols = ["node", "x", "y", "mean", "sd", "ci_lo", "ci_hi"]
            rows = (
                (m, mesh.nodes[m, 0], mesh.nodes[m, 1], ens.mean[m], sd[m], lo[m], hi[m])
                for m in range(mesh.num_nodes)
            )
        self._write_rows(path, headers, cols, rows)

    # -- sweeps ------------------------------------------------------------------

    def run(self, threads: int = 1) -> Path:
        """Full sweep for the configured data kind(s); returns the output dir."""
        cfg = self.config
        self.out.mkdir(parents=True, exist_ok=True)
        kinds = ("average", "direct") if cfg.data == "both" else (cfg.data,)
        summary_rows = []
        jobs = []
        for alpha in cfg.alphas:
            for N in cfg.Ns:
                ws = self._workspace(alpha, N, cfg.data)
                for kind in kinds:
                    for epsilon in cfg.epsilons:
                        for rule in cfg.mu_rules:
                            jobs.append((ws, kind, alpha, N, epsilon, rule))

        def run_cell(job):
            ws, kind, alpha, N, epsilon, rule = job
            res = []
            for seed in cfg.seeds:
                tag = f"{kind}_a{alpha:g}_e{epsilon:g}_N{N}_{rule}"
                job_dir = self.out / tag / f"seed{seed}"
                try:
                    res.append(self._run_job(ws, kind, epsilon, rule, seed, job_dir))
                except SolverError as exc:
                    self.failures.append(f"{tag}/seed{seed}: {exc}")
                    with open(job_dir / "FAILED.json", "w", encoding="utf-8", newline="\n") as fh:
                        json.dump({"error": str(exc)}, fh, indent=2)
                        fh.write("\n")
            return (kind, alpha, N, epsilon, rule, res)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                cells = list(pool.map(run_cell, jobs))
        else:
            cells = [run_cell(job) for job in jobs]

        for kind, alpha, N, epsilon, rule, res in cells:
            if not res:
                summary_rows.append((kind, alpha, epsilon, N, rule, 0, "nan", "nan", "nan", "nan"))
                continue
            re_vals = np.array([r[0] for r in res])
            iters = np.array([r[1] for r in res])
            deltas = np.array([r[2] for r in res])
            mus = np.array([r[3] for r in res])
            summary_rows.append(
                (
                    kind,
                    alpha,
                    epsilon,
                    N,
                    rule,
                    len(res),
                    re_vals.mean(),
                    re_vals.std(),
                    iters.mean(),
                    mus.mean(),
                )
            )
        self._write_rows(
            self.out / "summary.csv",
            self._header_base + (f"seeds={list(cfg.seeds)}",),
            ["kind", "alpha", "epsilon", "N", "mu_rule", "n_seeds", "re_mean", "re_sd", "iters_mean", "mu_mean"],
            summary_rows,
        )
        return self.out

    def compare_data_types(self, threads: int = 1) -> Path:
        """Average vs direct pipelines over the ε list; paired r_e columns."""
        cfg = replace(self.config, data="both")
        runner = ExperimentRunner(cfg, self.out)
        runner.run(threads=threads)
        self.failures = runner.failures
        table = {}
        for row in read_summary(self.out / "summary.csv"):
            key = float(row["epsilon"])
            table.setdefault(key, {})[row["kind"]] = (float(row["re_mean"]), float(row["re_sd"]))
        rows = []
        for eps in sorted(table):
            a = table[eps].get("average", (np.nan, np.nan))
            d = table[eps].get("direct", (np.nan, np.nan))
            rows.append((eps, a[0], a[1], d[0], d[1]))
        self._write_rows(
            self.out / "data_type_comparison.csv",
            self._header_base,
            ["epsilon", "re_average_mean", "re_average_sd", "re_direct_mean", "re_direct_sd"],
            rows,
        )
        return self.out


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_summary(path) -> list[dict]:
    """Rows of a harness CSV as dicts (comment headers skipped)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        cols = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if cols is None:
                cols = line.split(",")
                continue
            out.append(dict(zip(cols, line.split(","))))
    return out


def run_experiment(config_path, out_dir=None, base_seed=None, threads: int = 1) -> Path:
    """Load a config file and execute the full sweep."""
    cfg = load_config(config_path)
    if base_seed is not None:
        cfg = replace(cfg, base_seed=int(base_seed))
    return ExperimentRunner(cfg, out_dir).run(threads=threads)


def compare_data_types(config_path, out_dir=None, base_seed=None, threads: int = 1) -> Path:
    """Load a config file and run the average-vs-direct comparison."""
    cfg = load_config(config_path)
    if base_seed is not None:
        cfg = replace(cfg, base_seed=int(base_seed))
    return ExperimentRunner(cfg, out_dir).compare_data_types(threads=threads)
