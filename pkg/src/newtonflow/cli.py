"""Command-line entry point and experiment orchestration.

Each invocation runs one command against one plain-text configuration,
writes its artifacts into the output directory and finishes with a
manifest holding the fully resolved configuration, run diagnostics and a
content digest per artifact. Identical configurations reproduce
identical artifact bytes; nothing time- or host-dependent is written.

Exit codes: 0 success, 2 configuration error, 3 numerical error,
4 I/O error. Failures print a single machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, RunConfig, parse_config, resolved_items, validate
from .equivalence import (drift_test, delta_surrogate_test,
                          equivalence_experiment, variance_test,
                          write_comparisons_csv)
from .errors import ConfigError, NewtonFlowError
from .fields import builtin_field
from .glm import (bartlett_check, fisher_scoring_solve, glm_simulate,
                  save_dataset)
from .grids import GridSpec, save_density
from .particles import advance_ensemble, sample_initial, save_ensemble
from .transport import (gaussian_density, section_csv, solve_transport,
                        write_moments_csv)

ENV_THREADS = "NEWTONFLOW_THREADS"


def _single_line(message: str) -> str:
    return " ".join(str(message).split())


class _Run:
    """Collects artifacts and run diagnostics for the manifest."""

    def __init__(self, out_dir: Path, config: RunConfig, command: str):
        self.out_dir = out_dir
        self.config = config
        self.command = command
        self.artifacts: list[Path] = []
        self.info: list[tuple[str, str]] = []

    def add(self, path: Path) -> Path:
        self.artifacts.append(path)
        return path

    def note(self, key: str, value) -> None:
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = f"{value:.17g}"
        self.info.append((key, str(value)))

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text, encoding="utf-8", newline="\n")
        return self.add(path)

    def finish(self) -> Path:
        lines = ["# newtonflow run manifest",
                 f"version={__version__}",
                 f"command={self.command}",
                 "[config]"]
        lines += [f"{k}={v}" for k, v in resolved_items(self.config)]
        lines.append("[run]")
        lines += [f"{k}={v}" for k, v in self.info]
        lines.append("[artifacts]")
        for path in sorted(self.artifacts, key=lambda p: p.name):
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            lines.append(f"{path.name}={digest}")
        manifest = self.out_dir / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8",
                            newline="\n")
        return manifest


def _grid(config: RunConfig) -> GridSpec:
    return GridSpec(config.grid_lower, config.grid_dx, config.grid_cells)


def _dataset(config: RunConfig):
    return glm_simulate(config.glm_n, config.beta_star, config.glm_seed,
                        config.glm_law)


def _field(config: RunConfig, dim: int, dataset=None):
    return builtin_field(config.field, dim=dim, dataset=dataset)


def _init_cov(config: RunConfig, dim: int) -> np.ndarray:
    sigma = np.atleast_1d(np.asarray(config.init_sigma, dtype=float))
    if sigma.size == 1:
        sigma = np.full(dim, sigma[0])
    if sigma.size != dim:
        raise ConfigError("init_sigma must be scalar or one value per axis")
    return np.diag(sigma**2)


def _time_tag(t: float) -> str:
    return f"{t:g}".replace("-", "m")


def _maybe_dataset_for_field(config: RunConfig, run: _Run):
    if config.field in ("glm-fisher", "glm-score"):
        dataset = _dataset(config)
        mle = fisher_scoring_solve(dataset)
        run.note("glm_beta_hat", ",".join(f"{v:.17g}" for v in mle.beta_hat))
        run.note("glm_mle_iterations", mle.iterations)
        run.note("glm_mle_score_norm", mle.final_score_norm)
        return dataset
    return None


def _solve_pde(config: RunConfig, run: _Run, plot: bool):
    grid = _grid(config)
    dataset = _maybe_dataset_for_field(config, run)
    field = _field(config, grid.dim, dataset)
    rho0 = gaussian_density(grid, config.init_mean, _init_cov(config, grid.dim),
                            truncate=config.init_truncate)
    result = solve_transport(rho0, field, config.dt, config.t_end,
                             config.snapshots, enforce_cfl=config.enforce_cfl)
    run.note("stable_dt", result.stable_dt)
    run.note("cfl_satisfied", result.cfl_satisfied)
    run.note("outflow", result.outflow)
    run.note("min_density", result.min_density)
    run.note("snapped_times",
             ",".join(f"{t:.17g}" for t in result.snapped_times))
    for rho in result.snapshots:
        tag = _time_tag(rho.time)
        run.add(save_density(rho, run.out_dir / f"density_t{tag}.txt"))
        if grid.dim >= 2:
            run.write_text(f"section_t{tag}.csv", section_csv(rho))
        if plot:
            from .plots import plot_density
            run.add(plot_density(rho, run.out_dir / f"density_t{tag}.png"))
    run.add(write_moments_csv(result.reports, run.out_dir / "moments.csv",
                              grid.dim))
    if plot:
        from .plots import plot_moments
        run.add(plot_moments(result.reports, run.out_dir / "moments.png"))
    return result


def _cmd_solve_pde(config: RunConfig, run: _Run, plot: bool) -> None:
    _solve_pde(config, run, plot)


def _cmd_momenta(config: RunConfig, run: _Run, plot: bool) -> None:
    result = _solve_pde(config, run, plot)
    rows = ["t,momenta,mass"]
    for r in result.reports:
        rows.append(f"{r.time:.17g},{r.momenta:.17g},{r.mass:.17g}")
    run.write_text("momenta.csv", "\n".join(rows) + "\n")


def _cmd_simulate_particles(config: RunConfig, run: _Run, plot: bool) -> None:
    grid = _grid(config)
    dataset = _maybe_dataset_for_field(config, run)
    field = _field(config, grid.dim, dataset)
    if config.init_law == "gaussian":
        ens = sample_initial(grid, "gaussian", config.particles_n,
                             config.particles_seed, mean=config.init_mean,
                             cov=_init_cov(config, grid.dim),
                             truncate=config.init_truncate)
    else:
        ens = sample_initial(grid, "uniform", config.particles_n,
                             config.particles_seed)
    domain = grid.as_domain()
    escaped_total = 0
    summary = ["t,remaining,escaped_cumulative"]
    for t in sorted(float(t) for t in config.snapshots):
        ens, escaped = advance_ensemble(ens, field, config.dt, t,
                                        config.method, domain)
        escaped_total += escaped
        tag = _time_tag(ens.time)
        path = run.out_dir / f"particles_t{tag}.csv"
        save_ensemble(ens, path)
        run.add(path)
        summary.append(f"{ens.time:.17g},{ens.count},{escaped_total}")
    run.write_text("particle_summary.csv", "\n".join(summary) + "\n")


def _cmd_compare(config: RunConfig, run: _Run, plot: bool) -> None:
    grid = _grid(config)
    dataset = _maybe_dataset_for_field(config, run)
    field = _field(config, grid.dim, dataset)
    reports = equivalence_experiment(
        field, grid, config.init_mean, _init_cov(config, grid.dim),
        config.particles_n, config.dt, config.t_end, config.snapshots,
        config.particles_seed, method=config.method,
        smoothing=config.smoothing, bandwidth=config.bandwidth,
        init_truncate=config.init_truncate, enforce_cfl=config.enforce_cfl)
    run.add(write_comparisons_csv(reports, run.out_dir / "comparison.csv"))
    if plot:
        from .plots import plot_comparisons
        run.add(plot_comparisons(reports, run.out_dir / "comparison.png"))


def _cmd_glm_demo(config: RunConfig, run: _Run, plot: bool) -> None:
    dataset = _dataset(config)
    run.add(save_dataset(dataset, run.out_dir / "dataset.csv"))
    run.add(run.out_dir / "dataset.csv.meta")
    mle = fisher_scoring_solve(dataset)
    lines = [
        "beta_hat=" + ",".join(f"{v:.17g}" for v in mle.beta_hat),
        f"iterations={mle.iterations}",
        f"final_score_norm={mle.final_score_norm:.17g}",
    ]
    run.write_text("mle.txt", "\n".join(lines) + "\n")
    report = bartlett_check(config.beta_star, config.glm_n,
                            replications=1000, seed=config.glm_seed,
                            covariate_law=config.glm_law,
                            threads=config.threads)
    rows = ["statistic,component,value"]
    p = report.mean_score.size
    for k in range(p):
        rows.append(f"mean_score,{k + 1},{report.mean_score[k]:.17g}")
        rows.append(f"se_score,{k + 1},{report.se_score[k]:.17g}")
    for j in range(p):
        for k in range(p):
            rows.append(f"mean_neg_hessian,{j + 1}{k + 1},"
                        f"{report.mean_neg_hessian[j, k]:.17g}")
            rows.append(f"mean_fisher,{j + 1}{k + 1},"
                        f"{report.mean_fisher[j, k]:.17g}")
            rows.append(f"se_identity_gap,{j + 1}{k + 1},"
                        f"{report.se_identity_gap[j, k]:.17g}")
    run.write_text("bartlett.csv", "\n".join(rows) + "\n")
    run.note("bartlett_replications", report.replications)


def _cmd_lemma_tests(config: RunConfig, run: _Run, plot: bool) -> None:
    dataset = _maybe_dataset_for_field(config, run)
    center = np.asarray(config.init_mean, dtype=float)
    field = _field(config, center.size, dataset)
    sigma = float(np.asarray(config.init_sigma).ravel()[0])
    drift = drift_test(field, center, sigma, config.dt)
    variance = variance_test(field, center, sigma, config.dt)
    surrogate = delta_surrogate_test(field, center, sigma, config.dt,
                                     [lambda x: float(np.sum(x**2))])
    rows = ["test,level,sigma,dt,metric,value"]
    for i, lv in enumerate(drift.levels):
        rows.append(f"drift,{i},{lv.sigma:.17g},{lv.dt:.17g},residual,"
                    f"{lv.residual:.17g}")
    for i, r in enumerate(drift.ratios):
        rows.append(f"drift,{i},,,halving_ratio,{r:.17g}")
    for i, lv in enumerate(variance.levels):
        rows.append(f"variance,{i},{lv.sigma:.17g},{lv.dt:.17g},normalized,"
                    f"{lv.normalized:.17g}")
        rows.append(f"variance,{i},{lv.sigma:.17g},{lv.dt:.17g},"
                    f"nonlinear_normalized,{lv.nonlinear_normalized:.17g}")
    for i, lv in enumerate(surrogate.levels):
        rows.append(f"delta_surrogate,{i},{lv.sigma:.17g},{config.dt:.17g},"
                    f"abs_error,{lv.errors[0]:.17g}")
    run.write_text("lemma_reports.csv", "\n".join(rows) + "\n")


_DISPATCH = {
    "solve-pde": _cmd_solve_pde,
    "momenta": _cmd_momenta,
    "simulate-particles": _cmd_simulate_particles,
    "compare": _cmd_compare,
    "glm-demo": _cmd_glm_demo,
    "lemma-tests": _cmd_lemma_tests,
}


def run(config: RunConfig, command: str, output_dir: str | Path,
        plot: bool = False) -> Path:
    """Execute one command; returns the manifest path."""
    validate(config, command)
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = _Run(out_dir, config, command)
    _DISPATCH[command](config, runner, plot)
    return runner.finish()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="newtonflow",
        description="Flow experiments: particle ensembles vs conservative "
                    "density transport.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="key=value config file")
    parser.add_argument("--output", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None,
                        help="override glm_seed and particles_seed")
    parser.add_argument("--plot", action="store_true",
                        help="render figures next to the CSV artifacts")
    args = parser.parse_args(argv)

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: io: {_single_line(exc)}", file=sys.stderr)
        return 4

    try:
        config = parse_config(text)
        if args.output is not None:
            config.output_dir = args.output
        if config.output_dir is None:
            config.output_dir = "."
        if args.seed is not None:
            config.glm_seed = args.seed
            config.particles_seed = args.seed
        env_threads = os.environ.get(ENV_THREADS)
        if args.threads is not None:
            config.threads = args.threads
        elif env_threads is not None:
            try:
                config.threads = int(env_threads)
            except ValueError:
                raise ConfigError(f"{ENV_THREADS} must be an integer, "
                                  f"got {env_threads!r}") from None
        run(config, args.command, config.output_dir, plot=args.plot)
    except ConfigError as exc:
        print(f"error: config: {_single_line(exc)}", file=sys.stderr)
        return 2
    except NewtonFlowError as exc:
        print(f"error: numeric: {_single_line(exc)}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io: {_single_line(exc)}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
