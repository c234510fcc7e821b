"""
Workflows behind the CLI commands. Each one validates its preconditions,
runs the numerical modules and writes its results plus a manifest into the
output directory.
"""
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from mfglab.coefficients import (
    CoefficientSet,
    build_base_map,
    build_coefficients,
    fit_a0,
    fit_weak_strong,
    growth_certificate,
    probe_joint_monotone,
    probe_l2_monotone,
)
from mfglab.config import settings
from mfglab.diagnostics import propagation_check
from mfglab.dynamics import (
    MeasureFlow,
    second_moment_growth,
    simulate_conditional_common_noise,
    simulate_mckean,
    simulate_theta,
    time_continuity_ratio,
)
from mfglab.errors import ConfigError, MissingFieldError, MonotonicityGateError, UnsupportedFamilyError
from mfglab.estimates import measure_stability_harness, stability_harness
from mfglab.field import DecouplingField
from mfglab.io import config_hash, read_field, write_field, write_flow, write_json, write_manifest, write_table
from mfglab.models import (
    EstimateReport,
    FlowStatistics,
    OracleCompareRow,
    ProbeReport,
    RegularizationCertificate,
    ScenarioConfig,
)
from mfglab.oracle_lq import LQParams, oracle_field, pde_residual, riccati_solve
from mfglab.solver import build_fbsde_paths, initial_measures, picard_solve, sup_table_error
from mfglab.streams import derive_seed
from mfglab.yosida import convergence_sweep, shifted

logger = logging.getLogger(__name__)

FIELD_DIR = "field"
FLOW_DIR = "flow"


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a TOML scenario and validate it; every failure becomes a ConfigError."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return validate_config(raw)


def validate_config(raw: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from exc


def with_overrides(config: ScenarioConfig, **updates) -> ScenarioConfig:
    """Re-validated copy of the config with some fields replaced."""
    data = config.model_dump(mode="json")
    data.update({k: v for k, v in updates.items() if v is not None})
    return validate_config(data)


def output_dir(config: ScenarioConfig, out: Optional[str | Path] = None) -> Path:
    if out is not None:
        return Path(out)
    if config.output_dir:
        return Path(config.output_dir)
    return Path(settings.OUTPUT_ROOT) / config.name


def _probe(config: ScenarioConfig, threads: int) -> ProbeReport:
    cs = build_coefficients(config.coefficients)
    probe = config.probe
    seed = config.seed
    w0 = probe_l2_monotone(cs.W0, probe.sampler, probe.n_pairs, derive_seed(seed, "w0"), config.dim, probe.tolerance, threads)
    joint = probe_joint_monotone(
        cs.F, cs.G, probe.sampler, probe.n_pairs, derive_seed(seed, "joint"), config.dim, probe.tolerance, threads
    )
    fits = {}
    if probe.n_pairs >= 10:
        for direction in ("in_X", "in_W"):
            fits[direction] = fit_weak_strong(
                cs.F, cs.G, probe.sampler, probe.n_pairs, derive_seed(seed, "fit"), direction, config.dim, threads
            )
    a0 = fit_a0(cs.W0, probe.sampler, probe.n_pairs, derive_seed(seed, "a0"), config.dim)
    growth = growth_certificate(cs, probe.sampler, probe.n_growth_samples, derive_seed(seed, "growth"), config.dim)
    return ProbeReport(
        w0=w0,
        joint=joint,
        fit_in_x=fits.get("in_X"),
        fit_in_w=fits.get("in_W"),
        a0=a0 if math.isfinite(a0) else None,
        growth=growth,
    )


def run_probe_monotonicity(config: ScenarioConfig, out: Optional[str | Path] = None, threads: int = 1) -> ProbeReport:
    out_dir = output_dir(config, out)
    report = _probe(config, threads)
    write_json(report, out_dir / "probe.json")
    write_manifest(config, "probe-monotonicity", out_dir)
    logger.info("monotonicity probe %s", "passed" if report.passed else "failed")
    return report


def _solve_into(config: ScenarioConfig, out_dir: Path, threads: int) -> DecouplingField:
    cs = build_coefficients(config.coefficients)
    field = picard_solve(cs, config, threads=threads, config_hash=config_hash(config))
    write_field(field, out_dir / FIELD_DIR)
    write_table(
        [{"iteration": i + 1, "increment": inc} for i, inc in enumerate(field.increment_history)],
        out_dir / "convergence.csv",
    )
    return field


def run_solve(
    config: ScenarioConfig,
    out: Optional[str | Path] = None,
    threads: int = 1,
    require_monotone: bool = False,
) -> DecouplingField:
    out_dir = output_dir(config, out)
    if require_monotone:
        report = _probe(config, threads)
        write_json(report, out_dir / "probe.json")
        if not (report.w0.passed and report.joint.passed):
            raise MonotonicityGateError(
                f"monotonicity gate refused the scenario: W0 quotient {report.w0.min_quotient:.4g}, "
                f"joint quotient {report.joint.min_quotient:.4g} (witness seeds "
                f"{report.w0.worst_pair_seed}, {report.joint.worst_pair_seed})"
            )

    field = _solve_into(config, out_dir, threads)
    cs = build_coefficients(config.coefficients)
    z_report = propagation_check(
        field, field.times, config.probe.sampler, config.probe.n_pairs, derive_seed(config.seed, "propagation"),
        config.dim, threads=threads,
    )
    write_json(z_report, out_dir / "propagation.json")
    if field.converged:
        paths = build_fbsde_paths(field, cs, config)
        write_table(paths.residuals, out_dir / "fbsde_residuals.csv")
    write_manifest(config, "solve", out_dir)
    return field


def _growth_flow(config: ScenarioConfig, cs: CoefficientSet, field: DecouplingField, flow_index: int) -> MeasureFlow:
    """Forward flow under the solved field, conditional on a shared path when beta > 0."""
    mu0 = initial_measures(config)[flow_index]
    seed = derive_seed(config.seed, "growth-flow", flow_index)
    if config.beta > 0:
        return simulate_conditional_common_noise(
            cs, field, mu0, config.T, config.dt, config.N, config.sigma_x, config.beta, seed
        )
    return simulate_mckean(cs, field, mu0, config.T, config.dt, config.N, config.sigma_x, seed)


def _theta_rows(config: ScenarioConfig) -> list[dict]:
    spec = config.theta
    path = simulate_theta(
        spec.drift, spec.diffusion, np.broadcast_to(spec.theta0, (config.dim,)), config.T, config.dt,
        derive_seed(config.seed, "theta"), drift_rate=spec.drift_rate, diffusion_scale=spec.diffusion_scale,
    )
    return [
        {"t": float(t), **{f"theta_{i}": float(v) for i, v in enumerate(values)}}
        for t, values in zip(path.times, path.values)
    ]


def run_verify_estimates(
    config: ScenarioConfig,
    out: Optional[str | Path] = None,
    threads: int = 1,
    solve_first: bool = False,
) -> list[EstimateReport]:
    out_dir = output_dir(config, out)
    cs = build_coefficients(config.coefficients)
    try:
        field = read_field(out_dir / FIELD_DIR, expected_hash=config_hash(config), terminal=cs.W0)
    except MissingFieldError:
        if not solve_first:
            raise
        logger.info("no stored field for this config, solving first")
        field = _solve_into(config, out_dir, threads)

    flow_index = config.estimates.flow_index
    reports = [
        stability_harness(field, cs, config, flow_index=flow_index),
        measure_stability_harness(field, cs, config, flow_index=flow_index),
    ]
    for report in reports:
        rows = [
            {**row.model_dump(), "fitted_exponent": report.fitted_exponent, "predicted_exponent": report.predicted_exponent}
            for row in report.rows
        ]
        write_table(rows, out_dir / f"estimates_{report.harness}.csv")
        write_json(report, out_dir / f"estimates_{report.harness}.json")

    flow = _growth_flow(config, cs, field, flow_index)
    write_flow(flow, out_dir / FLOW_DIR, config_hash(config))
    if config.beta > 0:
        write_table(_theta_rows(config), out_dir / "theta.csv")
    stats = FlowStatistics(
        second_moment_growth=second_moment_growth(flow, initial_measures(config)[flow_index]),
        time_continuity_ratio=time_continuity_ratio(flow),
        dt=config.dt,
        N=config.N,
    )
    write_json(stats, out_dir / "flow_statistics.json")
    write_manifest(config, "verify-estimates", out_dir)
    return reports


def run_regularize(config: ScenarioConfig, out: Optional[str | Path] = None) -> RegularizationCertificate:
    out_dir = output_dir(config, out)
    spec = config.regularize
    base = build_base_map(spec.base, spec.params)
    if spec.shift:
        base = shifted(base, spec.shift)
    rows = convergence_sweep(
        base, spec.epsilons, spec.compact, config.dim, spec.n_pairs, derive_seed(config.seed, "regularize"),
        spec.solver_tol, spec.max_iter,
    )
    growth_constant = spec.growth_constant if spec.growth_constant is not None else base.growth_constant
    if spec.growth_constant is None and growth_constant is not None:
        beyond = [e for e in spec.epsilons if growth_constant * e >= 1.0]
        if beyond:
            logger.warning(
                "%s has growth constant %.4g: no growth bound for epsilon in %s", base.name, growth_constant, beyond
            )
    bounds = [
        (1.0 + growth_constant) / (1.0 - growth_constant * r.epsilon)
        if growth_constant is not None and growth_constant * r.epsilon < 1.0 else None
        for r in rows
    ]
    certificate = RegularizationCertificate(
        base=base.name,
        growth_constant=growth_constant,
        rows=rows,
        lipschitz_ok=[r.lipschitz_quotient <= 1.0 / r.epsilon + 1e-6 for r in rows],
        growth_bounds=bounds,
        growth_ok=[None if b is None else r.growth_ratio <= b for r, b in zip(rows, bounds)],
        sup_error_decreasing=all(b.sup_error < a.sup_error for a, b in zip(rows, rows[1:])),
    )
    write_table(rows, out_dir / "sweep.csv")
    write_json(certificate, out_dir / "certificate.json")
    write_manifest(config, "regularize", out_dir)
    return certificate


def run_oracle_compare(config: ScenarioConfig, out: Optional[str | Path] = None, threads: int = 1) -> list[OracleCompareRow]:
    out_dir = output_dir(config, out)
    cs = build_coefficients(config.coefficients)
    if cs.name != "lq":
        raise UnsupportedFamilyError(f"oracle comparison needs the lq family, got {cs.name!r}")
    if config.dim != 1:
        raise UnsupportedFamilyError("the Riccati oracle is scalar: dim must be 1")
    params = LQParams.from_coefficients(cs, config.T)
    grid = config.oracle_compare
    finest = min(grid.dts)
    path = riccati_solve(params, finest)
    oracle = oracle_field(params, path)

    rows = []
    for dt in grid.dts:
        for n in grid.particles:
            for m in grid.replicas:
                scenario = with_overrides(config, dt=dt, N=n, M=m)
                field = picard_solve(cs, scenario, threads=threads)
                row = OracleCompareRow(
                    dt=dt, N=n, M=m, sup_error=sup_table_error(field, oracle),
                    iterations=field.iteration_count, converged=field.converged,
                )
                logger.info("oracle compare dt=%g N=%d M=%d: sup error %.3e", dt, n, m, row.sup_error)
                rows.append(row)

    write_table(rows, out_dir / "oracle_compare.csv")
    write_table(
        [{"t": t, "a": a, "b": b} for t, a, b in zip(path.times, path.a, path.b)],
        out_dir / "riccati.csv",
    )
    means = [-1.0, 0.0, 1.0]
    xs = [-2.0, -1.0, 0.0, 1.0, 2.0]
    write_json(
        {
            "params": params.model_dump(),
            "monotone": params.monotone,
            "path_monotone": path.monotone,
            "pde_residual": pde_residual(params, path, xs, means, sigma_x=config.sigma_x),
        },
        out_dir / "oracle.json",
    )
    write_manifest(config, "oracle-compare", out_dir)
    return rows
