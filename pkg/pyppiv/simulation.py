"""Synthetic provider panels, missingness and Monte-Carlo scenario runs."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from pyppiv.exceptions import (
    InvalidProbability,
    NonBracketingError,
    PyppivException,
    PyppivValueError,
    ReplicationError,
)
from pyppiv.models import (
    BENCHMARKS,
    TRUE_BETA,
    BaseModel,
    ChangeType,
    GenCoefficients,
    Generator,
    Link,
    MetricsRow,
    Missingness,
    PanelDataset,
    ReplicationRow,
    ScenarioConfig,
    parse_method,
)
from pyppiv.models.panel import CovariateSchema, default_time_index
from pyppiv.numerics import expit
from pyppiv.pipeline import run_method


logger = logging.getLogger(__name__)

STATED_CHANGE_RATE = 0.57
"""Share of changing providers quoted alongside the default switch probabilities."""
LINEAR_CLAMP = (0.001, 0.999)
SIMULATED_SCHEMA = CovariateSchema(obs=["w2"], miss=["w1"])


def replication_seed(master: int, cell: int, rep: int, stream: int = 0) -> int:
    """Seed of one replication stream, independent of execution order.

    Args:
        master: Study seed.
        cell: Index of the scenario cell.
        rep: Replication index.
        stream: Sub-stream (0 for the population, 1 for missingness).

    Returns:
        A 32 bit seed.

    """
    return int(np.random.SeedSequence([master, cell, rep, stream]).generate_state(1)[0])


def _probability(eta: np.ndarray, link: Link) -> np.ndarray:
    if Link(link) is Link.LOGIT:
        prob = expit(eta)
    else:
        prob = np.clip(eta, *LINEAR_CLAMP)
    if not np.isfinite(prob).all():
        raise InvalidProbability("treatment probability is not finite")
    return prob


def _base_draws(
    config: ScenarioConfig, rng: np.random.Generator
) -> Dict[str, np.ndarray]:
    cov = config.coefficients.covariates
    n_providers, n_j = config.n_providers, config.n_j
    provider = np.repeat(np.arange(n_providers), n_j)
    mu = rng.normal(0.0, cov.mu_sd, size=(n_providers, 2))
    w = mu[provider] + rng.normal(0.0, cov.w_sd, size=(provider.size, 2))
    u = rng.normal(0.0, cov.u_sd, size=provider.size)
    return {
        "provider": provider,
        "rank": np.tile(np.arange(1, n_j + 1), n_providers),
        "w1": w[:, 0],
        "w2": w[:, 1],
        "u": u,
        "time": default_time_index(provider),
    }


def _switch_window(n_j: int, low: float, high: float) -> Tuple[int, int]:
    lo = max(1, math.ceil(low * n_j))
    hi = max(lo, math.floor(high * n_j))
    return lo, hi


def _population_arrays(config: ScenarioConfig, seed: int) -> Dict[str, Any]:
    """Draw every array of a population; the draw order is fixed."""
    rng = np.random.default_rng(seed)
    coefs = config.coefficients
    draws = _base_draws(config, rng)
    provider = draws["provider"]
    n_providers = config.n_providers

    if Generator(config.generator) is Generator.A:
        pp = coefs.pp_process
        xa = coefs.x_model_a
        initial = rng.random(n_providers) < pp.p_initial_b
        switch_p = np.where(initial, pp.p_switch_b_to_a, pp.p_switch_a_to_b)
        switches = rng.random(n_providers) < switch_p
        lo, hi = _switch_window(config.n_j, pp.switch_window_low, pp.switch_window_high)
        i_star = rng.integers(lo, hi + 1, size=n_providers)
        flipped = switches[provider] & (draws["rank"] > i_star[provider])
        true_pp = np.where(flipped, ~initial[provider], initial[provider]).astype(float)
        eta = (
            xa.gamma_x0
            + xa.beta_pp * true_pp
            + xa.gamma_xu * draws["u"]
            + xa.gamma_xw1 * draws["w1"]
            + xa.gamma_xw2 * draws["w2"]
        )
        draws.update(true_pp=true_pp, true_theta=None, switched=switches)
    else:
        xb = coefs.x_model_b
        effects = rng.multivariate_normal(
            np.zeros(2), xb.omega_matrix, size=n_providers
        )
        theta = (
            xb.gamma_x0
            + effects[provider, 0]
            + (xb.gamma_xt + effects[provider, 1]) * draws["time"]
        )
        eta = (
            theta
            + xb.gamma_xu * draws["u"]
            + xb.gamma_xw1 * draws["w1"]
            + xb.gamma_xw2 * draws["w2"]
        )
        draws.update(true_pp=None, true_theta=theta, effects=effects)

    prob_x = _probability(eta, config.link)
    x = (rng.random(provider.size) < prob_x).astype(float)
    ym = coefs.y_model
    noise = rng.normal(0.0, 1.0, size=provider.size)
    y = (
        ym.gamma_y0
        + ym.beta * x
        + ym.gamma_yw1 * draws["w1"]
        + ym.gamma_yw2 * draws["w2"]
        + ym.gamma_yu * draws["u"]
        + ym.sigma_y * noise
    )
    draws.update(prob_x=prob_x, x=x, y=y)
    return draws


def _to_dataset(config: ScenarioConfig, draws: Dict[str, Any]) -> PanelDataset:
    width = len(str(config.n_providers))
    labels = np.array([f"p{j + 1:0{width}d}" for j in range(config.n_providers)])
    return PanelDataset.build(
        provider_labels=labels[draws["provider"]],
        order_index=draws["rank"],
        x=draws["x"],
        y=draws["y"],
        w_obs=draws["w2"][:, None],
        w_miss=draws["w1"][:, None],
        covariate_schema=SIMULATED_SCHEMA,
        time_index=draws["time"],
        true_pp=draws["true_pp"],
        true_theta=draws["true_theta"],
        u=draws["u"],
        w_miss_full=draws["w1"][:, None],
        generator=Generator(config.generator).value,
    )


def gen_population_A(config: ScenarioConfig, seed: int) -> PanelDataset:  # noqa: N802
    """Population whose treatment follows a binary provider preference.

    Each provider starts preferring B with ``p_initial_b``; it switches once
    with the state dependent switch probability, after a change time drawn
    uniformly over integer ranks in the switch window.

    Args:
        config: Scenario with ``generator = A``.
        seed: Seed of the population stream.

    Returns:
        The complete `PanelDataset` with ``true_pp`` and ``u``.

    Raises:
        PyppivValueError: If the scenario is not for generator A.

    """
    if Generator(config.generator) is not Generator.A:
        raise PyppivValueError("gen_population_A needs a generator A scenario")
    draws = _population_arrays(config, seed)
    logger.debug(
        "generator A: %.3f of providers change preference (expected %.3f)",
        float(np.mean(draws["switched"])),
        expected_change_rate(config.coefficients),
    )
    return _to_dataset(config, draws)


def gen_population_B(config: ScenarioConfig, seed: int) -> PanelDataset:  # noqa: N802
    """Population whose treatment follows provider random intercepts and time slopes.

    Args:
        config: Scenario with ``generator = B``.
        seed: Seed of the population stream.

    Returns:
        The complete `PanelDataset` with ``true_theta`` and ``u``.

    Raises:
        PyppivValueError: If the scenario is not for generator B.

    """
    if Generator(config.generator) is not Generator.B:
        raise PyppivValueError("gen_population_B needs a generator B scenario")
    return _to_dataset(config, _population_arrays(config, seed))


def generate_population(config: ScenarioConfig, seed: int) -> PanelDataset:
    """Population of the scenario's generator.

    Args:
        config: The scenario.
        seed: Seed of the population stream.

    Returns:
        The complete `PanelDataset`.

    """
    if Generator(config.generator) is Generator.A:
        return gen_population_A(config, seed)
    return gen_population_B(config, seed)


def expected_change_rate(coefficients: GenCoefficients) -> float:
    """Expected share of providers that change preference.

    Args:
        coefficients: Coefficients holding the preference process.

    Returns:
        ``p_B * p(B->A) + (1 - p_B) * p(A->B)``.

    """
    pp = coefficients.pp_process
    from_b = pp.p_initial_b * pp.p_switch_b_to_a
    return float(from_b + (1 - pp.p_initial_b) * pp.p_switch_a_to_b)


def empirical_change_rate(dataset: PanelDataset) -> float:
    """Share of providers whose simulated preference changes.

    Args:
        dataset: A generator A panel.

    Returns:
        The share of providers with more than one preference value.

    """
    pp = np.asarray(dataset.true_pp)
    first = pp[dataset.provider_bounds()[:-1]]
    changed = np.bincount(
        dataset.provider,
        weights=(pp != first[dataset.provider]),
        minlength=dataset.n_providers,
    )
    return float(np.mean(changed > 0))


def apply_mcar(dataset: PanelDataset, rate: float, seed: int) -> PanelDataset:
    """Mask the first partially observed covariate completely at random.

    Args:
        dataset: A complete panel.
        rate: Masking probability.
        seed: Seed of the missingness stream.

    Returns:
        The masked panel.

    Raises:
        PyppivValueError: If ``rate`` is outside ``[0, 1)``.

    """
    if not 0.0 <= rate < 1.0:
        raise PyppivValueError(f"missing rate must lie in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    r = np.zeros(dataset.w_miss.shape, dtype=bool)
    r[:, 0] = rng.random(dataset.n_records) < rate
    return dataset.with_missing(r)


def mnar_probability(
    dataset: PanelDataset, coefficients: GenCoefficients, seed: int
) -> np.ndarray:
    """Probability that the first partially observed covariate goes missing.

    The probability is the product of a patient factor (covariates, confounder
    and standardized outcome) and a provider factor driven by ``V``.

    Args:
        dataset: A complete simulated panel carrying ``u``.
        coefficients: Coefficients holding the missingness model.
        seed: Seed of the missingness stream.

    Returns:
        Per-row probabilities.

    Raises:
        PyppivValueError: If the panel carries no confounder.

    """
    if dataset.u is None:
        raise PyppivValueError("MNAR masking needs the simulated confounder")
    m = coefficients.mnar_model
    rng = np.random.default_rng(seed)
    if m.v_level == "provider":
        v = rng.uniform(m.v_low, m.v_high, size=dataset.n_providers)[dataset.provider]
    else:
        v = rng.uniform(m.v_low, m.v_high, size=dataset.n_records)
    full = dataset.w_miss if dataset.w_miss_full is None else dataset.w_miss_full
    w1, w2 = full[:, 0], dataset.w_obs[:, 0]
    y = np.asarray(dataset.y)
    y_star = (y - y.mean()) / y.std()
    patient = expit(
        m.gamma_r0
        + m.gamma_rw1 * w1
        + m.gamma_rw2 * w2
        + m.gamma_ru * dataset.u
        + m.gamma_rystar * y_star
    )
    provider = expit(
        m.gamma_r0 + m.gamma_rv * v + m.gamma_rvw1 * v * w1 + m.gamma_rvw2 * v * w2
    )
    return patient * provider


def apply_mnar(
    dataset: PanelDataset, coefficients: GenCoefficients, seed: int
) -> PanelDataset:
    """Mask the first partially observed covariate not at random.

    Args:
        dataset: A complete simulated panel carrying ``u``.
        coefficients: Coefficients holding the missingness model.
        seed: Seed of the missingness stream.

    Returns:
        The masked panel.

    """
    prob = mnar_probability(dataset, coefficients, seed)
    # separate stream so the probabilities stay common across calibration steps
    rng = np.random.default_rng([seed, 1])
    r = np.zeros(dataset.w_miss.shape, dtype=bool)
    r[:, 0] = rng.random(dataset.n_records) < prob
    return dataset.with_missing(r)


def apply_missingness(
    dataset: PanelDataset, config: ScenarioConfig, seed: int
) -> PanelDataset:
    """Apply the scenario's missingness mechanism.

    Args:
        dataset: A complete simulated panel.
        config: The scenario.
        seed: Seed of the missingness stream.

    Returns:
        The (possibly) masked panel.

    """
    mechanism = Missingness(config.missingness)
    if mechanism is Missingness.MCAR:
        return apply_mcar(dataset, config.target_missing_rate, seed)
    if mechanism is Missingness.MNAR:
        return apply_mnar(dataset, config.coefficients, seed)
    return dataset


def simulate_replication(config: ScenarioConfig, rep: int) -> Tuple[PanelDataset, int]:
    """Population of one replication after missingness.

    Args:
        config: The scenario.
        rep: Replication index.

    Returns:
        The panel and the replication seed.

    Raises:
        ReplicationError: If generation fails.

    """
    seed = replication_seed(config.seed, config.cell, rep)
    try:
        data = generate_population(config, seed)
        mask_seed = replication_seed(config.seed, config.cell, rep, 1)
        data = apply_missingness(data, config, mask_seed)
    except PyppivException as exc:
        context = {"cell": config.label, "rep": rep}
        raise ReplicationError(seed, str(exc), context) from exc
    return data, seed


class ReplicationOutcome(BaseModel):
    """Rows of one replication plus its change-point bookkeeping.

    Attributes:
        rows: One `ReplicationRow` per method.
        change_counts: Counts of detected change types for ``star``.
        change_rate: Share of providers whose simulated preference changed.
    """

    pass


def run_replication(
    config: ScenarioConfig, methods: Sequence[str], rep: int
) -> ReplicationOutcome:
    """Generate one replication and run every method and benchmark on it.

    Method failures are recorded on their row and do not stop the replication.

    Args:
        config: The scenario.
        methods: Construction method names.
        rep: Replication index.

    Returns:
        The `ReplicationOutcome`.

    """
    data, seed = simulate_replication(config, rep)
    cell = {
        "generator": Generator(config.generator).value,
        "n_j": config.n_j,
        "missingness": Missingness(config.missingness).value,
        "rep": rep,
        "seed": seed,
    }
    rows = []
    counts = {ChangeType.A_TO_B.value: 0, ChangeType.B_TO_A.value: 0, "none": 0}
    for method in scenario_methods(methods):
        try:
            result = run_method(data, method, config.se_kind)
        except PyppivException as exc:
            logger.debug("%s rep %d %s failed: %s", config.label, rep, method, exc)
            rows.append(
                ReplicationRow(
                    method=method,
                    beta_hat=np.nan,
                    se=np.nan,
                    ci_low=np.nan,
                    ci_high=np.nan,
                    f_statistic=np.nan,
                    n_used=0,
                    j_used=0,
                    error=str(exc) or type(exc).__name__,
                    **cell,
                )
            )
            continue
        if method == "star":
            for decision in result.diagnostics.decisions:
                counts[decision.change_type.value if decision.changed else "none"] += 1
        rows.append(
            ReplicationRow(
                method=method,
                beta_hat=result.beta_hat,
                se=result.se,
                ci_low=result.ci_low,
                ci_high=result.ci_high,
                f_statistic=result.f_statistic,
                n_used=result.n_used,
                j_used=result.j_used,
                error="",
                **cell,
            )
        )
    rate = empirical_change_rate(data) if data.true_pp is not None else float("nan")
    return ReplicationOutcome(rows=rows, change_counts=counts, change_rate=rate)


def scenario_methods(methods: Sequence[str]) -> List[str]:
    """Canonical method list with the benchmarks appended once.

    Args:
        methods: Construction method names.

    Returns:
        Methods followed by ``observational``, ``pp`` and ``pp_cc``.

    """
    names = [parse_method(m) for m in methods]
    return [m for m in names if m not in BENCHMARKS] + list(BENCHMARKS)


class ScenarioResult(BaseModel):
    """Aggregated and replication level results of one scenario.

    Attributes:
        scenario: The `ScenarioConfig`.
        metrics: One `MetricsRow` per method.
        replications: Every `ReplicationRow`, ordered by replication index.
        change_counts: Detected change types summed over replications.
        change_rate: Mean share of providers whose preference changed.
    """

    pass


def _map(
    func: Callable[[int], ReplicationOutcome], reps: Iterable[int], n_workers: int
) -> Iterable[ReplicationOutcome]:
    if n_workers <= 1:
        return map(func, reps)
    executor = ProcessPoolExecutor(max_workers=n_workers)
    try:
        return list(executor.map(func, reps))
    finally:
        executor.shutdown()


def run_scenario(
    scenario: ScenarioConfig,
    methods: Sequence[str],
    n_workers: int = 1,
    progress: bool = False,
) -> ScenarioResult:
    """Run every replication of a scenario and aggregate the metrics.

    Replication seeds depend only on the master seed, cell and replication
    index, so results do not depend on ``n_workers``.

    Args:
        scenario: The scenario.
        methods: Construction method names; benchmarks are always added.
        n_workers: Worker processes; 1 runs in process.
        progress: Show a progress bar.

    Returns:
        The `ScenarioResult`.

    """
    logger.info("running %s with %d replications", scenario.label, scenario.n_reps)
    func = partial(run_replication, scenario, list(methods))
    outcomes = list(
        tqdm(
            _map(func, range(scenario.n_reps), n_workers),
            total=scenario.n_reps,
            desc=scenario.label,
            disable=not progress,
        )
    )
    rows = [row for outcome in outcomes for row in outcome.rows]
    counts: Dict[str, int] = {}
    for outcome in outcomes:
        for key, value in outcome.change_counts.__dict__.items():
            counts[key] = counts.get(key, 0) + value
    rates = [o.change_rate for o in outcomes]
    rate = float(np.mean(rates)) if rates else float("nan")
    if Generator(scenario.generator) is Generator.A and outcomes:
        expected = expected_change_rate(scenario.coefficients)
        logger.info(
            "%s: %.3f of providers changed preference "
            "(expected %.3f, often quoted as %.2f)",
            scenario.label,
            rate,
            expected,
            STATED_CHANGE_RATE,
        )
    return ScenarioResult(
        scenario=scenario,
        metrics=aggregate(rows),
        replications=rows,
        change_counts=counts,
        change_rate=rate,
    )


def aggregate(
    rows: Sequence[ReplicationRow], beta: float = TRUE_BETA
) -> List[MetricsRow]:
    """Performance metrics per cell and method.

    Failed replications are excluded and counted.

    Args:
        rows: Replication rows of one or more cells.
        beta: True treatment effect.

    Returns:
        One `MetricsRow` per (cell, method) in order of first appearance.

    """
    groups: Dict[Tuple[str, int, str, str], List[ReplicationRow]] = {}
    for row in rows:
        key = (row.generator, row.n_j, row.missingness, row.method)
        groups.setdefault(key, []).append(row)

    out = []
    for (generator, n_j, missingness, method), group in groups.items():
        ok = [r for r in group if r.ok]
        est = np.array([r.beta_hat for r in ok], dtype=float)
        n = est.size
        if n:
            bias = float(est.mean() - beta)
            mcse = float(est.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
            covered = [r.ci_low <= beta <= r.ci_high for r in ok]
            coverage = 100.0 * float(np.mean(covered))
            rmse = float(np.sqrt(np.mean((est - beta) ** 2)))
            mean_f = float(np.mean([r.f_statistic for r in ok]))
        else:
            bias = mcse = coverage = rmse = mean_f = float("nan")
        out.append(
            MetricsRow(
                generator=generator,
                n_j=n_j,
                missingness=missingness,
                method=method,
                bias=bias,
                mcse=mcse,
                coverage=coverage,
                rmse=rmse,
                mean_f=mean_f,
                n_reps=n,
                n_failed=len(group) - n,
            )
        )
    return out


def cell_label(generator: str, n_j: int, missingness: str) -> str:
    """Column label of a scenario cell.

    Args:
        generator: ``"A"`` or ``"B"``.
        n_j: Patients per provider.
        missingness: Missingness mechanism.

    Returns:
        For example ``"A/408/none"``.

    """
    return f"{generator}/{n_j}/{missingness}"


def f_stat_table(metrics: Sequence[MetricsRow]) -> pd.DataFrame:
    """Mean first-stage F per method (rows) and scenario cell (columns).

    Args:
        metrics: Metrics rows of one or more cells.

    Returns:
        A DataFrame in order of first appearance; the observational estimate
        has no first stage and is left out.

    """
    methods: List[str] = []
    cells: List[str] = []
    values: Dict[Tuple[str, str], float] = {}
    for row in metrics:
        if row.method == "observational":
            continue
        cell = cell_label(row.generator, row.n_j, row.missingness)
        if row.method not in methods:
            methods.append(row.method)
        if cell not in cells:
            cells.append(cell)
        values[(row.method, cell)] = row.mean_f
    data = [[values.get((m, c), np.nan) for c in cells] for m in methods]
    return pd.DataFrame(data, index=pd.Index(methods, name="method"), columns=cells)


class CalibrationResult(BaseModel):
    """Calibrated coefficients and the audit of every adjusted parameter.

    Attributes:
        coefficients: The calibrated `GenCoefficients`.
        audit: One mapping per parameter with target, achieved value and steps.
    """

    pass


DEFAULT_TARGETS = {
    Generator.A: {"p_treated": 0.42, "var_y": 7.7, "missing_rate": 0.40},
    Generator.B: {"p_treated": 0.56, "var_y": 6.9, "missing_rate": 0.40},
}
TOLERANCES = {"p_treated": 1e-4, "var_y": 1e-3, "missing_rate": 1e-4}


def default_targets(generator: Generator) -> Dict[str, float]:
    """Treated share, outcome variance and missing rate targets of a generator.

    Args:
        generator: The generator.

    Returns:
        A mutable copy of the targets.

    """
    return dict(DEFAULT_TARGETS[Generator(generator)])


def _bisect(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float,
    name: str,
    max_iter: int = 80,
) -> Tuple[float, float, int]:
    """Root of an increasing function by bisection."""
    f_lo, f_hi = func(lo), func(hi)
    if f_lo > 0 or f_hi < 0:
        raise NonBracketingError(
            f"{name}: target not reachable in [{lo:g}, {hi:g}] "
            f"(offsets {f_lo:+.4g}, {f_hi:+.4g})"
        )
    mid, f_mid = lo, f_lo
    for step in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        f_mid = func(mid)
        if abs(f_mid) <= tol or hi - lo < 1e-10:
            return mid, f_mid, step
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    return mid, f_mid, max_iter


def _with(coefs: GenCoefficients, block: str, **values: float) -> GenCoefficients:
    updated = getattr(coefs, block).replace(**values)
    return coefs.replace(**{block: updated})  # type: ignore


def calibrate(
    config: ScenarioConfig,
    targets: Optional[Dict[str, float]] = None,
    n_large: int = 100_000,
    seed: int = 0,
) -> CalibrationResult:
    """Tune free intercepts and the outcome noise to hit population targets.

    The treatment intercept is tuned to the treated share, then the outcome
    noise to the outcome variance, then the missingness intercept to the
    missing rate. Every step uses common random numbers on one population of
    at least ``n_large`` records, so each target is monotone in its parameter.

    Args:
        config: Scenario whose generator and coefficients are calibrated.
        targets: ``p_treated``, ``var_y`` and ``missing_rate``; defaults per
            generator. Missing keys are skipped.
        n_large: Smallest population size.
        seed: Seed of the calibration population.

    Returns:
        The `CalibrationResult`.

    Raises:
        NonBracketingError: If a target cannot be reached.

    """
    generator = Generator(config.generator)
    targets = default_targets(generator) if targets is None else dict(targets)
    n_providers = max(config.n_providers, math.ceil(n_large / config.n_j))
    big = config.replace(n_providers=n_providers)  # type: ignore
    coefs = config.coefficients
    x_block = "x_model_a" if generator is Generator.A else "x_model_b"
    audit: List[Dict[str, Any]] = []

    def _draws(c: GenCoefficients) -> Dict[str, Any]:
        return _population_arrays(big.replace(coefficients=c), seed)  # type: ignore

    if "p_treated" in targets:
        target = targets["p_treated"]

        def treated(value: float) -> float:
            draws = _draws(_with(coefs, x_block, gamma_x0=value))
            return float(np.mean(draws["prob_x"])) - target

        value, offset, steps = _bisect(
            treated, -8.0, 8.0, TOLERANCES["p_treated"], "gamma_x0"
        )
        coefs = _with(coefs, x_block, gamma_x0=value)
        audit.append(
            _audit_row(
                f"{x_block}.gamma_x0", "p_treated", target, offset, value, steps
            )
        )

    if "var_y" in targets:
        target = targets["var_y"]

        def variance(value: float) -> float:
            draws = _draws(_with(coefs, "y_model", sigma_y=value))
            return float(np.var(draws["y"])) - target

        value, offset, steps = _bisect(
            variance, 0.0, 10.0, TOLERANCES["var_y"], "sigma_y"
        )
        coefs = _with(coefs, "y_model", sigma_y=value)
        audit.append(
            _audit_row("y_model.sigma_y", "var_y", target, offset, value, steps)
        )

    if "missing_rate" in targets:
        target = targets["missing_rate"]
        population = _to_dataset(big, _draws(coefs))

        def missing(value: float) -> float:
            trial = _with(coefs, "mnar_model", gamma_r0=value)
            return float(np.mean(mnar_probability(population, trial, seed))) - target

        value, offset, steps = _bisect(
            missing, -10.0, 10.0, TOLERANCES["missing_rate"], "gamma_r0"
        )
        coefs = _with(coefs, "mnar_model", gamma_r0=value)
        audit.append(
            _audit_row(
                "mnar_model.gamma_r0", "missing_rate", target, offset, value, steps
            )
        )

    for row in audit:
        logger.info(
            "calibrated %s = %.6g (%s target %.4g, achieved %.6g)",
            row["parameter"],
            row["value"],
            row["target_name"],
            row["target"],
            row["achieved"],
        )
    return CalibrationResult(coefficients=coefs.replace(calibrated=True), audit=audit)


def _audit_row(
    parameter: str,
    target_name: str,
    target: float,
    offset: float,
    value: float,
    steps: int,
) -> Dict[str, Any]:
    return {
        "parameter": parameter,
        "target_name": target_name,
        "target": target,
        "achieved": target + offset,
        "value": value,
        "iterations": steps,
    }
