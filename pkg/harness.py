"""Sweep configuration, the gap-grid experiment runner, reports and verification suites."""

import hashlib
import json
import logging
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import settings
from contrastive import linear_encoder, pairwise_linear_map, train_contrastive
from dataset_io import load_latents_csv, results_frame, write_frame
from dgp import (
    MAX_RESAMPLES,
    apply_coupling_flow,
    apply_covariate_mlp,
    assemble_eval,
    assemble_observational,
    assemble_simulator,
    build_linear_pair,
    draw_latent_rows,
    generate_eval,
    generate_observational,
    generate_simulator_cf,
    mix_coupling_flows,
    mix_covariate_mlps,
    new_coupling_flow,
    new_covariate_mlp,
    sample_gp_outcome_functions,
    sample_latents,
    standardize_latents,
    synthesize_semisynthetic_sim_outcomes,
)
from errors import ArgumentError, ConfigError, RegenerationError
from linear_estimators import (
    analytic_cate_error,
    fit_mu_only_linear,
    fit_real_only_linear,
    fit_sim_only_linear,
    fit_simponet_linear,
    predict_cate,
)
from metrics import (
    cate_error,
    check_decomposition_bound,
    check_generalization_bound,
    factual_error,
    paired_t_test_one_sided,
    rank_within,
    sim_effect_head,
)
from models import (
    REPORT_COLUMNS,
    AltMinConfig,
    CateModel,
    CouplingFlow,
    CovariateMlp,
    DgpKind,
    Encoder,
    EncoderKind,
    EstimatorKind,
    EvalDataset,
    ExtractorMode,
    GapConfig,
    GpOutcomeSpec,
    LinearDgpPair,
    ObservationalDataset,
    RecoveryMethod,
    ReportRow,
    SimEffect,
    SimulatorDataset,
    SweepConfig,
    SweepResultRow,
    VerificationCheck,
)
from nn_trainer import select_lambda_f, stratified_split, train_cate_nn

logger = logging.getLogger(__name__)

LAMBDA_F_FLOOR = 1e-8
ANALYTIC_REL_TOL = 1e-6
DECOMPOSITION_TOL = 1e-9
GENERALIZATION_TOL = 1e-6
DESCENT_SLACK = 1e-9


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _key_path(loc: Sequence[Union[str, int]]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def parse_config(data: dict) -> SweepConfig:
    try:
        return SweepConfig.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(f"{_key_path(e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"invalid sweep config: {problems}") from exc


def load_config(path: Union[str, Path]) -> SweepConfig:
    """
    Load a sweep config from JSON.

    Unknown keys, bad values and malformed JSON all raise ConfigError with
    the offending key path or file position.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path} at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return parse_config(data)


def resolve_threads(cfg: SweepConfig, override: Optional[int] = None) -> int:
    return override or cfg.threads or settings.threads


def resolve_output_dir(cfg: SweepConfig, override: Optional[str] = None) -> Path:
    return Path(override or cfg.output_dir or settings.output_dir)


def cell_seed(base_seed: int, gaps: GapConfig) -> int:
    """Stable 64-bit seed for one (seed, gap cell) pair"""
    payload = struct.pack("<qddd", base_seed, gaps.gamma_r, gaps.gamma_rs, gaps.gamma_tau)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


# ---------------------------------------------------------------------------
# Data for one cell
# ---------------------------------------------------------------------------


class CellData(NamedTuple):
    d_trn: ObservationalDataset
    d_syn: SimulatorDataset
    d_tst: EvalDataset
    spec: Optional[LinearDgpPair]
    z_trn: Optional[np.ndarray] = None
    z_syn: Optional[np.ndarray] = None


def _retry_arms(draw):
    for attempt in range(MAX_RESAMPLES + 1):
        try:
            return draw()
        except RegenerationError:
            if attempt == MAX_RESAMPLES:
                raise
            logger.warning("Empty treatment arm, redrawing assignment (attempt %d)", attempt + 1)


CovariateMap = Union[np.ndarray, CouplingFlow, CovariateMlp]


def _apply_map(covariate_map: CovariateMap, z: np.ndarray) -> np.ndarray:
    if isinstance(covariate_map, CouplingFlow):
        return apply_coupling_flow(covariate_map, z)
    if isinstance(covariate_map, CovariateMlp):
        return apply_covariate_mlp(covariate_map, z)
    return z @ covariate_map


def _render(maps: Sequence[CovariateMap], z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Covariates of latent rows under both treatments"""
    return _apply_map(maps[0], z), _apply_map(maps[1], z)


def _nonlinear_maps(
    cfg: SweepConfig, gaps: GapConfig, n_z: int, rng: np.random.Generator
) -> Tuple[Tuple[CovariateMap, CovariateMap], Tuple[CovariateMap, CovariateMap]]:
    """Real and simulator maps mixed away from a shared base by the gap dials"""
    if cfg.dgp_kind == DgpKind.FLOW:
        new, mix = (lambda: new_coupling_flow(n_z, cfg.flow_layers, rng)), mix_coupling_flows
    else:
        hidden = cfg.covariate_hidden or n_z
        new, mix = (lambda: new_covariate_mlp(n_z, n_z, hidden, rng)), mix_covariate_mlps
    f0 = new()
    f1 = mix(f0, new(), gaps.gamma_r)
    s0 = mix(f0, new(), gaps.gamma_rs)
    s1 = mix(f1, new(), gaps.gamma_rs)
    return (f0, f1), (s0, s1)


def generate_cell(
    cfg: SweepConfig, gaps: GapConfig, rng: np.random.Generator, latent_pool: Optional[np.ndarray] = None
) -> CellData:
    """Build the DGP of one gap cell and sample D_trn, D_syn and D_tst from it"""
    n_z = latent_pool.shape[1] if latent_pool is not None else cfg.n_z

    def latents(n: int) -> np.ndarray:
        if latent_pool is not None:
            return draw_latent_rows(latent_pool, n, rng)
        return sample_latents(n, n_z, rng, cfg.latent_mode)

    if cfg.dgp_kind == DgpKind.LINEAR:
        spec = build_linear_pair(gaps, n_z, (cfg.sigma_y, cfg.sigma_ys), rng, cfg.propensity_scale)
        z_trn, z_syn, z_tst = latents(cfg.n_train), latents(cfg.n_sim), latents(cfg.n_test)
        d_trn = _retry_arms(lambda: generate_observational(spec, z_trn, rng))
        d_syn, d_tst = generate_simulator_cf(spec, z_syn, rng), generate_eval(spec, z_tst, rng)
        return CellData(d_trn, d_syn, d_tst, spec, z_trn, z_syn)

    # nonlinear outcomes share one function draw over every latent row
    if cfg.dgp_kind == DgpKind.GP:
        spec = build_linear_pair(gaps, n_z, (cfg.sigma_y, cfg.sigma_ys), rng, cfg.propensity_scale)
        real, sim = (spec.r(0), spec.r(1)), (spec.s(0), spec.s(1))
        direction = spec.propensity_direction
    else:
        spec = None
        real, sim = _nonlinear_maps(cfg, gaps, n_z, rng)
        direction = rng.standard_normal(n_z)
        direction = direction / np.linalg.norm(direction)

    z_trn, z_syn, z_tst = latents(cfg.n_train), latents(cfg.n_sim), latents(cfg.n_test)
    z_all = np.vstack([z_trn, z_syn, z_tst])
    gp_gap = gaps.gamma_tau if cfg.effect_mode == SimEffect.GP else 0.0
    draw = sample_gp_outcome_functions(
        z_all,
        GpOutcomeSpec(gamma_base=cfg.gp_gamma_base, gamma_tau_fn=cfg.gp_gamma_tau_fn, gamma_tau_gap=gp_gap),
        rng,
    )
    y1s = draw.y1s
    if cfg.effect_mode == SimEffect.SCALED_LINEAR:
        y1s = draw.y0s + synthesize_semisynthetic_sim_outcomes(draw.tau, z_all, gaps.gamma_tau, rng)

    trn = slice(0, cfg.n_train)
    syn = slice(cfg.n_train, cfg.n_train + cfg.n_sim)
    tst = slice(cfg.n_train + cfg.n_sim, z_all.shape[0])
    d_trn = _retry_arms(
        lambda: assemble_observational(
            z_trn, _render(real, z_trn), (draw.mu0[trn], draw.mu1[trn]), rng, cfg.sigma_y, cfg.propensity_scale, direction
        )
    )
    d_syn = assemble_simulator(_render(sim, z_syn), (draw.y0s[syn], y1s[syn]), rng, cfg.sigma_ys)
    d_tst = assemble_eval(z_tst, _render(real, z_tst), (draw.mu0[tst], draw.mu1[tst]), rng)
    return CellData(d_trn, d_syn, d_tst, spec, z_trn, z_syn)


def recover_extractors(
    cfg: SweepConfig, data: CellData, rng: np.random.Generator, mode: Optional[ExtractorMode] = None
) -> Encoder:
    """Simulator extractors f_tilde for an extractor mode (the config's own by default)"""
    mode = ExtractorMode(mode or cfg.extractor_mode)
    if mode == ExtractorMode.RAW:
        return linear_encoder((np.eye(data.d_syn.n_x), np.eye(data.d_syn.n_x)))
    if mode == ExtractorMode.LATENT:
        view = input_view(data, mode)
        return linear_encoder((np.eye(view.d_syn.n_x), np.eye(view.d_syn.n_x)))
    if mode == ExtractorMode.ORACLE:
        return pairwise_linear_map(data.d_syn, oracle=data.spec.s_inv)
    if cfg.recovery == RecoveryMethod.CLOSED_FORM:
        return pairwise_linear_map(data.d_syn)
    n_z = data.spec.n_z if data.spec is not None else data.d_syn.n_x
    encoder = train_contrastive(data.d_syn, cfg.contrastive, rng, n_z)
    if cfg.dgp_kind == DgpKind.LINEAR and encoder.kind == EncoderKind.LINEAR and encoder.normalize:
        # closed-form solvers work on the raw linear maps
        return linear_encoder((encoder.matrix(0), encoder.matrix(1)))
    return encoder


def input_view(data: CellData, mode: ExtractorMode) -> CellData:
    """
    The cell's datasets as estimators see them under an extractor mode.

    Latent mode swaps every covariate row for its ground-truth latent, both
    simulator arms included; other modes see the rendered covariates.
    """
    if ExtractorMode(mode) != ExtractorMode.LATENT:
        return data
    if data.z_trn is None or data.z_syn is None or data.d_tst.z is None:
        raise ArgumentError("latent inputs need the ground-truth latents of every dataset")
    d_trn = ObservationalDataset(x=data.z_trn, t=data.d_trn.t, y=data.d_trn.y)
    d_syn = SimulatorDataset(x0=data.z_syn, x1=data.z_syn, y0=data.d_syn.y0, y1=data.d_syn.y1)
    d_tst = EvalDataset(
        x=data.d_tst.z, t=data.d_tst.t, y0=data.d_tst.y0, y1=data.d_tst.y1, tau=data.d_tst.tau, z=data.d_tst.z
    )
    return data._replace(d_trn=d_trn, d_syn=d_syn, d_tst=d_tst)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


class FitContext:
    """Shared inputs of every estimator fitted on one (cell, seed, train fraction)"""

    def __init__(
        self,
        cfg: SweepConfig,
        d_trn: ObservationalDataset,
        d_syn: SimulatorDataset,
        f_tilde: Encoder,
        seed: int,
        fraction_index: int,
        linear: Optional[bool] = None,
    ):
        self.cfg = cfg
        self.d_trn = d_trn
        self.d_syn = d_syn
        self.f_tilde = f_tilde
        self.seed = seed
        self.fraction_index = fraction_index
        self.linear = cfg.dgp_kind == DgpKind.LINEAR if linear is None else linear
        self._lambda_f: Optional[float] = None
        self._simponet: Optional[CateModel] = None

    def rng(self, *keys: int) -> np.random.Generator:
        return _stream(self.seed, 3, self.fraction_index, *keys)

    @property
    def lambda_f(self) -> float:
        """Configured lambda_f, or the validation-based selection"""
        if self._lambda_f is None:
            if self.cfg.lambda_f is not None:
                self._lambda_f = self.cfg.lambda_f
            else:
                self._lambda_f = self._select_lambda_f()
        return self._lambda_f

    def _select_lambda_f(self) -> float:
        rng = self.rng(0)
        train_rows, val_rows = stratified_split(self.d_trn.t, self.cfg.train.val_fraction, rng)
        part, val = self.d_trn.subset(train_rows), self.d_trn.subset(val_rows)
        if self.linear:
            real = fit_real_only_linear(part)
            mu = fit_mu_only_linear(part, self.f_tilde)
        else:
            real, _ = train_cate_nn(EstimatorKind.REAL_ONLY, part, None, self.f_tilde, self.cfg.train, rng)
            mu, _ = train_cate_nn(EstimatorKind.MU_ONLY, part, None, self.f_tilde, self.cfg.train, rng)
        _, real_errors = factual_error(real, val)
        _, mu_errors = factual_error(mu, val)
        return select_lambda_f(real_errors, mu_errors, self.cfg.alpha)

    def simponet(self) -> CateModel:
        if self._simponet is None:
            self.fit(EstimatorKind.SIMPONET)
        return self._simponet

    def fit(self, kind: EstimatorKind) -> Tuple[CateModel, float, float]:
        """Fitted model with the (lambda_f, lambda_tau) it used"""
        cfg = self.cfg
        rng = self.rng(1, list(EstimatorKind).index(kind))
        if kind == EstimatorKind.MU_ONLY_SIMPONET_Z:
            extractors = self.simponet().extractors
            f_hat = linear_encoder((extractors[0], extractors[1]))
            if self.linear:
                return fit_mu_only_linear(self.d_trn, f_hat, kind=kind), 0.0, 0.0
            model, _ = train_cate_nn(kind, self.d_trn, None, f_hat, cfg.train, rng)
            return model, 0.0, 0.0

        if kind in (EstimatorKind.REAL_ONLY, EstimatorKind.MU_ONLY, EstimatorKind.SIM_ONLY):
            if not self.linear:
                model, _ = train_cate_nn(kind, self.d_trn, self.d_syn, self.f_tilde, cfg.train, rng)
            elif kind == EstimatorKind.REAL_ONLY:
                model = fit_real_only_linear(self.d_trn)
            elif kind == EstimatorKind.MU_ONLY:
                model = fit_mu_only_linear(self.d_trn, self.f_tilde)
            else:
                model = fit_sim_only_linear(self.d_syn, self.f_tilde)
            return model, 0.0, 0.0

        lambda_tau = 0.0 if kind == EstimatorKind.SIMPONET_NO_TAU else cfg.lambda_tau
        if self.linear:
            lambda_f = LAMBDA_F_FLOOR if kind == EstimatorKind.SIMPONET_NO_F else max(self.lambda_f, LAMBDA_F_FLOOR)
            ridge = cfg.ablation_ridge if kind == EstimatorKind.SIMPONET_NO_TAU else 0.0
            altmin = AltMinConfig(lambda_f=lambda_f, lambda_tau=lambda_tau, max_sweeps=cfg.max_sweeps, ridge=ridge)
            model, _ = fit_simponet_linear(self.d_trn, self.d_syn, self.f_tilde, altmin, kind=kind)
        else:
            lambda_f = 0.0 if kind == EstimatorKind.SIMPONET_NO_F else self.lambda_f
            train = cfg.train.model_copy(update={"lambda_f": lambda_f, "lambda_tau": lambda_tau})
            model, _ = train_cate_nn(kind, self.d_trn, self.d_syn, self.f_tilde, train, rng)
        if kind == EstimatorKind.SIMPONET:
            self._simponet = model
        return model, lambda_f, lambda_tau


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def _error_text(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def _row(
    cfg: SweepConfig,
    gaps: GapConfig,
    seed: int,
    fraction: float,
    mode: ExtractorMode,
    kind: EstimatorKind,
    **values,
) -> SweepResultRow:
    return SweepResultRow(
        dgp_kind=cfg.dgp_kind,
        gamma_r=gaps.gamma_r,
        gamma_rs=gaps.gamma_rs,
        gamma_tau=gaps.gamma_tau,
        seed=seed,
        train_fraction=fraction,
        estimator=kind,
        extractor_mode=mode,
        recovery=cfg.recovery,
        **values,
    )


def _error_rows(
    cfg: SweepConfig, gaps: GapConfig, seed: int, fractions: Sequence[float], exc: Exception
) -> List[SweepResultRow]:
    return [
        _row(cfg, gaps, seed, fraction, mode, kind, status="error", error=_error_text(exc))
        for fraction in fractions
        for mode in cfg.input_modes
        for kind in cfg.estimators
    ]


def run_cell(
    cfg: SweepConfig, gaps: GapConfig, seed: int, latent_pool: Optional[np.ndarray] = None
) -> List[SweepResultRow]:
    """
    All estimator rows of one (gap cell, seed).

    Rows are ordered by train fraction, then extractor mode, then estimator.
    Every mode fits on the same cell data with the same estimator streams, so
    its rows pair up seed by seed with the others.
    """
    derived = cell_seed(seed, gaps)
    logger.info("Cell %s seed %d (derived seed %d)", gaps.cell, seed, derived)
    try:
        data = generate_cell(cfg, gaps, _stream(derived, 0), latent_pool)
        inputs = [
            (mode, input_view(data, mode), recover_extractors(cfg, data, _stream(derived, 1), mode))
            for mode in cfg.input_modes
        ]
    except Exception as exc:
        logger.warning("Cell %s seed %d failed: %s", gaps.cell, seed, exc)
        return _error_rows(cfg, gaps, seed, cfg.train_fractions, exc)

    rows = []
    for j, fraction in enumerate(cfg.train_fractions):
        keep = None
        if fraction < 1.0:
            try:
                keep, _ = stratified_split(data.d_trn.t, 1.0 - fraction, _stream(derived, 2, j))
            except Exception as exc:
                rows.extend(_error_rows(cfg, gaps, seed, [fraction], exc))
                continue
        for mode, view, f_tilde in inputs:
            d_fit = view.d_trn if keep is None else view.d_trn.subset(keep)
            context = FitContext(cfg, d_fit, view.d_syn, f_tilde, derived, j)
            for kind in cfg.estimators:
                started = time.perf_counter()
                try:
                    model, lambda_f, lambda_tau = context.fit(kind)
                    mse, rmse = cate_error(predict_cate(model, view.d_tst.x, view.d_tst.t), view.d_tst.tau)
                    factual, _ = factual_error(model, d_fit)
                except Exception as exc:
                    logger.warning(
                        "Estimator %s (%s inputs) failed in cell %s seed %d: %s",
                        kind.value,
                        mode.value,
                        gaps.cell,
                        seed,
                        exc,
                    )
                    rows.append(_row(cfg, gaps, seed, fraction, mode, kind, status="error", error=_error_text(exc)))
                    continue
                elapsed = time.perf_counter() - started if cfg.record_timing else 0.0
                rows.append(
                    _row(
                        cfg,
                        gaps,
                        seed,
                        fraction,
                        mode,
                        kind,
                        cate_mse=mse,
                        cate_rmse=rmse,
                        factual_mse=factual,
                        fit_seconds=elapsed,
                        lambda_f_used=lambda_f,
                        lambda_tau_used=lambda_tau,
                    )
                )
    return rows


def _run_task(task: Tuple[SweepConfig, GapConfig, int, Optional[np.ndarray]]) -> List[SweepResultRow]:
    return run_cell(*task)


def load_latent_pool(cfg: SweepConfig) -> Optional[np.ndarray]:
    if cfg.latents_path is None:
        return None
    return standardize_latents(load_latents_csv(cfg.latents_path))


def run_sweep(cfg: SweepConfig, threads: Optional[int] = None) -> List[SweepResultRow]:
    """
    Run every (gap cell, seed) of the config.

    Cells run independently in a pool of `threads` worker processes; rows come
    back grid-major, then seed, train fraction and estimator, whatever the
    pool size.
    """
    workers = resolve_threads(cfg, threads)
    pool = load_latent_pool(cfg)
    tasks = [(cfg, gaps, seed, pool) for gaps in cfg.grid for seed in cfg.seeds]
    logger.info(
        "Sweep: %s DGP, %d cells x %d seeds x %d estimators on %d workers",
        cfg.dgp_kind.value,
        len(cfg.grid),
        len(cfg.seeds),
        len(cfg.estimators),
        workers,
    )
    if workers <= 1:
        chunks = [_run_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            chunks = list(executor.map(_run_task, tasks))
    rows = [row for chunk in chunks for row in chunk]
    failed = sum(row.status != "ok" for row in rows)
    if failed:
        logger.warning("Sweep finished with %d error rows out of %d", failed, len(rows))
    else:
        logger.info("Sweep finished: %d rows", len(rows))
    return rows


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

CELL_KEYS = ["dgp_kind", "gamma_r", "gamma_rs", "gamma_tau", "train_fraction"]


def generate_report(rows: List[SweepResultRow], baseline: EstimatorKind = EstimatorKind.SIMPONET) -> List[ReportRow]:
    """
    Per (cell, estimator, extractor mode): seed-mean errors, the one-sided
    paired p-value that the baseline has lower per-seed MSE, and the rank
    within the cell. The baseline is the baseline estimator under the first
    extractor mode it appears with.
    """
    if not rows:
        raise ArgumentError("cannot report on an empty result set")
    baseline = EstimatorKind(baseline)
    frame = results_frame(rows)
    ok = frame[frame["status"] == "ok"]
    units = list(dict.fromkeys(zip(frame["estimator"], frame["extractor_mode"])))
    base_unit = next((unit for unit in units if unit[0] == baseline.value), None)

    report = []
    for cell, _ in frame.groupby(CELL_KEYS, sort=False):
        key = dict(zip(CELL_KEYS, cell))
        in_cell = ok
        for name, value in key.items():
            in_cell = in_cell[in_cell[name] == value]
        members = {
            unit: in_cell[(in_cell["estimator"] == unit[0]) & (in_cell["extractor_mode"] == unit[1])]
            for unit in units
        }
        per_seed = {unit: part.set_index("seed")["cate_mse"] for unit, part in members.items()}
        base = per_seed.get(base_unit)

        means = [float(per_seed[u].mean()) if len(per_seed[u]) else float("nan") for u in units]
        ranks = rank_within(means)
        for unit, mean, rank in zip(units, means, ranks):
            errors = per_seed[unit]
            rmse = members[unit]["cate_rmse"]
            p_value = float("nan")
            if base is not None:
                common = base.index.intersection(errors.index)
                if len(common) >= 3:
                    p_value = paired_t_test_one_sided(base.loc[common].to_numpy(), errors.loc[common].to_numpy())
            report.append(
                ReportRow(
                    **key,
                    estimator=unit[0],
                    extractor_mode=unit[1],
                    seeds=len(errors),
                    mean_cate_mse=mean,
                    mean_cate_rmse=float(rmse.mean()) if len(rmse) else float("nan"),
                    p_value=p_value,
                    rank=int(rank),
                    best=bool(rank == 1 and np.isfinite(mean)),
                    second_best=bool(rank == 2 and np.isfinite(mean)),
                )
            )
    return report


def report_frame(report: List[ReportRow]) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump(mode="python") for r in report], columns=REPORT_COLUMNS)
    for column in ("dgp_kind", "estimator", "extractor_mode"):
        frame[column] = frame[column].map(lambda v: getattr(v, "value", v))
    return frame


def write_report_csv(report: List[ReportRow], path: Union[str, Path]) -> Path:
    if not report:
        raise ArgumentError("no report rows to write")
    return write_frame(report_frame(report), path)


def format_report_table(report: List[ReportRow]) -> str:
    """
    Cells down, estimators across; entries read 'rmse (p-value)', * best, +
    second best. Columns are labelled estimator[mode] when several extractor
    modes were compared.
    """
    frame = report_frame(report)
    frame["entry"] = [
        f"{r.mean_cate_rmse:.3f} ({r.p_value:.2f}){'*' if r.best else '+' if r.second_best else ''}"
        for r in report
    ]
    if frame["extractor_mode"].nunique() > 1:
        frame["column"] = frame["estimator"] + "[" + frame["extractor_mode"] + "]"
    else:
        frame["column"] = frame["estimator"]
    table = frame.pivot_table(index=CELL_KEYS, columns="column", values="entry", aggfunc="first", sort=False)
    return table.to_string()


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------


def _random_gaps(rng: np.random.Generator) -> GapConfig:
    return GapConfig(
        gamma_r=float(rng.uniform(0.0, 0.5)),
        gamma_rs=float(rng.uniform(0.0, 0.5)),
        gamma_tau=float(rng.uniform(0.0, 1.0)),
    )


def _linear_instance(
    rng: np.random.Generator, n_z: int, n: int, sigma_y: float = 0.0
) -> Tuple[LinearDgpPair, ObservationalDataset, SimulatorDataset]:
    spec = build_linear_pair(_random_gaps(rng), n_z, (sigma_y, 0.0), rng)
    z_trn = sample_latents(n, n_z, rng)
    d_trn = _retry_arms(lambda: generate_observational(spec, z_trn, rng))
    return spec, d_trn, generate_simulator_cf(spec, sample_latents(n, n_z, rng), rng)


def verify_analytic_oracle(
    rng: np.random.Generator, dims: Sequence[int] = (2, 5, 10), specs_per_dim: int = 20
) -> VerificationCheck:
    """Measured squared CATE errors of the closed-form baselines against their analytic values"""
    started = time.perf_counter()
    failures, worst, instances = 0, 0.0, 0
    for n_z in dims:
        for _ in range(specs_per_dim):
            spec, d_trn, d_syn = _linear_instance(rng, n_z, 10 * n_z + 20)
            f_tilde = pairwise_linear_map(d_syn, oracle=spec.s_inv)
            t = int(rng.integers(0, 2))
            z_star = rng.standard_normal(n_z)
            x_star = z_star @ spec.r(t)
            models = {
                EstimatorKind.SIM_ONLY: fit_sim_only_linear(d_syn, f_tilde),
                EstimatorKind.REAL_ONLY: fit_real_only_linear(d_trn),
                EstimatorKind.MU_ONLY: fit_mu_only_linear(d_trn, f_tilde),
            }
            for kind, model in models.items():
                measured = float((predict_cate(model, x_star[None, :], [t])[0] - z_star @ spec.w_tau) ** 2)
                expected = analytic_cate_error(spec, x_star, t, kind)
                rel = abs(measured - expected) / max(expected, 1e-8)
                worst = max(worst, rel)
                failures += rel > ANALYTIC_REL_TOL
                instances += 1
    return VerificationCheck(
        name="analytic_oracle", instances=instances, failures=failures, worst=worst,
        seconds=time.perf_counter() - started,
    )


def verify_decomposition(rng: np.random.Generator, instances: int = 100) -> VerificationCheck:
    started = time.perf_counter()
    failures, worst = 0, np.inf
    for _ in range(instances):
        n_z = int(rng.integers(2, 8))
        spec, d_trn, _ = _linear_instance(rng, n_z, 6 * n_z + 10, sigma_y=0.3)
        report = check_decomposition_bound(
            fit_real_only_linear(d_trn), spec, sample_latents(50, n_z, rng), int(rng.integers(0, 2))
        )
        worst = min(worst, report.margin)
        failures += report.margin < -DECOMPOSITION_TOL
    return VerificationCheck(
        name="decomposition_bound", instances=instances, failures=failures, worst=float(worst),
        seconds=time.perf_counter() - started,
    )


def verify_generalization(rng: np.random.Generator, instances: int = 50) -> VerificationCheck:
    started = time.perf_counter()
    failures, worst = 0, np.inf
    for _ in range(instances):
        n_z = int(rng.integers(2, 8))
        spec, d_trn, d_syn = _linear_instance(rng, n_z, 8 * n_z + 20, sigma_y=0.1)
        f_tilde = pairwise_linear_map(d_syn)
        model, _ = fit_simponet_linear(d_trn, d_syn, f_tilde, AltMinConfig(max_sweeps=100))
        sim_fit = (f_tilde, sim_effect_head(fit_sim_only_linear(d_syn, f_tilde)))
        report = check_generalization_bound(model, spec, sim_fit, sample_latents(80, n_z, rng), int(rng.integers(0, 2)))
        scaled = report.margin / max(1.0, report.rhs)
        worst = min(worst, scaled)
        failures += scaled < -GENERALIZATION_TOL
    return VerificationCheck(
        name="generalization_bound", instances=instances, failures=failures, worst=float(worst),
        seconds=time.perf_counter() - started,
    )


def verify_descent(rng: np.random.Generator, instances: int = 100) -> VerificationCheck:
    """Largest relative objective increase across alternating sweeps"""
    started = time.perf_counter()
    failures, worst = 0, 0.0
    for _ in range(instances):
        n_z = int(rng.integers(2, 8))
        spec, d_trn, d_syn = _linear_instance(rng, n_z, 6 * n_z + 10, sigma_y=0.5)
        f_tilde = pairwise_linear_map(d_syn, oracle=spec.s_inv)
        cfg = AltMinConfig(
            lambda_f=float(10 ** rng.uniform(-3, 1)), lambda_tau=float(10 ** rng.uniform(-3, 1)), max_sweeps=50
        )
        _, fit = fit_simponet_linear(d_trn, d_syn, f_tilde, cfg)
        trace = np.asarray(fit.objective_trace)
        rises = (trace[1:] - trace[:-1]) / np.maximum(1.0, np.abs(trace[:-1]))
        worst = max(worst, float(rises.max(initial=0.0)))
        failures += bool(np.any(rises > DESCENT_SLACK))
    return VerificationCheck(
        name="alternating_descent", instances=instances, failures=failures, worst=worst,
        seconds=time.perf_counter() - started,
    )


def run_verification(seed: int = 0) -> List[VerificationCheck]:
    """Every property suite on its own seeded stream"""
    checks = [
        verify_analytic_oracle(_stream(seed, 0)),
        verify_decomposition(_stream(seed, 1)),
        verify_generalization(_stream(seed, 2)),
        verify_descent(_stream(seed, 3)),
    ]
    for check in checks:
        log = logger.info if check.passed else logger.error
        log("%s: %d/%d failures, worst %.3g", check.name, check.failures, check.instances, check.worst)
    return checks


def summarize_checks(checks: List[VerificationCheck]) -> Dict[str, Dict[str, float]]:
    return {c.name: {"instances": c.instances, "failures": c.failures, "worst": c.worst} for c in checks}
