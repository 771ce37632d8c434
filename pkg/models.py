from enum import Enum
from typing import Annotated, Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    WithJsonSchema,
    field_validator,
    model_validator,
)


CONDITION_LIMIT = 1e8


def _float_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


def _int_array(value: Any) -> np.ndarray:
    array = np.array(value)
    if array.dtype.kind == "f":
        if not np.all(np.isfinite(array)) or not np.all(array == np.round(array)):
            raise ValueError("treatment indicators must be integers")
    array = array.astype(np.int64)
    array.setflags(write=False)
    return array


# Read-only numpy arrays that serialize to nested lists
Array = Annotated[
    np.ndarray,
    BeforeValidator(_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
    WithJsonSchema({"type": "array"}),
]
IntArray = Annotated[
    np.ndarray,
    BeforeValidator(_int_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
    WithJsonSchema({"type": "array", "items": {"type": "integer"}}),
]


class Frozen(BaseModel):
    """Immutable value type holding numpy arrays"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class StrictConfig(BaseModel):
    """Immutable settings block that rejects unknown keys"""

    model_config = ConfigDict(extra="forbid", frozen=True)


class EstimatorKind(str, Enum):
    """Estimators a sweep can fit"""
    SIM_ONLY = "sim_only"
    REAL_ONLY = "real_only"
    MU_ONLY = "mu_only"
    SIMPONET = "simponet"
    SIMPONET_NO_F = "simponet_no_f"
    SIMPONET_NO_TAU = "simponet_no_tau"
    MU_ONLY_SIMPONET_Z = "mu_only_simponet_z"


CORE_ESTIMATORS = [
    EstimatorKind.SIM_ONLY,
    EstimatorKind.REAL_ONLY,
    EstimatorKind.MU_ONLY,
    EstimatorKind.SIMPONET,
]


class DgpKind(str, Enum):
    LINEAR = "linear"
    GP = "gp"
    FLOW = "flow"
    MLP = "mlp"


class LatentMode(str, Enum):
    GAUSSIAN = "gaussian"
    SPHERE = "sphere"


class EncoderKind(str, Enum):
    LINEAR = "linear"
    MLP = "mlp"


class MapKind(str, Enum):
    ORTHOGONAL = "orthogonal"
    AFFINE = "affine"


class ExtractorMode(str, Enum):
    """What the estimators see as covariate representation"""
    ORACLE = "oracle"
    LEARNED = "learned"
    RAW = "raw"
    LATENT = "latent"


class RecoveryMethod(str, Enum):
    """How learned extractors are recovered from simulator pairs"""
    CLOSED_FORM = "closed_form"
    INFONCE = "infonce"


class SimEffect(str, Enum):
    """How the simulator effect function is perturbed away from the real one"""
    GP = "gp"
    SCALED_LINEAR = "scaled_linear"


class HeadKind(str, Enum):
    LINEAR = "linear"
    MLP = "mlp"


class Optimizer(str, Enum):
    ADAM = "adam"
    GD = "gd"


class DistanceKind(str, Enum):
    X_GIVEN_T = "x_given_t"
    Z_SPACE = "z_space"
    TAU_ON_POINTS = "tau_on_points"


# ---------------------------------------------------------------------------
# Data-generating processes
# ---------------------------------------------------------------------------


class GapConfig(StrictConfig):
    """Gap dials controlling real/simulator mismatch"""
    gamma_r: float = Field(0.0, ge=0.0, le=0.5, description="Gap between f_0 and f_1")
    gamma_rs: float = Field(0.0, ge=0.0, le=0.5, description="Gap between real and simulator extractors")
    gamma_tau: float = Field(0.0, ge=0.0, le=1.0, description="Gap between real and simulator effects")
    gamma_w: float = Field(0.4, ge=0.0, le=1.0, description="Mixing weight between w_0 and w_1")

    @property
    def cell(self) -> Tuple[float, float, float]:
        return (self.gamma_r, self.gamma_rs, self.gamma_tau)


class LinearDgpPair(Frozen):
    """Matched real/simulator linear DGP: x = z R_t, y = z w_t, x^S = z S_t, y^S = z w^S_t"""
    n_z: int = Field(..., gt=0)
    r_inv: Tuple[Array, Array] = Field(..., description="Real inverse covariate maps R_0^-1, R_1^-1")
    s_inv: Tuple[Array, Array] = Field(..., description="Simulator inverse maps S_0^-1, S_1^-1")
    w: Tuple[Array, Array] = Field(..., description="Real outcome heads w_0, w_1")
    w_s: Tuple[Array, Array] = Field(..., description="Simulator outcome heads")
    sigma_y: float = Field(0.0, ge=0.0)
    sigma_ys: float = Field(0.0, ge=0.0)
    propensity_scale: float = Field(0.0, description="Logit scale of treatment assignment, 0 = fair coin")
    propensity_direction: Optional[Array] = Field(None, description="Unit vector w_p of the propensity logit")

    @model_validator(mode="after")
    def _check_shapes(self) -> "LinearDgpPair":
        square = (self.n_z, self.n_z)
        for name, pair in (("r_inv", self.r_inv), ("s_inv", self.s_inv)):
            for t, matrix in enumerate(pair):
                if matrix.shape != square:
                    raise ValueError(f"{name}[{t}] must be {square}, got {matrix.shape}")
                cond = np.linalg.cond(matrix)
                if not np.isfinite(cond) or cond >= CONDITION_LIMIT:
                    raise ValueError(f"{name}[{t}] is ill-conditioned (cond={cond:.3g})")
        for name, pair in (("w", self.w), ("w_s", self.w_s)):
            for t, vector in enumerate(pair):
                if vector.shape != (self.n_z,):
                    raise ValueError(f"{name}[{t}] must have length {self.n_z}")
        if self.propensity_direction is not None and self.propensity_direction.shape != (self.n_z,):
            raise ValueError(f"propensity_direction must have length {self.n_z}")
        return self

    @property
    def n_x(self) -> int:
        return self.n_z

    @property
    def w_tau(self) -> np.ndarray:
        return self.w[1] - self.w[0]

    @property
    def w_tau_s(self) -> np.ndarray:
        return self.w_s[1] - self.w_s[0]

    def r(self, t: int) -> np.ndarray:
        """Forward real covariate map R_t"""
        return np.linalg.inv(self.r_inv[t])

    def s(self, t: int) -> np.ndarray:
        """Forward simulator covariate map S_t"""
        return np.linalg.inv(self.s_inv[t])


class ObservationalDataset(Frozen):
    """Factual training triples (x, t, y)"""
    x: Array
    t: IntArray
    y: Array

    @model_validator(mode="after")
    def _check(self) -> "ObservationalDataset":
        if self.x.ndim != 2:
            raise ValueError("x must be a matrix")
        n = self.x.shape[0]
        if self.t.shape != (n,) or self.y.shape != (n,):
            raise ValueError(f"x, t, y must share {n} rows")
        if not np.all((self.t == 0) | (self.t == 1)):
            raise ValueError("t must contain only 0 and 1")
        if not (np.any(self.t == 0) and np.any(self.t == 1)):
            raise ValueError("both treatment arms must be non-empty")
        return self

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    def arm(self, t: int) -> Tuple[np.ndarray, np.ndarray]:
        mask = self.t == t
        return self.x[mask], self.y[mask]

    def subset(self, rows: np.ndarray) -> "ObservationalDataset":
        return ObservationalDataset(x=self.x[rows], t=self.t[rows], y=self.y[rows])


class SimulatorDataset(Frozen):
    """Paired counterfactual simulator rows sharing one latent per row"""
    x0: Array
    x1: Array
    y0: Array
    y1: Array

    @model_validator(mode="after")
    def _check(self) -> "SimulatorDataset":
        if self.x0.ndim != 2 or self.x0.shape != self.x1.shape:
            raise ValueError("x0 and x1 must be matrices of equal shape")
        m = self.x0.shape[0]
        if self.y0.shape != (m,) or self.y1.shape != (m,):
            raise ValueError(f"all simulator fields must have {m} rows")
        return self

    @property
    def m(self) -> int:
        return self.x0.shape[0]

    @property
    def n_x(self) -> int:
        return self.x0.shape[1]

    @property
    def tau_s(self) -> np.ndarray:
        return self.y1 - self.y0

    def covariates(self, t: int) -> np.ndarray:
        return self.x1 if t == 1 else self.x0

    def outcomes(self, t: int) -> np.ndarray:
        return self.y1 if t == 1 else self.y0

    def subset(self, rows: np.ndarray) -> "SimulatorDataset":
        return SimulatorDataset(x0=self.x0[rows], x1=self.x1[rows], y0=self.y0[rows], y1=self.y1[rows])


class EvalDataset(Frozen):
    """Test rows with noiseless potential outcomes"""
    x: Array
    t: IntArray
    y0: Array
    y1: Array
    tau: Array
    z: Optional[Array] = Field(None, description="Ground-truth latents, diagnostics only")

    @model_validator(mode="after")
    def _check(self) -> "EvalDataset":
        m = self.x.shape[0]
        for name in ("t", "y0", "y1", "tau"):
            if getattr(self, name).shape != (m,):
                raise ValueError(f"{name} must have {m} rows")
        if not np.array_equal(self.tau, self.y1 - self.y0):
            raise ValueError("tau must equal y1 - y0")
        if self.z is not None and self.z.shape[0] != m:
            raise ValueError(f"z must have {m} rows")
        return self

    @property
    def m(self) -> int:
        return self.x.shape[0]


class GpOutcomeSpec(StrictConfig):
    """RBF kernel widths for GP outcome sampling"""
    gamma_base: float = Field(1.0, gt=0.0, description="Width for mu_0 and y_0^S")
    gamma_tau_fn: float = Field(1.0, gt=0.0, description="Width for tau")
    gamma_tau_gap: float = Field(0.0, ge=0.0, description="Width of the tau to tau^S perturbation, 0 = none")
    jitter: float = Field(1e-8, gt=0.0)


class GpOutcomeDraw(NamedTuple):
    mu0: np.ndarray
    mu1: np.ndarray
    tau: np.ndarray
    y0s: np.ndarray
    y1s: np.ndarray
    tau_s: np.ndarray


class ScaleShiftNet(Frozen):
    """One-hidden-layer tanh network used inside a coupling layer"""
    w1: Array
    b1: Array
    w2: Array
    b2: Array


class CouplingLayer(Frozen):
    conditioner: Tuple[int, ...] = Field(..., description="Indices passed through unchanged")
    transformed: Tuple[int, ...] = Field(..., description="Indices scaled and shifted")
    scale_net: ScaleShiftNet
    shift_net: ScaleShiftNet


class CouplingFlow(Frozen):
    """Fixed, never-trained affine coupling flow"""
    n_x: int = Field(..., ge=2)
    layers: List[CouplingLayer]


class CovariateMlp(Frozen):
    """Fixed two-layer ReLU covariate map z -> x, not invertible in general"""
    w1: Array
    b1: Array
    w2: Array
    b2: Array

    @model_validator(mode="after")
    def _check(self) -> "CovariateMlp":
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("w1 and w2 must be matrices")
        hidden = self.w1.shape[1]
        if self.b1.shape != (hidden,) or self.w2.shape[0] != hidden or self.b2.shape != (self.w2.shape[1],):
            raise ValueError("inconsistent covariate map layer sizes")
        return self

    @property
    def n_z(self) -> int:
        return self.w1.shape[0]

    @property
    def n_x(self) -> int:
        return self.w2.shape[1]


# ---------------------------------------------------------------------------
# Representation recovery
# ---------------------------------------------------------------------------


class EncoderBlock(Frozen):
    """Parameters of one treatment's encoder: linear uses w1 only, mlp adds tanh hidden layer"""
    w1: Array
    b1: Optional[Array] = None
    w2: Optional[Array] = None
    b2: Optional[Array] = None


class Encoder(Frozen):
    """Per-treatment latent extractors"""
    kind: EncoderKind = EncoderKind.LINEAR
    n_x: int = Field(..., gt=0)
    n_z: int = Field(..., gt=0)
    normalize: bool = False
    blocks: Tuple[EncoderBlock, EncoderBlock]
    final_loss: Optional[float] = None
    initial_loss: Optional[float] = None
    converged: bool = True

    @model_validator(mode="after")
    def _check(self) -> "Encoder":
        for t, block in enumerate(self.blocks):
            if self.kind == EncoderKind.LINEAR:
                if block.w1.shape != (self.n_x, self.n_z):
                    raise ValueError(f"linear block {t} must be {(self.n_x, self.n_z)}")
            else:
                if block.b1 is None or block.w2 is None or block.b2 is None:
                    raise ValueError(f"mlp block {t} needs w1, b1, w2, b2")
                if block.w1.shape[0] != self.n_x or block.w2.shape[1] != self.n_z:
                    raise ValueError(f"mlp block {t} does not map {self.n_x} -> {self.n_z}")
        return self

    def matrix(self, t: int) -> np.ndarray:
        """Matrix of a linear extractor"""
        if self.kind != EncoderKind.LINEAR:
            raise ValueError("only linear encoders have a matrix form")
        return self.blocks[t].w1


class ContrastiveConfig(StrictConfig):
    temperature: float = Field(0.1, gt=0.0)
    steps: int = Field(2000, gt=0)
    step_size: float = Field(1e-2, gt=0.0)
    batch: Optional[int] = Field(None, ge=2, description="Rows per step, None = full batch")
    encoder_kind: EncoderKind = EncoderKind.LINEAR
    normalize: bool = True
    hidden: int = Field(32, gt=0)
    warm_start: bool = Field(True, description="Start linear encoders from the whitened Procrustes cross-map")
    rel_tol: float = Field(1e-10, gt=0.0)


class AlignmentReport(Frozen):
    map_kind: MapKind
    residual: float = Field(..., ge=0.0)
    mean_cosine: float = Field(..., ge=-1.0 - 1e-9, le=1.0 + 1e-9)
    estimated_h: Array


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


class Mlp(Frozen):
    """n_z -> hidden (relu) -> 1"""
    w1: Array
    b1: Array
    w2: Array
    b2: float = 0.0

    @model_validator(mode="after")
    def _check(self) -> "Mlp":
        hidden = self.w1.shape[1] if self.w1.ndim == 2 else -1
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise ValueError("inconsistent Mlp layer sizes")
        return self

    @property
    def n_z(self) -> int:
        return self.w1.shape[0]


class CateModel(Frozen):
    """Fitted estimator: extractors f_hat_t and heads mu_hat_t"""
    kind: EstimatorKind
    head_kind: HeadKind = HeadKind.LINEAR
    extractors: Optional[Tuple[Array, Array]] = Field(None, description="Linear maps f_hat_t")
    encoder: Optional[Encoder] = Field(None, description="Non-linear extractor pair")
    heads: Optional[Tuple[Array, Array]] = Field(None, description="Linear heads w_hat_t")
    nets: Optional[Tuple[Mlp, Mlp]] = Field(None, description="Network heads")
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "CateModel":
        if (self.extractors is None) == (self.encoder is None):
            raise ValueError("exactly one of extractors or encoder must be set")
        if self.head_kind == HeadKind.LINEAR and self.heads is None:
            raise ValueError("linear heads missing")
        if self.head_kind == HeadKind.MLP and self.nets is None:
            raise ValueError("network heads missing")
        return self

    @property
    def n_x(self) -> int:
        if self.extractors is not None:
            return self.extractors[0].shape[0]
        return self.encoder.n_x


class AltMinConfig(StrictConfig):
    lambda_f: float = Field(1.0, ge=1e-8)
    lambda_tau: float = Field(1.0, ge=0.0)
    max_sweeps: int = Field(500, gt=0)
    rel_tol: float = Field(1e-10, gt=0.0)
    ridge: float = Field(0.0, ge=0.0, description="Optional penalty on the outcome heads")


class FitReport(Frozen):
    objective_trace: List[float] = Field(default_factory=list)
    sweeps: int = 0
    converged: bool = False
    validation_trace: List[float] = Field(default_factory=list)
    eval_steps: List[int] = Field(default_factory=list)
    best_step: Optional[int] = None
    lambda_f: Optional[float] = None
    lambda_tau: Optional[float] = None


class TrainConfig(StrictConfig):
    lambda_f: float = Field(1.0, ge=0.0)
    lambda_tau: float = Field(1.0, ge=0.0)
    steps: int = Field(5000, gt=0)
    step_size: float = Field(1e-3, gt=0.0)
    eval_every: int = Field(50, gt=0)
    patience: int = Field(10, gt=0)
    val_fraction: float = Field(0.3, gt=0.0, lt=1.0)
    hidden: int = Field(50, gt=0)
    optimizer: Optimizer = Optimizer.ADAM


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


class BoundReport(Frozen):
    lhs: float
    rhs: float
    margin: float
    components: Dict[str, float] = Field(default_factory=dict)
    k_tau: float = 0.0
    holds: bool = True


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def table_gap_grid(low: float = 0.1, high: float = 0.4) -> List[GapConfig]:
    """The nine gap cells of the linear benchmark table"""
    grid = [GapConfig(gamma_r=0.0, gamma_rs=high, gamma_tau=high)]
    for gamma_r in (low, high):
        for gamma_rs in (low, high):
            for gamma_tau in (low, high):
                grid.append(GapConfig(gamma_r=gamma_r, gamma_rs=gamma_rs, gamma_tau=gamma_tau))
    return grid


class SweepConfig(BaseModel):
    """Sweep description loaded from JSON"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dgp_kind: DgpKind = DgpKind.LINEAR
    n_train: int = Field(1000, ge=8)
    n_sim: int = Field(1000, ge=8)
    n_test: int = Field(500, ge=1)
    n_z: int = Field(10, gt=0)
    low: float = Field(0.1, ge=0.0, le=0.5)
    high: float = Field(0.4, ge=0.0, le=0.5)
    gap_grid: Optional[List[GapConfig]] = None
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    estimators: List[EstimatorKind] = Field(default_factory=lambda: list(CORE_ESTIMATORS))
    extractor_mode: ExtractorMode = ExtractorMode.ORACLE
    recovery: RecoveryMethod = RecoveryMethod.CLOSED_FORM
    latent_mode: LatentMode = LatentMode.GAUSSIAN
    sigma_y: float = Field(0.0, ge=0.0)
    sigma_ys: float = Field(0.0, ge=0.0)
    propensity_scale: float = 0.0
    lambda_tau: float = Field(1.0, ge=0.0)
    lambda_f: Optional[float] = Field(None, ge=0.0, description="Fixed value, None = selection heuristic")
    alpha: float = Field(0.05, gt=0.0, lt=1.0)
    max_sweeps: int = Field(500, gt=0)
    ablation_ridge: float = Field(1e-6, ge=0.0)
    gp_gamma_base: float = Field(1.0, gt=0.0)
    gp_gamma_tau_fn: float = Field(1.0, gt=0.0)
    sim_effect: Optional[SimEffect] = None
    flow_layers: int = Field(2, gt=0)
    covariate_hidden: Optional[int] = Field(None, gt=0, description="Hidden width of mlp covariate maps, None = n_z")
    compare_inputs: List[ExtractorMode] = Field(
        default_factory=list, description="Further extractor modes fitted on the same cell data"
    )
    train_fractions: List[float] = Field(default_factory=lambda: [1.0])
    latents_path: Optional[str] = None
    train: TrainConfig = Field(default_factory=TrainConfig)
    contrastive: ContrastiveConfig = Field(default_factory=ContrastiveConfig)
    record_timing: bool = False
    output_dir: Optional[str] = None
    threads: Optional[int] = Field(None, gt=0)

    @field_validator("seeds")
    @classmethod
    def _distinct_seeds(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("at least one seed is required")
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct")
        return seeds

    @field_validator("estimators")
    @classmethod
    def _distinct_estimators(cls, estimators: List[EstimatorKind]) -> List[EstimatorKind]:
        if not estimators or len(set(estimators)) != len(estimators):
            raise ValueError("estimators must be a non-empty list without repeats")
        return estimators

    @field_validator("train_fractions")
    @classmethod
    def _fractions(cls, fractions: List[float]) -> List[float]:
        if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
            raise ValueError("train fractions must lie in (0, 1]")
        return fractions

    @model_validator(mode="after")
    def _check(self) -> "SweepConfig":
        if self.gap_grid is not None and not self.gap_grid:
            raise ValueError("gap_grid must not be empty")
        if len(set(self.input_modes)) != len(self.input_modes):
            raise ValueError("compare_inputs must not repeat extractor_mode or each other")
        if self.dgp_kind in (DgpKind.FLOW, DgpKind.MLP) and ExtractorMode.ORACLE in self.input_modes:
            raise ValueError(
                f"{self.dgp_kind.value} DGPs have no linear oracle extractor; use extractor_mode 'learned'"
            )
        return self

    @property
    def input_modes(self) -> List[ExtractorMode]:
        return [self.extractor_mode, *self.compare_inputs]

    @property
    def grid(self) -> List[GapConfig]:
        if self.gap_grid is not None:
            return list(self.gap_grid)
        return table_gap_grid(self.low, self.high)

    @property
    def effect_mode(self) -> SimEffect:
        if self.sim_effect is not None:
            return self.sim_effect
        return SimEffect.GP if self.dgp_kind in (DgpKind.LINEAR, DgpKind.GP) else SimEffect.SCALED_LINEAR


class SweepResultRow(BaseModel):
    """One (gap cell, seed, estimator) measurement"""
    dgp_kind: DgpKind
    gamma_r: float
    gamma_rs: float
    gamma_tau: float
    seed: int
    train_fraction: float = 1.0
    estimator: EstimatorKind
    extractor_mode: ExtractorMode = ExtractorMode.ORACLE
    recovery: RecoveryMethod = RecoveryMethod.CLOSED_FORM
    status: str = "ok"
    cate_mse: float = float("nan")
    cate_rmse: float = float("nan")
    factual_mse: float = float("nan")
    fit_seconds: float = 0.0
    lambda_f_used: float = float("nan")
    lambda_tau_used: float = float("nan")
    error: str = ""

    @model_validator(mode="after")
    def _check(self) -> "SweepResultRow":
        if self.status == "ok":
            for name in ("cate_mse", "cate_rmse", "factual_mse", "fit_seconds", "lambda_f_used", "lambda_tau_used"):
                value = getattr(self, name)
                if not np.isfinite(value) or value < 0:
                    raise ValueError(f"{name} must be finite and nonnegative, got {value}")
        return self


RESULT_COLUMNS = list(SweepResultRow.model_fields.keys())


class ReportRow(BaseModel):
    """Seed-averaged error of one estimator in one gap cell"""
    dgp_kind: DgpKind
    gamma_r: float
    gamma_rs: float
    gamma_tau: float
    train_fraction: float = 1.0
    estimator: EstimatorKind
    extractor_mode: ExtractorMode = ExtractorMode.ORACLE
    seeds: int = Field(..., description="Seeds with an ok row")
    mean_cate_mse: float
    mean_cate_rmse: float
    p_value: float = Field(..., description="One-sided paired test that the baseline has lower error, NaN if untestable")
    rank: int = Field(..., ge=1)
    best: bool = False
    second_best: bool = False


REPORT_COLUMNS = list(ReportRow.model_fields.keys())


class VerificationCheck(BaseModel):
    """Outcome of one property suite run by the verify command"""
    name: str
    instances: int
    failures: int
    worst: float = Field(..., description="Smallest margin or largest relative error seen")
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.failures == 0


# ---------------------------------------------------------------------------
# HTTP payloads
# ---------------------------------------------------------------------------


class PredictRequest(BaseModel):
    """Rows to score with a registered model"""
    x: List[List[float]] = Field(..., description="Covariate rows")
    t: List[int] = Field(..., description="Observed treatment per row")


class PredictResponse(BaseModel):
    model_id: str
    kind: EstimatorKind
    tau_hat: List[float]


class ModelUploadResponse(BaseModel):
    model_id: str
    kind: EstimatorKind
    n_x: int


class LatentSummary(BaseModel):
    rows: int
    columns: List[str]
    means: List[float]
    stds: List[float]
