import hashlib
import json
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

VALID_RESOLUTIONS = (8, 16, 32, 64)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = 0.01
    beta: float = 100.0
    gamma: float = 1.0
    delta: float = 0.0005
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch: int = 64
    iters: int = 0
    seed: int = 0
    resolution: int = 32
    width_multiplier: float = 0.25
    update_mode: Literal["combined", "sequential"] = "combined"
    gan_variant: Literal["nonsaturating", "minimax"] = "nonsaturating"
    g_pointwise: bool = True
    embed_dim: int = 128
    noise_dim: int = 100
    reversal_weight: float = 1.0
    checkpoint_every: int = 0
    log_every: int = 50

    @field_validator("alpha", "beta", "gamma", "delta", "reversal_weight")
    @classmethod
    def validate_weight(cls, v):
        if v < 0:
            raise ValueError("Loss weights must be non-negative")
        return v

    @field_validator("resolution")
    @classmethod
    def validate_resolution(cls, v):
        if v not in VALID_RESOLUTIONS:
            raise ValueError(f"Resolution must be one of {VALID_RESOLUTIONS}")
        return v

    @field_validator("width_multiplier", "lr")
    @classmethod
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError("Must be positive")
        return v

    @field_validator("batch", "embed_dim", "noise_dim")
    @classmethod
    def validate_count(cls, v):
        if v < 1:
            raise ValueError("Must be at least 1")
        return v

    @field_validator("iters", "checkpoint_every", "log_every")
    @classmethod
    def validate_non_negative(cls, v):
        if v < 0:
            raise ValueError("Must be non-negative")
        return v


class StageIters(BaseModel):
    """Iteration count per training stage"""

    model_config = ConfigDict(extra="forbid")

    e: int = 3000
    f: int = 3000
    f_eval: int = 3000
    tos: int = 5000
    dcgan: int = 5000
    dtn: int = 5000
    cbar: int = 3000
    tos_fixed_cbar: int = 5000
    dann: int = 3000
    critic: int = 300


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    domain: Literal["polygon", "sprite"] = "sprite"
    variant: Literal["default", "vr"] = "default"
    n_pairs: int = 10000
    n_holdout: int = 1000
    n_t: int = 10000
    n_s: int = 10000
    f_identities: int = 600
    f_photos_per_identity: int = 20
    f_eval_identities: int = 600
    probe_count: int = 118
    probe_shots: int = 3
    distractors: int = 2000

    @field_validator("n_pairs", "n_t")
    @classmethod
    def validate_dataset(cls, v):
        if v < 1:
            raise ValueError("Dataset sizes must be at least 1")
        return v


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    distance: Literal["cosine", "euclidean"] = "cosine"
    manifold_samples: int = 1000
    fidelity_samples: int = 1000
    multi_image: bool = True
    grid_rows: int = 8
    critic_hidden: int = 64
    critic_lr: float = 1e-3


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "sprite"
    device: str = "cpu"
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    eval: EvalConfig = EvalConfig()
    stages: StageIters = StageIters()

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def stage_config(self, stage: str) -> TrainConfig:
        """Training config with the stage's iteration count"""
        return self.train.model_copy(update={"iters": getattr(self.stages, stage)})


class ArchDescriptor(BaseModel):
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    channels: int = 3
    resolution: int = 32
    width_multiplier: float = 0.25
    options: Dict[str, Any] = {}


class LossReport(BaseModel):
    """Per-step loss values; every series has one entry per executed step."""

    name: str
    steps: List[int] = []
    series: Dict[str, List[float]] = {}

    def append(self, step: int, values: Dict[str, float]):
        if self.steps and set(values) != set(self.series):
            raise ValueError(f"Loss terms changed at step {step}: {sorted(values)} vs {sorted(self.series)}")
        self.steps.append(step)
        for term, value in values.items():
            self.series.setdefault(term, []).append(float(value))

    def moving_average(self, term: str, window: int = 100) -> List[float]:
        values = self.series.get(term, [])
        out = []
        total = 0.0
        for i, value in enumerate(values):
            total += value
            if i >= window:
                total -= values[i - window]
            out.append(total / min(i + 1, window))
        return out

    def head_tail_means(self, term: str, fraction: float = 0.1) -> tuple:
        values = self.series.get(term, [])
        if not values:
            return (0.0, 0.0)
        k = max(1, int(len(values) * fraction))
        return (sum(values[:k]) / k, sum(values[-k:]) / k)

    def to_rows(self) -> List[tuple]:
        """(step, term, value) rows in step order"""
        rows = []
        for i, step in enumerate(self.steps):
            for term in sorted(self.series):
                rows.append((step, term, self.series[term][i]))
        return rows


class FidelityReport(BaseModel):
    n: int
    mse_01: float
    mse_pm1: float
    worst_case: float
    # [0,1] convention, on the stored pairs_train and pairs_holdout shards
    train_mse_01: Optional[float] = None
    holdout_mse_01: Optional[float] = None

    @property
    def holdout_ratio(self) -> Optional[float]:
        if self.train_mse_01 is None or self.holdout_mse_01 is None:
            return None
        if self.train_mse_01 == 0.0:
            return 1.0 if self.holdout_mse_01 == 0.0 else float("inf")
        return self.holdout_mse_01 / self.train_mse_01


class FeatureReport(BaseModel):
    role: str
    identity_set: str
    identities: int
    margin: float
    accuracy: float
    chance: float


class RecoveryReport(BaseModel):
    per_slot: Dict[str, float]
    chance: Dict[str, float]
    exact_match: float
    n: int


class BoundLedger(BaseModel):
    lhs: float
    compliance_risk: float
    tid_risk: float
    constancy_risk: float
    discrepancy_proxy: float
    rhs_computable: float
    slack: str = "not estimable"
    lhs_within_rhs: bool


class MethodRow(BaseModel):
    method: str
    g_rank: Optional[int] = None
    e_rank: Optional[int] = None
    compliance: Optional[float] = None
    recovery: Optional[float] = None


class EvalReport(BaseModel):
    domain: str
    config_hash: str
    checkpoint_hashes: Dict[str, str] = {}
    rows: List[MethodRow] = []
    recovery: Dict[str, RecoveryReport] = {}
    manifold_distance: Dict[str, float] = {}
    fidelity: Optional[FidelityReport] = None
    bound: Optional[BoundLedger] = None
    discrepancy_proxy: Optional[float] = None
    gallery_size: int = 0
    probes: int = 0


class TensorEntry(BaseModel):
    file: str
    sha256: str
    shape: List[int]
    dtype: str = "float32"


class CheckpointManifest(BaseModel):
    name: str
    descriptor: ArchDescriptor
    step: int = 0
    seed: int = 0
    config_hash: str = ""
    init: str = "normal(0, 0.02)"
    hyperparameters: Dict[str, Any] = {}
    tensors: Dict[str, TensorEntry] = {}
    optimizers: Dict[str, Dict[str, Any]] = {}
    tensor_set_hash: str = ""


class ShardManifest(BaseModel):
    name: str
    spec_hash: str
    count: int
    seed: int
    resolution: int
    arrays: Dict[str, TensorEntry] = {}
    meta: Dict[str, Any] = {}
    tensor_set_hash: str = ""


class StageRecord(BaseModel):
    name: str
    inputs: Dict[str, str] = {}
    outputs: Dict[str, str] = {}
    started: datetime
    finished: datetime


class RunManifest(BaseModel):
    config: Dict[str, Any]
    config_hash: str
    seeds: Dict[str, int] = {}
    revision: str = "unknown"
    stages: List[StageRecord] = Field(default_factory=list)
