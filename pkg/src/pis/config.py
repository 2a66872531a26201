"""Run configuration: strict-schema JSON documents for every stage."""

from __future__ import annotations

import json

from pydantic import BaseModel, ConfigDict, Field, ValidationError


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GenConfig(StrictModel):
    scenario: str = "subsurface"
    n: int = 200
    grid: int = 32
    seed: int = 0
    params: dict = Field(default_factory=dict)


class ModelConfig(StrictModel):
    """Velocity-network architecture. Defaults are the desk-scale setting;
    the full-scale setting from the reference configuration is expressible
    (set_dim 256, heads 8, inducing 32, global_dim 512, base 64,
    mults [1,2,4,8], res_blocks 3, bottleneck_heads 16)."""

    grid: int = 32
    n_channels: int = 21
    set_dim: int = 64
    set_heads: int = 4
    inducing: int = 16
    seed_grid: int = 8           # spatial path pools onto seed_grid^2 seeds
    global_dim: int = 128
    time_dim: int = 128
    base_channels: int = 24
    channel_mults: list = Field(default_factory=lambda: [1, 2, 4])
    res_blocks: int = 2
    bottleneck_heads: int = 4
    groups: int = 8
    dropout: float = 0.1
    baseline: bool = False       # dense-interpolation conditioning, no set encoder

    def validate_grid(self):
        levels = len(self.channel_mults)
        if self.grid % (2 ** (levels - 1)):
            raise ValueError(
                f"grid {self.grid} not divisible by 2^{levels - 1} for {levels} levels")
        if self.set_dim % self.set_heads:
            raise ValueError("set_dim must be divisible by set_heads")
        return self


class TrainConfig(StrictModel):
    stage1_epochs: int = 30
    stage2_epochs: int = 100
    batch: int = 32
    lr: float = 1e-4
    lr_min: float = 1e-6
    restart_epochs: int = 100    # first cosine cycle, doubling afterwards
    grad_clip: float = 1.0
    lambda_var: float = 0.001
    k_masks: int = 2
    budget_max: int = 0          # 0 -> H*W/4
    budget_min: int = 8
    val_fraction: float = 0.1
    val_budget: int = 32
    val_members: int = 2
    val_steps: int = 10
    val_samples: int = 4
    checkpoint_every: int = 20
    seed: int = 0
    noise_sigma: float = 0.0
    uniform_budget_ablation: bool = False
    variance_across_batch: bool = False
    max_recoveries: int = 3


class SampleConfig(StrictModel):
    ensemble: int = 32
    steps: int = 50
    seed: int = 0


class EvalConfig(StrictModel):
    budgets: list = Field(default_factory=lambda: [8, 16, 32, 64])
    noise_levels: list = Field(default_factory=lambda: [0.0])
    layouts_per_point: int = 20
    ensemble: int = 32
    steps: int = 50
    seed: int = 0
    max_samples: int = 0         # 0 -> whole test set


class MiConfig(StrictModel):
    budgets: list = Field(default_factory=lambda: [8, 16, 32, 64])
    n_prior: int = 200
    n_post: int = 200
    n_instances: int = 4
    k: int = 3
    pca_dim: int = 16
    ensemble_steps: int = 50
    seed: int = 0


class RunConfig(StrictModel):
    gen: GenConfig = Field(default_factory=GenConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sample: SampleConfig = Field(default_factory=SampleConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    mi: MiConfig = Field(default_factory=MiConfig)


class ConfigError(ValueError):
    pass


def load_run_config(path_or_dict):
    """Parse and validate a run config; unknown keys are rejected."""
    if isinstance(path_or_dict, dict):
        doc = path_or_dict
    else:
        with open(path_or_dict) as fh:
            doc = json.load(fh)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"config error at '{loc}': {first['msg']}") from exc
