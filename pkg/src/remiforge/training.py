"""Two-stage training: Adam with per-group gradient clipping, linear warmup
into cosine decay, and stage-dependent parameter freezing.

Pretraining updates only the backbone, leaving adapters at their zero
initialization; fine-tuning updates only the adapters and the composer
embedding table unless full fine-tuning is requested. The main group clips
its global gradient norm at 0.5 and the adapter group at 2.0.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

try:
    import tomllib
except ModuleNotFoundError:  # Python <= 3.10
    import tomli as tomllib

from . import corpus as corpus_mod
from .errors import ConfigError, NonFiniteLoss
from .model import (
    Decoder,
    ModelConfig,
    adapter_parameter_names,
    batch_to_tensor,
    init_model,
    load_checkpoint,
    loss as model_loss,
    save_checkpoint,
)

STAGES = ("pretrain", "finetune")
STAGE_DEFAULTS = {
    "pretrain": {"peak_lr": 1e-4, "warmup_steps": 1000},
    "finetune": {"peak_lr": 1e-5, "warmup_steps": 500},
}
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainSchedule:
    stage: str
    peak_lr: float
    warmup_steps: int
    total_steps: int = 500_000
    clip_main: float = 0.5
    clip_adapter: float = 2.0
    full_finetune: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.peak_lr <= 0 or self.warmup_steps < 0:
            raise ConfigError("peak_lr must be positive, warmup_steps >= 0")
        if self.total_steps <= self.warmup_steps:
            raise ConfigError("total_steps must exceed warmup_steps")


def make_schedule(stage: str, **overrides) -> TrainSchedule:
    base = dict(STAGE_DEFAULTS.get(stage, STAGE_DEFAULTS["pretrain"]))
    base.update(overrides)
    return TrainSchedule(stage=stage, **base)


def learning_rate(schedule: TrainSchedule, step: int) -> float:
    """0 at step 0, peak at the end of warmup, cosine down to peak/10."""
    if step <= schedule.warmup_steps:
        if schedule.warmup_steps == 0:
            return schedule.peak_lr
        return schedule.peak_lr * step / schedule.warmup_steps
    t = min(step, schedule.total_steps) - schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    floor = schedule.peak_lr / 10.0
    return floor + (schedule.peak_lr - floor) * 0.5 * (1 + math.cos(math.pi * t / span))


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_group_(params, max_norm: float) -> float:
    """Scale the group's gradients so their global norm is at most max_norm;
    returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    norm = torch.sqrt(sum((g * g).sum() for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g.mul_(scale)
    return float(norm)


def parameter_groups(model: Decoder):
    """(main, adapter) parameter name lists in declaration order."""
    adapter_names = adapter_parameter_names(model)
    main, adapter = [], []
    for name, _ in model.named_parameters():
        (adapter if name in adapter_names else main).append(name)
    return main, adapter


def backward_and_step(model: Decoder, opt: OptimizerState,
                      schedule: TrainSchedule, batch_ids: torch.Tensor) -> float:
    """One training step; returns the (pre-update) loss value."""
    model.zero_grad(set_to_none=True)
    value = model_loss(model, batch_ids)
    if not torch.isfinite(value):
        raise NonFiniteLoss(
            f"loss is {float(value.detach())} at step {opt.step + 1}")
    value.backward()

    main_names, adapter_names = parameter_groups(model)
    params = dict(model.named_parameters())
    if schedule.stage == "pretrain":
        trained = [(main_names, schedule.clip_main)]
    elif schedule.full_finetune:
        trained = [(main_names, schedule.clip_main),
                   (adapter_names, schedule.clip_adapter)]
    else:
        trained = [(adapter_names, schedule.clip_adapter)]

    opt.step += 1
    lr = learning_rate(schedule, opt.step)
    beta1, beta2 = ADAM_BETAS
    correction1 = 1 - beta1 ** opt.step
    correction2 = 1 - beta2 ** opt.step
    with torch.no_grad():
        for names, threshold in trained:
            clip_group_([params[n] for n in names], threshold)
            for name in names:
                p = params[name]
                if p.grad is None:
                    continue
                if name not in opt.m:
                    opt.m[name] = torch.zeros_like(p)
                    opt.v[name] = torch.zeros_like(p)
                m, v = opt.m[name], opt.v[name]
                m.mul_(beta1).add_(p.grad, alpha=1 - beta1)
                v.mul_(beta2).addcmul_(p.grad, p.grad, value=1 - beta2)
                denom = (v / correction2).sqrt_().add_(ADAM_EPS)
                p.addcdiv_(m, denom, value=-lr / correction1)
    return float(value.detach())


@dataclass(frozen=True)
class TrainRun:
    model: ModelConfig
    schedule: TrainSchedule
    steps: int
    batch_size: int
    index_path: str
    init_checkpoint: str | None = None
    sampler_p: float = 0.99
    sampler_temperature: float = 1.0


_MODEL_KEYS = {"n_layers", "hidden", "heads", "context", "vocab_size",
               "adapter_bottleneck", "rel_pos_window", "adapter_layers"}
_TRAIN_KEYS = {"stage", "steps", "batch_size", "peak_lr", "warmup_steps",
               "total_steps", "clip_main", "clip_adapter", "full_finetune",
               "init_checkpoint"}
_DATA_KEYS = {"index"}
_SAMPLER_KEYS = {"p", "temperature"}


def load_train_config(path) -> TrainRun:
    """Parse the TOML run description ([model], [train], [data], [sampler])."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from None
    for section, allowed in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS),
                             ("data", _DATA_KEYS), ("sampler", _SAMPLER_KEYS)):
        extra = set(raw.get(section, {})) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
    unknown_sections = set(raw) - {"model", "train", "data", "sampler"}
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")

    model_raw = dict(raw.get("model", {}))
    if "adapter_layers" in model_raw and model_raw["adapter_layers"] is not None:
        model_raw["adapter_layers"] = tuple(model_raw["adapter_layers"])
    model_cfg = ModelConfig(**model_raw)

    train_raw = dict(raw.get("train", {}))
    stage = train_raw.pop("stage", None)
    if stage is None:
        raise ConfigError("missing required key [train] stage")
    steps = train_raw.pop("steps", None)
    if steps is None or steps < 1:
        raise ConfigError("missing or non-positive [train] steps")
    batch_size = train_raw.pop("batch_size", 16)
    init_checkpoint = train_raw.pop("init_checkpoint", None)
    schedule = make_schedule(stage, **train_raw)

    data = raw.get("data", {})
    if "index" not in data:
        raise ConfigError("missing required key [data] index")
    sampler = raw.get("sampler", {})
    return TrainRun(
        model=model_cfg,
        schedule=schedule,
        steps=int(steps),
        batch_size=int(batch_size),
        index_path=str(data["index"]),
        init_checkpoint=init_checkpoint,
        sampler_p=float(sampler.get("p", 0.99)),
        sampler_temperature=float(sampler.get("temperature", 1.0)),
    )


def config_hash(run: TrainRun) -> str:
    payload = {
        "model": {**run.model.__dict__},
        "schedule": {**run.schedule.__dict__},
        "steps": run.steps,
        "batch_size": run.batch_size,
        "index": run.index_path,
        "init_checkpoint": run.init_checkpoint,
        "sampler": {"p": run.sampler_p, "temperature": run.sampler_temperature},
    }
    if payload["model"]["adapter_layers"] is not None:
        payload["model"]["adapter_layers"] = list(payload["model"]["adapter_layers"])
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def train(run: TrainRun, seed: int, index=None, model: Decoder | None = None,
          log=None) -> tuple[Decoder, dict]:
    """Run the configured number of steps; returns (model, run summary)."""
    if index is None:
        index = corpus_mod.load_index(run.index_path)
    if model is None:
        if run.init_checkpoint is not None:
            model = load_checkpoint(run.init_checkpoint, expected_config=run.model)
        else:
            model = init_model(run.model, seed=seed)
    rng = np.random.default_rng(seed)
    opt = OptimizerState()
    final_loss = math.nan
    for step in range(1, run.steps + 1):
        segments = corpus_mod.sample_batch(
            index, run.batch_size, run.model.context, run.schedule.stage, rng)
        batch = batch_to_tensor(segments)
        final_loss = backward_and_step(model, opt, run.schedule, batch)
        if log is not None and (step % 50 == 0 or step == run.steps):
            print(f"step {step}/{run.steps} loss {final_loss:.4f}", file=log)
    summary = {
        "stage": run.schedule.stage,
        "steps": run.steps,
        "seed": seed,
        "config_hash": config_hash(run),
        "final_loss": final_loss,
        "torch_threads": torch.get_num_threads(),
    }
    return model, summary


def train_to_file(run: TrainRun, seed: int, out_path, log=sys.stderr) -> dict:
    """Train and write the checkpoint plus a deterministic run summary."""
    model, summary = train(run, seed, log=log)
    save_checkpoint(model, out_path)
    run_json = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    Path(str(out_path) + ".run.json").write_text(run_json, encoding="utf-8")
    return summary
