"""Run configuration: the model, the ordered phase ladder and evaluation defaults.

Run configs are canonical JSON with a versioned schema. Unknown keys at any level
are rejected, and every validation error names the offending field.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from packaging.version import Version
from upath import UPath

import hsa_lab.file_io as lab_io
from hsa_lab.datagen.corpus import check_mixture
from hsa_lab.datagen.tasks import TASKS
from hsa_lab.model.config import ConfigValidationError, ModelConfig, canonical_json

# pylint: disable=too-many-instance-attributes

SCHEMA_VERSION = 1
PHASE_KINDS = ("warmup", "pretrain", "midtrain")
WARMUP_STRATEGIES = ("short-swa-full-hsa", "self-copy", "none")
FULL_COVERAGE = "full"
PRESET_PACKAGE = "hsa_lab.configs"


def _reject_unknown(values: dict, cls, prefix: str):
    if not isinstance(values, dict):
        raise ConfigValidationError(prefix, "should be a mapping")
    known = {item.name for item in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigValidationError(f"{prefix}.{key}" if prefix else key, "unknown field")


@dataclass
class PhaseSpec:
    """One stage of the curriculum. Window and top-k are runtime knobs of the same weights."""

    name: str
    kind: str = "pretrain"
    """warmup, pretrain or midtrain"""
    context_length: int = 2048
    """training sequence length"""
    swa_window: int | None = None
    """sliding window for this phase; None keeps the model's"""
    top_k: int | str | None = None
    """chunks retrieved per token; "full" covers the whole sequence; None keeps the model's"""
    mixture: dict = field(default_factory=lambda: {"lm": 1.0})
    """generator name -> sampling weight"""
    steps: int = 100
    """optimizer steps (ignored when ``token_budget`` is set)"""
    token_budget: int | None = None
    """total training tokens; converted to steps of ``batch_size * context_length``"""
    batch_size: int = 8
    lr: float = 3e-4
    """peak learning rate"""
    warmup_steps: int = 0
    """linear learning-rate warmup steps"""
    schedule: str = "constant"
    """constant or cosine after warmup"""
    min_lr_ratio: float = 0.1
    """cosine floor as a fraction of ``lr``"""
    max_grad_norm: float = 1.0
    weight_decay: float = 0.01
    probe_probability: float = 0.01
    """chance that a training row is replaced by a retrieval probe"""
    probe_tasks: list = field(default_factory=lambda: ["sniah"])
    probe_every: int = 0
    """evaluate held-out probes every N steps; 0 disables"""
    probe_length: int | None = None
    """held-out probe length; defaults to the context length"""
    probe_samples: int = 16
    """held-out probes per evaluation"""
    completion_threshold: float | None = None
    """stop the phase once probe accuracy reaches this value"""
    completion_consecutive: int = 2
    """consecutive probe evaluations at or above the threshold"""
    checkpoint_every: int = 0
    """intermediate checkpoint interval in steps; 0 writes only the final checkpoint"""
    effective_length: int | None = None
    """fact distance of "effective" mixture documents"""

    def __post_init__(self):
        self._check_arguments()

    def _check_arguments(self):
        prefix = f"phases[{self.name}]"

        def fail(key, message):
            raise ConfigValidationError(f"{prefix}.{key}", message)

        if not self.name or not isinstance(self.name, str):
            raise ConfigValidationError("phases.name", "every phase needs a name")
        if self.kind not in PHASE_KINDS:
            fail("kind", f"should be one of {', '.join(PHASE_KINDS)}")
        for key in ("context_length", "steps", "batch_size", "probe_samples", "completion_consecutive"):
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                fail(key, f"should be a positive integer, got {value!r}")
        for key in ("swa_window", "token_budget", "probe_length", "effective_length"):
            value = getattr(self, key)
            if value is not None and (not isinstance(value, int) or value < 1):
                fail(key, f"should be a positive integer, got {value!r}")
        if self.top_k is not None and self.top_k != FULL_COVERAGE:
            if not isinstance(self.top_k, int) or self.top_k < 1:
                fail("top_k", f'should be a positive integer or "{FULL_COVERAGE}", got {self.top_k!r}')
        try:
            self.mixture = check_mixture(self.mixture)
        except ValueError as error:
            fail("mixture", str(error))
        if self.lr < 0:
            fail("lr", "should be non-negative")
        if self.warmup_steps < 0:
            fail("warmup_steps", "should be non-negative")
        if self.schedule not in ("constant", "cosine"):
            fail("schedule", "should be one of constant, cosine")
        if not 0.0 <= self.min_lr_ratio <= 1.0:
            fail("min_lr_ratio", "should be within [0, 1]")
        if self.max_grad_norm <= 0:
            fail("max_grad_norm", "should be positive")
        if self.weight_decay < 0:
            fail("weight_decay", "should be non-negative")
        if not 0.0 <= self.probe_probability <= 1.0:
            fail("probe_probability", "should be within [0, 1]")
        unknown = [task for task in self.probe_tasks if task not in TASKS]
        if not self.probe_tasks or unknown:
            fail("probe_tasks", f"should be a non-empty list of {', '.join(TASKS)}")
        if self.probe_every < 0 or self.checkpoint_every < 0:
            fail("probe_every", "intervals should be non-negative")
        if self.completion_threshold is not None:
            if not 0.0 < self.completion_threshold <= 1.0:
                fail("completion_threshold", "should be within (0, 1]")
            if not self.probe_every:
                fail("probe_every", "a completion threshold needs periodic probes")

    @property
    def total_steps(self) -> int:
        if self.token_budget:
            return max(1, math.ceil(self.token_budget / (self.batch_size * self.context_length)))
        return self.steps

    @property
    def resolved_probe_length(self) -> int:
        return self.probe_length or self.context_length

    def resolve_top_k(self, config: ModelConfig, length: int | None = None) -> int:
        """Top-k for sequences of ``length`` (default: the context length)."""
        if self.top_k is None:
            return config.top_k
        if self.top_k == FULL_COVERAGE:
            return max(1, math.ceil((length or self.context_length) / config.chunk_size))
        return int(self.top_k)

    def runtime_config(self, config: ModelConfig, length: int | None = None) -> ModelConfig:
        """The model config with this phase's window and top-k."""
        return config.with_runtime(swa_window=self.swa_window, top_k=self.resolve_top_k(config, length))

    @classmethod
    def from_dict(cls, values: dict, index: int = 0) -> PhaseSpec:
        _reject_unknown(values, cls, f"phases[{index}]")
        if "name" not in values:
            raise ConfigValidationError(f"phases[{index}].name", "required phase field is missing")
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EvaluationSpec:
    """Defaults for the ``eval`` command of a run."""

    task: str = "sniah"
    lengths: list = field(default_factory=lambda: [2048, 4096, 8192, 16384])
    depths: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    samples_per_cell: int = 50
    eval_top_k: list = field(default_factory=list)
    """additional top-k values to sweep; each produces its own grid"""
    in_domain_length: int | None = None
    """training-context boundary drawn on figures; defaults to the last phase's context"""

    def __post_init__(self):
        if self.task not in TASKS or self.task == "selfcopy":
            raise ConfigValidationError("evaluation.task", "should be one of sniah, mqniah, vartrack")
        if not self.lengths or any(int(length) < 1 for length in self.lengths):
            raise ConfigValidationError("evaluation.lengths", "should be a non-empty list of positive values")
        if not self.depths or any(not 0.0 <= float(depth) <= 1.0 for depth in self.depths):
            raise ConfigValidationError("evaluation.depths", "should be a non-empty list within [0, 1]")
        if self.samples_per_cell < 1:
            raise ConfigValidationError("evaluation.samples_per_cell", "should be positive")
        if any(int(top_k) < 1 for top_k in self.eval_top_k):
            raise ConfigValidationError("evaluation.eval_top_k", "should contain positive values")

    @classmethod
    def from_dict(cls, values: dict) -> EvaluationSpec:
        _reject_unknown(values, cls, "evaluation")
        return cls(**values)


@dataclass
class RunConfig:
    """A complete experiment: model architecture, phase ladder, warm-up strategy, evaluation."""

    name: str
    model: ModelConfig
    phases: list[PhaseSpec]
    seed: int = 0
    warmup_strategy: str = "short-swa-full-hsa"
    """short-swa-full-hsa, self-copy, or none"""
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self._check_arguments()

    def _check_arguments(self):
        if Version(str(self.schema_version)) != Version(str(SCHEMA_VERSION)):
            raise ConfigValidationError(
                "schema_version",
                f"unsupported schema version {self.schema_version} (expected {SCHEMA_VERSION})",
            )
        if not self.name:
            raise ConfigValidationError("name", "run name is required")
        if not self.phases:
            raise ConfigValidationError("phases", "at least one phase is required")
        names = [phase.name for phase in self.phases]
        if len(set(names)) != len(names):
            raise ConfigValidationError("phases", "phase names should be unique")
        if self.warmup_strategy not in WARMUP_STRATEGIES:
            raise ConfigValidationError("warmup_strategy", f"should be one of {', '.join(WARMUP_STRATEGIES)}")

        for phase in self.phases:
            prefix = f"phases[{phase.name}]"
            runtime = phase.runtime_config(self.model)
            window = runtime.swa_window
            if phase.completion_threshold is not None and phase.resolved_probe_length < 4 * window:
                raise ConfigValidationError(
                    f"{prefix}.probe_length",
                    f"completion probes should be at least 4x the window ({4 * window} tokens)",
                )
            if phase.kind != "warmup":
                continue
            if self.warmup_strategy == "none":
                raise ConfigValidationError(
                    f"{prefix}.kind", 'warmup phases need a warmup_strategy other than "none"'
                )
            if self.warmup_strategy == "short-swa-full-hsa":
                if runtime.top_k * self.model.chunk_size < phase.context_length:
                    raise ConfigValidationError(
                        f"{prefix}.top_k", "short-swa-full-hsa warm-up needs top_k covering the full sequence"
                    )
            elif self.warmup_strategy == "self-copy" and not phase.mixture.get("selfcopy"):
                raise ConfigValidationError(
                    f"{prefix}.mixture", 'self-copy warm-up needs a "selfcopy" component'
                )

    @property
    def in_domain_length(self) -> int:
        return self.evaluation.in_domain_length or self.phases[-1].context_length

    @classmethod
    def from_dict(cls, values: dict) -> RunConfig:
        _reject_unknown(values, cls, "")
        for key in ("name", "model", "phases"):
            if key not in values:
                raise ConfigValidationError(key, "required field is missing")
        if not isinstance(values["phases"], list):
            raise ConfigValidationError("phases", "should be a list")
        kwargs = dict(values)
        kwargs["model"] = ModelConfig.from_dict(values["model"])
        kwargs["phases"] = [PhaseSpec.from_dict(phase, index) for index, phase in enumerate(values["phases"])]
        kwargs["evaluation"] = EvaluationSpec.from_dict(values.get("evaluation", {}))
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path | UPath) -> RunConfig:
        return cls.from_dict(lab_io.load_json_file(path))

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "seed": self.seed,
            "model": self.model.to_dict(),
            "phases": [phase.to_dict() for phase in self.phases],
            "warmup_strategy": self.warmup_strategy,
            "evaluation": dataclasses.asdict(self.evaluation),
        }

    def canonical_json(self) -> str:
        return canonical_json(self.to_dict())

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def preset_names() -> list[str]:
    """Names of the run configs shipped with the package."""
    files = resources.files(PRESET_PACKAGE).iterdir()
    return sorted(item.name[: -len(".json")] for item in files if item.name.endswith(".json"))


def load_run_config(config: str | Path | UPath | dict | RunConfig) -> RunConfig:
    """Load a run config from a file path, a preset name, or a dictionary.

    Raises:
        FileNotFoundError: if ``config`` is neither an existing file nor a preset name
        ConfigValidationError: if the config is invalid
    """
    if isinstance(config, RunConfig):
        return config
    if isinstance(config, dict):
        return RunConfig.from_dict(config)
    path = lab_io.get_upath(config)
    if path.exists():
        return RunConfig.from_file(path)
    preset = resources.files(PRESET_PACKAGE).joinpath(f"{config}.json")
    if preset.is_file():
        return RunConfig.from_dict(json.loads(preset.read_text(encoding="utf-8")))
    raise FileNotFoundError(f"no config file or preset named {config} (presets: {', '.join(preset_names())})")
