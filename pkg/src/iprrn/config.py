"""Configuration dataclasses and the key=value config file format.

Config files are flat ``key = value`` lines grouped into ``[model]``,
``[train]`` and ``[degradation]`` sections (standard INI syntax, parsed
with :mod:`configparser`).  Ablation plans use the same format with one
``[variant <name>]`` section per row; see :func:`load_plan`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from configparser import ConfigParser, Error as ConfigParserError
from pathlib import Path
from typing import Optional, get_args, get_origin, get_type_hints

from .errors import ConfigError


@dataclass
class ModelConfig:
    """Architecture hyperparameters for the recurrent SR model.

    ``arch`` selects the reconstructor: ``iprrn`` (residual-dense trunk with
    a split temporal/spatial hidden state) or ``simple_recurrent`` (plain
    residual-block recurrence used as the portability baseline).  The
    prebuilder consumes ``ipnet_frames`` leading frames; 0 disables it and
    the initial hidden state falls back to zeros.

    The shallow feature width of the prebuilder is ``shallow_group_width``
    channels per input frame (112 total at the m=7 default), which keeps the
    grouped convolution valid for any frame count.
    """

    arch: str = "iprrn"
    scale: int = 4
    frame_channels: int = 3
    # recurrent reconstructor
    hidden_temporal: int = 128
    hidden_spatial: int = 48
    trunk_width: int = 128
    rdb_growth: int = 64
    n_rdb: int = 10
    # hidden-state prebuilder
    ipnet_frames: int = 7
    shallow_group_width: int = 16
    ipnet_width: int = 128
    n_res_blocks: int = 5
    se_enabled: bool = True
    se_reduction: int = 16
    # simple_recurrent baseline
    baseline_width: int = 64
    baseline_blocks: int = 5
    seed: int = 0

    @property
    def shallow_width(self) -> int:
        return self.ipnet_frames * self.shallow_group_width

    @property
    def hidden_channels(self) -> int:
        if self.arch == "simple_recurrent":
            return self.baseline_width
        return self.hidden_temporal + self.hidden_spatial

    @property
    def ipnet_enabled(self) -> bool:
        return self.ipnet_frames > 0

    def validate(self) -> "ModelConfig":
        if self.arch not in ("iprrn", "simple_recurrent"):
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.frame_channels < 1:
            raise ConfigError("frame_channels must be >= 1")
        if self.ipnet_frames < 0:
            raise ConfigError("ipnet_frames must be >= 0")
        if self.arch == "iprrn":
            want = self.scale * self.scale * self.frame_channels
            if self.hidden_spatial != want:
                raise ConfigError(
                    f"hidden_spatial must equal scale^2 * frame_channels "
                    f"({want}) for pixel-shuffle reconstruction, got "
                    f"{self.hidden_spatial}"
                )
            if self.hidden_temporal < 1:
                raise ConfigError("hidden_temporal must be >= 1")
            if self.trunk_width < 1 or self.rdb_growth < 1:
                raise ConfigError("trunk_width and rdb_growth must be >= 1")
            if self.n_rdb < 0:
                raise ConfigError("n_rdb must be >= 0")
        else:
            if self.baseline_width < 1 or self.baseline_blocks < 0:
                raise ConfigError("invalid simple_recurrent baseline sizes")
        if self.ipnet_enabled:
            if self.shallow_group_width < 1 or self.ipnet_width < 1:
                raise ConfigError("prebuilder widths must be >= 1")
            if self.n_res_blocks < 0:
                raise ConfigError("n_res_blocks must be >= 0")
            if self.se_enabled:
                c = self.shallow_width
                r = effective_reduction(c, self.se_reduction)
                if c % r != 0:
                    raise ConfigError(
                        f"se_reduction {r} must divide the shallow width {c}"
                    )
        return self


def effective_reduction(channels: int, reduction: int) -> int:
    """Channel-attention bottleneck ratio, falling back to ``channels``
    (a width-1 bottleneck) when there are fewer channels than the ratio."""
    return channels if channels < reduction else reduction


@dataclass
class TrainConfig:
    """Optimization schedule.  ``max_epochs`` has no sensible default and
    must always be supplied."""

    max_epochs: int
    batch_size: int = 8
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    decay_factor: float = 0.1
    decay_every: int = 60
    seq_len: int = 7
    seed: int = 0
    hr_patch: Optional[int] = None
    grad_clip: Optional[float] = None

    def validate(self) -> "TrainConfig":
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr0 <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ConfigError("invalid optimizer hyperparameters")
        if self.decay_factor <= 0 or self.decay_every < 1:
            raise ConfigError("invalid learning-rate decay schedule")
        if self.seq_len < 1:
            raise ConfigError("seq_len must be >= 1")
        if self.hr_patch is not None and self.hr_patch < 1:
            raise ConfigError("hr_patch must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be > 0")
        return self

    def lr_at(self, epoch: int) -> float:
        """Step-decayed learning rate for a 0-based epoch index; the decay
        applies at positive multiples of ``decay_every``."""
        return self.lr0 * self.decay_factor ** (epoch // self.decay_every)


@dataclass
class DegradationSpec:
    """HR -> LR forward model: isotropic Gaussian blur + stride subsampling,
    or an antialiased bicubic downscale."""

    blur_sigma: float = 1.6
    kernel_size: int = 13
    scale: int = 4
    mode: str = "gaussian_downsample"

    def validate(self) -> "DegradationSpec":
        if self.scale < 1:
            raise ConfigError("degradation scale must be >= 1")
        if self.mode not in ("gaussian_downsample", "bicubic"):
            raise ConfigError(f"unknown degradation mode {self.mode!r}")
        if self.mode == "gaussian_downsample":
            import math

            if self.blur_sigma <= 0:
                raise ConfigError("blur_sigma must be > 0")
            min_size = 2 * math.ceil(3 * self.blur_sigma) + 1
            if self.kernel_size % 2 == 0 or self.kernel_size < min_size:
                raise ConfigError(
                    f"kernel_size must be odd and >= {min_size} "
                    f"for sigma={self.blur_sigma}"
                )
        return self


@dataclass
class RunConfig:
    """One training run: architecture + schedule + degradation protocol."""

    model: ModelConfig
    train: TrainConfig
    degradation: DegradationSpec

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.degradation.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "degradation": dataclasses.asdict(self.degradation),
        }


@dataclass
class AblationVariant:
    name: str
    overrides: dict = field(default_factory=dict)
    init_from: Optional[str] = None


@dataclass
class AblationPlan:
    name: str
    variants: list = field(default_factory=list)


_SECTION_TYPES = {
    "model": ModelConfig,
    "train": TrainConfig,
    "degradation": DegradationSpec,
}

_BOOL_WORDS = {
    "true": True, "yes": True, "on": True, "1": True,
    "false": False, "no": False, "off": False, "0": False,
}


def _line_of(path: Path, section: str, key: str) -> int:
    """Best-effort 1-based line number of ``key`` inside ``[section]``."""
    in_section = False
    try:
        lines = path.read_text().splitlines()
    except OSError:
        return 0
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped.startswith("["):
            in_section = stripped == f"[{section}]"
        elif in_section:
            name = stripped.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return i
    return 0


def _convert(raw: str, ftype, path: Path, section: str, key: str):
    origin = get_origin(ftype)
    if origin is not None and type(None) in get_args(ftype):
        if raw.strip().lower() in ("none", ""):
            return None
        ftype = next(a for a in get_args(ftype) if a is not type(None))
    try:
        if ftype is bool:
            word = raw.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(raw)
            return _BOOL_WORDS[word]
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        line = _line_of(path, section, key)
        raise ConfigError(
            f"{path}:{line}: [{section}] {key} = {raw!r} is not a valid "
            f"{ftype.__name__}"
        ) from None


def _coerce_section(dc_type, items: dict, path: Path, section: str) -> dict:
    hints = get_type_hints(dc_type)
    names = {f.name for f in dataclasses.fields(dc_type)}
    out = {}
    for key, raw in items.items():
        if key not in names:
            line = _line_of(path, section, key)
            raise ConfigError(f"{path}:{line}: unknown key {key!r} in [{section}]")
        out[key] = _convert(raw, hints[key], path, section, key)
    return out


def _read_ini(path: Path) -> ConfigParser:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = ConfigParser()
    try:
        parser.read(path)
    except ConfigParserError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parser


def load_config(path) -> RunConfig:
    """Parse a run config file into a validated :class:`RunConfig`."""
    path = Path(path)
    parser = _read_ini(path)
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"{path}: unknown section [{section}]")
    model_kw = _coerce_section(ModelConfig, dict(parser.items("model")), path, "model") \
        if parser.has_section("model") else {}
    if not parser.has_section("train") or "max_epochs" not in parser["train"]:
        raise ConfigError(f"{path}: [train] max_epochs is required")
    train_kw = _coerce_section(TrainConfig, dict(parser.items("train")), path, "train")
    deg_kw = _coerce_section(DegradationSpec, dict(parser.items("degradation")),
                             path, "degradation") if parser.has_section("degradation") else {}
    return RunConfig(
        model=ModelConfig(**model_kw),
        train=TrainConfig(**train_kw),
        degradation=DegradationSpec(**deg_kw),
    ).validate()


def apply_overrides(run: RunConfig, overrides: dict) -> RunConfig:
    """Return a copy of ``run`` with ``section.key`` string overrides applied."""
    updates = {"model": {}, "train": {}, "degradation": {}}
    fake = Path("<override>")
    for dotted, raw in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in updates:
            raise ConfigError(f"override {dotted!r}: unknown section {section!r}")
        updates[section].update(
            _coerce_section(_SECTION_TYPES[section], {key: raw}, fake, section)
        )
    return RunConfig(
        model=dataclasses.replace(run.model, **updates["model"]),
        train=dataclasses.replace(run.train, **updates["train"]),
        degradation=dataclasses.replace(run.degradation, **updates["degradation"]),
    ).validate()


def load_plan(path) -> tuple[RunConfig, AblationPlan]:
    """Parse an ablation plan file.

    The file carries the shared base config in the usual sections plus one
    ``[variant <name>]`` section per row.  Variant keys are either dotted
    config overrides (``model.ipnet_frames = 3``) or ``init_from = <variant>``
    to warm-start from another variant's trained weights.
    """
    path = Path(path)
    parser = _read_ini(path)
    plan_name = path.stem
    variants = []
    base_items = {}
    for section in parser.sections():
        if section in _SECTION_TYPES:
            base_items[section] = dict(parser.items(section))
        elif section == "plan":
            plan_name = parser.get("plan", "name", fallback=plan_name)
            for key in parser["plan"]:
                if key != "name":
                    raise ConfigError(f"{path}: unknown key {key!r} in [plan]")
        elif section.startswith("variant"):
            name = section[len("variant"):].strip() or section
            overrides = {}
            init_from = None
            for key, raw in parser.items(section):
                if key == "init_from":
                    init_from = raw.strip()
                elif "." in key:
                    dotted_section, field_name = key.split(".", 1)
                    line = _line_of(path, section, key)
                    dc_type = _SECTION_TYPES.get(dotted_section)
                    if dc_type is None or field_name not in {
                        f.name for f in dataclasses.fields(dc_type)
                    }:
                        raise ConfigError(
                            f"{path}:{line}: unknown key {key!r} in [{section}]"
                        )
                    _convert(raw, get_type_hints(dc_type)[field_name],
                             path, section, field_name)
                    overrides[key] = raw
                else:
                    line = _line_of(path, section, key)
                    raise ConfigError(
                        f"{path}:{line}: unknown key {key!r} in [{section}]"
                    )
            variants.append(AblationVariant(name, overrides, init_from))
        else:
            raise ConfigError(f"{path}: unknown section [{section}]")
    if not variants:
        raise ConfigError(f"{path}: plan has no [variant ...] sections")
    known = {v.name for v in variants}
    for v in variants:
        if v.init_from is not None and v.init_from not in known:
            raise ConfigError(
                f"{path}: variant {v.name!r} init_from unknown variant "
                f"{v.init_from!r}"
            )
    if not parser.has_section("train") or "max_epochs" not in parser["train"]:
        raise ConfigError(f"{path}: [train] max_epochs is required")
    base = RunConfig(
        model=ModelConfig(**_coerce_section(
            ModelConfig, base_items.get("model", {}), path, "model")),
        train=TrainConfig(**_coerce_section(
            TrainConfig, base_items.get("train", {}), path, "train")),
        degradation=DegradationSpec(**_coerce_section(
            DegradationSpec, base_items.get("degradation", {}), path, "degradation")),
    ).validate()
    return base, AblationPlan(plan_name, variants)


def dump_config(run: RunConfig) -> str:
    """Render a RunConfig back to the key=value file format with every
    default materialized."""
    parts = []
    for section, obj in (("model", run.model), ("train", run.train),
                         ("degradation", run.degradation)):
        parts.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            parts.append(f"{f.name} = {'none' if value is None else value}")
        parts.append("")
    return "\n".join(parts)
