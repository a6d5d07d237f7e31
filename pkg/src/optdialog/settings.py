"""Run configuration: pipeline settings a-d and decoding/orchestration knobs."""

from dataclasses import dataclass, field, replace
from enum import Enum

from .detection import NmsConfig
from .errors import InvalidConfig


class AblationSetting(str, Enum):
    """Cumulative pipeline configurations.

    a: bare prompt, single turn
    b: adds perception tokens (box coordinates in the prompt)
    c: adds multi-turn self-refinement
    d: adds the three-agent collaboration protocol
    """

    A = "a"
    B = "b"
    C = "c"
    D = "d"

    @property
    def opt_enabled(self) -> bool:
        return self is not AblationSetting.A

    @property
    def multi_turn(self) -> bool:
        return self in (AblationSetting.C, AblationSetting.D)

    @property
    def multi_agent(self) -> bool:
        return self is AblationSetting.D

    @property
    def default_rounds(self) -> int:
        return 2 if self.multi_turn else 1


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float = 0.2
    max_new_tokens: int = 512


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one evaluation run.

    rounds=None resolves to the setting's default (1 for a/b, 2 for c/d).
    detector_image_size is the pixel frame the detections file coordinates
    refer to (the detector's input resolution).
    """

    setting: AblationSetting = AblationSetting.D
    rounds: int | None = None
    decoding: DecodingConfig = field(default_factory=DecodingConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    retry_limit: int = 2
    parallelism: int = 1
    detector_image_size: tuple[int, int] = (640, 640)

    def __post_init__(self):
        problems = []
        if self.rounds is None:
            object.__setattr__(self, "rounds", self.setting.default_rounds)
        if self.rounds < 1:
            problems.append(f"rounds: must be >= 1, got {self.rounds}")
        elif self.rounds != 1 and not self.setting.multi_turn:
            problems.append(
                f"rounds: setting {self.setting.value!r} is single-turn, rounds must be 1"
            )
        if self.decoding.temperature < 0:
            problems.append(f"temperature: must be >= 0, got {self.decoding.temperature}")
        if self.decoding.max_new_tokens < 1:
            problems.append(f"max_new_tokens: must be >= 1, got {self.decoding.max_new_tokens}")
        if self.retry_limit < 0:
            problems.append(f"retry_limit: must be >= 0, got {self.retry_limit}")
        if self.parallelism < 1:
            problems.append(f"parallelism: must be >= 1, got {self.parallelism}")
        w, h = self.detector_image_size
        if w <= 0 or h <= 0:
            problems.append(f"detector_image_size: must be positive, got {w}x{h}")
        if problems:
            raise InvalidConfig("; ".join(problems))

    def for_setting(self, setting: AblationSetting) -> "RunConfig":
        """Same knobs under another setting, with rounds re-derived when needed."""
        rounds = self.rounds if setting.multi_turn else 1
        return replace(self, setting=setting, rounds=rounds)
