"""Food image classification through staged agent dialogues.

The pipeline feeds detected-object coordinates into prompts for one or more
chat agents, parses their replies against a fixed label vocabulary, and
scores the resulting predictions.
"""

from .backends import (
    ChatBackend,
    ChatRequest,
    HttpChatBackend,
    ImageAttachment,
    MockBackend,
    MockScript,
    RequestMeta,
    ScriptEntry,
    load_mock_script,
)
from .detection import (
    BoundingBox,
    BoxFormat,
    NmsConfig,
    PerceptionTokenSet,
    RawDetection,
    iou,
    load_detections,
    nms,
    normalize_box,
    perception_tokens,
)
from .dialogue import (
    DialogueTurn,
    Prediction,
    PredictionSource,
    Transcript,
    resolve_prediction,
    run_dialogue,
)
from .errors import (
    AmbiguousLabel,
    BackendUnavailable,
    DialogueFailed,
    DuplicateImageEntry,
    EmptyDataset,
    InvalidConfig,
    MalformedRecord,
    MalformedScript,
    MissingCategory,
    MissingReasoning,
    MissingVerdict,
    NonPositiveDimension,
    OptdialogError,
    OrderViolation,
    ParseError,
    UnknownImageId,
    UnknownLabel,
)
from .evaluation import (
    DatasetManifest,
    ManifestEntry,
    load_manifest,
    run_evaluation,
)
from .labels import LabelSpace, edit_distance, match_label, normalize_label
from .metrics import (
    ClassMetrics,
    ConfusionCounts,
    MetricsReport,
    confusion_counts,
    emit_reports,
    macro_metrics,
)
from .prompting import (
    AgentRole,
    Hypothesis,
    PromptBundle,
    Verdict,
    agent_order,
    build_opt_block,
    build_system_prompt,
    build_turn_prompt,
    format_hypothesis,
    parse_agent_output,
    template_version,
)
from .settings import AblationSetting, DecodingConfig, RunConfig

__version__ = "0.1.0"

__all__ = [
    "AblationSetting",
    "AgentRole",
    "AmbiguousLabel",
    "BackendUnavailable",
    "BoundingBox",
    "BoxFormat",
    "ChatBackend",
    "ChatRequest",
    "ClassMetrics",
    "ConfusionCounts",
    "DatasetManifest",
    "DecodingConfig",
    "DialogueFailed",
    "DialogueTurn",
    "DuplicateImageEntry",
    "EmptyDataset",
    "HttpChatBackend",
    "Hypothesis",
    "ImageAttachment",
    "InvalidConfig",
    "LabelSpace",
    "MalformedRecord",
    "MalformedScript",
    "ManifestEntry",
    "MetricsReport",
    "MissingCategory",
    "MissingReasoning",
    "MissingVerdict",
    "MockBackend",
    "MockScript",
    "NmsConfig",
    "NonPositiveDimension",
    "OptdialogError",
    "OrderViolation",
    "ParseError",
    "PerceptionTokenSet",
    "Prediction",
    "PredictionSource",
    "PromptBundle",
    "RawDetection",
    "RequestMeta",
    "RunConfig",
    "ScriptEntry",
    "Transcript",
    "UnknownImageId",
    "UnknownLabel",
    "Verdict",
    "agent_order",
    "build_opt_block",
    "build_system_prompt",
    "build_turn_prompt",
    "confusion_counts",
    "edit_distance",
    "emit_reports",
    "format_hypothesis",
    "iou",
    "load_detections",
    "load_manifest",
    "load_mock_script",
    "macro_metrics",
    "match_label",
    "nms",
    "normalize_box",
    "normalize_label",
    "parse_agent_output",
    "perception_tokens",
    "resolve_prediction",
    "run_dialogue",
    "run_evaluation",
    "template_version",
]
