"""Prompt assembly and response parsing for the dialogue agents.

Templates live under templates/ as one file per (role, setting) pair with a
``---`` line separating the system section from the user section. Rendering
is plain placeholder substitution, never str.format, so template text can
contain braces freely.
"""

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources

from .detection import PerceptionTokenSet
from .errors import (
    MissingCategory,
    MissingReasoning,
    MissingVerdict,
    OrderViolation,
)
from .labels import LabelSpace, match_label
from .settings import AblationSetting


class AgentRole(str, Enum):
    GENERALIST = "generalist"
    FOOD_SCIENTIST = "food_scientist"
    VISION_ANALYST = "vision_analyst"
    DECISION_MAKER = "decision_maker"

    @property
    def display_name(self) -> str:
        return self.value.replace("_", " ")


class Verdict(str, Enum):
    AGREE = "AGREE"
    DISAGREE = "DISAGREE"
    REFINE = "REFINE"


@dataclass(frozen=True)
class Hypothesis:
    """One agent's parsed answer: a class index plus its justification."""

    label_index: int
    raw_label_text: str
    rationale: str
    verdict: Verdict | None = None


@dataclass(frozen=True)
class PromptBundle:
    """System text plus the conversation messages for one model call.

    messages holds (role, text) pairs starting with the initial user turn;
    retries append assistant/user exchanges. image_ref is an opaque key for
    the attached image so it participates in the digest.
    """

    system_text: str
    messages: tuple
    image_ref: str = ""

    def digest(self) -> str:
        doc = {
            "system": self.system_text,
            "messages": [list(pair) for pair in self.messages],
            "image": self.image_ref,
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_exchange(self, assistant_text: str, user_text: str) -> "PromptBundle":
        extended = self.messages + (("assistant", assistant_text), ("user", user_text))
        return PromptBundle(self.system_text, extended, self.image_ref)


OPT_HEADER = "Detected objects (normalized center format cx,cy,w,h in [0,1]):"
NO_OBJECTS_LINE = "no detected foreground objects"
HISTORY_HEADER = "Earlier hypotheses:"

_TEMPLATE_FILES = {
    (AgentRole.GENERALIST, AblationSetting.A): "generalist_a.txt",
    (AgentRole.GENERALIST, AblationSetting.B): "generalist_b.txt",
    (AgentRole.GENERALIST, AblationSetting.C): "generalist_c.txt",
    (AgentRole.FOOD_SCIENTIST, AblationSetting.D): "food_scientist_d.txt",
    (AgentRole.VISION_ANALYST, AblationSetting.D): "vision_analyst_d.txt",
    (AgentRole.DECISION_MAKER, AblationSetting.D): "decision_maker_d.txt",
}

_CATEGORY_RE = re.compile(r"category\s*:\s*([^;\n]+)", re.IGNORECASE)
_REASONING_RE = re.compile(
    r"reasoning\s*:\s*(.*?)(?=;\s*verdict\s*:|\n|$)", re.IGNORECASE
)
_VERDICT_RE = re.compile(r"verdict\s*:\s*(agree|disagree|refine)\b", re.IGNORECASE)
_BLANK_RUN_RE = re.compile(r"\n{3,}")


@lru_cache(maxsize=None)
def _load_template(name: str) -> str:
    return (resources.files("optdialog") / "templates" / name).read_text(
        encoding="utf-8"
    )


def template_version() -> str:
    return _load_template("VERSION").strip()


def agent_order(setting: AblationSetting) -> tuple:
    """Roles that speak in one round, in their fixed speaking order."""
    if setting.multi_agent:
        return (
            AgentRole.FOOD_SCIENTIST,
            AgentRole.VISION_ANALYST,
            AgentRole.DECISION_MAKER,
        )
    return (AgentRole.GENERALIST,)


def output_contract(role: AgentRole) -> str:
    base = "Category: <category>; Reasoning: <short justification>"
    if role is AgentRole.VISION_ANALYST:
        return base + "; Verdict: <AGREE, DISAGREE, or REFINE>"
    return base


def _pair_sections(role: AgentRole, setting: AblationSetting) -> tuple:
    try:
        filename = _TEMPLATE_FILES[(role, setting)]
    except KeyError:
        raise ValueError(
            f"no template for role {role.value!r} under setting {setting.value!r}"
        ) from None
    text = _load_template(filename)
    parts = text.split("\n---\n")
    if len(parts) != 2:
        raise ValueError(f"template {filename} must have exactly one '---' divider")
    return parts[0], parts[1]


def _tidy(text: str) -> str:
    return _BLANK_RUN_RE.sub("\n\n", text).strip()


def build_system_prompt(
    role: AgentRole, setting: AblationSetting, labels: LabelSpace
) -> str:
    system_tpl, _ = _pair_sections(role, setting)
    role_text = _load_template(f"role_{role.value}.txt").strip()
    class_list = "\n".join(f"- {name}" for name in labels.classes)
    rendered = system_tpl.replace("{role_instructions}", role_text)
    rendered = rendered.replace("{class_list}", class_list)
    return _tidy(rendered)


def build_opt_block(tokens: PerceptionTokenSet | None) -> str:
    """Serialize detected boxes for the prompt, one numbered line per box."""
    lines = [OPT_HEADER]
    if tokens is None or len(tokens) == 0:
        lines.append(NO_OBJECTS_LINE)
    else:
        for i, box in enumerate(tokens.boxes, start=1):
            lines.append(
                f"object {i}: center=({box.cx:.3f},{box.cy:.3f})"
                f" size=({box.w:.3f},{box.h:.3f})"
            )
    return "\n".join(lines)


def build_history(prior_turns, labels: LabelSpace) -> str:
    """Replay of earlier parsed hypotheses; failed turns leave no trace."""
    lines = []
    for turn in prior_turns:
        if turn.hypothesis is None:
            continue
        lines.append(
            f"round {turn.round}, {turn.role.display_name}: "
            f"{format_hypothesis(turn.hypothesis, labels)}"
        )
    if not lines:
        return ""
    return HISTORY_HEADER + "\n" + "\n".join(lines)


def build_turn_prompt(
    role: AgentRole,
    setting: AblationSetting,
    labels: LabelSpace,
    tokens: PerceptionTokenSet | None,
    prior_turns,
    image_ref: str = "",
) -> PromptBundle:
    """Assemble the call for the next turn, enforcing the speaking order.

    The position in the protocol is inferred from how many turns already
    happened; presenting the wrong role (or a prior-turn record whose
    role/round sequence is inconsistent) raises OrderViolation.
    """
    order = agent_order(setting)
    per_round = len(order)
    for i, turn in enumerate(prior_turns):
        expect_role = order[i % per_round]
        expect_round = i // per_round + 1
        if turn.role is not expect_role or turn.round != expect_round:
            raise OrderViolation(
                f"turn {i}: expected {expect_role.value} in round {expect_round}, "
                f"recorded {turn.role.value} in round {turn.round}"
            )
    n = len(prior_turns)
    expected = order[n % per_round]
    if role is not expected:
        raise OrderViolation(
            f"expected {expected.value} to speak next, got {role.value}"
        )

    system_text = build_system_prompt(role, setting, labels)
    _, user_tpl = _pair_sections(role, setting)
    rendered = user_tpl
    if setting.opt_enabled:
        rendered = rendered.replace("{opt_block}", build_opt_block(tokens))
    rendered = rendered.replace("{history}", build_history(prior_turns, labels))
    user_text = _tidy(rendered)
    return PromptBundle(
        system_text=system_text, messages=(("user", user_text),), image_ref=image_ref
    )


def build_retry_reminder(role: AgentRole, reason: str) -> str:
    tpl = _load_template("retry_reminder.txt")
    rendered = tpl.replace("{reason}", reason)
    rendered = rendered.replace("{contract}", output_contract(role))
    return _tidy(rendered)


def parse_agent_output(text: str, role: AgentRole, labels: LabelSpace) -> Hypothesis:
    """Extract the contract fields from a raw model reply.

    Raises MissingCategory / MissingReasoning / MissingVerdict when a
    required field is absent, and UnknownLabel / AmbiguousLabel when the
    category does not resolve to a listed class.
    """
    cat_match = _CATEGORY_RE.search(text)
    candidate = cat_match.group(1).strip() if cat_match else ""
    if not candidate:
        raise MissingCategory("no 'Category:' field in reply")
    reason_match = _REASONING_RE.search(text)
    rationale = reason_match.group(1).strip() if reason_match else ""
    if not rationale:
        raise MissingReasoning("no 'Reasoning:' field in reply")
    verdict = None
    verdict_match = _VERDICT_RE.search(text)
    if verdict_match:
        verdict = Verdict(verdict_match.group(1).upper())
    if role is AgentRole.VISION_ANALYST and verdict is None:
        raise MissingVerdict("no 'Verdict:' field in reply")
    label_index = match_label(candidate, labels)
    return Hypothesis(
        label_index=label_index,
        raw_label_text=candidate,
        rationale=rationale,
        verdict=verdict,
    )


def format_hypothesis(hypothesis: Hypothesis, labels: LabelSpace) -> str:
    """Render a hypothesis back into the reply contract, canonical spelling."""
    line = (
        f"Category: {labels.name_of(hypothesis.label_index)}; "
        f"Reasoning: {hypothesis.rationale}"
    )
    if hypothesis.verdict is not None:
        line += f"; Verdict: {hypothesis.verdict.value}"
    return line


__all__ = [
    "AgentRole",
    "Verdict",
    "Hypothesis",
    "PromptBundle",
    "OPT_HEADER",
    "NO_OBJECTS_LINE",
    "HISTORY_HEADER",
    "agent_order",
    "output_contract",
    "template_version",
    "build_system_prompt",
    "build_opt_block",
    "build_history",
    "build_turn_prompt",
    "build_retry_reminder",
    "parse_agent_output",
    "format_hypothesis",
]
