"""Dialogue orchestration: runs the agent protocol for one image.

A dialogue is T rounds of a fixed speaking order (one generalist turn per
round, or scientist/analyst/decider under the collaborative setting). Every
turn gets parse-failure retries with a corrective reminder; turns that never
parse are recorded as failed and the final answer falls back to the latest
usable hypothesis.
"""

import json
from dataclasses import dataclass, replace
from enum import Enum

from .backends import ChatBackend, ChatRequest, ImageAttachment, RequestMeta
from .detection import PerceptionTokenSet
from .errors import AmbiguousLabel, ParseError, UnknownLabel
from .labels import LabelSpace
from .prompting import (
    AgentRole,
    Hypothesis,
    Verdict,
    agent_order,
    build_retry_reminder,
    build_turn_prompt,
    parse_agent_output,
)
from .settings import RunConfig


class PredictionSource(str, Enum):
    """How the final label was obtained."""

    DECIDER = "decider"
    FALLBACK_VISION = "fallback_vision"
    FALLBACK_FOOD = "fallback_food"
    FALLBACK_GENERALIST = "fallback_generalist"
    ABSTAIN = "abstain"


@dataclass(frozen=True)
class DialogueTurn:
    """One agent's contribution, after retries have settled.

    prompt_digest fingerprints the initial prompt for the turn, before any
    retry reminder was appended. raw_response and retries_used describe the
    last attempt; retries_used is 0 when the first reply already parsed.
    """

    round: int
    role: AgentRole
    prompt_digest: str
    raw_response: str
    hypothesis: Hypothesis | None = None
    parse_error: dict | None = None
    retries_used: int = 0


@dataclass(frozen=True)
class Transcript:
    image_id: str
    turns: tuple
    final_round: int

    def to_json(self) -> str:
        doc = {
            "image_id": self.image_id,
            "final_round": self.final_round,
            "turns": [_turn_doc(turn) for turn in self.turns],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Transcript":
        doc = json.loads(text)
        turns = tuple(_turn_from_doc(raw) for raw in doc["turns"])
        return cls(
            image_id=doc["image_id"], turns=turns, final_round=doc["final_round"]
        )


@dataclass(frozen=True)
class Prediction:
    image_id: str
    label_index: int | None
    source: PredictionSource
    transcript_ref: str = ""


def _turn_doc(turn: DialogueTurn) -> dict:
    hyp = None
    if turn.hypothesis is not None:
        hyp = {
            "label_index": turn.hypothesis.label_index,
            "raw_label_text": turn.hypothesis.raw_label_text,
            "rationale": turn.hypothesis.rationale,
            "verdict": (
                turn.hypothesis.verdict.value if turn.hypothesis.verdict else None
            ),
        }
    return {
        "round": turn.round,
        "role": turn.role.value,
        "prompt_digest": turn.prompt_digest,
        "raw_response": turn.raw_response,
        "hypothesis": hyp,
        "parse_error": turn.parse_error,
        "retries_used": turn.retries_used,
    }


def _turn_from_doc(raw: dict) -> DialogueTurn:
    hyp = None
    if raw.get("hypothesis") is not None:
        h = raw["hypothesis"]
        hyp = Hypothesis(
            label_index=h["label_index"],
            raw_label_text=h["raw_label_text"],
            rationale=h["rationale"],
            verdict=Verdict(h["verdict"]) if h.get("verdict") else None,
        )
    return DialogueTurn(
        round=raw["round"],
        role=AgentRole(raw["role"]),
        prompt_digest=raw["prompt_digest"],
        raw_response=raw["raw_response"],
        hypothesis=hyp,
        parse_error=raw.get("parse_error"),
        retries_used=raw.get("retries_used", 0),
    )


def _retry_reason(exc: ParseError) -> str:
    if isinstance(exc, AmbiguousLabel):
        return (
            f"the category {exc.candidate!r} matches several listed classes "
            "equally well"
        )
    if isinstance(exc, UnknownLabel):
        return f"the category {exc.candidate!r} is not one of the listed classes"
    return str(exc)


def _execute_turn(
    role: AgentRole,
    rnd: int,
    image_id: str,
    image: ImageAttachment | None,
    tokens: PerceptionTokenSet | None,
    labels: LabelSpace,
    cfg: RunConfig,
    prior_turns: list,
    backend: ChatBackend,
) -> DialogueTurn:
    image_ref = image.digest_key() if image is not None else ""
    bundle = build_turn_prompt(
        role, cfg.setting, labels, tokens, prior_turns, image_ref
    )
    initial_digest = bundle.digest()
    raw = ""
    hypothesis = None
    error_doc = None
    attempt = 0
    for attempt in range(cfg.retry_limit + 1):
        request = ChatRequest(
            messages=(("system", bundle.system_text),) + bundle.messages,
            image=image,
            temperature=cfg.decoding.temperature,
            max_new_tokens=cfg.decoding.max_new_tokens,
            meta=RequestMeta(
                image_id=image_id, role=role.value, round=rnd, attempt=attempt
            ),
        )
        raw = backend.chat(request)
        try:
            hypothesis = parse_agent_output(raw, role, labels)
        except ParseError as exc:
            error_doc = {"type": type(exc).__name__, "detail": str(exc)}
            if attempt < cfg.retry_limit:
                bundle = bundle.with_exchange(
                    raw, build_retry_reminder(role, _retry_reason(exc))
                )
            continue
        error_doc = None
        break
    return DialogueTurn(
        round=rnd,
        role=role,
        prompt_digest=initial_digest,
        raw_response=raw,
        hypothesis=hypothesis,
        parse_error=error_doc,
        retries_used=attempt,
    )


def run_dialogue(
    image_id: str,
    image: ImageAttachment | None,
    tokens: PerceptionTokenSet | None,
    labels: LabelSpace,
    cfg: RunConfig,
    backend: ChatBackend,
) -> tuple:
    """Run the full protocol for one image. Returns (Prediction, Transcript).

    The role sequence always runs to completion; failed turns stay in the
    transcript but are skipped when later prompts replay the history.
    """
    order = agent_order(cfg.setting)
    tokens_used = tokens if cfg.setting.opt_enabled else None
    turns: list = []
    for rnd in range(1, cfg.rounds + 1):
        for role in order:
            turns.append(
                _execute_turn(
                    role, rnd, image_id, image, tokens_used, labels, cfg, turns, backend
                )
            )
    transcript = Transcript(
        image_id=image_id, turns=tuple(turns), final_round=cfg.rounds
    )
    label_index, source = resolve_prediction(transcript)
    prediction = Prediction(
        image_id=image_id, label_index=label_index, source=source
    )
    return prediction, transcript


def resolve_prediction(transcript: Transcript) -> tuple:
    """Pick the final label from a finished transcript.

    The last turn is the deciding one. If it failed to parse, collaborative
    runs fall back to the latest clean analyst hypothesis, then the latest
    clean scientist hypothesis; single-agent runs fall back to the latest
    clean earlier-round hypothesis. With nothing usable the run abstains.
    """
    turns = transcript.turns
    if not turns:
        return None, PredictionSource.ABSTAIN
    final = turns[-1]
    if final.hypothesis is not None:
        return final.hypothesis.label_index, PredictionSource.DECIDER
    multi_agent = any(t.role is not AgentRole.GENERALIST for t in turns)
    if multi_agent:
        for wanted, source in (
            (AgentRole.VISION_ANALYST, PredictionSource.FALLBACK_VISION),
            (AgentRole.FOOD_SCIENTIST, PredictionSource.FALLBACK_FOOD),
        ):
            for turn in reversed(turns):
                if turn.role is wanted and turn.hypothesis is not None:
                    return turn.hypothesis.label_index, source
        return None, PredictionSource.ABSTAIN
    for turn in reversed(turns[:-1]):
        if turn.hypothesis is not None:
            return (
                turn.hypothesis.label_index,
                PredictionSource.FALLBACK_GENERALIST,
            )
    return None, PredictionSource.ABSTAIN


def with_transcript_ref(prediction: Prediction, ref: str) -> Prediction:
    return replace(prediction, transcript_ref=ref)
