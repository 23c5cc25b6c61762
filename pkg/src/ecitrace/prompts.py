"""Prompt construction and answer parsing.

Template bodies live as text files under ``ecitrace/templates`` so they can be
edited without touching code. The rewrite headers and the two intervention
sentences are covered by golden-fixture tests and must not drift.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .corpus.records import EventPair, Label
from .errors import ConfigError, ValidationError


class TemplateId(str, Enum):
    ZERO_SHOT = "zero_shot"
    ZERO_SHOT_COT = "zero_shot_cot"
    FEW_SHOT_ICL = "few_shot_icl"
    REWRITE_OFFICIAL = "rewrite_official"
    REWRITE_OURS = "rewrite_ours"
    INTERVENTION_WRONG = "intervention_wrong"


class Answer(str, Enum):
    YES = "Yes"
    NO = "No"
    UNPARSEABLE = "Unparseable"


# Injected when the gold label is Causal / NonCausal respectively: the claim
# always contradicts the label.
INTERVENTION_FOR_CAUSAL = (
    "You may refer to the provided information that there is no causal "
    "relationship between {event_a} and {event_b}."
)
INTERVENTION_FOR_NON_CAUSAL = (
    "You may refer to the provided information that there is a causal "
    "relationship between {event_a} and {event_b}."
)

_SLOT_RE = re.compile(r"\{(context|event_a|event_b|demos|instruction|reference|intervention)\}")


def template_body(template_id: TemplateId) -> str:
    return resources.files("ecitrace.templates").joinpath(f"{template_id.value}.txt").read_text("utf-8")


def _render(body: str, slots: dict[str, str]) -> str:
    """Fill named slots. Slot values are inserted verbatim and never rescanned."""
    out: list[str] = []
    pos = 0
    for m in _SLOT_RE.finditer(body):
        name = m.group(1)
        if name not in slots:
            raise ConfigError(f"template slot {{{name}}} has no value")
        out.append(body[pos:m.start()])
        out.append(slots[name])
        pos = m.end()
    out.append(body[pos:])
    return "".join(out)


def render_mentions(pair: EventPair) -> tuple[str, str]:
    """Angle-bracketed trigger mentions; identical surfaces get span-order tags."""
    a, b = pair.event_a.surface, pair.event_b.surface
    if a == b:
        return f"<{a}#1>", f"<{b}#2>"
    return f"<{a}>", f"<{b}>"


@dataclass(frozen=True)
class FewShotDemo:
    demo_id: str
    pair: EventPair
    trace_text: str
    label: Label


@dataclass(frozen=True)
class ParsedAnswer:
    value: Answer
    marker_span: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if (self.value is not Answer.UNPARSEABLE) != (self.marker_span is not None):
            raise ValidationError("marker_span must be present exactly when an answer was parsed")

    def to_json_dict(self) -> dict:
        return {
            "value": self.value.value,
            "marker_span": list(self.marker_span) if self.marker_span else None,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ParsedAnswer":
        span = d.get("marker_span")
        return cls(value=Answer(d["value"]), marker_span=tuple(span) if span else None)


def validate_demo_set(demos: list[FewShotDemo]) -> None:
    """Generation uses exactly one causal and one non-causal demonstration."""
    labels = sorted(d.label.value for d in demos)
    if labels != [Label.CAUSAL.value, Label.NON_CAUSAL.value]:
        raise ConfigError(
            f"demo set must contain exactly one Causal and one NonCausal demo, got {labels}"
        )


def _question_block(pair: EventPair, template_id: TemplateId, intervention: str | None = None) -> str:
    ev_a, ev_b = render_mentions(pair)
    slots = {"context": pair.context_text, "event_a": ev_a, "event_b": ev_b}
    if intervention is not None:
        slots["intervention"] = intervention
    return _render(template_body(template_id), slots).rstrip("\n")


def build_eci_prompt(
    pair: EventPair,
    template: TemplateId = TemplateId.ZERO_SHOT,
    demos: list[FewShotDemo] | None = None,
) -> str:
    """Render the causal-relationship question for one pair.

    FEW_SHOT_ICL prepends the demos (causal demo first), separated by blank
    lines, each shown as its own question followed by its reference trace.
    """
    if template is TemplateId.FEW_SHOT_ICL:
        if not demos:
            raise ConfigError("few-shot template requires demos")
        validate_demo_set(demos)
        ordered = sorted(demos, key=lambda d: 0 if d.label is Label.CAUSAL else 1)
        blocks = [
            _question_block(d.pair, TemplateId.ZERO_SHOT) + "\n" + d.trace_text.rstrip("\n")
            for d in ordered
        ]
        body = template_body(TemplateId.FEW_SHOT_ICL)
        ev_a, ev_b = render_mentions(pair)
        return _render(
            body,
            {
                "demos": "\n\n".join(blocks),
                "context": pair.context_text,
                "event_a": ev_a,
                "event_b": ev_b,
            },
        ).rstrip("\n")
    if demos:
        raise ConfigError(f"template {template.value} does not take demos")
    if template in (TemplateId.ZERO_SHOT, TemplateId.ZERO_SHOT_COT):
        return _question_block(pair, template)
    if template is TemplateId.INTERVENTION_WRONG:
        return build_intervention_prompt(pair)
    raise ConfigError(f"template {template.value} is not an ECI question template")


def intervention_sentence(pair: EventPair) -> str:
    """The injected claim; its polarity always contradicts the gold label."""
    ev_a, ev_b = render_mentions(pair)
    body = INTERVENTION_FOR_CAUSAL if pair.label is Label.CAUSAL else INTERVENTION_FOR_NON_CAUSAL
    return body.format(event_a=ev_a, event_b=ev_b)


def build_intervention_prompt(pair: EventPair) -> str:
    return _question_block(pair, TemplateId.INTERVENTION_WRONG, intervention_sentence(pair))


def build_rewrite_prompt(instruction: str, original_trace: str, variant: TemplateId) -> str:
    if variant not in (TemplateId.REWRITE_OFFICIAL, TemplateId.REWRITE_OURS):
        raise ConfigError(f"{variant.value} is not a rewrite template")
    if not original_trace.strip():
        raise ValidationError("cannot rewrite an empty trace")
    return _render(template_body(variant), {"instruction": instruction, "reference": original_trace})


_MARKER_RE = re.compile(r"\[\s*final\s+answer\s*:\s*(yes|no)\s*\]", re.IGNORECASE)


def parse_final_answer(text: str, first_marker: bool = False) -> ParsedAnswer:
    """Extract the bracketed final answer; by default the last marker wins."""
    matches = list(_MARKER_RE.finditer(text))
    if not matches:
        return ParsedAnswer(Answer.UNPARSEABLE)
    m = matches[0] if first_marker else matches[-1]
    value = Answer.YES if m.group(1).lower() == "yes" else Answer.NO
    return ParsedAnswer(value, (m.start(), m.end()))


def answer_matches_label(answer: Answer, label: Label) -> bool:
    if answer is Answer.YES:
        return label is Label.CAUSAL
    if answer is Answer.NO:
        return label is Label.NON_CAUSAL
    return False


def load_default_demos() -> list[FewShotDemo]:
    """Demonstrations bundled with the package (stand-ins for a strong
    thinking model's output; regenerable via the generate stage)."""
    demos_pkg = resources.files("ecitrace.demos")
    manifest = json.loads(demos_pkg.joinpath("manifest.json").read_text("utf-8"))
    demos = []
    for entry in manifest["demos"]:
        pair = EventPair.from_json_dict(entry["pair"])
        trace = demos_pkg.joinpath(entry["trace_file"]).read_text("utf-8")
        demos.append(
            FewShotDemo(
                demo_id=entry["demo_id"],
                pair=pair,
                trace_text=trace.rstrip("\n"),
                label=Label(entry["label"]),
            )
        )
    return demos
