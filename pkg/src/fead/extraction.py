"""Attack-report text → attack steps, system effects, and monitoring items.

The pipeline runs three chained stages over a backend: pull
actor/action/target triples out of the report, label each (action, target)
pair with its system effect, then derive the monitoring items a collector
would need to observe that effect. The shipped backend is a deterministic
rule-based mock; external text-generation services plug in behind the same
interface and get their output schema-validated with retries.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import InputError


class ExtractionError(InputError):
    """Backend produced no usable output after retries."""


class SchemaValidationError(InputError):
    """Backend output violates the expected JSON schema."""


DEFAULT_EFFECT_VOCABULARY = (
    "Program Execution",
    "File Modification",
    "Network Request",
    "Privilege Escalation",
)

# Verb phrases recognized by the mock backend, each mapped to the canonical
# action label used in the triples. Longer phrases first: first match wins.
DEFAULT_ACTION_LEXICON = (
    ("gained initial access to", "Network Request"),
    ("escalated privileges", "Privilege Escalation"),
    ("manipulated environment variables", "Privilege Escalation"),
    ("established a reverse shell to", "Network Request"),
    ("connected to", "Network Request"),
    ("exfiltrated", "Network Request"),
    ("downloaded", "Network Request"),
    ("uploaded", "Network Request"),
    ("executed", "Tool Execution"),
    ("launched", "Tool Execution"),
    ("invoked", "Tool Execution"),
    ("overwrote", "File Modification"),
    ("modified", "File Modification"),
    ("created", "File Modification"),
    ("deleted", "File Modification"),
    ("wrote", "File Modification"),
)

DEFAULT_EFFECT_TABLE = {
    "Tool Execution": "Program Execution",
    "Network Request": "Network Request",
    "File Modification": "File Modification",
    "Privilege Escalation": "Privilege Escalation",
}

DEFAULT_ITEM_TABLE = {
    "Program Execution": (
        "Process creation monitoring",
        "Record process creation with command line and parent process.",
    ),
    "File Modification": (
        "File integrity monitoring",
        "Track writes, creations and deletions on sensitive paths.",
    ),
    "Network Request": (
        "Network connection monitoring",
        "Record outbound connections with remote address and owning process.",
    ),
    "Privilege Escalation": (
        "Privilege change monitoring",
        "Track uid/gid transitions and environment variable changes.",
    ),
    "Unknown": (
        "Manual review",
        "Effect could not be classified automatically; review the source step.",
    ),
}

_LEADING_ADVERBS = ("then", "next", "later", "subsequently", "finally", "afterwards")
_DETERMINERS = ("the", "a", "an")
_OBJECT_PREPOSITIONS = ("on", "to", "via", "into", "from", "at", "in")


@dataclass(frozen=True)
class AttackStep:
    actor: str
    action: str
    target: str
    source_span: tuple[int, int]  # character range into the report


@dataclass(frozen=True)
class AttackEffect:
    label: str


@dataclass(frozen=True)
class MonitoringItem:
    name: str
    description: str
    derived_from: tuple[tuple[AttackStep, AttackEffect], ...]


@dataclass(frozen=True)
class AttackEffectModel:
    steps: tuple[tuple[AttackStep, AttackEffect], ...]
    items: tuple[MonitoringItem, ...]

    def to_json(self) -> str:
        doc = {
            "steps": [
                {"actor": s.actor, "action": s.action, "target": s.target}
                for s, _ in self.steps
            ],
            "effects": [e.label for _, e in self.steps],
            "items": [{"name": i.name, "description": i.description} for i in self.items],
        }
        return json.dumps(doc, indent=2) + "\n"


def _sentence_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences. Terminators only count when followed by
    whitespace or end-of-text, so dotted tokens (IPs, versions) stay intact."""
    spans = []
    start = 0
    for m in re.finditer(r"[.!?](?=\s|$)", text):
        spans.append((start, m.end()))
        start = m.end()
    if text[start:].strip():
        spans.append((start, len(text)))
    return spans


def _strip_leading_words(text: str, words) -> str:
    changed = True
    while changed:
        changed = False
        for w in words:
            if re.match(rf"{re.escape(w)}\b[,:]?\s+", text, re.IGNORECASE):
                text = re.sub(rf"^{re.escape(w)}\b[,:]?\s+", "", text, flags=re.IGNORECASE)
                changed = True
    return text


def _clean_actor(text: str) -> str:
    text = text.strip().strip(",;")
    text = _strip_leading_words(text, _LEADING_ADVERBS)
    text = _strip_leading_words(text, _DETERMINERS)
    # drop trailing modifier clauses ("... using IP 1.2.3.4")
    cut = re.search(r"\s+using\s+", text, re.IGNORECASE)
    if cut:
        text = text[: cut.start()]
    return text.strip().strip(",;")


def _clean_target(text: str) -> str:
    text = text.strip()
    text = re.sub(r"[.!?,;]+$", "", text)
    text = _strip_leading_words(text, _OBJECT_PREPOSITIONS)
    text = _strip_leading_words(text, _DETERMINERS)
    return text.strip()


class MockBackend:
    """Deterministic rule-based backend over the fixture lexicon.

    Stateless and thread-safe; the tables are configurable so custom effect
    vocabularies and item catalogs can be dropped in.
    """

    def __init__(self, lexicon=DEFAULT_ACTION_LEXICON,
                 effect_table=None, item_table=None, vocabulary=None):
        self.lexicon = tuple(lexicon)
        self.effect_table = dict(DEFAULT_EFFECT_TABLE if effect_table is None else effect_table)
        self.item_table = dict(DEFAULT_ITEM_TABLE if item_table is None else item_table)
        self.vocabulary = tuple(DEFAULT_EFFECT_VOCABULARY if vocabulary is None else vocabulary)

    def extract_steps(self, report: str) -> list[dict]:
        steps = []
        for start, end in _sentence_spans(report):
            sentence = report[start:end]
            if not sentence.strip():
                continue
            for phrase, action in self.lexicon:
                hit = re.search(rf"\b{re.escape(phrase)}\b", sentence, re.IGNORECASE)
                if not hit:
                    continue
                actor = _clean_actor(sentence[: hit.start()])
                target = _clean_target(sentence[hit.end():])
                if actor and target:
                    steps.append({
                        "actor": actor,
                        "action": action,
                        "target": target,
                        "start": start,
                        "end": end,
                    })
                break
        return steps

    def identify_effect(self, action: str, target: str) -> str:
        return self.effect_table.get(action, "Unknown")

    def generate_items(self, action: str, target: str, effect: str) -> list[dict]:
        name, description = self.item_table.get(effect, self.item_table["Unknown"])
        return [{"name": name, "description": description}]


# --- schema validation (shared by the external backend and its tests) ------


def validate_step_payload(payload) -> list[dict]:
    if not isinstance(payload, list):
        raise SchemaValidationError("steps: expected a list")
    bad = []
    for i, step in enumerate(payload):
        if not isinstance(step, dict):
            bad.append(f"steps[{i}]: not an object")
            continue
        for key in ("actor", "action", "target"):
            value = step.get(key)
            if not isinstance(value, str) or not value.strip():
                bad.append(f"steps[{i}].{key}: missing or empty")
    if bad:
        raise SchemaValidationError("; ".join(bad))
    return payload


def validate_items_payload(payload) -> list[dict]:
    if not isinstance(payload, list) or not payload:
        raise SchemaValidationError("items: expected a non-empty list")
    bad = []
    for i, item in enumerate(payload):
        if not isinstance(item, dict):
            bad.append(f"items[{i}]: not an object")
            continue
        for key in ("name", "description"):
            if not isinstance(item.get(key), str) or not item[key].strip():
                bad.append(f"items[{i}].{key}: missing or empty")
    if bad:
        raise SchemaValidationError("; ".join(bad))
    return payload


class ExternalBackend:
    """Adapter for a text-generation client (callable prompt -> str).

    Every response must parse as JSON matching the per-stage schema; invalid
    responses are retried with the validation error echoed back, then the
    whole call fails hard. Calls are serialized (one in flight).
    """

    retries = 3

    def __init__(self, client, vocabulary=None):
        self.client = client
        self.vocabulary = tuple(DEFAULT_EFFECT_VOCABULARY if vocabulary is None else vocabulary)

    def _ask(self, prompt: str, validate):
        last = None
        for _ in range(self.retries):
            try:
                return validate(json.loads(self.client(prompt)))
            except (SchemaValidationError, json.JSONDecodeError) as exc:
                last = exc
                prompt = prompt + f"\nThe previous response was rejected: {exc}. Respond with JSON only."
        raise ExtractionError(f"backend output invalid after {self.retries} attempts: {last}")

    def extract_steps(self, report: str) -> list[dict]:
        prompt = (
            "Read the attack report below and list the attack steps in order.\n"
            "For each step give who acted (actor), the canonical action, and the\n"
            "target acted upon. Respond with JSON: "
            '{"steps": [{"actor": ..., "action": ..., "target": ...}]}\n\n'
            + report
        )
        doc = self._ask(prompt, lambda d: validate_step_payload(
            d.get("steps") if isinstance(d, dict) else d))
        return [dict(s, start=0, end=0) for s in doc]

    def identify_effect(self, action: str, target: str) -> str:
        prompt = (
            "Classify the system impact of this attack step as one of "
            + ", ".join(self.vocabulary)
            + ' (or "Unknown").\nRespond with JSON: {"effect": ...}\n'
            + json.dumps({"action": action, "target": target})
        )

        def check(d):
            label = d.get("effect") if isinstance(d, dict) else None
            if not isinstance(label, str) or (
                label != "Unknown" and label not in self.vocabulary
            ):
                raise SchemaValidationError(f"effect: {label!r} not in vocabulary")
            return label

        return self._ask(prompt, check)

    def generate_items(self, action: str, target: str, effect: str) -> list[dict]:
        prompt = (
            "Name the monitoring item(s) a collector must implement to observe "
            "this attack effect.\nRespond with JSON: "
            '{"items": [{"name": ..., "description": ...}]}\n'
            + json.dumps({"action": action, "target": target, "effect": effect})
        )
        return self._ask(prompt, lambda d: validate_items_payload(
            d.get("items") if isinstance(d, dict) else d))


# --- pipeline operations ----------------------------------------------------


def extract_steps(report: str, backend) -> list[AttackStep]:
    """Ordered actor/action/target triples; order follows the report."""
    if not report or not report.strip():
        raise InputError("report must be non-empty")
    payload = validate_step_payload(backend.extract_steps(report))
    return [
        AttackStep(s["actor"], s["action"], s["target"],
                   (int(s.get("start", 0)), int(s.get("end", 0))))
        for s in payload
    ]


def identify_effects(steps: list[AttackStep], backend) -> list[tuple[AttackStep, AttackEffect]]:
    """Label each step with its system effect; unmappable steps get Unknown."""
    if not steps:
        raise InputError("steps must be non-empty")
    vocabulary = tuple(getattr(backend, "vocabulary", DEFAULT_EFFECT_VOCABULARY))
    pairs = []
    for step in steps:
        label = backend.identify_effect(step.action, step.target)
        if label != "Unknown" and label not in vocabulary:
            raise SchemaValidationError(f"effect label {label!r} not in vocabulary")
        pairs.append((step, AttackEffect(label)))
    return pairs


def generate_items(pairs: list[tuple[AttackStep, AttackEffect]], backend) -> list[MonitoringItem]:
    """One or more monitoring items per pair, deduplicated by item name."""
    if not pairs:
        raise InputError("pairs must be non-empty")
    by_name: dict[str, dict] = {}
    for step, effect in pairs:
        payload = validate_items_payload(
            backend.generate_items(step.action, step.target, effect.label)
        )
        for item in payload:
            slot = by_name.setdefault(
                item["name"], {"description": item["description"], "sources": []}
            )
            slot["sources"].append((step, effect))
    return [
        MonitoringItem(name, slot["description"], tuple(slot["sources"]))
        for name, slot in by_name.items()
    ]


def run_extraction(report: str, backend=None) -> AttackEffectModel:
    """Full chain: steps → effects → items."""
    backend = backend if backend is not None else MockBackend()
    steps = extract_steps(report, backend)
    if not steps:
        raise ExtractionError("no attack steps recognized in the report")
    pairs = identify_effects(steps, backend)
    items = generate_items(pairs, backend)
    return AttackEffectModel(tuple(pairs), tuple(items))
