"""Registry of the pipeline's prompt templates.

Template bodies live in ``data/*.txt`` exactly as the models receive them,
with named ``{placeholder}`` slots. Image attachments are declared per
template as ordered slot names; callers supply the bytes in that order.
Rendering substitutes declared placeholders in a single pass, so brace
groups inside bound values (CSS, JS destructuring) are never rescanned.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from ..errors import PromptError

PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")

# name -> (placeholders, image slots, reply tags callers should expect)
_SPECS: dict[str, tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]] = {
    "filter": (
        ("html_code",),
        ("rendered_result",),
        ("THINKING", "FILTERING_RESULT"),
    ),
    "classify": (
        (),
        ("visualization",),
        ("THINKING", "CLASSIFICATION_RESULT"),
    ),
    "instruct": (
        ("vis_code", "data_illustration"),
        ("visualization",),
        ("SUBSECTION1_RESULT_LIST",),
    ),
    "export": (
        ("html_file",),
        (),
        ("SUBSECTION1_PLAN", "SUBSECTION2_EDITED_CODE"),
    ),
    "verify_export": (
        (
            "reference_html_file_for_visualization",
            "multi_src_data_illustration",
            "input_data_folder_name",
        ),
        (),
        ("EDITED_CODE",),
    ),
    "generate": (
        ("data_illustration", "user_query"),
        (),
        ("THINKING", "CODE"),
    ),
    "improve": (
        ("previous_code", "feedback_for_improvement", "data_illustration", "user_query"),
        (),
        ("THINKING", "IMPROVED_CODE"),
    ),
    "suggest": (
        ("num_of_suggestion", "user_query"),
        ("ai_version", "human_version"),
        (),  # bare fenced json reply
    ),
    "likert_judge": (
        ("user_instruction", "ground_truth_feedback", "candidate_feedback"),
        ("generated_visualization",),
        (),  # free text ending in a Final Score marker
    ),
    "pairwise": (
        ("feedback_1", "feedback_2"),
        (),
        (),  # single option letter reply
    ),
}

TEMPLATE_NAMES = tuple(_SPECS)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    placeholders: tuple[str, ...]
    image_slots: tuple[str, ...]
    reply_tags: tuple[str, ...]


@dataclass(frozen=True)
class RenderedPrompt:
    name: str
    text: str
    image_slots: tuple[str, ...]


def _load(name: str) -> PromptTemplate:
    placeholders, images, tags = _SPECS[name]
    body = (resources.files(__package__) / "data" / f"{name}.txt").read_text("utf-8")
    scanned = set(PLACEHOLDER_RE.findall(body))
    if scanned != set(placeholders):
        raise PromptError(
            f"template {name}: declared placeholders {sorted(placeholders)} "
            f"do not match body sites {sorted(scanned)}"
        )
    return PromptTemplate(name, body, placeholders, images, tags)


_CACHE: dict[str, PromptTemplate] = {}


def available_prompts() -> list[str]:
    return sorted(_SPECS)


def get_template(name: str) -> PromptTemplate:
    if name not in _SPECS:
        raise PromptError(f"unknown template: {name}")
    if name not in _CACHE:
        _CACHE[name] = _load(name)
    return _CACHE[name]


def render_prompt(name: str, bindings: dict | None = None) -> RenderedPrompt:
    """Substitute bindings into a template; extra binding keys are ignored."""
    template = get_template(name)
    bindings = bindings or {}
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise PromptError(f"template {name}: missing bindings for {missing}")

    def _sub(match: re.Match) -> str:
        key = match.group(1)
        if key in template.placeholders:
            return str(bindings[key])
        return match.group(0)

    text = PLACEHOLDER_RE.sub(_sub, template.body)
    return RenderedPrompt(name, text, template.image_slots)
