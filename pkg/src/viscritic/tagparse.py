"""Parser for the bracket-tagged, fenced reply grammar used by all prompts.

Replies look like::

    prose (tolerated)
    [RESULT]
    ``` json
    {"Label": "xx"}
    ```
    [/RESULT]

Tags open with ``[NAME]`` and close with ``[/NAME]`` at line starts and must
nest properly; only top-level blocks appear in the parsed document. Inside a
block the first complete fence becomes the payload (language hint preserved),
otherwise the content is kept as raw text. Lines looking like tags inside a
fence are payload, not structure. Raw bodies must not contain bare fence
lines; fenced bodies must not contain a line that is exactly ``` -- the
appendix formats never do.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import (
    MissingTagError,
    PayloadError,
    TagParseError,
    UnterminatedFenceError,
)

_OPEN_RE = re.compile(r"^\s*\[([A-Z][A-Z0-9_]*)\](.*)$")
_CLOSE_RE = re.compile(r"^\s*\[/([A-Z][A-Z0-9_]*)\]\s*$")
_FINAL_SCORE_RE = re.compile(r"Final Score:\s*(\d+)")


@dataclass(frozen=True)
class FencedPayload:
    language_hint: str
    body: str


@dataclass(frozen=True)
class TaggedBlock:
    tag: str
    payload: FencedPayload | None = None
    text: str | None = None


@dataclass
class TaggedDocument:
    blocks: list[TaggedBlock]

    def block(self, tag: str) -> TaggedBlock:
        for b in self.blocks:
            if b.tag == tag:
                return b
        raise MissingTagError(f"missing [{tag}] block")

    def __contains__(self, tag: str) -> bool:
        return any(b.tag == tag for b in self.blocks)


def _is_fence_line(line: str) -> bool:
    return line.lstrip().startswith("```")


def parse_tagged(text: str, expected_tags: tuple[str, ...] | list[str] = ()) -> TaggedDocument:
    """Parse a tagged reply; raises a typed TagParseError on malformed input.

    Prose outside any tag is tolerated and dropped. Every tag in
    ``expected_tags`` must be present exactly once.
    """
    if not isinstance(text, str):
        raise TagParseError("input must be a string")
    blocks: list[TaggedBlock] = []
    stack: list[str] = []  # open tags; depth 1 collects content
    content: list[str] = []
    in_fence = False
    for line in text.splitlines():
        if stack and in_fence:
            content.append(line)
            if line.strip() == "```":
                in_fence = False
            continue
        close = _CLOSE_RE.match(line)
        if close:
            if not stack:
                raise TagParseError(f"close tag [/{close.group(1)}] without matching open")
            if close.group(1) != stack[-1]:
                raise TagParseError(f"expected [/{stack[-1]}], found [/{close.group(1)}]")
            stack.pop()
            if not stack:
                blocks.append(_interpret(close.group(1), content))
                content = []
            else:
                content.append(line)
            continue
        opened = _OPEN_RE.match(line)
        if opened:
            stack.append(opened.group(1))
            if len(stack) > 1:
                content.append(line)
            elif opened.group(2).strip():
                content.append(opened.group(2))
            continue
        if stack:
            content.append(line)
            if _is_fence_line(line):
                in_fence = True
        # prose outside tags: tolerated, dropped
    if in_fence:
        raise UnterminatedFenceError(f"unterminated fence inside [{stack[-1]}]")
    if stack:
        raise TagParseError(f"unclosed tag [{stack[-1]}]")

    seen: dict[str, int] = {}
    for b in blocks:
        seen[b.tag] = seen.get(b.tag, 0) + 1
    for tag in expected_tags:
        if tag not in seen:
            raise MissingTagError(f"missing [{tag}] block")
        if seen[tag] > 1:
            raise TagParseError(f"duplicate [{tag}] block")
    return TaggedDocument(blocks)


def _interpret(tag: str, lines: list[str]) -> TaggedBlock:
    """Turn collected content lines into a fenced payload or raw text."""
    for i, line in enumerate(lines):
        if _is_fence_line(line):
            hint = line.lstrip()[3:].strip()
            for j in range(i + 1, len(lines)):
                if lines[j].strip() == "```":
                    return TaggedBlock(tag, payload=FencedPayload(hint, "\n".join(lines[i + 1 : j])))
            raise UnterminatedFenceError(f"unterminated fence inside [{tag}]")
    # raw text: trim surrounding blank lines only
    start, end = 0, len(lines)
    while start < end and not lines[start].strip():
        start += 1
    while end > start and not lines[end - 1].strip():
        end -= 1
    return TaggedBlock(tag, text="\n".join(lines[start:end]))


def serialize_tagged(doc: TaggedDocument) -> str:
    """Canonical rendering of a document; parse(serialize(d)) == d."""
    parts = []
    for b in doc.blocks:
        if b.payload is not None:
            inner = f"```{b.payload.language_hint}\n{b.payload.body}\n```"
        else:
            inner = b.text or ""
        parts.append(f"[{b.tag}]\n{inner}\n[/{b.tag}]")
    return "\n".join(parts)


def parse_final_score(text: str) -> int:
    """Extract the last 'Final Score: N' marker; N must be in [1, 5]."""
    matches = _FINAL_SCORE_RE.findall(text or "")
    if not matches:
        raise MissingTagError("no 'Final Score:' marker found")
    score = int(matches[-1])
    if not 1 <= score <= 5:
        raise PayloadError(f"final score {score} out of range 1..5")
    return score


def _strip_json_noise(body: str) -> str:
    """Remove // and /* */ comments plus trailing commas, string-aware."""
    out = []
    i, n = 0, len(body)
    in_str = False
    while i < n:
        ch = body[i]
        if in_str:
            out.append(ch)
            if ch == "\\" and i + 1 < n:
                out.append(body[i + 1])
                i += 2
                continue
            if ch == '"':
                in_str = False
            i += 1
            continue
        if ch == '"':
            in_str = True
            out.append(ch)
            i += 1
            continue
        if ch == "/" and i + 1 < n and body[i + 1] == "/":
            while i < n and body[i] != "\n":
                i += 1
            continue
        if ch == "/" and i + 1 < n and body[i + 1] == "*":
            i += 2
            while i + 1 < n and not (body[i] == "*" and body[i + 1] == "/"):
                i += 1
            i += 2
            continue
        if ch == ",":
            j = i + 1
            while j < n and body[j] in " \t\r\n":
                j += 1
            if j < n and body[j] in "]}":
                i += 1  # trailing comma: drop
                continue
        out.append(ch)
        i += 1
    return "".join(out)


def parse_json_payload(block: TaggedBlock | FencedPayload | str, strict: bool = False):
    """JSON-decode a block's fenced payload.

    Lenient mode (default) tolerates // and block comments and trailing
    commas, since real provider output drifts from the documented formats.
    """
    if isinstance(block, TaggedBlock):
        if block.payload is None:
            raise PayloadError(f"[{block.tag}] block has no fenced payload")
        body = block.payload.body
    elif isinstance(block, FencedPayload):
        body = block.body
    else:
        body = block
    try:
        return json.loads(body if strict else _strip_json_noise(body))
    except json.JSONDecodeError as exc:
        raise PayloadError(f"malformed JSON payload: {exc}") from exc


def extract_fenced(text: str, language_hint: str | None = None) -> FencedPayload:
    """First complete fence in untagged text (some replies use bare fences)."""
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if _is_fence_line(line):
            hint = line.lstrip()[3:].strip()
            if language_hint is not None and hint not in ("", language_hint):
                continue
            for j in range(i + 1, len(lines)):
                if lines[j].strip() == "```":
                    return FencedPayload(hint, "\n".join(lines[i + 1 : j]))
            raise UnterminatedFenceError("unterminated fence")
    raise MissingTagError("no fenced payload found")
