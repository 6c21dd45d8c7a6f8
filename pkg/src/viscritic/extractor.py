"""Notebook parsing, dependency tracing and instance assembly.

Ingest format is one JSON document per notebook::

    {"id": "nb-1", "cells": [
        {"cell_id": "c1", "code": "data = [1, 2]", "has_render_output": false},
        {"cell_id": "c2", "code": "x = plot(data)", "has_render_output": true}
    ]}

Render-output detection is not inferred; the ingest document carries an
explicit has_render_output flag per cell.

Identifier extraction is a lexical scan of a documented script subset, not
a full language parse; the validation render is the ground truth for what
slips through. Declarations are top-level `const/let/var` statements (one
declarator, destructuring allowed), `function`/`class` definitions, and
notebook-style bare `name = expr` assignments. References are the remaining
free identifiers, minus in-cell declarations, local binders (params, inner
declarations) and the ambient-global whitelist.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass

from .errors import CycleError, NotebookError
from .model import make_instance

# entry points and standard objects the render runtime provides
AMBIENT_GLOBALS = frozenset({
    "d3", "document", "window", "globalThis", "console", "fetch",
    "Math", "JSON", "Object", "Array", "String", "Number", "Boolean",
    "Date", "Promise", "Map", "Set", "RegExp", "Error", "Symbol",
    "URL", "Image", "Infinity", "NaN", "undefined",
    "parseInt", "parseFloat", "isNaN", "isFinite", "btoa", "atob",
    "encodeURIComponent", "decodeURIComponent", "structuredClone",
})

_KEYWORDS = frozenset({
    "const", "let", "var", "function", "class", "return", "if", "else",
    "for", "while", "do", "new", "typeof", "instanceof", "of", "in",
    "break", "continue", "switch", "case", "default", "try", "catch",
    "finally", "throw", "async", "await", "yield", "delete", "void",
    "this", "super", "static", "get", "set", "extends", "true", "false",
    "null",
})

_STRING_OR_COMMENT_RE = re.compile(
    r"//[^\n]*"
    r"|/\*.*?\*/"
    r"|\"(?:[^\"\\\n]|\\.)*\""
    r"|'(?:[^'\\\n]|\\.)*'"
    r"|`(?:[^`\\]|\\.)*`",
    re.DOTALL,
)
_WORD_RE = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*")
_TOKEN_RE = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*|=>|===|==|=|[^\sA-Za-z0-9_$]")


@dataclass(frozen=True)
class Cell:
    cell_id: str
    code: str
    declared_names: tuple[str, ...]
    referenced_names: tuple[str, ...]
    has_render_output: bool


@dataclass(frozen=True)
class NotebookDoc:
    id: str
    cells: tuple[Cell, ...]

    def cell(self, cell_id: str) -> Cell:
        for c in self.cells:
            if c.cell_id == cell_id:
                return c
        raise NotebookError(f"notebook {self.id}: no cell {cell_id}")

    def render_cells(self) -> list[Cell]:
        return [c for c in self.cells if c.has_render_output]


def _strip_strings_and_comments(code: str) -> str:
    # keep line structure so statement starts stay detectable
    return _STRING_OR_COMMENT_RE.sub(lambda m: "\n" * m.group(0).count("\n"), code)


def scan_names(code: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Lexical (declared, referenced) identifier sets for one cell."""
    stripped = _strip_strings_and_comments(code)
    tokens = _TOKEN_RE.findall(stripped)
    declared: list[str] = []
    locals_: set[str] = set()
    brace_depth = 0
    paren_depth = 0
    i = 0
    n = len(tokens)

    def collect_binding_targets(start: int) -> tuple[list[str], int]:
        """Identifiers between a const/let/var and its `=` (or statement end)."""
        names = []
        j = start
        while j < n and tokens[j] not in ("=", ";"):
            if _WORD_RE.fullmatch(tokens[j]) and tokens[j] not in _KEYWORDS:
                names.append(tokens[j])
            j += 1
        return names, j

    while i < n:
        tok = tokens[i]
        if tok == "{":
            brace_depth += 1
        elif tok == "}":
            brace_depth = max(brace_depth - 1, 0)
        elif tok == "(":
            paren_depth += 1
        elif tok == ")":
            paren_depth = max(paren_depth - 1, 0)
        elif tok in ("const", "let", "var"):
            names, i = collect_binding_targets(i + 1)
            if brace_depth == 0 and paren_depth == 0:
                declared.extend(names)
            else:
                locals_.update(names)
            continue
        elif tok in ("function", "class"):
            if i + 1 < n and _WORD_RE.fullmatch(tokens[i + 1]):
                if brace_depth == 0 and paren_depth == 0:
                    declared.append(tokens[i + 1])
                else:
                    locals_.add(tokens[i + 1])
                i += 1
            if tok == "function":
                # parameters up to the closing paren are local binders
                j = i + 1
                if j < n and tokens[j] == "(":
                    depth = 0
                    while j < n:
                        if tokens[j] == "(":
                            depth += 1
                        elif tokens[j] == ")":
                            depth -= 1
                            if depth == 0:
                                break
                        elif _WORD_RE.fullmatch(tokens[j]) and tokens[j] not in _KEYWORDS:
                            locals_.add(tokens[j])
                        j += 1
                    i = j
        elif _WORD_RE.fullmatch(tok) and tok not in _KEYWORDS:
            nxt = tokens[i + 1] if i + 1 < n else None
            prev = tokens[i - 1] if i > 0 else None
            if nxt == "=>":
                locals_.add(tok)  # single arrow parameter
            elif (
                nxt == "="
                and brace_depth == 0
                and paren_depth == 0
                and prev in (None, ";", "}")
            ):
                declared.append(tok)  # notebook-style bare assignment
        i += 1

    # arrow params in parens: (a, b) => ...  -> mark a, b local
    for match in re.finditer(r"\(([^()]*)\)\s*=>", stripped):
        for word in _WORD_RE.findall(match.group(1)):
            if word not in _KEYWORDS:
                locals_.add(word)

    declared_set = set(declared)
    bound = declared_set | locals_ | _KEYWORDS | AMBIENT_GLOBALS
    referenced: list[str] = []
    for match in _WORD_RE.finditer(stripped):
        word = match.group(0)
        if word in bound or word in referenced:
            continue
        before = stripped[: match.start()].rstrip()
        after = stripped[match.end():].lstrip()
        if before.endswith("."):
            continue  # property access
        if after.startswith(":") and before.endswith(("{", ",")):
            continue  # object literal key
        referenced.append(word)

    ordered_declared = list(dict.fromkeys(declared))
    return tuple(ordered_declared), tuple(referenced)


def parse_notebook(data: bytes | str) -> NotebookDoc:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise NotebookError(f"unreadable notebook container: {exc}") from exc
    if not isinstance(doc, dict) or "id" not in doc or "cells" not in doc:
        raise NotebookError("notebook must be an object with 'id' and 'cells'")
    raw_cells = doc["cells"]
    if not isinstance(raw_cells, list) or not raw_cells:
        raise NotebookError(f"notebook {doc.get('id')}: empty notebook")
    cells = []
    seen_ids = set()
    for i, raw in enumerate(raw_cells):
        if not isinstance(raw, dict) or "cell_id" not in raw or "code" not in raw:
            raise NotebookError(f"notebook {doc['id']}: cell {i} missing cell_id/code")
        cell_id = raw["cell_id"]
        if cell_id in seen_ids:
            raise NotebookError(f"notebook {doc['id']}: duplicate cell_id {cell_id}")
        seen_ids.add(cell_id)
        declared, referenced = scan_names(raw["code"])
        cells.append(Cell(
            cell_id=cell_id,
            code=raw["code"],
            declared_names=declared,
            referenced_names=referenced,
            has_render_output=bool(raw.get("has_render_output", False)),
        ))
    return NotebookDoc(id=str(doc["id"]), cells=tuple(cells))


@dataclass
class TraceResult:
    cells: list[Cell]
    unresolved: tuple[str, ...]  # names nothing declares; instance is incomplete


def trace_dependencies(doc: NotebookDoc, render_cell_id: str) -> TraceResult:
    """Transitive dependency closure of a render cell, topologically ordered.

    Every declaration precedes its first use; ties follow notebook order.
    """
    render_cell = doc.cell(render_cell_id)
    if not render_cell.has_render_output:
        raise NotebookError(
            f"notebook {doc.id}: cell {render_cell_id} has no render output"
        )
    order = {c.cell_id: i for i, c in enumerate(doc.cells)}
    declarer: dict[str, str] = {}
    for c in doc.cells:  # earliest declarer wins; later shadowing is out of scope
        for name in c.declared_names:
            declarer.setdefault(name, c.cell_id)

    needed: dict[str, Cell] = {}
    unresolved: list[str] = []
    frontier = [render_cell]
    needed[render_cell.cell_id] = render_cell
    while frontier:
        cell = frontier.pop()
        for name in cell.referenced_names:
            dep_id = declarer.get(name)
            if dep_id is None:
                if name not in unresolved:
                    unresolved.append(name)
                continue
            if dep_id not in needed:
                dep = doc.cell(dep_id)
                needed[dep_id] = dep
                frontier.append(dep)

    # edges: declaring cell -> cell using the declaration, within the closure
    dependents: dict[str, set[str]] = {cid: set() for cid in needed}
    indegree = {cid: 0 for cid in needed}
    for cell in needed.values():
        for name in cell.referenced_names:
            dep_id = declarer.get(name)
            if dep_id is not None and dep_id in needed and dep_id != cell.cell_id:
                if cell.cell_id not in dependents[dep_id]:
                    dependents[dep_id].add(cell.cell_id)
                    indegree[cell.cell_id] += 1

    heap = [order[cid] for cid, deg in indegree.items() if deg == 0]
    heapq.heapify(heap)
    emitted: list[Cell] = []
    while heap:
        cid = doc.cells[heapq.heappop(heap)].cell_id
        emitted.append(needed[cid])
        for child in dependents[cid]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(heap, order[child])
    if len(emitted) < len(needed):
        stuck = {cid for cid, deg in indegree.items() if deg > 0}
        raise CycleError(_find_cycle(stuck, needed, declarer))
    return TraceResult(emitted, tuple(unresolved))


def _find_cycle(stuck: set, needed: dict, declarer: dict) -> list[str]:
    """Walk dependency edges inside the stuck set until a node repeats."""
    adjacency = {}
    for cid in stuck:
        deps = set()
        for name in needed[cid].referenced_names:
            dep_id = declarer.get(name)
            if dep_id in stuck and dep_id != cid:
                deps.add(dep_id)
        adjacency[cid] = sorted(deps)
    start = sorted(stuck)[0]
    path, seen = [], {}
    node = start
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        node = adjacency[node][0]
    return path[seen[node]:]


HTML_SHELL = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
</head>
<body>
<script>
{code}
</script>
</body>
</html>
"""


def assemble_instance(doc: NotebookDoc, cells: list[Cell]) -> dict:
    """Concatenate ordered cells into one renderable document instance."""
    if not cells:
        raise NotebookError(f"notebook {doc.id}: no cells to assemble")
    parts = []
    for cell in cells:
        parts.append(f"// cell: {cell.cell_id}")
        parts.append(cell.code.rstrip("\n"))
    code = HTML_SHELL.format(code="\n".join(parts))
    return make_instance(
        source_notebook=doc.id,
        cell_ids=[c.cell_id for c in cells],
        code=code,
    )


def extract_instances(data: bytes | str) -> list[tuple[dict, tuple[str, ...]]]:
    """All (instance, unresolved names) pairs from one notebook document."""
    doc = parse_notebook(data)
    results = []
    for render_cell in doc.render_cells():
        trace = trace_dependencies(doc, render_cell.cell_id)
        results.append((assemble_instance(doc, trace.cells), trace.unresolved))
    return results
