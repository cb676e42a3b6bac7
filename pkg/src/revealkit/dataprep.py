"""Patch labeling, duplicate analysis, splitting and test-set imbalance."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

BEFORE_CHANGED = "before-changed"
AFTER_CHANGED = "after-changed"
UNCHANGED = "unchanged"


@dataclass(frozen=True)
class PatchRecord:
    patch_id: str
    project: str
    functions_before: tuple[tuple[str, str], ...]
    functions_after: tuple[tuple[str, str], ...]
    changed: frozenset[str] = field(default_factory=frozenset)

    @classmethod
    def from_json(cls, obj: dict) -> "PatchRecord":
        return cls(
            str(obj["patch_id"]), obj.get("project", ""),
            tuple((f["name"], f["body"]) for f in obj.get("before", [])),
            tuple((f["name"], f["body"]) for f in obj.get("after", [])),
            frozenset(obj.get("changed", [])),
        )

    def to_json(self) -> dict:
        return {
            "patch_id": self.patch_id, "project": self.project,
            "before": [{"name": n, "body": b} for n, b in self.functions_before],
            "after": [{"name": n, "body": b} for n, b in self.functions_after],
            "changed": sorted(self.changed),
        }


@dataclass(frozen=True)
class LabeledFunction:
    id: str
    name: str
    body: str
    label: int
    origin: str
    patch_id: str
    project: str = ""

    def to_json(self) -> dict:
        return {"id": self.id, "body": self.body, "label": self.label,
                "origin": self.origin, "patch_id": self.patch_id}


def load_patches(path) -> list[PatchRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(PatchRecord.from_json(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad patch record ({exc})") from None
    return out


def label_patch(p: PatchRecord) -> list[LabeledFunction]:
    """Label every function touched by one patch.

    The pre-patch body of each changed function is vulnerable (1), its
    post-patch body is clean (0), and each function the patch left alone is
    included once as clean. Changed functions get ``_0``/``_1`` name
    suffixes for the before/after versions.
    """
    before = dict(p.functions_before)
    after = dict(p.functions_after)
    for name in sorted(p.changed):
        if name not in before and name not in after:
            raise ValueError(f"patch {p.patch_id}: changed function {name!r} is in neither version")
    out: list[LabeledFunction] = []

    def add(name, body, label, origin):
        out.append(LabeledFunction(f"{p.patch_id}:{name}", name, body, label, origin, p.patch_id, p.project))

    for name, body in p.functions_before:
        if name in p.changed:
            add(f"{name}_0", body, 1, BEFORE_CHANGED)
    for name, body in p.functions_after:
        if name in p.changed:
            add(f"{name}_1", body, 0, AFTER_CHANGED)
    seen: set[str] = set()
    for name, body in list(p.functions_after) + list(p.functions_before):
        if name not in p.changed and name not in seen:
            seen.add(name)
            add(name, body, 0, UNCHANGED)
    return out


def tangled_filter(patches: Iterable[PatchRecord]) -> list[PatchRecord]:
    """Keep only patches that change exactly one function."""
    return [p for p in patches if len(p.changed) == 1]


class UnbalancedBracesError(ValueError):
    pass


_SIGNATURE_RE = re.compile(r"([A-Za-z_~][\w:~]*)\s*\([^;{}]*\)\s*(?:[A-Za-z_]\w*\s*)*$", re.S)
_NOT_FUNCTIONS = {"if", "for", "while", "switch", "return", "sizeof", "catch"}


def _strip_comments_and_literals(src: str) -> str:
    """Blank out comments and string/char literals, keeping offsets and newlines."""
    out = list(src)
    i, n = 0, len(src)
    while i < n:
        c = src[i]
        if src.startswith("//", i):
            j = src.find("\n", i)
            j = n if j < 0 else j
            for k in range(i, j):
                out[k] = " "
            i = j
        elif src.startswith("/*", i):
            j = src.find("*/", i + 2)
            j = n if j < 0 else j + 2
            for k in range(i, j):
                if out[k] != "\n":
                    out[k] = " "
            i = j
        elif c in "\"'":
            j = i + 1
            while j < n and src[j] != c and src[j] != "\n":
                j += 2 if src[j] == "\\" else 1
            j = min(j + 1, n)
            for k in range(i + 1, j - 1):
                if out[k] != "\n":
                    out[k] = " "
            i = j
        else:
            i += 1
    return "".join(out)


def extract_functions(source: str) -> list[tuple[str, str]]:
    """Heuristically split C-like source into ``(name, text)`` function definitions.

    A top-level ``{`` opens a function when the text before it ends in
    ``identifier(...)`` (optionally followed by qualifiers); the body runs to
    the matching ``}``. Braces inside comments and literals are ignored.
    """
    clean = _strip_comments_and_literals(source)
    out = []
    depth = 0
    head_start = 0
    open_at = -1
    open_line = 0
    line = 1
    for i, c in enumerate(clean):
        if c == "\n":
            line += 1
            if depth == 0 and clean[head_start:i].lstrip().startswith("#"):
                head_start = i + 1
        elif c == "{":
            if depth == 0:
                open_at, open_line = i, line
            depth += 1
        elif c == "}":
            depth -= 1
            if depth < 0:
                raise UnbalancedBracesError(f"unmatched '}}' at line {line}")
            if depth == 0:
                header = clean[head_start:open_at]
                m = _SIGNATURE_RE.search(header)
                if m and m.group(1) not in _NOT_FUNCTIONS:
                    start = head_start + (len(header) - len(header.lstrip()))
                    out.append((m.group(1), source[start:i + 1]))
                head_start = i + 1
        elif c == ";" and depth == 0:
            head_start = i + 1
    if depth > 0:
        raise UnbalancedBracesError(f"unclosed '{{' opened at line {open_line}")
    return out


def dedup(items: Sequence[T], key: Callable[[T], Hashable] = lambda x: x) -> tuple[list[T], float]:
    """Keep the first item per key; return them and the duplicate fraction."""
    seen: set = set()
    unique = []
    for it in items:
        k = key(it)
        if k not in seen:
            seen.add(k)
            unique.append(it)
    frac = 0.0 if not items else 1.0 - len(unique) / len(items)
    return unique, frac


def inject_imbalance(test: Sequence[T], vulnerable_fraction: float, seed: int = 0) -> list[T]:
    """Randomly drop vulnerable records until they make up the target fraction.

    Clean records are untouched and surviving records keep their order.
    """
    labels = np.array([r.label for r in test])
    vuln = np.flatnonzero(labels == 1)
    n_clean = len(test) - len(vuln)
    if not 0 < vulnerable_fraction <= 1:
        raise ValueError("vulnerable_fraction must lie in (0, 1]")
    current = len(vuln) / len(test) if len(test) else 0.0
    if vulnerable_fraction > current + 1e-12:
        raise ValueError(f"target fraction {vulnerable_fraction} is above the current {current:.4f}")
    if vulnerable_fraction >= 1:
        return list(test)
    keep_v = min(len(vuln), round(vulnerable_fraction * n_clean / (1 - vulnerable_fraction)))
    rng = np.random.default_rng(seed)
    drop = set(rng.choice(vuln, size=len(vuln) - keep_v, replace=False).tolist())
    return [r for i, r in enumerate(test) if i not in drop]


def split(records: Sequence[T], fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
          seed: int = 0, stratify: bool = True) -> tuple[list[T], list[T], list[T]]:
    """Random disjoint train/valid/test partition, stratified by label by default."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, not 1")
    rng = np.random.default_rng(seed)
    if stratify:
        labels = np.array([r.label for r in records])
        strata = [np.flatnonzero(labels == c) for c in sorted(set(labels.tolist()))]
    else:
        strata = [np.arange(len(records))]
    parts: list[list[int]] = [[], [], []]
    for idx in strata:
        idx = rng.permutation(idx)
        n_train = int(round(fractions[0] * len(idx)))
        n_valid = int(round(fractions[1] * len(idx)))
        n_valid = min(n_valid, len(idx) - n_train)
        parts[0].extend(idx[:n_train].tolist())
        parts[1].extend(idx[n_train:n_train + n_valid].tolist())
        parts[2].extend(idx[n_train + n_valid:].tolist())
    return tuple([records[i] for i in sorted(p)] for p in parts)
