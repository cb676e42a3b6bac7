"""Synthetic fixtures: toy CPG corpora, matching patches, and Gaussian features."""
from __future__ import annotations

import numpy as np

from .dataprep import PatchRecord
from .graph import CodeGraph, Edge, Vertex
from .sampling import FeatureRecord

MARKER_TYPE = "ArrayIndexing"

_COMMON_TYPES = (
    "Identifier", "CallStatement", "AssignmentExpression", "IfStatement", "ReturnStatement",
    "ArithmeticExpression", "Condition", "IdentifierDeclStatement", "ExpressionStatement",
    "RelationalExpression", "Argument", "ForStatement",
)
_SNIPPETS = {
    "Identifier": ["len", "buf", "ctx", "ret", "size", "p", "n"],
    "CallStatement": ["free(ptr);", "init(ctx);", "log_msg(\"x\");", "close(fd);"],
    "AssignmentExpression": ["ret = 0", "n = len + 1", "p = ctx->next", "size = n * 2"],
    "IfStatement": ["if (ret < 0)", "if (!ptr)", "if (n == size)"],
    "ReturnStatement": ["return ret;", "return 0;", "return -1;"],
    "ArithmeticExpression": ["len + 1", "n * 2", "size - off"],
    "Condition": ["ret < 0", "n >= size", "p != NULL"],
    "IdentifierDeclStatement": ["int ret = 0;", "size_t n;", "char *p;"],
    "ExpressionStatement": ["n++;", "ctx->count--;", "off += 4;"],
    "RelationalExpression": ["a <= b", "n > 0", "len != size"],
    "Argument": ["ctx", "buf", "len"],
    "ForStatement": ["for (i = 0; i < n; i++)"],
    MARKER_TYPE: ["buf[len]", "dst[n + off]", "table[idx]"],
}


def random_graph(gid: str, label: int, rng: np.random.Generator, project: str = "synth",
                 n_range: tuple[int, int] = (5, 10), marker: bool | None = None,
                 max_markers: int = 3) -> CodeGraph:
    """A small random CPG.

    With ``marker`` (default: ``label == 1``) between 1 and ``max_markers``
    interior vertices become MARKER_TYPE, so each marker both receives and
    sends messages.
    """
    marker = bool(label) if marker is None else marker
    if marker and n_range[0] < 3:
        raise ValueError("graphs with markers need at least 3 vertices")
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    types = [str(rng.choice(_COMMON_TYPES)) for _ in range(n)]
    if marker:
        count = int(rng.integers(1, min(max_markers, n - 2) + 1))
        for pos in rng.choice(np.arange(1, n - 1), size=count, replace=False):
            types[int(pos)] = MARKER_TYPE
    vertices = [Vertex(i, t, str(rng.choice(_SNIPPETS[t]))) for i, t in enumerate(types)]
    edges = []
    for i in range(1, n):
        edges.append(Edge(int(rng.integers(0, i)), i, "AST"))
        edges.append(Edge(i - 1, i, "CFG"))
    for _ in range(n // 2):
        a, b = rng.integers(0, n, size=2)
        edges.append(Edge(int(a), int(b), "DFG"))
    for _ in range(n // 3):
        a, b = rng.integers(0, n, size=2)
        edges.append(Edge(int(a), int(b), "DEF_USE"))
    return CodeGraph(gid, label, project, vertices, edges)


def graph_corpus(n: int = 200, vulnerable_fraction: float = 0.5, seed: int = 0) -> list[CodeGraph]:
    """Separable corpus: label 1 iff the graph contains a MARKER_TYPE vertex."""
    rng = np.random.default_rng(seed)
    n_vuln = int(round(n * vulnerable_fraction))
    labels = np.array([1] * n_vuln + [0] * (n - n_vuln))
    rng.shuffle(labels)
    return [random_graph(f"g{i:04d}", int(y), rng) for i, y in enumerate(labels)]


def _body(name: str, g: CodeGraph) -> str:
    lines = [f"int {name}(struct ctx *ctx)", "{"]
    lines += [f"    {v.code}" for v in g.vertices]
    lines.append("}")
    return "\n".join(lines)


def patch_corpus(n_patches: int = 40, unchanged_per_patch: int = 3,
                 seed: int = 0) -> tuple[list[PatchRecord], list[CodeGraph]]:
    """Patches plus one unlabeled CPG per function version they yield.

    Each patch changes one function; its pre-patch version carries the
    marker vertex. Graph ids equal the labeled-function ids produced by
    ``label_patch`` and every graph label starts at 0, to be filled in by
    ingestion.
    """
    rng = np.random.default_rng(seed)
    patches, graphs = [], []
    for p in range(n_patches):
        pid = f"patch{p:03d}"
        proj = "synth"
        before, after = [], []
        fixed = random_graph(f"{pid}:f{p}_1", 0, rng, proj)
        vuln = random_graph(f"{pid}:f{p}_0", 0, rng, proj, marker=True)
        before.append((f"f{p}", _body(f"f{p}", vuln)))
        after.append((f"f{p}", _body(f"f{p}", fixed)))
        graphs += [vuln, fixed]
        for u in range(unchanged_per_patch):
            name = f"u{p}_{u}"
            g = random_graph(f"{pid}:{name}", 0, rng, proj)
            before.append((name, _body(name, g)))
            after.append((name, _body(name, g)))
            graphs.append(g)
        patches.append(PatchRecord(pid, proj, tuple(before), tuple(after), frozenset({f"f{p}"})))
    return patches, graphs


def gaussian_features(n: int = 2000, vulnerable_fraction: float = 0.1, dim: int = 32,
                      separation: float = 1.5, seed: int = 0,
                      informative: int | None = None) -> list[FeatureRecord]:
    """Two overlapping isotropic Gaussian classes.

    The class means differ by ``separation`` (Euclidean) along a random
    direction inside the first ``informative`` coordinates (all by default).
    """
    rng = np.random.default_rng(seed)
    informative = dim if informative is None else informative
    direction = np.zeros(dim)
    direction[:informative] = rng.normal(size=informative)
    direction /= np.linalg.norm(direction)
    n_vuln = int(round(n * vulnerable_fraction))
    labels = np.array([1] * n_vuln + [0] * (n - n_vuln))
    rng.shuffle(labels)
    X = rng.normal(size=(n, dim)) + np.outer(labels, direction) * separation
    return [FeatureRecord(f"r{i:05d}", X[i], int(labels[i]), "synth") for i in range(n)]
