"""Code property graph model, JSONL interchange, and the C token splitter."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

# Joern-style vertex kinds. 69 entries so that one-hot(69) + word vector(100)
# gives a 169-wide vertex feature.
DEFAULT_VERTEX_TYPES: tuple[str, ...] = (
    "AdditiveExpression", "AndExpression", "Argument", "ArgumentList", "ArithmeticExpression",
    "ArrayIndexing", "AssignmentExpression", "BitAndExpression", "BlockStarter", "BreakStatement",
    "CFGEntryNode", "CFGExitNode", "CallExpression", "CallStatement", "Callee",
    "CastExpression", "CastTarget", "CatchStatement", "ClassDef", "ClassDefStatement",
    "CompoundStatement", "Condition", "ConditionalExpression", "ContinueStatement", "Decl",
    "DeclStmt", "DoStatement", "ElseStatement", "EqualityExpression", "ExclusiveOrExpression",
    "Expression", "ExpressionStatement", "ForInit", "ForStatement", "FunctionDef",
    "GotoStatement", "Identifier", "IdentifierDecl", "IdentifierDeclStatement", "IdentifierDeclType",
    "IfStatement", "IncDec", "IncDecOp", "InclusiveOrExpression", "InitializerList",
    "Label", "MemberAccess", "MultiplicativeExpression", "OrExpression", "Parameter",
    "ParameterList", "ParameterType", "PrimaryExpression", "PtrMemberAccess", "RelationalExpression",
    "ReturnStatement", "ReturnType", "ShiftExpression", "Sizeof", "SizeofExpr",
    "SizeofOperand", "Statement", "SwitchStatement", "Symbol", "ThrowStatement",
    "TryStatement", "UnaryExpression", "UnaryOperator", "WhileStatement",
)
DEFAULT_EDGE_TYPES: tuple[str, ...] = ("AST", "CFG", "DFG", "DEF_USE")


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TypeVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ValueError("vocabulary names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown type symbol {name!r}") from None


DEFAULT_VERTEX_VOCAB = TypeVocabulary(DEFAULT_VERTEX_TYPES)
DEFAULT_EDGE_VOCAB = TypeVocabulary(DEFAULT_EDGE_TYPES)


def load_vocabularies(path) -> tuple[TypeVocabulary, TypeVocabulary]:
    """Read ``{"vertex_types": [...], "edge_types": [...]}`` from a JSON file."""
    doc = json.loads(Path(path).read_text())
    return TypeVocabulary(doc["vertex_types"]), TypeVocabulary(doc.get("edge_types", DEFAULT_EDGE_TYPES))


@dataclass(frozen=True)
class Vertex:
    id: int
    vtype: str
    code: str = ""


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    etype: str


@dataclass(frozen=True)
class CodeGraph:
    id: str
    label: int
    project: str
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))

    def validate(self, vertex_vocab: TypeVocabulary = DEFAULT_VERTEX_VOCAB,
                 edge_vocab: TypeVocabulary = DEFAULT_EDGE_VOCAB) -> "CodeGraph":
        if self.label not in (0, 1):
            raise GraphFormatError(f"graph {self.id}: label must be 0 or 1, got {self.label!r}")
        for i, v in enumerate(self.vertices):
            if v.id != i:
                raise GraphFormatError(f"graph {self.id}: vertex ids must be dense 0..n-1 in order")
            if v.vtype not in vertex_vocab:
                raise GraphFormatError(f"graph {self.id}: unknown vertex type {v.vtype!r}")
        n = len(self.vertices)
        for e in self.edges:
            if e.etype not in edge_vocab:
                raise GraphFormatError(f"graph {self.id}: unknown edge type {e.etype!r}")
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise GraphFormatError(f"dangling endpoint in graph {self.id}")
        return self

    def with_label(self, label: int) -> "CodeGraph":
        return CodeGraph(self.id, label, self.project, self.vertices, self.edges)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "project": self.project,
            "vertices": [{"id": v.id, "type": v.vtype, "code": v.code} for v in self.vertices],
            "edges": [{"src": e.src, "dst": e.dst, "etype": e.etype} for e in self.edges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CodeGraph":
        vertices = sorted((Vertex(int(v["id"]), v["type"], v.get("code", "")) for v in obj["vertices"]),
                          key=lambda v: v.id)
        edges = [Edge(int(e["src"]), int(e["dst"]), e["etype"]) for e in obj.get("edges", [])]
        return cls(str(obj["id"]), obj["label"], obj.get("project", ""), vertices, edges)


def load_graphs(path, vertex_vocab: TypeVocabulary = DEFAULT_VERTEX_VOCAB,
                edge_vocab: TypeVocabulary = DEFAULT_EDGE_VOCAB) -> list[CodeGraph]:
    graphs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            try:
                g = CodeGraph.from_json(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise GraphFormatError(f"{path}:{lineno}: bad graph record ({exc})") from None
            graphs.append(g.validate(vertex_vocab, edge_vocab))
    return graphs


def dump_graphs(graphs: Iterable[CodeGraph], path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_json()) + "\n")


_TOKEN_RE = re.compile(r"""
      "(?:\\.|[^"\\\n])*"                  # string literal
    | '(?:\\.|[^'\\\n])*'                  # char literal
    | [A-Za-z_]\w*                         # identifier / keyword
    | \.?\d(?:[eEpP][+-]|[\w.])*           # number (pp-number)
    | <<=|>>=|\.\.\.|->\*?|\+\+|--|==|!=|<=|>=|&&|\|\||<<|>>|::
    | [-+*/%&|^]=
    | \S
""", re.VERBOSE)


def tokenize(code: str) -> list[str]:
    """Split C source into concrete tokens.

    Whitespace is dropped; identifiers, literals and multi-character
    operators (``==``, ``->``, ``++``, ``<<=`` ...) are kept whole.

    >>> tokenize("x->y++")
    ['x', '->', 'y', '++']
    """
    return _TOKEN_RE.findall(code)


def graph_fingerprint(g: CodeGraph) -> str:
    """Whitespace-insensitive content hash of a graph's vertices.

    Edges, label, id and project are ignored, so two functions with the same
    token content per vertex collide.
    """
    h = hashlib.sha256()
    for v in g.vertices:
        h.update(v.vtype.encode())
        h.update(b"\x1e")
        h.update("\x1f".join(tokenize(v.code)).encode())
        h.update(b"\x1d")
    return h.hexdigest()


def graph_tokens(graphs: Sequence[CodeGraph]) -> list[list[str]]:
    """One token stream per graph (vertices in id order), for embedding training."""
    return [[t for v in g.vertices for t in tokenize(v.code)] for g in graphs]
