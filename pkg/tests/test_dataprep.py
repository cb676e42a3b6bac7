import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from revealkit.dataprep import (AFTER_CHANGED, BEFORE_CHANGED, UNCHANGED, PatchRecord, UnbalancedBracesError,
                                dedup, extract_functions, inject_imbalance, label_patch, load_patches, split,
                                tangled_filter)
from revealkit.sampling import FeatureRecord


def _patch(pid, before, after, changed):
    return PatchRecord(pid, "proj", tuple(before), tuple(after), frozenset(changed))


FIGURE = _patch("p1",
                [("ham", "void ham() { buf[n] = 0; }"), ("spam", "void spam() {}"), ("egg", "void egg() {}")],
                [("ham", "void ham() { if (n < len) buf[n] = 0; }"), ("spam", "void spam() {}"),
                 ("egg", "void egg() {}")],
                {"ham"})


def test_label_patch_figure():
    labels = {f.name: f.label for f in label_patch(FIGURE)}
    assert labels == {"ham_0": 1, "ham_1": 0, "spam": 0, "egg": 0}
    origins = {f.name: f.origin for f in label_patch(FIGURE)}
    assert origins == {"ham_0": BEFORE_CHANGED, "ham_1": AFTER_CHANGED, "spam": UNCHANGED, "egg": UNCHANGED}


def test_label_patch_counts():
    before = [(n, f"void {n}() {{}}") for n in "abcde"]
    after = [(n, f"void {n}() {{ x(); }}") if n in "ab" else (n, f"void {n}() {{}}") for n in "abcde"]
    out = label_patch(_patch("p", before, after, {"a", "b"}))
    assert len(out) == 7
    assert Counter(f.label for f in out) == {1: 2, 0: 5}
    assert len({f.id for f in out}) == 7


def test_label_patch_empty_changed_and_errors():
    p = _patch("p", [("a", "x"), ("b", "y")], [("a", "x"), ("b", "y")], set())
    assert [f.label for f in label_patch(p)] == [0, 0]
    with pytest.raises(ValueError, match="neither version"):
        label_patch(_patch("p", [("a", "x")], [("a", "x")], {"zzz"}))


def test_label_patch_added_and_removed_functions():
    # a changed function present only after the patch yields only its clean version
    out = label_patch(_patch("p", [("a", "x")], [("a", "x"), ("new", "y")], {"new"}))
    assert {(f.name, f.label) for f in out} == {("new_1", 0), ("a", 0)}


_names = st.sampled_from(["f", "g", "h", "k", "m"])


@st.composite
def patches(draw):
    names = draw(st.sets(_names, min_size=1))
    changed = draw(st.sets(st.sampled_from(sorted(names))))
    before = [(n, f"b_{n}") for n in sorted(names)]
    after = [(n, f"a_{n}" if n in changed else f"b_{n}") for n in sorted(names)]
    return _patch("p", before, after, changed)


@given(patches())
def test_label_patch_origin_rule(p):
    out = label_patch(p)
    for f in out:
        assert f.label == (1 if f.origin == BEFORE_CHANGED else 0)
    assert len(out) == 2 * len(p.changed) + len({n for n, _ in p.functions_before} - p.changed)


def test_patch_json_round_trip(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps(FIGURE.to_json()) + "\n\n")
    assert load_patches(path) == [FIGURE]
    path.write_text("{not json}\n")
    with pytest.raises(ValueError, match=":1:"):
        load_patches(path)


def test_tangled_filter():
    ps = [_patch(f"p{i}", [("a", ""), ("b", "")], [], ch)
          for i, ch in enumerate([{"a"}, {"a", "b"}, {"b"}, set(), {"a"}])]
    kept = tangled_filter(ps)
    assert [p.patch_id for p in kept] == ["p0", "p2", "p4"]


def test_extract_functions_examples():
    assert extract_functions("int f(){return 0;}") == [("f", "int f(){return 0;}")]
    src = "static int a(int x)\n{\n  return x;\n}\n\nvoid b(void) { if (1) { g(); } }\n"
    assert [n for n, _ in extract_functions(src)] == ["a", "b"]
    assert extract_functions(src)[0][1] == "static int a(int x)\n{\n  return x;\n}"


def test_extract_functions_skips_literals_and_comments():
    src = 'void f() { puts("a{"); char c = \'}\'; /* { */ // }\n}\nint g() { return 1; }'
    assert [n for n, _ in extract_functions(src)] == ["f", "g"]


def test_extract_functions_ignores_non_functions():
    src = "#include <x.h>\nstruct s { int a; };\nint t[] = {1, 2};\nint h(void) { return 0; }"
    assert [n for n, _ in extract_functions(src)] == ["h"]


def test_extract_functions_unbalanced():
    with pytest.raises(UnbalancedBracesError, match="line 2"):
        extract_functions("int f()\n{\n return 0;\n")
    with pytest.raises(UnbalancedBracesError, match="line 1"):
        extract_functions("}")


def test_dedup_examples():
    unique, frac = dedup(["a", "b", "a", "c"])
    assert unique == ["a", "b", "c"] and frac == 0.25
    assert dedup(["a", "b"])[1] == 0.0
    unique, frac = dedup(["x"] * 5)
    assert unique == ["x"] and frac == pytest.approx(0.8)
    assert dedup([]) == ([], 0.0)


@given(st.lists(st.integers(0, 5)))
def test_dedup_idempotent(items):
    unique, _ = dedup(items)
    assert dedup(unique) == (unique, 0.0)


def _records(n_vuln, n_clean):
    return [FeatureRecord(f"r{i}", np.zeros(1), int(i < n_vuln), "t") for i in range(n_vuln + n_clean)]


def test_inject_imbalance_45_to_10():
    recs = _records(450, 550)
    out = inject_imbalance(recs, 0.10, seed=3)
    n = len(out)
    frac = sum(r.label for r in out) / n
    assert 0.10 - 1 / n <= frac <= 0.10 + 1 / n
    assert sum(1 - r.label for r in out) == 550
    assert [r.id for r in out] == [r.id for r in recs if r in out]
    assert out == inject_imbalance(recs, 0.10, seed=3)


def test_inject_imbalance_edges():
    recs = _records(45, 55)
    assert inject_imbalance(recs, 0.45) == recs
    with pytest.raises(ValueError, match="above"):
        inject_imbalance(recs, 0.5)
    with pytest.raises(ValueError):
        inject_imbalance(recs, 0.0)


def test_split_sizes():
    recs = _records(30, 70)
    tr, va, te = split(recs, seed=0)
    assert abs(len(tr) - 80) <= 1 and abs(len(va) - 10) <= 1 and abs(len(te) - 10) <= 1


def test_split_preserves_ratios():
    recs = _records(230, 770)
    for part in split(recs, seed=1):
        assert abs(sum(r.label for r in part) / len(part) - 0.23) <= 0.02


def test_split_seeds_and_errors():
    recs = _records(30, 70)
    a, b = split(recs, seed=0), split(recs, seed=1)
    assert [len(p) for p in a] == [len(p) for p in b]
    assert a != b
    assert a == split(recs, seed=0)
    with pytest.raises(ValueError, match="sum"):
        split(recs, (0.8, 0.1, 0.2))


@given(st.lists(st.integers(0, 1), max_size=60), st.integers(0, 1000), st.booleans())
def test_split_is_partition(labels, seed, stratify):
    recs = [FeatureRecord(f"r{i}", np.zeros(1), y, "t") for i, y in enumerate(labels)]
    parts = split(recs, seed=seed, stratify=stratify)
    ids = [r.id for p in parts for r in p]
    assert sorted(ids) == sorted(r.id for r in recs)
    assert len(ids) == len(set(ids))
