import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixture_source
from dflow.dsl import (ERROR, WARNING, Binding, CompileError, OpDecl, ServiceDecl, VarRef, WorkflowSpec, check,
                       diagnose, parse, pretty_print)
from dflow.workloads import PATTERNS, generate, random_workflow


def codes(exc_info) -> list[str]:
    return [d.code for d in exc_info.value.diagnostics]


def test_parse_minimal_workflow():
    spec = parse("workflow W { service A at s1 { f/1 } ; x = A.f(input) ; outputs x }")
    assert spec.name == "W"
    assert len(spec.services) == 1 and len(spec.bindings) == 1
    assert spec.output_names == ("x",)
    assert spec.services[0] == ServiceDecl("A", "s1", (OpDecl("f", 1),))
    assert spec.bindings[0] == Binding("x", "A", "f", (VarRef("input"),))


def test_empty_workflow_needs_outputs():
    with pytest.raises(CompileError) as exc:
        parse("workflow W { }")
    assert codes(exc) == ["E003"]


def test_pipeline_fixture_parses_to_three_bindings():
    spec = parse(fixture_source("pipeline"))
    assert [b.target for b in spec.bindings] == ["x1", "x2", "x3"]
    assert spec.output_names == ("x3",)
    assert parse(pretty_print(spec)) == spec


@pytest.mark.parametrize(
    "source, code",
    [
        ("workflow W { service A at s1 { f/1 } x = A.f(input) outputs x", "E001"),
        ("workflow W { service A at s1 { f/1 } x = A.f(input) outputs x } trailing", "E001"),
        ("workflow W { x = A.f(input) service A at s1 { f/1 } outputs x }", "E001"),
        ("workflow W { input = A.f() outputs input }", "E001"),
        ("workflow W { service A at s1 { f/x } outputs y }", "E001"),
        ("workflow W { x = A.f(input) $ }", "E001"),
        ("workflow W { service A at s1 { f/1 } service A at s2 { g/1 } x = A.f(input) outputs x }", "E002"),
        ("workflow W { service A at s1 { f/1, f/2 } x = A.f(input) outputs x }", "E002"),
        ("workflow W { service A at s1 { f/1 } x = A.f(input) x = A.f(input) outputs x }", "E002"),
        ("workflow W { service A at s1 { f/1 } x = A.f(input) outputs x, x }", "E002"),
        ("workflow W { service A at s1 { f/1 } x = A.f(input) }", "E003"),
    ],
)
def test_parse_errors(source, code):
    with pytest.raises(CompileError) as exc:
        parse(source)
    assert code in codes(exc)


def test_diagnostic_positions_point_into_source():
    source = "workflow W {\n  service A at s1 { f/1 }\n  x = A.f(input) @\n}"
    with pytest.raises(CompileError) as exc:
        parse(source)
    (d,) = exc.value.diagnostics
    assert (d.span.line, d.span.col) == (3, 18)
    assert source[d.span.start] == "@"


def test_comments_and_whitespace_are_insignificant():
    a = parse("workflow W{service A at s1{f/1}x=A.f(input)outputs x}")
    b = parse("# header\nworkflow   W {\n service A at s1 { f / 1 } # decl\n x = A . f ( input )\n outputs x\n}\n")
    assert a == b


def test_zero_arity_call():
    spec = parse("workflow W { service A at s1 { make/0 } x = A.make() outputs x }")
    assert spec.bindings[0].args == ()
    check(spec)


def test_parse_rejects_invalid_utf8():
    with pytest.raises(CompileError) as exc:
        parse(b"workflow \xff")
    assert codes(exc) == ["E001"]


# -- checker ---------------------------------------------------------------


def test_undefined_variable_reported_at_its_span():
    source = fixture_source("undefined")
    with pytest.raises(CompileError) as exc:
        check(parse(source))
    errors = [d for d in exc.value.diagnostics if d.severity == ERROR]
    assert [d.code for d in errors] == ["E010"]
    span = errors[0].span
    assert source[span.start:span.end] == "z"
    assert (span.line, span.col) == (5, 13)


def test_arity_mismatch():
    spec = parse("workflow W { service A at s1 { f/1 } x = A.f(input, input) outputs x }")
    with pytest.raises(CompileError) as exc:
        check(spec)
    assert codes(exc) == ["E012"]


def test_unknown_service_and_operation():
    spec = parse("workflow W { service A at s1 { f/1 } x = B.f(input) y = A.g(x) outputs y }")
    with pytest.raises(CompileError) as exc:
        check(spec)
    assert codes(exc) == ["E011", "E011"]


def test_forward_reference_is_undefined():
    spec = parse("workflow W { service A at s1 { f/1 } x = A.f(y) y = A.f(input) outputs x }")
    with pytest.raises(CompileError) as exc:
        check(spec)
    assert "E010" in codes(exc)
    assert "before its binding" in exc.value.diagnostics[0].message


def test_output_must_be_a_binding():
    spec = parse("workflow W { service A at s1 { f/1 } x = A.f(input) outputs x, input }")
    with pytest.raises(CompileError) as exc:
        check(spec)
    assert codes(exc) == ["E010"]


def test_unused_binding_is_only_a_warning():
    spec = parse("workflow W { service A at s1 { f/1 } x = A.f(input) y = A.f(input) outputs x }")
    checked = check(spec)
    assert [(d.code, d.severity) for d in checked.warnings] == [("E013", WARNING)]


def test_aggregation_fixture_checks_clean():
    checked = check(parse(fixture_source("aggregation")))
    assert checked.warnings == ()


def test_check_reports_every_violation():
    source = """workflow W {
        service A at s1 { f/1 }
        a = A.f(nope)
        b = A.f(a, a)
        c = Missing.f(b)
        d = A.zap(c)
        outputs d, ghost
    }"""
    with pytest.raises(CompileError) as exc:
        check(parse(source))
    assert sorted(codes(exc)) == ["E010", "E010", "E011", "E011", "E012"]


def test_check_idempotent():
    spec = parse(fixture_source("undefined"))
    assert diagnose(spec) == diagnose(spec)
    good = parse(fixture_source("pipeline"))
    assert check(good) == check(good)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_injected_violations_all_reported(seed, k):
    """k independent faults in a clean workflow yield at least k diagnostics."""
    rng = random.Random(seed)
    spec = parse(generate("pipeline", 6))
    bindings = list(spec.bindings)
    faults = rng.sample(range(len(bindings)), k)
    for i in faults:
        b = bindings[i]
        kind = rng.choice(["undefined", "arity", "service", "op"])
        if kind == "undefined":
            bindings[i] = Binding(b.target, b.service, b.operation, (VarRef(f"ghost{i}"),))
        elif kind == "arity":
            bindings[i] = Binding(b.target, b.service, b.operation, b.args + b.args)
        elif kind == "service":
            bindings[i] = Binding(b.target, f"Nope{i}", b.operation, b.args)
        else:
            bindings[i] = Binding(b.target, b.service, f"nope{i}", b.args)
    broken = WorkflowSpec(spec.name, spec.services, tuple(bindings), spec.outputs)
    errors = [d for d in diagnose(broken) if d.severity == ERROR]
    assert len(errors) >= k


def test_invalid_decl_values_rejected():
    with pytest.raises(ValueError):
        OpDecl("f", -1)
    with pytest.raises(ValueError):
        ServiceDecl("A", "", ())


# -- printer ---------------------------------------------------------------


def test_pretty_print_single_binding():
    spec = parse("workflow W{service A at s1{f/1}x=A.f(input)outputs x}")
    assert pretty_print(spec) == (
        "workflow W {\n"
        "    service A at s1 { f/1 }\n"
        "    x = A.f(input)\n"
        "    outputs x\n"
        "}\n"
    )


def test_pretty_print_without_services():
    spec = WorkflowSpec("Empty", (), (), (VarRef("x"),))
    text = pretty_print(spec)
    assert text == "workflow Empty {\n    outputs x\n}\n"
    assert parse(text) == spec


@pytest.mark.parametrize("pattern", PATTERNS)
@pytest.mark.parametrize("n", [2, 3, 7])
def test_round_trip_generated(pattern, n):
    spec = parse(generate(pattern, n))
    text = pretty_print(spec)
    assert parse(text) == spec
    assert pretty_print(parse(text)) == text


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_round_trip_random(seed):
    spec = parse(random_workflow(seed).source)
    assert parse(pretty_print(spec)) == spec


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200) | st.text(alphabet="workflowsericeatputin {}(),.=/;#\nAxyz_019", max_size=120))
def test_parse_is_total(data):
    try:
        spec = parse(data)
    except CompileError as exc:
        assert exc.diagnostics
        text = data.decode("utf-8", "replace") if isinstance(data, bytes) else data
        for d in exc.diagnostics:
            assert 0 <= d.span.start <= d.span.end <= len(text)
    else:
        assert isinstance(spec, WorkflowSpec)
