"""Front end for the ``.dflow`` workflow language: lexer, parser, checker, printer.

A workflow declares services pinned to sites, a sequence of single-assignment
bindings that invoke service operations, and the variables it returns::

    workflow Pipeline {
        service A at s1 { f/1 }
        service B at s2 { g/1 }
        x1 = A.f(input)
        x2 = B.g(x1)
        outputs x2
    }

Binding order is only a scoping rule; execution order is decided by data
dependencies alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

KEYWORDS = frozenset({"workflow", "service", "at", "outputs", "input"})
INPUT = "input"

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Span:
    start: int = 0
    end: int = 0
    line: int = 1
    col: int = 1
    end_line: int = 1
    end_col: int = 1

    @classmethod
    def of(cls, source: str, start: int, end: int) -> Span:
        start = max(0, min(start, len(source)))
        end = max(start, min(end, len(source)))
        line, col = _line_col(source, start)
        end_line, end_col = _line_col(source, end)
        return cls(start, end, line, col, end_line, end_col)


def _line_col(source: str, offset: int) -> tuple[int, int]:
    line = source.count("\n", 0, offset) + 1
    col = offset - (source.rfind("\n", 0, offset) + 1) + 1
    return line, col


NO_SPAN = Span()


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    span: Span = NO_SPAN
    severity: str = ERROR

    def format(self, filename: str = "<input>") -> str:
        return f"{filename}:{self.span.line}:{self.span.col}: {self.code} {self.message}"


class CompileError(Exception):
    """Raised by :func:`parse` and :func:`check`; carries every diagnostic found."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(f"{d.code} {d.message}" for d in self.diagnostics))


# --------------------------------------------------------------------------
# Abstract syntax. Spans are carried for diagnostics but excluded from equality.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VarRef:
    name: str
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class OpDecl:
    name: str
    arity: int
    span: Span = field(default=NO_SPAN, compare=False, repr=False)

    def __post_init__(self):
        if self.arity < 0:
            raise ValueError(f"operation {self.name!r} has negative arity")


@dataclass(frozen=True)
class ServiceDecl:
    name: str
    site: str
    operations: tuple[OpDecl, ...]
    span: Span = field(default=NO_SPAN, compare=False, repr=False)

    def __post_init__(self):
        if not self.site:
            raise ValueError(f"service {self.name!r} has an empty site")

    def arity(self, op: str) -> int | None:
        for decl in self.operations:
            if decl.name == op:
                return decl.arity
        return None


@dataclass(frozen=True)
class Binding:
    target: str
    service: str
    operation: str
    args: tuple[VarRef, ...]
    span: Span = field(default=NO_SPAN, compare=False, repr=False)
    service_span: Span = field(default=NO_SPAN, compare=False, repr=False)
    operation_span: Span = field(default=NO_SPAN, compare=False, repr=False)

    @property
    def arg_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.args)


@dataclass(frozen=True)
class WorkflowSpec:
    name: str
    services: tuple[ServiceDecl, ...]
    bindings: tuple[Binding, ...]
    outputs: tuple[VarRef, ...]

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.outputs)

    def service(self, name: str) -> ServiceDecl | None:
        for svc in self.services:
            if svc.name == name:
                return svc
        return None


@dataclass(frozen=True)
class CheckedWorkflow:
    """A workflow that passed :func:`check`. Warnings are kept for reporting."""

    spec: WorkflowSpec
    warnings: tuple[Diagnostic, ...] = ()

    @property
    def name(self) -> str:
        return self.spec.name


# --------------------------------------------------------------------------
# Lexer
# --------------------------------------------------------------------------

PUNCT = frozenset("{}(),.=/;")


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "int", "kw", "punct", "eof"
    text: str
    start: int
    end: int


class _Abort(Exception):
    pass


def tokenize(source: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch == "#":
            j = source.find("\n", i)
            i = n if j < 0 else j + 1
        elif ch.isspace():
            i += 1
        elif ch.isascii() and (ch.isalpha() or ch == "_"):
            j = i + 1
            while j < n and source[j].isascii() and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            tokens.append(Token("kw" if text in KEYWORDS else "ident", text, i, j))
            i = j
        elif ch.isascii() and ch.isdigit():
            j = i + 1
            while j < n and source[j].isascii() and source[j].isdigit():
                j += 1
            tokens.append(Token("int", source[i:j], i, j))
            i = j
        elif ch in PUNCT:
            tokens.append(Token("punct", ch, i, i + 1))
            i += 1
        else:
            diag = Diagnostic("E001", f"unexpected character {ch!r}", Span.of(source, i, i + 1))
            return tokens, [diag]
    tokens.append(Token("eof", "", n, n))
    return tokens, []


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


class _Parser:
    def __init__(self, source: str, tokens: list[Token]):
        self.source = source
        self.tokens = tokens
        self.pos = 0
        self.diagnostics: list[Diagnostic] = []

    def span(self, tok: Token) -> Span:
        return Span.of(self.source, tok.start, tok.end)

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        return self.tok.kind in ("kw", "punct") and self.tok.text == text

    def fail(self, code: str, message: str, tok: Token | None = None) -> _Abort:
        tok = tok or self.tok
        self.diagnostics.append(Diagnostic(code, message, self.span(tok)))
        return _Abort()

    def describe(self, tok: Token) -> str:
        return "end of input" if tok.kind == "eof" else repr(tok.text)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.fail("E001", f"expected {text!r}, found {self.describe(self.tok)}")
        return self.advance()

    def ident(self, what: str) -> Token:
        tok = self.tok
        if tok.kind == "ident":
            return self.advance()
        if tok.kind == "kw":
            raise self.fail("E001", f"{tok.text!r} is reserved and cannot name a {what}")
        raise self.fail("E001", f"expected {what} name, found {self.describe(tok)}")

    def duplicate(self, seen: dict[str, Token], tok: Token, what: str):
        if tok.text in seen:
            first = self.span(seen[tok.text])
            self.diagnostics.append(
                Diagnostic(
                    "E002",
                    f"duplicate {what} {tok.text!r} (first declared at {first.line}:{first.col})",
                    self.span(tok),
                )
            )
        else:
            seen[tok.text] = tok

    def workflow(self) -> WorkflowSpec:
        self.expect("workflow")
        name = self.ident("workflow")
        self.expect("{")
        services: list[ServiceDecl] = []
        bindings: list[Binding] = []
        outputs: list[VarRef] | None = None
        service_names: dict[str, Token] = {}
        var_names: dict[str, Token] = {}
        while outputs is None:
            tok = self.tok
            if self.at(";"):
                self.advance()
            elif self.at("service"):
                if bindings:
                    raise self.fail("E001", "service declarations must precede bindings")
                services.append(self.service(service_names))
            elif tok.kind == "ident" or (tok.kind == "kw" and tok.text == INPUT):
                bindings.append(self.binding(var_names))
            elif self.at("outputs"):
                outputs = self.outputs()
            elif self.at("}") or tok.kind == "eof":
                raise self.fail("E003", f"workflow {name.text!r} must declare its outputs")
            else:
                raise self.fail("E001", f"unexpected {self.describe(tok)}")
        while self.at(";"):
            self.advance()
        self.expect("}")
        if self.tok.kind != "eof":
            raise self.fail("E001", f"unexpected {self.describe(self.tok)} after workflow")
        return WorkflowSpec(name.text, tuple(services), tuple(bindings), tuple(outputs))

    def service(self, seen: dict[str, Token]) -> ServiceDecl:
        start = self.expect("service")
        name = self.ident("service")
        self.duplicate(seen, name, "service")
        self.expect("at")
        site = self.ident("site")
        self.expect("{")
        ops: list[OpDecl] = []
        op_names: dict[str, Token] = {}
        while True:
            op = self.ident("operation")
            self.duplicate(op_names, op, "operation")
            self.expect("/")
            if self.tok.kind != "int":
                raise self.fail("E001", f"expected arity, found {self.describe(self.tok)}")
            arity = self.advance()
            ops.append(OpDecl(op.text, int(arity.text), Span.of(self.source, op.start, arity.end)))
            if not self.at(","):
                break
            self.advance()
        end = self.expect("}")
        return ServiceDecl(name.text, site.text, tuple(ops), Span.of(self.source, start.start, end.end))

    def binding(self, seen: dict[str, Token]) -> Binding:
        target = self.ident("variable")
        self.duplicate(seen, target, "variable")
        self.expect("=")
        service = self.ident("service")
        self.expect(".")
        op = self.ident("operation")
        self.expect("(")
        args: list[VarRef] = []
        if not self.at(")"):
            while True:
                args.append(self.varref())
                if not self.at(","):
                    break
                self.advance()
        end = self.expect(")")
        return Binding(
            target.text,
            service.text,
            op.text,
            tuple(args),
            span=Span.of(self.source, target.start, end.end),
            service_span=self.span(service),
            operation_span=self.span(op),
        )

    def varref(self) -> VarRef:
        tok = self.tok
        if tok.kind == "ident" or (tok.kind == "kw" and tok.text == INPUT):
            self.advance()
            return VarRef(tok.text, self.span(tok))
        raise self.fail("E001", f"expected variable, found {self.describe(tok)}")

    def outputs(self) -> list[VarRef]:
        self.expect("outputs")
        refs: list[VarRef] = []
        seen: dict[str, Token] = {}
        while True:
            ref_tok = self.tok
            ref = self.varref()
            self.duplicate(seen, ref_tok, "output")
            refs.append(ref)
            if not self.at(","):
                return refs
            self.advance()


def parse(source: str | bytes) -> WorkflowSpec:
    """Parse ``.dflow`` source. Raises :class:`CompileError` on any error."""
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CompileError([Diagnostic("E001", f"source is not valid UTF-8 ({exc.reason})")])
    tokens, diags = tokenize(source)
    if diags:
        raise CompileError(diags)
    parser = _Parser(source, tokens)
    try:
        spec = parser.workflow()
    except _Abort:
        spec = None
    if parser.diagnostics:
        raise CompileError(sorted(parser.diagnostics, key=lambda d: d.span.start))
    return spec


# --------------------------------------------------------------------------
# Checker
# --------------------------------------------------------------------------


def diagnose(spec: WorkflowSpec) -> list[Diagnostic]:
    """Every rule violation in ``spec``, errors and warnings, in source order."""
    diags: list[Diagnostic] = []
    services: dict[str, ServiceDecl] = {}
    for svc in spec.services:
        if svc.name in services:
            diags.append(Diagnostic("E002", f"duplicate service {svc.name!r}", svc.span))
        services.setdefault(svc.name, svc)

    bound_later = {b.target for b in spec.bindings}
    defined: set[str] = set()
    used: set[str] = set()
    for b in spec.bindings:
        for ref in b.args:
            used.add(ref.name)
            if ref.name == INPUT or ref.name in defined:
                continue
            if ref.name in bound_later:
                msg = f"variable {ref.name!r} is used before its binding"
            else:
                msg = f"undefined variable {ref.name!r}"
            diags.append(Diagnostic("E010", msg, ref.span))
        svc = services.get(b.service)
        if svc is None:
            diags.append(Diagnostic("E011", f"unknown service {b.service!r}", b.service_span))
        else:
            arity = svc.arity(b.operation)
            if arity is None:
                diags.append(
                    Diagnostic("E011", f"service {b.service!r} has no operation {b.operation!r}", b.operation_span)
                )
            elif arity != len(b.args):
                diags.append(
                    Diagnostic(
                        "E012",
                        f"{b.service}.{b.operation} takes {arity} argument(s), {len(b.args)} given",
                        b.span,
                    )
                )
        if b.target in defined:
            diags.append(Diagnostic("E002", f"duplicate variable {b.target!r}", b.span))
        defined.add(b.target)

    if not spec.outputs:
        diags.append(Diagnostic("E003", f"workflow {spec.name!r} must declare its outputs"))
    seen_outputs: set[str] = set()
    for out in spec.outputs:
        if out.name in seen_outputs:
            diags.append(Diagnostic("E002", f"duplicate output {out.name!r}", out.span))
        seen_outputs.add(out.name)
        if out.name == INPUT:
            diags.append(Diagnostic("E010", "the workflow input cannot be returned as an output", out.span))
        elif out.name not in defined:
            diags.append(Diagnostic("E010", f"undefined variable {out.name!r}", out.span))

    for b in spec.bindings:
        if b.target not in used and b.target not in seen_outputs:
            diags.append(Diagnostic("E013", f"binding {b.target!r} is never used", b.span, WARNING))
    diags.sort(key=lambda d: d.span.start)
    return diags


def check(spec: WorkflowSpec) -> CheckedWorkflow:
    """Verify every workflow rule; raise :class:`CompileError` listing all errors."""
    diags = diagnose(spec)
    if any(d.severity == ERROR for d in diags):
        raise CompileError(diags)
    return CheckedWorkflow(spec, tuple(diags))


def compile_source(source: str | bytes) -> CheckedWorkflow:
    return check(parse(source))


# --------------------------------------------------------------------------
# Printer
# --------------------------------------------------------------------------


def pretty_print(spec: WorkflowSpec) -> str:
    lines = [f"workflow {spec.name} {{"]
    for svc in spec.services:
        ops = ", ".join(f"{op.name}/{op.arity}" for op in svc.operations)
        lines.append(f"    service {svc.name} at {svc.site} {{ {ops} }}")
    for b in spec.bindings:
        lines.append(f"    {b.target} = {b.service}.{b.operation}({', '.join(b.arg_names)})")
    lines.append(f"    outputs {', '.join(spec.output_names)}")
    lines.append("}")
    return "\n".join(lines) + "\n"
