"""Gherkin subset for game scenarios: tokenizer, parser, pretty-printer and linter.

Supported: ``Feature``, ``Scenario``, ``Given/When/Then/And/But``, tags, data
tables and ``#`` comments.  Anything else (Background, outlines, doc-strings,
``Rule``) is reported as an error rather than silently ignored.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "Diagnostic",
    "DataTable",
    "FeatureAst",
    "GherkinSyntaxError",
    "Scenario",
    "Severity",
    "SourceSpan",
    "Step",
    "StepKeyword",
    "Token",
    "TokenKind",
    "KNOWN_TAG_NAMESPACES",
    "format_diagnostic",
    "lint",
    "parse_feature",
    "parse_file",
    "pretty_print",
    "tokenize",
]

TAG_RE = re.compile(r"@[A-Za-z0-9_:.\-]+")
KNOWN_TAG_NAMESPACES = frozenset({"trainer", "env", "threshold"})

# Parse error codes.  Lint codes are GPD00x.
MISSING_FEATURE_HEADER = "GPE001"
EMPTY_SCENARIO = "GPE002"
ORPHAN_AND_BUT = "GPE003"
TABLE_RAGGED_ROWS = "GPE004"
ILLEGAL_CHARACTER = "GPE005"
UNEXPECTED_LINE = "GPE006"
DUPLICATE_SCENARIO = "GPE007"
NO_SCENARIOS = "GPE008"
INVALID_TAG = "GPE009"
EMPTY_STEP = "GPE010"
UNSUPPORTED_KEYWORD = "GPE011"
DUPLICATE_FEATURE = "GPE012"


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int

    def __post_init__(self) -> None:
        if self.line < 1 or self.column < 1 or self.length < 0:
            raise ValueError(f"invalid span {self.line}:{self.column}+{self.length}")

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


class Severity(str, enum.Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: str
    message: str
    span: SourceSpan

    def __str__(self) -> str:
        return format_diagnostic(self)


def format_diagnostic(diag: Diagnostic) -> str:
    return f"{diag.span}: {diag.severity.value}[{diag.code}] {diag.message}"


class GherkinSyntaxError(Exception):
    """Raised by :func:`parse_feature`; carries every error found."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(format_diagnostic(d) for d in diagnostics))


class StepKeyword(str, enum.Enum):
    GIVEN = "Given"
    WHEN = "When"
    THEN = "Then"
    AND = "And"
    BUT = "But"

    @property
    def is_conjunction(self) -> bool:
        return self in (StepKeyword.AND, StepKeyword.BUT)


class TokenKind(enum.Enum):
    KW_FEATURE = "KwFeature"
    KW_SCENARIO = "KwScenario"
    KW_GIVEN = "KwGiven"
    KW_WHEN = "KwWhen"
    KW_THEN = "KwThen"
    KW_AND = "KwAnd"
    KW_BUT = "KwBut"
    KW_UNSUPPORTED = "KwUnsupported"
    TEXT = "Text"
    TAG = "Tag"
    TABLE_ROW = "TableRow"


_HEADER_KEYWORDS = {
    "Feature": TokenKind.KW_FEATURE,
    "Scenario": TokenKind.KW_SCENARIO,
    "Background": TokenKind.KW_UNSUPPORTED,
    "Scenario Outline": TokenKind.KW_UNSUPPORTED,
    "Scenario Template": TokenKind.KW_UNSUPPORTED,
    "Examples": TokenKind.KW_UNSUPPORTED,
    "Scenarios": TokenKind.KW_UNSUPPORTED,
    "Rule": TokenKind.KW_UNSUPPORTED,
    "Example": TokenKind.KW_UNSUPPORTED,
}
_STEP_KEYWORDS = {
    "Given": TokenKind.KW_GIVEN,
    "When": TokenKind.KW_WHEN,
    "Then": TokenKind.KW_THEN,
    "And": TokenKind.KW_AND,
    "But": TokenKind.KW_BUT,
}
_STEP_KIND_TO_KEYWORD = {kind: StepKeyword(word) for word, kind in _STEP_KEYWORDS.items()}
# Longest first so "Scenario Outline:" wins over "Scenario:".
_HEADER_ORDER = sorted(_HEADER_KEYWORDS, key=len, reverse=True)


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: str
    span: SourceSpan
    cells: tuple[str, ...] = ()

    def __repr__(self) -> str:
        return f"{self.kind.value}({self.value!r})" if self.value else self.kind.value


def _split_row(body: str) -> tuple[str, ...] | None:
    """Split ``| a | b |`` into cells; ``None`` if the row is not closed."""
    if not body.endswith("|") or len(body) < 2:
        return None
    cells: list[str] = []
    buf: list[str] = []
    i = 1
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body) and body[i + 1] in "|\\":
            buf.append(body[i + 1])
            i += 2
            continue
        if ch == "|":
            cells.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
        i += 1
    if buf and "".join(buf).strip():
        return None
    return tuple(cells)


def _is_illegal(ch: str) -> bool:
    return (ord(ch) < 0x20 and ch != "\t") or ord(ch) == 0x7F or ch == "\ufffd"


def _tokenize(source: str, file: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    errors: list[Diagnostic] = []
    if source.startswith("\ufeff"):
        source = source[1:]
    for lineno, raw in enumerate(source.split("\n"), start=1):
        line = raw.rstrip("\r")
        bad = next((i for i, ch in enumerate(line) if _is_illegal(ch)), None)
        if bad is not None:
            errors.append(
                Diagnostic(
                    Severity.ERROR,
                    ILLEGAL_CHARACTER,
                    f"IllegalCharacter: U+{ord(line[bad]):04X} is not allowed",
                    SourceSpan(file, lineno, bad + 1, 1),
                )
            )
            continue
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        col = len(line) - len(line.lstrip()) + 1
        body = line.strip()

        def span(offset: int, length: int) -> SourceSpan:
            return SourceSpan(file, lineno, col + offset, length)

        if body.startswith("@"):
            for part in re.finditer(r"\S+", body):
                if part.group().startswith("#"):
                    break
                tokens.append(Token(TokenKind.TAG, part.group(), span(part.start(), len(part.group()))))
            continue
        if body.startswith("|"):
            cells = _split_row(body)
            if cells is None:
                errors.append(
                    Diagnostic(
                        Severity.ERROR,
                        TABLE_RAGGED_ROWS,
                        "TableRaggedRows: table row must start and end with '|'",
                        span(0, len(body)),
                    )
                )
                continue
            tokens.append(Token(TokenKind.TABLE_ROW, body, span(0, len(body)), cells))
            continue
        for word in _HEADER_ORDER:
            if body.startswith(word + ":"):
                kind = _HEADER_KEYWORDS[word]
                tokens.append(Token(kind, word if kind is TokenKind.KW_UNSUPPORTED else "", span(0, len(word) + 1)))
                rest = body[len(word) + 1 :]
                text = rest.strip()
                if text:
                    tokens.append(Token(TokenKind.TEXT, text, span(len(word) + 1 + rest.index(text), len(text))))
                break
        else:
            for word, kind in _STEP_KEYWORDS.items():
                if body == word or body.startswith(word + " ") or body.startswith(word + "\t"):
                    tokens.append(Token(kind, "", span(0, len(word))))
                    rest = body[len(word) :]
                    text = rest.strip()
                    if text:
                        tokens.append(Token(TokenKind.TEXT, text, span(len(word) + rest.index(text), len(text))))
                    break
            else:
                tokens.append(Token(TokenKind.TEXT, body, span(0, len(body))))
    return tokens, errors


def tokenize(source: str, file: str = "<string>") -> list[Token]:
    """Split ``source`` into line-anchored tokens.

    Keywords are only recognised at the start of a line (after indentation);
    blank lines and ``#`` comments produce nothing.  Raises
    :class:`GherkinSyntaxError` on control characters.
    """
    tokens, errors = _tokenize(source, file)
    if errors:
        raise GherkinSyntaxError(errors)
    return tokens


@dataclass(frozen=True)
class DataTable:
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if not self.rows:
            raise ValueError("a table needs at least one row")
        width = len(self.rows[0])
        if width < 1 or any(len(r) != width for r in self.rows):
            raise ValueError("table rows must all have the same number of cells")

    @property
    def width(self) -> int:
        return len(self.rows[0])


@dataclass(frozen=True)
class Step:
    keyword: StepKeyword
    resolved: StepKeyword
    text: str
    table: DataTable | None = None
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Scenario:
    name: str
    steps: tuple[Step, ...]
    tags: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False)


@dataclass(frozen=True)
class FeatureAst:
    name: str
    scenarios: tuple[Scenario, ...]
    description: str | None = None
    tags: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False)

    def scenario(self, name: str) -> Scenario:
        for sc in self.scenarios:
            if sc.name == name:
                return sc
        raise KeyError(name)


class _Parser:
    def __init__(self, tokens: list[Token], file: str, lex_errors: list[Diagnostic], origin: SourceSpan | None = None):
        self.tokens = tokens
        self.origin = origin or SourceSpan(file, 1, 1, 0)
        self.pos = 0
        self.file = file
        self.errors = list(lex_errors)

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, code: str, message: str, span: SourceSpan) -> None:
        self.errors.append(Diagnostic(Severity.ERROR, code, message, span))

    def text_after(self, header: Token) -> str:
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.TEXT and tok.span.line == header.span.line:
            self.pos += 1
            return tok.value
        return ""

    def tags(self) -> list[str]:
        out: list[str] = []
        while (tok := self.peek()) is not None and tok.kind is TokenKind.TAG:
            self.pos += 1
            if TAG_RE.fullmatch(tok.value):
                out.append(tok.value)
            else:
                self.error(INVALID_TAG, f"InvalidTag: {tok.value!r} is not a valid tag", tok.span)
        return out

    def skip_to_scenario(self) -> None:
        """Error recovery: advance to the next ``Scenario:`` (or its tags)."""
        while (tok := self.peek()) is not None:
            if tok.kind is TokenKind.KW_SCENARIO:
                return
            if tok.kind is TokenKind.TAG:
                j = self.pos
                while j < len(self.tokens) and self.tokens[j].kind is TokenKind.TAG:
                    j += 1
                if j < len(self.tokens) and self.tokens[j].kind is TokenKind.KW_SCENARIO:
                    return
                self.pos = j
                continue
            self.pos += 1

    def parse(self) -> FeatureAst | None:
        feature_tags = self.tags()
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.KW_FEATURE:
            span = tok.span if tok is not None else self.origin
            self.error(MISSING_FEATURE_HEADER, "MissingFeatureHeader: file must start with 'Feature:'", span)
            self.skip_to_scenario()
            # Keep going so later scenarios still get checked.
            header = None
        else:
            header = self.next()
        name = self.text_after(header) if header is not None else ""
        description: list[str] = []
        while (tok := self.peek()) is not None and tok.kind is TokenKind.TEXT:
            description.append(self.next().value)
        scenarios: list[Scenario] = []
        seen: dict[str, SourceSpan] = {}
        while (tok := self.peek()) is not None:
            if tok.kind in (TokenKind.TAG, TokenKind.KW_SCENARIO):
                sc = self.scenario()
                if sc is None:
                    continue
                if sc.name in seen:
                    assert sc.span is not None
                    self.error(
                        DUPLICATE_SCENARIO,
                        f"DuplicateScenario: {sc.name!r} already defined at line {seen[sc.name].line}",
                        sc.span,
                    )
                else:
                    seen[sc.name] = sc.span  # type: ignore[assignment]
                scenarios.append(sc)
            elif tok.kind is TokenKind.KW_FEATURE:
                self.error(DUPLICATE_FEATURE, "DuplicateFeature: only one 'Feature:' per file", tok.span)
                self.pos += 1
                self.skip_to_scenario()
            elif tok.kind is TokenKind.KW_UNSUPPORTED:
                self.error(UNSUPPORTED_KEYWORD, f"UnsupportedKeyword: '{tok.value}:' is not supported", tok.span)
                self.pos += 1
                self.skip_to_scenario()
            else:
                self.error(UNEXPECTED_LINE, f"UnexpectedLine: {tok.value or tok.kind.value!r} outside a scenario", tok.span)
                self.pos += 1
                self.skip_to_scenario()
        if header is None:
            return None
        if not scenarios and not self.errors:
            self.error(NO_SCENARIOS, "NoScenarios: feature has no scenarios", header.span)
        if self.errors:
            return None
        return FeatureAst(
            name=name,
            scenarios=tuple(scenarios),
            description="\n".join(description) if description else None,
            tags=tuple(feature_tags),
            span=header.span,
        )

    def scenario(self) -> Scenario | None:
        tags = self.tags()
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.KW_SCENARIO:
            span = tok.span if tok is not None else self.tokens[self.pos - 1].span
            self.error(UNEXPECTED_LINE, "UnexpectedLine: tags must precede a 'Scenario:'", span)
            self.skip_to_scenario()
            return None
        header = self.next()
        name = self.text_after(header)
        steps: list[Step] = []
        current: StepKeyword | None = None
        ok = True
        while (tok := self.peek()) is not None and tok.kind in _STEP_KIND_TO_KEYWORD:
            kw_tok = self.next()
            raw = _STEP_KIND_TO_KEYWORD[kw_tok.kind]
            text = self.text_after(kw_tok)
            if not text:
                self.error(EMPTY_STEP, f"EmptyStep: '{raw.value}' has no text", kw_tok.span)
                ok = False
            if raw.is_conjunction:
                if current is None:
                    self.error(
                        ORPHAN_AND_BUT,
                        f"OrphanAndBut: '{raw.value}' cannot start a scenario",
                        kw_tok.span,
                    )
                    ok = False
                resolved = current or StepKeyword.GIVEN
            else:
                resolved = current = raw
            table = self.table()
            if table is False:
                ok = False
                table = None
            step_span = SourceSpan(self.file, kw_tok.span.line, kw_tok.span.column, kw_tok.span.length + (len(text) + 1 if text else 0))
            steps.append(Step(raw, resolved, text, table, step_span))  # type: ignore[arg-type]
        if (tok := self.peek()) is not None and tok.kind in (TokenKind.TEXT, TokenKind.TABLE_ROW):
            self.error(UNEXPECTED_LINE, f"UnexpectedLine: {tok.value!r} is not a step", tok.span)
            self.skip_to_scenario()
            return None
        if not steps:
            self.error(EMPTY_SCENARIO, f"EmptyScenario: scenario {name!r} has no steps", header.span)
            return None
        if not ok:
            return None
        return Scenario(name, tuple(steps), tuple(tags), header.span)

    def table(self) -> DataTable | None | bool:
        rows: list[Token] = []
        while (tok := self.peek()) is not None and tok.kind is TokenKind.TABLE_ROW:
            rows.append(self.next())
        if not rows:
            return None
        width = len(rows[0].cells)
        bad = [r for r in rows if len(r.cells) != width]
        if bad or width < 1:
            target = bad[0] if bad else rows[0]
            self.error(
                TABLE_RAGGED_ROWS,
                f"TableRaggedRows: expected {width} cells, found {len(target.cells)}",
                target.span,
            )
            return False
        return DataTable(tuple(r.cells for r in rows))


def _first_content(source: str, file: str) -> SourceSpan | None:
    """Span of the first non-blank line (a comment, when nothing else exists)."""
    for lineno, line in enumerate(source.lstrip("\ufeff").split("\n"), start=1):
        body = line.rstrip("\r")
        if body.strip():
            col = len(body) - len(body.lstrip()) + 1
            return SourceSpan(file, lineno, col, len(body.strip()))
    return None


def parse_feature(source: str, file: str | Path = "<string>") -> FeatureAst:
    """Parse one feature file.

    Raises :class:`GherkinSyntaxError` listing every error found; the parser
    resynchronises on the next ``Scenario:`` so one typo does not hide others.
    """
    file = str(file)
    try:
        tokens, lex_errors = _tokenize(source, file)
        parser = _Parser(tokens, file, lex_errors, _first_content(source, file))
        ast = parser.parse()
    except GherkinSyntaxError:
        raise
    except Exception as exc:  # pragma: no cover - totality guard
        raise GherkinSyntaxError(
            [Diagnostic(Severity.ERROR, UNEXPECTED_LINE, f"InternalError: {exc}", SourceSpan(file, 1, 1, 0))]
        ) from exc
    if ast is None:
        raise GherkinSyntaxError(parser.errors)
    return ast


def parse_file(path: str | Path) -> FeatureAst:
    path = Path(path)
    data = path.read_bytes()
    try:
        source = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        span = SourceSpan(str(path), data[: exc.start].count(b"\n") + 1, 1, 1)
        raise GherkinSyntaxError(
            [Diagnostic(Severity.ERROR, ILLEGAL_CHARACTER, "IllegalCharacter: file is not valid UTF-8", span)]
        ) from exc
    return parse_feature(source, path)


def _escape_cell(cell: str) -> str:
    return cell.replace("\\", "\\\\").replace("|", "\\|")


def _format_table(table: DataTable, indent: str) -> list[str]:
    rows = [[_escape_cell(c) for c in row] for row in table.rows]
    widths = [max(len(r[i]) for r in rows) for i in range(table.width)]
    return [indent + "| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |" for row in rows]


def pretty_print(ast: FeatureAst) -> str:
    """Canonical rendering with 2-space indentation and aligned tables."""
    out: list[str] = []
    if ast.tags:
        out.append(" ".join(ast.tags))
    out.append(f"Feature: {ast.name}".rstrip())
    if ast.description:
        out.extend("  " + line for line in ast.description.split("\n"))
    for sc in ast.scenarios:
        out.append("")
        if sc.tags:
            out.append("  " + " ".join(sc.tags))
        out.append(f"  Scenario: {sc.name}".rstrip())
        for step in sc.steps:
            out.append(f"    {step.keyword.value} {step.text}")
            if step.table is not None:
                out.extend(_format_table(step.table, "      "))
    return "\n".join(out) + "\n"


def lint(ast: FeatureAst) -> list[Diagnostic]:
    """Style and structure checks on a parsed feature.  Never raises."""
    diags: list[Diagnostic] = []
    fallback = ast.span or SourceSpan("<string>", 1, 1, 0)

    def emit(severity: Severity, code: str, message: str, span: SourceSpan | None) -> None:
        diags.append(Diagnostic(severity, code, message, span or fallback))

    for tag in ast.tags:
        _check_tag(tag, ast.span, emit)
    for sc in ast.scenarios:
        for tag in sc.tags:
            _check_tag(tag, sc.span, emit)
        kinds = [s.resolved for s in sc.steps]
        if StepKeyword.THEN not in kinds:
            emit(Severity.ERROR, "GPD001", f"scenario {sc.name!r} has no Then step", sc.span)
        seen_then = None
        seen_when = False
        for step in sc.steps:
            if step.resolved is StepKeyword.THEN and seen_then is None:
                seen_then = step
            elif step.resolved is StepKeyword.WHEN:
                if seen_then is not None:
                    emit(Severity.ERROR, "GPD002", f"Then step {seen_then.text!r} precedes When step {step.text!r}", step.span)
                    seen_then = None
                seen_when = True
            elif step.resolved is StepKeyword.GIVEN and (seen_when or seen_then is not None):
                emit(Severity.ERROR, "GPD005", f"Given step {step.text!r} follows a When/Then step", step.span)
        texts: set[tuple[str, str]] = set()
        for step in sc.steps:
            key = (step.resolved.value, step.text)
            if key in texts:
                emit(Severity.WARNING, "GPD003", f"duplicate step {step.text!r}", step.span)
            texts.add(key)
    return diags


def _check_tag(tag: str, span: SourceSpan | None, emit) -> None:
    if ":" in tag:
        namespace = tag[1:].split(":", 1)[0]
        if namespace not in KNOWN_TAG_NAMESPACES:
            emit(Severity.WARNING, "GPD004", f"unknown tag namespace {namespace!r} in {tag}", span)
