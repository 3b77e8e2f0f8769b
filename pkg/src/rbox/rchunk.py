"""R-aware source scanning: tokens, statement completeness, statement spans,
cells, and cursor-to-statement lookup.

Completeness is a heuristic (delimiter balance, trailing-operator detection,
dangling control headers), not a full R grammar; the kernel is the final
arbiter of syntax. The one known mis-judgement, a top-level ``if (c) x``
followed by a line starting with ``else``, is documented in
KNOWN_LIMITATIONS.md and pinned by fixtures.

All spans are byte offsets into the UTF-8 encoding of the source, validated
up front.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional

from .errors import EmptySource, InvalidUtf8


class TokenKind(Enum):
    IDENTIFIER = "identifier"
    NUMBER = "number"
    STRING = "string"
    BACKTICK_NAME = "backtick_name"
    COMMENT = "comment"
    OPERATOR = "operator"
    USER_OP = "user_op"
    OPEN = "open"
    CLOSE = "close"
    COMMA = "comma"
    SEMICOLON = "semicolon"
    NEWLINE = "newline"


@dataclass
class Token:
    kind: TokenKind
    start: int  # byte offset, inclusive
    end: int    # byte offset, exclusive
    text: str
    line: int       # 1-based line of the first byte
    end_line: int   # 1-based line of the last byte
    unterminated: bool = False
    first_on_line: bool = False


class Completeness(Enum):
    COMPLETE = "complete"
    INCOMPLETE = "incomplete"
    INVALID = "invalid"


# Multi-char operators, longest first so the scanner is greedy.
_OPS3 = ("<<-", "->>", ":::")
_OPS2 = ("<-", "->", "==", "!=", "<=", ">=", "&&", "||", "|>", "::")
_WHITESPACE = " \t\r\f\v"
_BRACKETS = {")": "(", "]": "[", "}": "{"}
_CONTROL_KEYWORDS = frozenset({"if", "for", "while", "function"})
_DANGLING_KEYWORDS = frozenset({"if", "for", "while", "function", "repeat", "else"})


def _utf8_check(source: str) -> bytes:
    try:
        return source.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InvalidUtf8(str(exc)) from None


def tokenize(source: str) -> List[Token]:
    """Scan R source into tokens covering every non-whitespace byte."""
    _utf8_check(source)
    n = len(source)
    if source.isascii():
        boff = None  # byte offset == char offset
    else:
        boff = [0] * (n + 1)
        pos = 0
        for idx, ch in enumerate(source):
            boff[idx] = pos
            pos += len(ch.encode("utf-8"))
        boff[n] = pos

    def b(i: int) -> int:
        return i if boff is None else boff[i]

    tokens: List[Token] = []
    i = 0
    line = 1
    at_line_start = True

    def emit(kind, start, end, end_line=None, unterminated=False):
        nonlocal at_line_start
        tokens.append(Token(
            kind=kind, start=b(start), end=b(end), text=source[start:end],
            line=line, end_line=end_line if end_line is not None else line,
            unterminated=unterminated, first_on_line=at_line_start,
        ))
        if kind is not TokenKind.NEWLINE:
            at_line_start = False

    while i < n:
        ch = source[i]
        if ch == "\n":
            emit(TokenKind.NEWLINE, i, i + 1)
            line += 1
            at_line_start = True
            i += 1
        elif ch in _WHITESPACE:
            i += 1
        elif ch == "#":
            j = i + 1
            while j < n and source[j] != "\n":
                j += 1
            emit(TokenKind.COMMENT, i, j)
            i = j
        elif ch in "\"'`":
            quote = ch
            kind = TokenKind.BACKTICK_NAME if quote == "`" else TokenKind.STRING
            j = i + 1
            newlines = 0
            closed = False
            while j < n:
                c = source[j]
                if c == "\\" and j + 1 < n:
                    if source[j + 1] == "\n":
                        newlines += 1
                    j += 2
                    continue
                if c == "\n":
                    newlines += 1
                elif c == quote:
                    j += 1
                    closed = True
                    break
                j += 1
            emit(kind, i, j, end_line=line + newlines, unterminated=not closed)
            line += newlines
            i = j
        elif ch == "%":
            j = i + 1
            while j < n and source[j] not in "%\n":
                j += 1
            if j < n and source[j] == "%":
                emit(TokenKind.USER_OP, i, j + 1)
                i = j + 1
            else:
                emit(TokenKind.OPERATOR, i, i + 1)
                i += 1
        elif ch in "([{":
            emit(TokenKind.OPEN, i, i + 1)
            i += 1
        elif ch in ")]}":
            emit(TokenKind.CLOSE, i, i + 1)
            i += 1
        elif ch == ",":
            emit(TokenKind.COMMA, i, i + 1)
            i += 1
        elif ch == ";":
            emit(TokenKind.SEMICOLON, i, i + 1)
            i += 1
        elif ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            i = _scan_number(source, i, emit)
        elif ch.isalpha() or ch in "._":
            j = i + 1
            while j < n and (source[j].isalnum() or source[j] in "._"):
                j += 1
            emit(TokenKind.IDENTIFIER, i, j)
            i = j
        else:
            matched = False
            for ops in (_OPS3, _OPS2):
                for op in ops:
                    if source.startswith(op, i):
                        emit(TokenKind.OPERATOR, i, i + len(op))
                        i += len(op)
                        matched = True
                        break
                if matched:
                    break
            if not matched:
                # single-char operator; also the catch-all for odd bytes
                emit(TokenKind.OPERATOR, i, i + 1)
                i += 1
    return tokens


def _scan_number(source: str, i: int, emit) -> int:
    n = len(source)
    j = i
    if source[j] == "0" and j + 1 < n and source[j + 1] in "xX":
        j += 2
        while j < n and source[j] in "0123456789abcdefABCDEF":
            j += 1
    else:
        while j < n and source[j].isdigit():
            j += 1
        if j < n and source[j] == ".":
            j += 1
            while j < n and source[j].isdigit():
                j += 1
        if j < n and source[j] in "eE":
            k = j + 1
            if k < n and source[k] in "+-":
                k += 1
            if k < n and source[k].isdigit():
                j = k
                while j < n and source[j].isdigit():
                    j += 1
    if j < n and source[j] in "Li":
        j += 1
    emit(TokenKind.NUMBER, i, j)
    return j


_TRIVIA = (TokenKind.COMMENT, TokenKind.NEWLINE)


class _CompletenessState:
    """Incremental completeness over a token stream.

    Feeding tokens keeps enough state to give a Complete / Incomplete /
    Invalid verdict at any point in O(1).
    """

    def __init__(self):
        self._stack: List[Token] = []
        # meaningful token preceding each open bracket, kept alongside the stack
        self._stack_prev: List[Optional[Token]] = []
        self.invalid = False
        self.unterminated = False
        self.last: Optional[Token] = None
        self._last_close_is_header = False

    def depth(self) -> int:
        return len(self._stack)

    def feed(self, tok: Token) -> None:
        if tok.kind in _TRIVIA:
            return
        if tok.unterminated:
            self.unterminated = True
        if tok.kind is TokenKind.OPEN:
            self._stack_prev.append(self.last)
            self._stack.append(tok)
        elif tok.kind is TokenKind.CLOSE:
            if not self._stack or self._stack[-1].text != _BRACKETS[tok.text]:
                self.invalid = True
            else:
                opener = self._stack.pop()
                prev = self._stack_prev.pop()
                self._last_close_is_header = (
                    opener.text == "("
                    and prev is not None
                    and ((prev.kind is TokenKind.IDENTIFIER and prev.text in _CONTROL_KEYWORDS)
                         or (prev.kind is TokenKind.OPERATOR and prev.text == "\\"))
                )
        if tok.kind is not TokenKind.CLOSE:
            self._last_close_is_header = False
        self.last = tok

    def verdict(self) -> Completeness:
        if self.invalid:
            return Completeness.INVALID
        if self.unterminated or self._stack:
            return Completeness.INCOMPLETE
        tok = self.last
        if tok is None:
            return Completeness.COMPLETE
        if tok.kind in (TokenKind.OPERATOR, TokenKind.USER_OP, TokenKind.COMMA):
            return Completeness.INCOMPLETE
        if tok.kind is TokenKind.IDENTIFIER and tok.text in _DANGLING_KEYWORDS:
            return Completeness.INCOMPLETE
        if tok.kind is TokenKind.CLOSE and self._last_close_is_header:
            # `if (...)` / `for (...)` / `while (...)` / `function (...)`
            # headers still await their body
            return Completeness.INCOMPLETE
        return Completeness.COMPLETE


def is_complete(code: str) -> Completeness:
    state = _CompletenessState()
    for tok in tokenize(code):
        state.feed(tok)
    return state.verdict()


@dataclass
class StatementSpan:
    start_line: int  # 1-based, inclusive
    end_line: int    # 1-based, inclusive
    start_byte: int
    end_byte: int
    complete: bool

    def to_dict(self) -> dict:
        return {
            "start_line": self.start_line,
            "end_line": self.end_line,
            "start_byte": self.start_byte,
            "end_byte": self.end_byte,
            "complete": self.complete,
        }


def span_text(source: str, span: StatementSpan) -> str:
    return _utf8_check(source)[span.start_byte:span.end_byte].decode("utf-8")


def _make_span(stmt_tokens: List[Token], complete: bool) -> StatementSpan:
    # trailing comments are skipped trivia, not part of the statement
    end_idx = len(stmt_tokens) - 1
    while end_idx > 0 and stmt_tokens[end_idx].kind is TokenKind.COMMENT:
        end_idx -= 1
    first, last = stmt_tokens[0], stmt_tokens[end_idx]
    return StatementSpan(
        start_line=first.line, end_line=last.end_line,
        start_byte=first.start, end_byte=last.end,
        complete=complete,
    )


def scan_statements(source: str) -> List[StatementSpan]:
    """Greedy minimal-complete statement scan.

    Candidate statement boundaries are line ends and top-level semicolons;
    the scanner extends each statement to the first boundary at which the
    accumulated tokens are Complete. A trailing never-complete region is
    emitted as a single span with complete=False.
    """
    tokens = tokenize(source)
    spans: List[StatementSpan] = []
    n = len(tokens)
    i = 0
    while i < n:
        while i < n and tokens[i].kind in _TRIVIA:
            i += 1
        if i == n:
            break
        state = _CompletenessState()
        stmt: List[Token] = []
        j = i
        end = None  # exclusive token index of the statement once complete
        while j < n:
            tok = tokens[j]
            if tok.kind is TokenKind.NEWLINE:
                if state.depth() == 0 and state.verdict() is Completeness.COMPLETE:
                    end = j
                    break
                j += 1
                continue
            state.feed(tok)
            stmt.append(tok)
            j += 1
            if (tok.kind is TokenKind.SEMICOLON and state.depth() == 0
                    and state.verdict() is Completeness.COMPLETE):
                end = j
                break
        if end is None:
            # ran off the end of input
            if state.verdict() is Completeness.COMPLETE:
                spans.append(_make_span(stmt, complete=True))
            else:
                spans.append(_make_span(stmt, complete=False))
            break
        spans.append(_make_span(stmt, complete=True))
        i = end
    return spans


@dataclass
class Cell:
    marker_line: Optional[int]  # None for the implicit first cell
    body: List[StatementSpan] = field(default_factory=list)
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "marker_line": self.marker_line,
            "label": self.label,
            "body": [s.to_dict() for s in self.body],
        }


_MARKER_PREFIXES = ("# %%", "## ----")


def _marker_label(text: str) -> str:
    for prefix in _MARKER_PREFIXES:
        if text.startswith(prefix):
            return text[len(prefix):].strip()
    return ""


def split_cells(source: str) -> List[Cell]:
    """Partition statement spans into cells delimited by marker comments.

    A marker is a comment line (only whitespace before it) starting with
    ``# %%`` or ``## ----``. Markers inside string literals are plain text;
    markers inside a multi-line statement (e.g. within braces) do not split
    the statement and are ignored.
    """
    tokens = tokenize(source)
    spans = scan_statements(source)
    markers = [
        tok for tok in tokens
        if tok.kind is TokenKind.COMMENT and tok.first_on_line
        and tok.text.startswith(_MARKER_PREFIXES)
    ]
    markers = [
        m for m in markers
        if not any(s.start_byte < m.start < s.end_byte for s in spans)
    ]
    if not markers:
        return [Cell(marker_line=None, body=list(spans))]
    cells: List[Cell] = []
    starts = [m.start for m in markers]
    lead = [s for s in spans if s.start_byte < starts[0]]
    if lead:
        cells.append(Cell(marker_line=None, body=lead))
    for idx, marker in enumerate(markers):
        lo = marker.start
        hi = starts[idx + 1] if idx + 1 < len(markers) else None
        body = [s for s in spans
                if s.start_byte > lo and (hi is None or s.start_byte < hi)]
        cells.append(Cell(marker_line=marker.line, body=body,
                          label=_marker_label(marker.text)))
    return cells


def enclosing_statement(source: str, cursor: int) -> StatementSpan:
    """The statement containing the cursor byte offset.

    In inter-statement whitespace the next span wins; past the last span the
    last span wins.
    """
    total = len(_utf8_check(source))
    if not 0 <= cursor <= total:
        raise ValueError(f"cursor {cursor} outside [0, {total}]")
    spans = scan_statements(source)
    if not spans:
        raise EmptySource("no statements in source")
    ends = [s.end_byte for s in spans]
    idx = bisect.bisect_right(ends, cursor)
    if idx >= len(spans):
        return spans[-1]
    return spans[idx]
