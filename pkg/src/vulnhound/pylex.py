"""Error-tolerant Python lexer producing tokens with exact byte spans.

Works directly on the UTF-8 byte representation so spans index into the
raw file. Never raises on weird input: unrecognized bytes become
single-byte operator tokens, unterminated strings run to end of line or
file. Comments and blank lines are skipped by default.
"""

from __future__ import annotations

import keyword
from dataclasses import dataclass, field
from enum import Enum

from .errors import SourceDecodingError

__all__ = ["TokenKind", "Token", "TokenStream", "tokenize", "line_spans"]


class TokenKind(Enum):
    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    NUMBER_LITERAL = "number"
    STRING_LITERAL = "string"
    OPERATOR = "operator"
    PUNCTUATION = "punctuation"
    NEWLINE = "newline"
    INDENT = "indent"
    DEDENT = "dedent"
    COMMENT = "comment"


# Indent/Dedent never correspond to source bytes; Newline does.
SYNTHETIC_KINDS = frozenset({TokenKind.INDENT, TokenKind.DEDENT})

INDENT_TEXT = "<INDENT>"
DEDENT_TEXT = "<DEDENT>"


@dataclass(frozen=True)
class Token:
    text: str
    kind: TokenKind
    start: int  # byte offset, inclusive
    end: int  # byte offset, exclusive

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def is_synthetic(self) -> bool:
        return self.kind in SYNTHETIC_KINDS


@dataclass
class TokenStream:
    tokens: list[Token] = field(default_factory=list)
    source_len: int = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


_KEYWORDS = frozenset(keyword.kwlist)

_WHITESPACE = b" \t\x0c"
_ID_START = frozenset(
    b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_"
)
_ID_CONT = _ID_START | frozenset(b"0123456789")
_DIGITS = frozenset(b"0123456789")
_STRING_PREFIX_CHARS = frozenset(b"rbufRBUF")
_QUOTES = frozenset(b"'\"")

_OPERATORS = [
    b"**=", b"//=", b">>=", b"<<=",
    b"**", b"//", b">>", b"<<", b"<=", b">=", b"==", b"!=",
    b"->", b":=", b"+=", b"-=", b"*=", b"/=", b"%=", b"&=", b"|=", b"^=",
    b"@=",
    b"+", b"-", b"*", b"/", b"%", b"@", b"&", b"|", b"^", b"~", b"<",
    b">", b"=",
]

_OPEN_BRACKETS = frozenset(b"([{")
_CLOSE_BRACKETS = frozenset(b")]}")
_PUNCTUATION = frozenset(b"()[]{},:;.")

_TABSIZE = 8


def _decode(source: str | bytes) -> bytes:
    if isinstance(source, str):
        return source.encode("utf-8")
    try:
        source.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SourceDecodingError(exc.start, exc.reason) from exc
    return source


def line_spans(source: str | bytes) -> list[tuple[int, int]]:
    """Byte span of each physical line, newline bytes included.

    Line numbers are 1-based: lines()[k] is line k+1. A trailing line
    without a newline still counts.
    """
    data = _decode(source)
    spans: list[tuple[int, int]] = []
    start = 0
    i = 0
    n = len(data)
    while i < n:
        c = data[i]
        if c == 0x0A:  # \n
            spans.append((start, i + 1))
            start = i + 1
            i += 1
        elif c == 0x0D:  # \r or \r\n
            end = i + 2 if i + 1 < n and data[i + 1] == 0x0A else i + 1
            spans.append((start, end))
            start = end
            i = end
        else:
            i += 1
    if start < n:
        spans.append((start, n))
    return spans


class _Lexer:
    def __init__(self, data: bytes, keep_comments: bool):
        self.data = data
        self.n = len(data)
        self.pos = 0
        self.keep_comments = keep_comments
        self.tokens: list[Token] = []
        self.indents = [0]
        self.depth = 0  # open bracket nesting
        self.at_line_start = True

    def run(self) -> list[Token]:
        while self.pos < self.n:
            if self.at_line_start and self.depth == 0:
                if self._handle_line_start():
                    continue
            self._lex_one()
        # close any open blocks at EOF
        while len(self.indents) > 1:
            self.indents.pop()
            self._emit_synthetic(TokenKind.DEDENT, DEDENT_TEXT)
        return self.tokens

    # -- helpers ---------------------------------------------------------

    def _emit(self, kind: TokenKind, start: int, end: int) -> None:
        text = self.data[start:end].decode("utf-8", errors="replace")
        self.tokens.append(Token(text, kind, start, end))

    def _emit_synthetic(self, kind: TokenKind, text: str) -> None:
        self.tokens.append(Token(text, kind, self.pos, self.pos))

    def _peek(self, offset: int = 0) -> int:
        i = self.pos + offset
        return self.data[i] if i < self.n else -1

    def _line_is_blank(self, i: int) -> bool:
        """True if from i the line holds only whitespace/comment."""
        while i < self.n and self.data[i] in _WHITESPACE:
            i += 1
        return i >= self.n or self.data[i] in b"\r\n#"

    # -- line structure ---------------------------------------------------

    def _handle_line_start(self) -> bool:
        """Process indentation. Returns True if the whole line was consumed."""
        i = self.pos
        col = 0
        while i < self.n and self.data[i] in _WHITESPACE:
            if self.data[i] == 0x09:  # tab
                col = (col // _TABSIZE + 1) * _TABSIZE
            else:
                col += 1
            i += 1
        if i >= self.n:
            self.pos = i
            return True
        c = self.data[i]
        if c in b"\r\n":
            # blank line: no tokens at all
            self.pos = i
            self._skip_newline_bytes()
            return True
        if c == 0x23 and not self.keep_comments:  # '#'
            # comment-only line vanishes together with its newline
            self.pos = i
            self._skip_comment()
            self._skip_newline_bytes()
            return True
        self.pos = i
        self.at_line_start = False
        if col > self.indents[-1]:
            self.indents.append(col)
            self._emit_synthetic(TokenKind.INDENT, INDENT_TEXT)
        else:
            while col < self.indents[-1]:
                self.indents.pop()
                self._emit_synthetic(TokenKind.DEDENT, DEDENT_TEXT)
            if col > self.indents[-1]:
                # inconsistent dedent; tolerate by opening a fresh level
                self.indents.append(col)
                self._emit_synthetic(TokenKind.INDENT, INDENT_TEXT)
        return False

    def _skip_newline_bytes(self) -> None:
        if self._peek() == 0x0D:
            self.pos += 1
        if self._peek() == 0x0A:
            self.pos += 1
        self.at_line_start = True

    def _skip_comment(self) -> None:
        start = self.pos
        while self.pos < self.n and self.data[self.pos] not in b"\r\n":
            self.pos += 1
        if self.keep_comments:
            self._emit(TokenKind.COMMENT, start, self.pos)

    # -- tokens -----------------------------------------------------------

    def _lex_one(self) -> None:
        c = self._peek()
        if c in _WHITESPACE:
            self.pos += 1
            return
        if c == 0x5C and self._peek(1) in (0x0A, 0x0D):  # backslash-newline
            self.pos += 1
            if self._peek() == 0x0D:
                self.pos += 1
            if self._peek() == 0x0A:
                self.pos += 1
            return
        if c in (0x0A, 0x0D):
            start = self.pos
            if c == 0x0D and self._peek(1) == 0x0A:
                self.pos += 2
            else:
                self.pos += 1
            if self.depth == 0:
                # a newline followed only by blank/comment lines before more
                # code is still a statement terminator; emit it
                self._emit(TokenKind.NEWLINE, start, self.pos)
            self.at_line_start = self.depth == 0
            return
        if c == 0x23:  # '#'
            self._skip_comment()
            return
        if c in _QUOTES:
            self._lex_string(self.pos, raw=False)
            return
        if c in _STRING_PREFIX_CHARS:
            plen = self._string_prefix_len()
            if plen:
                prefix = self.data[self.pos : self.pos + plen].lower()
                self._lex_string(self.pos, raw=b"r" in prefix, prefix_len=plen)
                return
        if c in _ID_START or c >= 0x80:
            self._lex_name()
            return
        if c in _DIGITS or (c == 0x2E and self._peek(1) in _DIGITS):
            self._lex_number()
            return
        for op in _OPERATORS:
            if self.data.startswith(op, self.pos):
                self._emit(TokenKind.OPERATOR, self.pos, self.pos + len(op))
                self.pos += len(op)
                return
        if c in _PUNCTUATION:
            if c in _OPEN_BRACKETS:
                self.depth += 1
            elif c in _CLOSE_BRACKETS and self.depth > 0:
                self.depth -= 1
            self._emit(TokenKind.PUNCTUATION, self.pos, self.pos + 1)
            self.pos += 1
            return
        # unrecognized byte: keep lexing total
        self._emit(TokenKind.OPERATOR, self.pos, self.pos + 1)
        self.pos += 1

    def _string_prefix_len(self) -> int:
        """Length of a string prefix (r/b/u/f combos) ending at a quote, else 0."""
        for plen in (2, 1):
            if all(self._peek(k) in _STRING_PREFIX_CHARS for k in range(plen)) and (
                self._peek(plen) in _QUOTES
            ):
                return plen
        return 0

    def _lex_string(self, start: int, raw: bool, prefix_len: int = 0) -> None:
        i = start + prefix_len
        quote = self.data[i]
        triple = self.data[i + 1 : i + 3] == bytes([quote, quote])
        i += 3 if triple else 1
        while i < self.n:
            c = self.data[i]
            if c == 0x5C and i + 1 < self.n:
                # backslash shields the next byte even in raw strings
                i += 2
                continue
            if not triple and c in (0x0A, 0x0D):
                break  # unterminated single-quoted literal
            if c == quote:
                if not triple:
                    i += 1
                    break
                if self.data[i + 1 : i + 3] == bytes([quote, quote]):
                    i += 3
                    break
            i += 1
        else:
            i = self.n
        i = min(i, self.n)
        self._emit(TokenKind.STRING_LITERAL, start, i)
        self.pos = i

    def _lex_name(self) -> None:
        start = self.pos
        while self.pos < self.n and (
            self.data[self.pos] in _ID_CONT or self.data[self.pos] >= 0x80
        ):
            self.pos += 1
        text = self.data[start : self.pos].decode("utf-8", errors="replace")
        kind = TokenKind.KEYWORD if text in _KEYWORDS else TokenKind.IDENTIFIER
        self.tokens.append(Token(text, kind, start, self.pos))

    def _lex_number(self) -> None:
        start = self.pos
        i = self.pos
        data = self.data
        if data[i] == 0x30 and i + 1 < self.n and data[i + 1] in b"xXoObB":
            i += 2
            while i < self.n and (data[i] in b"0123456789abcdefABCDEF_"):
                i += 1
        else:
            seen_dot = seen_exp = False
            while i < self.n:
                c = data[i]
                if c in _DIGITS or c == 0x5F:
                    i += 1
                elif c == 0x2E and not seen_dot and not seen_exp:
                    seen_dot = True
                    i += 1
                elif c in b"eE" and not seen_exp and i + 1 < self.n and (
                    data[i + 1] in _DIGITS
                    or (data[i + 1] in b"+-" and i + 2 < self.n and data[i + 2] in _DIGITS)
                ):
                    seen_exp = True
                    i += 2 if data[i + 1] in b"+-" else 1
                else:
                    break
        if i < self.n and data[i] in b"jJ":
            i += 1
        self._emit(TokenKind.NUMBER_LITERAL, start, i)
        self.pos = i


def tokenize(source: str | bytes, keep_comments: bool = False) -> TokenStream:
    """Lex Python-like source into a token stream with byte spans.

    Total on any valid UTF-8 input; the source need not be syntactically
    valid Python. Raises SourceDecodingError for invalid UTF-8 bytes.
    """
    data = _decode(source)
    tokens = _Lexer(data, keep_comments).run()
    return TokenStream(tokens=tokens, source_len=len(data))
