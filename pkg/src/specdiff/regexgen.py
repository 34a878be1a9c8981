"""Random strings matching a regular expression.

Supported: anchors ``^``/``$``, literals and escaped metacharacters,
``.``, ``\\d \\w \\s``, non-negated character classes with ranges,
quantifiers ``* + ? {m} {m,} {,n} {m,n}`` (lazy suffix accepted), alternation
and (non-capturing) groups.  Everything else raises
:class:`UnsupportedRegexError`.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass
from functools import lru_cache

from .errors import UnsupportedRegexError

UNBOUNDED_EXTRA = 8

_DIGITS = tuple(string.digits)
_WORD = tuple(string.ascii_letters + string.digits + "_")
_SPACE = (" ", "\t")
_DOT = tuple(c for c in string.printable if c not in "\n\r\x0b\x0c")


@dataclass(frozen=True)
class _Chars:
    choices: tuple[str, ...]


@dataclass(frozen=True)
class _Seq:
    parts: tuple


@dataclass(frozen=True)
class _Alt:
    options: tuple


@dataclass(frozen=True)
class _Repeat:
    node: object
    lo: int
    hi: int


class _Anchor:
    pass


_ANCHOR = _Anchor()


class _Parser:
    def __init__(self, pattern: str):
        self.src = pattern
        self.pos = 0

    def fail(self, construct: str):
        raise UnsupportedRegexError(construct, self.src)

    def peek(self) -> str | None:
        return self.src[self.pos] if self.pos < len(self.src) else None

    def take(self) -> str:
        ch = self.src[self.pos]
        self.pos += 1
        return ch

    def parse(self):
        node = self.alternation()
        if self.pos != len(self.src):
            self.fail(f"unbalanced ')' at offset {self.pos}")
        return node

    def alternation(self):
        options = [self.sequence()]
        while self.peek() == "|":
            self.take()
            options.append(self.sequence())
        return options[0] if len(options) == 1 else _Alt(tuple(options))

    def sequence(self):
        parts = []
        while self.peek() is not None and self.peek() not in "|)":
            atom = self.atom()
            parts.append(self.quantified(atom))
        return _Seq(tuple(parts))

    def atom(self):
        ch = self.take()
        if ch in "^$":
            return _ANCHOR
        if ch == ".":
            return _Chars(_DOT)
        if ch == "(":
            if self.peek() == "?":
                self.take()
                if self.peek() != ":":
                    self.fail("(?" + (self.peek() or "") + " group")
                self.take()
            inner = self.alternation()
            if self.peek() != ")":
                self.fail("unterminated group")
            self.take()
            return inner
        if ch == "[":
            return self.char_class()
        if ch == "\\":
            return _Chars(self.escape())
        if ch in "*+?{":
            if ch == "{" and not self._looks_like_bound(self.pos):
                return _Chars((ch,))
            self.fail(f"quantifier {ch!r} without operand")
        return _Chars((ch,))

    def escape(self) -> tuple[str, ...]:
        if self.peek() is None:
            self.fail("trailing backslash")
        ch = self.take()
        if ch == "d":
            return _DIGITS
        if ch == "w":
            return _WORD
        if ch == "s":
            return _SPACE
        if ch == "n":
            return ("\n",)
        if ch == "t":
            return ("\t",)
        if ch.isalnum():
            self.fail("\\" + ch)
        return (ch,)

    def char_class(self) -> _Chars:
        if self.peek() == "^":
            self.fail("negated character class")
        chars: list[str] = []
        first = True
        while True:
            ch = self.peek()
            if ch is None:
                self.fail("unterminated character class")
            if ch == "]" and not first:
                self.take()
                break
            first = False
            self.take()
            if ch == "\\":
                members = self.escape()
                if len(members) > 1:
                    chars.extend(members)
                    continue
                ch = members[0]
            elif ch == "[" and self.peek() == ":":
                self.fail("POSIX character class")
            if self.peek() == "-" and self.pos + 1 < len(self.src) and self.src[self.pos + 1] != "]":
                self.take()
                hi = self.take()
                if hi == "\\":
                    members = self.escape()
                    if len(members) > 1:
                        self.fail("class escape as range bound")
                    hi = members[0]
                if ord(hi) < ord(ch):
                    self.fail(f"reversed range {ch}-{hi}")
                chars.extend(chr(c) for c in range(ord(ch), ord(hi) + 1))
            else:
                chars.append(ch)
        return _Chars(tuple(dict.fromkeys(chars)))

    def _looks_like_bound(self, start: int | None = None) -> bool:
        """Whether the text after a ``{`` at ``start - 1`` is ``m}``, ``m,}`` or ``m,n}``."""
        start = self.pos + 1 if start is None else start
        end = self.src.find("}", start)
        if end < 0:
            return False
        body = self.src[start:end]
        lo, comma, hi = body.partition(",")
        if lo == "":
            return bool(comma) and hi.isdigit()
        return lo.isdigit() and (hi == "" or hi.isdigit())

    def quantified(self, atom):
        ch = self.peek()
        if ch is None:
            return atom
        if ch in "*+?":
            self.take()
            lo, hi = {"*": (0, UNBOUNDED_EXTRA), "+": (1, 1 + UNBOUNDED_EXTRA), "?": (0, 1)}[ch]
        elif ch == "{" and self._looks_like_bound():
            self.take()
            end = self.src.index("}", self.pos)
            body = self.src[self.pos:end]
            self.pos = end + 1
            lo_s, comma, hi_s = body.partition(",")
            lo = int(lo_s) if lo_s else 0
            hi = int(hi_s) if hi_s else (lo + UNBOUNDED_EXTRA if comma else lo)
            if hi < lo:
                self.fail(f"bad bound {{{body}}}")
        else:
            return atom
        if atom is _ANCHOR:
            self.fail("quantified anchor")
        if self.peek() == "?":
            self.take()
        elif self.peek() in ("*", "+") or (self.peek() == "{" and self._looks_like_bound()):
            self.fail("stacked quantifier")
        return _Repeat(atom, lo, hi)


@lru_cache(maxsize=512)
def compile_pattern(pattern: str):
    """Parse ``pattern`` into a generator tree; raises on unsupported syntax."""
    return _Parser(pattern).parse()


def _emit(node, rng: random.Random, out: list[str]) -> None:
    if isinstance(node, _Chars):
        out.append(rng.choice(node.choices))
    elif isinstance(node, _Seq):
        for part in node.parts:
            _emit(part, rng, out)
    elif isinstance(node, _Alt):
        _emit(rng.choice(node.options), rng, out)
    elif isinstance(node, _Repeat):
        for _ in range(rng.randint(node.lo, node.hi)):
            _emit(node.node, rng, out)


def generate_matching(pattern: str, rng: random.Random) -> str:
    out: list[str] = []
    _emit(compile_pattern(pattern), rng, out)
    return "".join(out)
