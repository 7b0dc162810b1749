"""A small linear-time regex engine (Thompson NFA, Pike-VM style).

Rule programs arrive as untrusted model output, so their regexes must not
be able to blow up evaluation time. Backtracking engines (including the
stdlib ``re``) are exponential on adversarial patterns; this engine
simulates the NFA breadth-first, which is O(len(text) * len(pattern))
regardless of input.

Supported syntax: literals, ``.``, character classes with ranges and
negation, escapes (\\d \\w \\s and friends), anchors ``^ $ \\A \\Z \\b \\B``,
alternation, grouping (plain and ``(?:``), and quantifiers ``* + ?``
``{m} {m,} {m,n}``. Backreferences and lookaround are rejected at compile
time. Matching is search semantics (anywhere in the text) and the empty
pattern matches everything.
"""

from __future__ import annotations

import functools
import time
import unicodedata


class RexError(ValueError):
    """Bad pattern: syntax error or unsupported/rejected construct."""

    def __init__(self, message: str, pos: int | None = None):
        if pos is not None:
            message = f"{message} (at pattern position {pos})"
        super().__init__(message)
        self.pos = pos


class RexBudgetExceeded(Exception):
    """The caller's evaluation deadline passed mid-search."""


MAX_REPEAT = 128
MAX_PROGRAM = 20_000

_ESCAPE_LITERALS = {
    "n": "\n",
    "t": "\t",
    "r": "\r",
    "f": "\f",
    "v": "\v",
    "a": "\a",
}
_CLASS_SHORTHANDS = frozenset("dDwWsS")


def _is_word(ch: str | None) -> bool:
    return ch is not None and (ch.isalnum() or ch == "_")


def _shorthand_matches(kind: str, ch: str) -> bool:
    if kind == "d":
        return unicodedata.category(ch) == "Nd"
    if kind == "D":
        return unicodedata.category(ch) != "Nd"
    if kind == "w":
        return ch.isalnum() or ch == "_"
    if kind == "W":
        return not (ch.isalnum() or ch == "_")
    if kind == "s":
        return ch.isspace()
    return not ch.isspace()  # S


class _CharSet:
    """Ranges plus shorthand classes, optionally negated."""

    __slots__ = ("ranges", "shorthands", "negated")

    def __init__(self, ranges, shorthands, negated):
        self.ranges = tuple(ranges)
        self.shorthands = tuple(shorthands)
        self.negated = negated

    def matches(self, ch: str) -> bool:
        code = ord(ch)
        hit = any(lo <= code <= hi for lo, hi in self.ranges) or any(
            _shorthand_matches(k, ch) for k in self.shorthands
        )
        return hit != self.negated


# AST node tags. Tuples keep the compiler compact.
#   ("lit", _CharSet) ("any",) ("assert", kind) ("cat", [nodes])
#   ("alt", [nodes]) ("star", node) ("plus", node) ("opt", node)
#   ("rep", node, m, n)  n = None means unbounded


class _Parser:
    def __init__(self, pattern: str):
        self.p = pattern
        self.i = 0

    def error(self, message: str):
        raise RexError(message, self.i)

    def peek(self) -> str | None:
        return self.p[self.i] if self.i < len(self.p) else None

    def take(self) -> str:
        ch = self.p[self.i]
        self.i += 1
        return ch

    def parse(self):
        node = self.alt()
        if self.i < len(self.p):
            self.error(f"unbalanced {self.p[self.i]!r}")
        return node

    def alt(self):
        branches = [self.cat()]
        while self.peek() == "|":
            self.take()
            branches.append(self.cat())
        return branches[0] if len(branches) == 1 else ("alt", branches)

    def cat(self):
        parts = []
        while self.peek() not in (None, "|", ")"):
            parts.append(self.repeat(parts))
        if len(parts) == 1:
            return parts[0]
        return ("cat", parts)

    def repeat(self, parts):
        node = self.atom()
        seen_quant = False
        while True:
            ch = self.peek()
            if ch in ("*", "+", "?"):
                quant = self.take()
            elif ch == "{":
                bounds = self._try_bounds()
                if bounds is None:
                    break
                quant = bounds
            else:
                break
            if seen_quant:
                self.error("multiple repeat")
            if node[0] == "assert" or (node[0] == "cat" and not node[1]):
                self.error("nothing to repeat")
            if self.peek() == "?":  # lazy marker: same language, ignore
                self.take()
            if quant == "*":
                node = ("star", node)
            elif quant == "+":
                node = ("plus", node)
            elif quant == "?":
                node = ("opt", node)
            else:
                m, n = quant
                if n is not None and n < m:
                    self.error("bad repeat interval (max < min)")
                if m > MAX_REPEAT or (n or 0) > MAX_REPEAT:
                    self.error(f"repeat bound above {MAX_REPEAT}")
                node = ("rep", node, m, n)
            seen_quant = True
        return node

    def _try_bounds(self):
        # "{" only starts a quantifier when it scans as {m}, {m,} or {m,n};
        # otherwise it is a literal brace, matching stdlib behavior
        start = self.i
        self.take()
        digits_m = self._digits()
        if self.peek() == "}" and digits_m:
            self.take()
            return int(digits_m), int(digits_m)
        if self.peek() == ",":
            self.take()
            digits_n = self._digits()
            if self.peek() == "}" and (digits_m or digits_n):
                self.take()
                m = int(digits_m) if digits_m else 0
                n = int(digits_n) if digits_n else None
                return m, n
        self.i = start
        return None

    def _digits(self) -> str:
        out = []
        while (ch := self.peek()) is not None and ch.isdigit():
            out.append(self.take())
        return "".join(out)

    def atom(self):
        ch = self.take()
        if ch == "(":
            if self.peek() == "?":
                self.take()
                if self.peek() == ":":
                    self.take()
                else:
                    self.error("only (?: groups are supported; lookaround and named groups are rejected")
            node = self.alt()
            if self.peek() != ")":
                self.error("missing )")
            self.take()
            return node
        if ch == "[":
            return self.charclass()
        if ch == ".":
            return ("any",)
        if ch == "^":
            return ("assert", "^")
        if ch == "$":
            return ("assert", "$")
        if ch == "\\":
            return self.escape()
        if ch in ")|":
            self.error(f"unexpected {ch!r}")
        if ch in "*+?":
            self.error("nothing to repeat")
        if ch == "{":
            # a brace that did not scan as a bound in repeat(); literal
            return self._literal(ch)
        return self._literal(ch)

    def _literal(self, ch: str):
        code = ord(ch)
        return ("lit", _CharSet([(code, code)], (), False))

    def escape(self):
        if self.peek() is None:
            self.error("dangling backslash")
        ch = self.take()
        if ch in _CLASS_SHORTHANDS:
            return ("lit", _CharSet((), (ch,), False))
        if ch == "b":
            return ("assert", "b")
        if ch == "B":
            return ("assert", "B")
        if ch == "A":
            return ("assert", "A")
        if ch == "Z":
            return ("assert", "Z")
        if ch.isdigit():
            self.error("backreferences are not supported")
        if ch in _ESCAPE_LITERALS:
            return self._literal(_ESCAPE_LITERALS[ch])
        if ch == "x":
            return self._literal(self._hex(2))
        if ch == "u":
            return self._literal(self._hex(4))
        if ch.isalpha():
            self.error(f"bad escape \\{ch}")
        return self._literal(ch)

    def _hex(self, width: int) -> str:
        digits = self.p[self.i : self.i + width]
        if len(digits) != width or any(c not in "0123456789abcdefABCDEF" for c in digits):
            self.error(f"expected {width} hex digits")
        self.i += width
        return chr(int(digits, 16))

    def charclass(self):
        negated = False
        if self.peek() == "^":
            self.take()
            negated = True
        ranges: list[tuple[int, int]] = []
        shorthands: list[str] = []
        first = True
        while True:
            ch = self.peek()
            if ch is None:
                self.error("missing ]")
            if ch == "]" and not first:
                self.take()
                break
            first = False
            kind, value = self._class_item()
            if kind == "short":
                shorthands.append(value)
                continue
            lo = value
            if self.peek() == "-" and self.i + 1 < len(self.p) and self.p[self.i + 1] != "]":
                self.take()
                kind, hi = self._class_item()
                if kind == "short":
                    self.error("shorthand class cannot end a range")
                if hi < lo:
                    self.error("bad character range")
                ranges.append((lo, hi))
            else:
                ranges.append((lo, lo))
        return ("lit", _CharSet(ranges, shorthands, negated))

    def _class_item(self):
        """One class member: ("cp", codepoint) or ("short", kind)."""
        ch = self.take()
        if ch != "\\":
            return "cp", ord(ch)
        if self.peek() is None:
            self.error("dangling backslash")
        esc = self.take()
        if esc in _CLASS_SHORTHANDS:
            return "short", esc
        if esc in _ESCAPE_LITERALS:
            return "cp", ord(_ESCAPE_LITERALS[esc])
        if esc == "x":
            return "cp", ord(self._hex(2))
        if esc == "u":
            return "cp", ord(self._hex(4))
        if esc == "b":  # inside a class \b is backspace, as in stdlib re
            return "cp", 0x08
        if esc.isdigit():
            self.error("backreferences are not supported")
        if esc.isalpha():
            self.error(f"bad escape \\{esc}")
        return "cp", ord(esc)


def _emit(node, prog: list):
    if len(prog) > MAX_PROGRAM:
        raise RexError("pattern too large")
    tag = node[0]
    if tag in ("lit", "any", "assert"):
        prog.append(node)
    elif tag == "cat":
        for child in node[1]:
            _emit(child, prog)
    elif tag == "alt":
        branches = node[1]
        jumps = []
        for idx, branch in enumerate(branches):
            if idx < len(branches) - 1:
                split_at = len(prog)
                prog.append(None)
                _emit(branch, prog)
                jumps.append(len(prog))
                prog.append(None)
                prog[split_at] = ("split", split_at + 1, len(prog))
            else:
                _emit(branch, prog)
        for j in jumps:
            prog[j] = ("jmp", len(prog))
    elif tag == "opt":
        split_at = len(prog)
        prog.append(None)
        _emit(node[1], prog)
        prog[split_at] = ("split", split_at + 1, len(prog))
    elif tag == "star":
        loop = len(prog)
        prog.append(None)
        _emit(node[1], prog)
        prog.append(("jmp", loop))
        prog[loop] = ("split", loop + 1, len(prog))
    elif tag == "plus":
        body = len(prog)
        _emit(node[1], prog)
        prog.append(("split", body, len(prog) + 1))
    elif tag == "rep":
        _, child, m, n = node
        if n is None:
            if m == 0:
                _emit(("star", child), prog)
            else:
                for _ in range(m - 1):
                    _emit(child, prog)
                _emit(("plus", child), prog)
        else:
            for _ in range(m):
                _emit(child, prog)
            for _ in range(n - m):
                _emit(("opt", child), prog)
    else:  # pragma: no cover - parser emits only the tags above
        raise RexError(f"unknown node {tag!r}")
    if len(prog) > MAX_PROGRAM:
        raise RexError("pattern too large")


def _assert_holds(kind: str, i: int, n: int, prev: str | None, nxt: str | None) -> bool:
    if kind in ("^", "A"):
        return i == 0
    if kind == "Z":
        return i == n
    if kind == "$":
        return i == n or (i == n - 1 and nxt == "\n")
    word_left, word_right = _is_word(prev), _is_word(nxt)
    return (word_left != word_right) if kind == "b" else (word_left == word_right)


class Rex:
    """A compiled pattern. ``search`` answers "does it match anywhere"."""

    __slots__ = ("pattern", "prog")

    def __init__(self, pattern: str, prog: tuple):
        self.pattern = pattern
        self.prog = prog

    def __repr__(self):
        return f"Rex({self.pattern!r})"

    def _close(self, pc, seen, gen, out, i, n, prev, nxt):
        prog = self.prog
        stack = [pc]
        while stack:
            pc = stack.pop()
            if seen[pc] == gen:
                continue
            seen[pc] = gen
            op = prog[pc]
            tag = op[0]
            if tag == "split":
                stack.append(op[2])
                stack.append(op[1])
            elif tag == "jmp":
                stack.append(op[1])
            elif tag == "assert":
                if _assert_holds(op[1], i, n, prev, nxt):
                    stack.append(pc + 1)
            else:
                out.append(pc)

    def search(self, text: str, deadline: float | None = None) -> bool:
        """True when the pattern matches anywhere in ``text``.

        ``deadline`` is a time.monotonic() value; past it the search raises
        RexBudgetExceeded. The simulation itself is linear, the deadline
        just keeps very long inputs within the caller's budget.
        """
        prog = self.prog
        n = len(text)
        seen = [-1] * len(prog)
        carried: list[int] = []
        gen = 0
        for i in range(n + 1):
            if deadline is not None and (i & 127) == 0 and time.monotonic() > deadline:
                raise RexBudgetExceeded(f"pattern {self.pattern!r}")
            prev = text[i - 1] if i > 0 else None
            nxt = text[i] if i < n else None
            gen += 1
            active: list[int] = []
            for pc in carried:
                self._close(pc, seen, gen, active, i, n, prev, nxt)
            self._close(0, seen, gen, active, i, n, prev, nxt)
            carried = []
            for pc in active:
                op = prog[pc]
                if op[0] == "match":
                    return True
                if i >= n:
                    continue
                if op[0] == "any":
                    if text[i] != "\n":
                        carried.append(pc + 1)
                elif op[1].matches(text[i]):
                    carried.append(pc + 1)
        return False


@functools.lru_cache(maxsize=512)
def compile(pattern: str) -> Rex:
    """Compile a pattern, rejecting anything outside the linear-time subset."""
    ast = _Parser(pattern).parse()
    prog: list = []
    _emit(ast, prog)
    prog.append(("match",))
    return Rex(pattern, tuple(prog))
