"""Scanner, parser, validator, and canonical printer for rule programs.

Source form, one statement per line by convention:

    rule: contains("prize") and not contains("work") -> spam;
    rule: score("water") >= 0.6 -> waterbird;
    default -> ABSTAIN;

Statements end with ";" (the last one may omit it). "#" starts a comment.
Class targets are class names (bare or quoted), 0-based indices, or
ABSTAIN. Programs coming out of a model are parsed, never executed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re as _stdre
from dataclasses import dataclass
from typing import Sequence

from ..data import ABSTAIN, ClassSpace
from . import rex
from .ast import (
    And,
    Contains,
    ContainsAny,
    DslParseError,
    DslValidationError,
    Expr,
    LengthAtLeast,
    Matches,
    Not,
    Or,
    Rule,
    RuleProgram,
    ScoreCmp,
    UppercaseRatioAtLeast,
    iter_leaves,
)

logger = logging.getLogger("labelsmith.dsl")

KEYWORDS = frozenset({"rule", "default", "and", "or", "not", "true", "false"})
RULE_COUNT_SOFT_CAP = 64

_BARE_IDENT = _stdre.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_PUNCT = {
    "(": "LPAREN",
    ")": "RPAREN",
    "[": "LBRACK",
    "]": "RBRACK",
    ",": "COMMA",
    ";": "SEMI",
    ":": "COLON",
    "=": "EQ",
}


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT STRING NUMBER ARROW CMP LPAREN RPAREN COMMA SEMI COLON EQ EOF
    value: object
    line: int
    col: int


def _scan(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(source)

    def err(message: str):
        raise DslParseError(message, line, col)

    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_col = col
        if ch in _PUNCT:
            tokens.append(_Token(_PUNCT[ch], ch, line, col))
            i += 1
            col += 1
            continue
        if ch == "-":
            if i + 1 < n and source[i + 1] == ">":
                tokens.append(_Token("ARROW", "->", line, col))
                i += 2
                col += 2
                continue
            if i + 1 < n and (source[i + 1] in "0123456789" or source[i + 1] == "."):
                pass  # negative number, falls through to the digit branch
            else:
                err("expected '->' or a number after '-'")
        if ch == ">" or ch == "<":
            if i + 1 < n and source[i + 1] == "=":
                tokens.append(_Token("CMP", ch + "=", line, col))
                i += 2
                col += 2
            else:
                tokens.append(_Token("CMP", ch, line, col))
                i += 1
                col += 1
            continue
        if ch in "\"'":
            quote = ch
            i += 1
            col += 1
            out = []
            while True:
                if i >= n or source[i] == "\n":
                    raise DslParseError("unterminated string", line, start_col)
                c = source[i]
                if c == quote:
                    i += 1
                    col += 1
                    break
                if c == "\\":
                    if i + 1 >= n:
                        raise DslParseError("unterminated string", line, start_col)
                    esc = source[i + 1]
                    mapped = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "'": "'", "\\": "\\", "/": "/"}.get(esc)
                    if mapped is not None:
                        out.append(mapped)
                        i += 2
                        col += 2
                    elif esc == "u":
                        digits = source[i + 2 : i + 6]
                        if len(digits) != 4 or any(d not in "0123456789abcdefABCDEF" for d in digits):
                            raise DslParseError("bad \\u escape", line, col)
                        out.append(chr(int(digits, 16)))
                        i += 6
                        col += 6
                    else:
                        raise DslParseError(f"unknown escape \\{esc}", line, col)
                else:
                    out.append(c)
                    i += 1
                    col += 1
            tokens.append(_Token("STRING", "".join(out), line, start_col))
            continue
        if ch in "0123456789" or ch == "." or ch == "-":
            j = i
            if source[j] == "-":
                j += 1
            while j < n and source[j] in "0123456789":
                j += 1
            is_float = False
            if j < n and source[j] == ".":
                is_float = True
                j += 1
                while j < n and source[j] in "0123456789":
                    j += 1
            lexeme = source[i:j]
            if lexeme in ("-", ".", "-."):
                err(f"bad number {lexeme!r}")
            value = float(lexeme) if is_float else int(lexeme)
            tokens.append(_Token("NUMBER", value, line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(_Token("IDENT", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        err(f"unexpected character {ch!r}")
    tokens.append(_Token("EOF", None, line, col))
    return tokens


class _ProgramParser:
    def __init__(self, tokens: list[_Token], class_space: ClassSpace):
        self.tokens = tokens
        self.pos = 0
        self.cs = class_space

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.cur
        raise DslParseError(message, tok.line, tok.col)

    def take(self, kind: str, what: str) -> _Token:
        tok = self.cur
        if tok.kind != kind:
            shown = "end of input" if tok.kind == "EOF" else repr(tok.value)
            self.error(f"expected {what}, got {shown}")
        self.pos += 1
        return tok

    def at_keyword(self, word: str) -> bool:
        return self.cur.kind == "IDENT" and self.cur.value == word

    def parse(self) -> tuple[tuple[Rule, ...], int]:
        rules: list[Rule] = []
        default = ABSTAIN
        saw_default = False
        while self.cur.kind != "EOF":
            if saw_default:
                self.error("default must be the last statement")
            if self.at_keyword("rule"):
                self.pos += 1
                self.take("COLON", "':' after 'rule'")
                guard = self.expr()
                self.take("ARROW", "'->' after the rule condition")
                rules.append(Rule(guard=guard, target=self.target()))
            elif self.at_keyword("default"):
                self.pos += 1
                self.take("ARROW", "'->' after 'default'")
                default = self.target()
                saw_default = True
            else:
                self.error("expected 'rule' or 'default'")
            if self.cur.kind == "SEMI":
                self.pos += 1
            elif self.cur.kind != "EOF":
                self.error("expected ';' between statements")
        if not rules:
            self.error("program needs at least one rule", self.tokens[-1])
        return tuple(rules), default

    def target(self) -> int:
        tok = self.cur
        if tok.kind == "NUMBER":
            self.pos += 1
            if not isinstance(tok.value, int):
                self.error("class index must be an integer", tok)
            if tok.value == ABSTAIN:
                return ABSTAIN
            if not (0 <= tok.value < self.cs.K):
                self.error(f"class index {tok.value} out of range 0..{self.cs.K - 1}", tok)
            return tok.value
        if tok.kind in ("IDENT", "STRING"):
            self.pos += 1
            name = tok.value
            if tok.kind == "IDENT" and name.casefold() == "abstain":
                return ABSTAIN
            idx = self.cs.resolve(name)
            if idx is None:
                self.error(
                    f"unknown class {name!r}; expected one of {list(self.cs.names)} or ABSTAIN",
                    tok,
                )
            return idx
        self.error("expected a class name, class index, or ABSTAIN", tok)

    def expr(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        children = [self.and_expr()]
        while self.at_keyword("or"):
            self.pos += 1
            children.append(self.and_expr())
        if len(children) == 1:
            return children[0]
        flat: list[Expr] = []
        for c in children:  # associative, so nested or folds into one node
            flat.extend(c.children if isinstance(c, Or) else [c])
        return Or(tuple(flat))

    def and_expr(self) -> Expr:
        children = [self.unary()]
        while self.at_keyword("and"):
            self.pos += 1
            children.append(self.unary())
        if len(children) == 1:
            return children[0]
        flat: list[Expr] = []
        for c in children:
            flat.extend(c.children if isinstance(c, And) else [c])
        return And(tuple(flat))

    def unary(self) -> Expr:
        if self.at_keyword("not"):
            self.pos += 1
            return Not(self.unary())
        if self.cur.kind == "LPAREN":
            self.pos += 1
            inner = self.expr()
            self.take("RPAREN", "')'")
            return inner
        return self.predicate()

    def predicate(self) -> Expr:
        tok = self.take("IDENT", "a predicate")
        name = tok.value
        args, kwargs = self.arglist()
        try:
            if name == "contains":
                self._arity(tok, name, args, 1, str)
                return Contains(args[0], case_sensitive=self._flag(tok, kwargs))
            if name == "contains_any":
                if not args or any(not isinstance(a, str) for a in args):
                    self.error(f"{name}() takes one or more strings", tok)
                return ContainsAny(tuple(args), case_sensitive=self._flag(tok, kwargs))
            if name == "matches":
                self._arity(tok, name, args, 1, str)
                self._no_kwargs(tok, name, kwargs)
                try:
                    rex.compile(args[0])
                except rex.RexError as exc:
                    self.error(f"bad pattern in matches(): {exc}", tok)
                return Matches(args[0])
            if name == "length_at_least":
                self._arity(tok, name, args, 1, int)
                self._no_kwargs(tok, name, kwargs)
                return LengthAtLeast(args[0])
            if name == "uppercase_ratio_at_least":
                self._arity(tok, name, args, 1, (int, float))
                self._no_kwargs(tok, name, kwargs)
                return UppercaseRatioAtLeast(float(args[0]))
            if name == "score":
                self._arity(tok, name, args, 1, str)
                self._no_kwargs(tok, name, kwargs)
                op_tok = self.take("CMP", "a comparison (>=, >, <=, <) after score()")
                num = self.take("NUMBER", "a numeric threshold")
                return ScoreCmp(args[0], op_tok.value, float(num.value))
        except DslValidationError as exc:
            self.error(str(exc), tok)
        known = "contains, contains_any, matches, length_at_least, uppercase_ratio_at_least, score"
        self.error(f"unknown predicate {name!r}; expected one of: {known}", tok)

    def arglist(self) -> tuple[list, dict]:
        self.take("LPAREN", "'('")
        args: list = []
        kwargs: dict = {}
        while self.cur.kind != "RPAREN":
            if self.cur.kind == "IDENT" and self.tokens[self.pos + 1].kind == "EQ":
                key = self.take("IDENT", "a keyword").value
                self.take("EQ", "'='")
                if self.cur.kind == "IDENT" and self.cur.value in ("true", "false"):
                    kwargs[key] = self.cur.value == "true"
                    self.pos += 1
                else:
                    self.error("expected true or false")
            elif self.cur.kind == "LBRACK":
                # a ["a", "b"] list argument flattens into the arg list
                self.pos += 1
                while self.cur.kind != "RBRACK":
                    args.append(self.take("STRING", "a string inside [...]").value)
                    if self.cur.kind == "COMMA":
                        self.pos += 1
                    elif self.cur.kind != "RBRACK":
                        self.error("expected ',' or ']'")
                self.take("RBRACK", "']'")
            elif self.cur.kind == "STRING":
                args.append(self.take("STRING", "a string").value)
            elif self.cur.kind == "NUMBER":
                args.append(self.take("NUMBER", "a number").value)
            else:
                self.error("expected a string, number, list, or keyword argument")
            if self.cur.kind == "COMMA":
                self.pos += 1
            elif self.cur.kind != "RPAREN":
                self.error("expected ',' or ')'")
        self.take("RPAREN", "')'")
        return args, kwargs

    def _arity(self, tok, name, args, count, types):
        if len(args) != count or any(not isinstance(a, types) or isinstance(a, bool) for a in args):
            shown = getattr(types, "__name__", "number")
            self.error(f"{name}() takes exactly {count} {shown} argument(s)", tok)

    def _no_kwargs(self, tok, name, kwargs):
        if kwargs:
            self.error(f"{name}() takes no keyword arguments", tok)

    def _flag(self, tok, kwargs) -> bool:
        extra = set(kwargs) - {"case_sensitive"}
        if extra:
            self.error(f"unknown keyword argument {sorted(extra)[0]!r}", tok)
        return bool(kwargs.get("case_sensitive", False))


def parse_program(
    source: str,
    class_space: ClassSpace,
    program_id: str | None = None,
    concepts: Sequence[str] | None = None,
) -> RuleProgram:
    """Parse DSL source into a RuleProgram.

    When ``program_id`` is omitted, the id is derived from a hash of the
    canonical form, so reformatting does not change identity. Passing
    ``concepts`` additionally validates every score() reference against
    that list.
    """
    rules, default = _ProgramParser(_scan(source), class_space).parse()
    program = RuleProgram(id=program_id or "unnamed", rules=rules, default=default)
    if program_id is None:
        canonical = format_program(program, class_space)
        digest = hashlib.blake2b(canonical.encode("utf-8"), digest_size=6).hexdigest()
        program = RuleProgram(id=f"lf_{digest}", rules=rules, default=default)
    if concepts is not None:
        validate_program(program, class_space, concepts=concepts)
    if len(rules) > RULE_COUNT_SOFT_CAP:
        logger.warning(
            "program %s has %d rules (soft cap %d); consider splitting it",
            program.id,
            len(rules),
            RULE_COUNT_SOFT_CAP,
        )
    return program


def validate_program(
    program: RuleProgram, class_space: ClassSpace, concepts=None
) -> list[str]:
    """Check a program against a class space (and concept list, when given).

    Raises DslValidationError on hard problems; returns human-readable
    warnings for soft ones. Parsed programs are already mostly valid; this
    also covers programs built directly from AST nodes.
    """
    K = class_space.K
    for idx, rule in enumerate(program.rules):
        if rule.target != ABSTAIN and not (0 <= rule.target < K):
            raise DslValidationError(
                f"program {program.id!r}: rule {idx} targets class {rule.target}, "
                f"but valid indices are 0..{K - 1}"
            )
        for leaf in iter_leaves(rule.guard):
            if isinstance(leaf, Matches):
                try:
                    rex.compile(leaf.pattern)
                except rex.RexError as exc:
                    raise DslValidationError(
                        f"program {program.id!r}: bad pattern {leaf.pattern!r}: {exc}"
                    ) from exc
    if not (0 <= program.default < K or program.default == ABSTAIN):
        raise DslValidationError(
            f"program {program.id!r}: default targets class {program.default}, "
            f"but valid indices are 0..{K - 1}"
        )
    if concepts is not None and program.modality == "scores":
        known = set(concepts)
        for concept in program.score_concepts():
            if concept not in known:
                raise DslValidationError(
                    f"program {program.id!r} reads unknown concept {concept!r}"
                )
    warnings = []
    if len(program.rules) > RULE_COUNT_SOFT_CAP:
        warnings.append(
            f"program has {len(program.rules)} rules (soft cap {RULE_COUNT_SOFT_CAP})"
        )
    seen: dict[Rule, int] = {}
    for idx, rule in enumerate(program.rules):
        if rule in seen:
            warnings.append(f"rule {idx} duplicates rule {seen[rule]}")
        else:
            seen[rule] = idx
    return warnings


_PREC = {"or": 1, "and": 2, "not": 3}


def format_expr(expr: Expr) -> str:
    return _fmt(expr, 0)


def _fmt(expr: Expr, parent_prec: int) -> str:
    if isinstance(expr, Or):
        text, prec = " or ".join(_fmt(c, _PREC["or"]) for c in expr.children), _PREC["or"]
    elif isinstance(expr, And):
        text, prec = " and ".join(_fmt(c, _PREC["and"]) for c in expr.children), _PREC["and"]
    elif isinstance(expr, Not):
        text, prec = "not " + _fmt(expr.child, _PREC["not"]), _PREC["not"]
    else:
        return _fmt_leaf(expr)
    return f"({text})" if prec < parent_prec else text


def _fmt_leaf(leaf) -> str:
    q = lambda s: json.dumps(s, ensure_ascii=False)
    if isinstance(leaf, Contains):
        flag = ", case_sensitive=true" if leaf.case_sensitive else ""
        return f"contains({q(leaf.needle)}{flag})"
    if isinstance(leaf, ContainsAny):
        flag = ", case_sensitive=true" if leaf.case_sensitive else ""
        return f"contains_any([{', '.join(q(x) for x in leaf.needles)}]{flag})"
    if isinstance(leaf, Matches):
        return f"matches({q(leaf.pattern)})"
    if isinstance(leaf, LengthAtLeast):
        return f"length_at_least({leaf.n})"
    if isinstance(leaf, UppercaseRatioAtLeast):
        return f"uppercase_ratio_at_least({leaf.ratio!r})"
    if isinstance(leaf, ScoreCmp):
        return f"score({q(leaf.concept)}) {leaf.op} {leaf.threshold!r}"
    raise TypeError(f"not a DSL expression: {leaf!r}")


def _fmt_target(target: int, class_space: ClassSpace) -> str:
    if target == ABSTAIN:
        return "ABSTAIN"
    name = class_space.names[target]
    if _BARE_IDENT.match(name) and name not in KEYWORDS and name.casefold() != "abstain":
        return name
    return json.dumps(name, ensure_ascii=False)


def format_program(program: RuleProgram, class_space: ClassSpace) -> str:
    """Canonical source: one statement per line, minimal parentheses,
    default omitted when it is ABSTAIN. Parsing the output reproduces the
    program structurally."""
    lines = [
        f"rule: {format_expr(rule.guard)} -> {_fmt_target(rule.target, class_space)};"
        for rule in program.rules
    ]
    if program.default != ABSTAIN:
        lines.append(f"default -> {_fmt_target(program.default, class_space)};")
    return "\n".join(lines) + "\n"
