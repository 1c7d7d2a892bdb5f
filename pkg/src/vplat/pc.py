"""Presence conditions: propositional formulas over feature names.

Connectives are ``|``, ``&``, ``!`` plus the constants ``true``/``false``.
Values are immutable; the canonical text form is infix, left-to-right,
with minimal parentheses (``!`` binds tightest, then ``&``, then ``|``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import BadFeatureName, PcSyntaxError

FEATURE_NAME_RE = re.compile(r"[^\s\[\]()|&!,]+\Z")


def check_feature_name(name: str) -> str:
    """Enforce the lexical rule: no whitespace, brackets, tabs or formula
    metacharacters inside feature names."""
    if not name or not FEATURE_NAME_RE.match(name) or name in ("true", "false"):
        raise BadFeatureName(f"invalid feature name: {name!r}")
    return name


@dataclass(frozen=True)
class Pc:
    """Base node of a presence-condition expression tree."""

    def __str__(self) -> str:
        return _render(self, 0)


@dataclass(frozen=True)
class Const(Pc):
    value: bool


@dataclass(frozen=True)
class Var(Pc):
    name: str


@dataclass(frozen=True)
class Not(Pc):
    operand: Pc


@dataclass(frozen=True)
class And(Pc):
    left: Pc
    right: Pc


@dataclass(frozen=True)
class Or(Pc):
    left: Pc
    right: Pc


TRUE = Const(True)
FALSE = Const(False)

_PREC = {Or: 1, And: 2, Not: 3, Var: 4, Const: 4}
_OP = {Or: "|", And: "&"}


def _render(pc: Pc, parent_prec: int, right: bool = False) -> str:
    prec = _PREC[type(pc)]
    if isinstance(pc, Const):
        return "true" if pc.value else "false"
    if isinstance(pc, Var):
        return pc.name
    if isinstance(pc, Not):
        return "!" + _render(pc.operand, prec)
    text = "{} {} {}".format(
        _render(pc.left, prec), _OP[type(pc)], _render(pc.right, prec, right=True)
    )
    # Left-associative reading: a right child at equal precedence keeps
    # its parentheses so the tree shape survives a round-trip.
    if prec < parent_prec or (right and prec == parent_prec):
        return "(" + text + ")"
    return text


def to_text(pc: Pc) -> str:
    """Canonical serialization of a presence condition."""
    return _render(pc, 0)


_TOKEN_RE = re.compile(r"\s*(\(|\)|\||&|!|[^\s()|&!]+)")


def parse(text: str) -> Pc:
    """Parse the canonical infix form back into an expression tree."""
    tokens: list[str] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            break
        tokens.append(m.group(1))
        pos = m.end()
    if text[pos:].strip():
        raise PcSyntaxError(f"trailing junk in formula: {text!r}")
    if not tokens:
        raise PcSyntaxError("empty formula")

    idx = 0

    def peek() -> str | None:
        return tokens[idx] if idx < len(tokens) else None

    def take() -> str:
        nonlocal idx
        idx += 1
        return tokens[idx - 1]

    def atom() -> Pc:
        tok = peek()
        if tok is None:
            raise PcSyntaxError("unexpected end of formula")
        if tok == "(":
            take()
            node = disjunction()
            if peek() != ")":
                raise PcSyntaxError("missing closing parenthesis")
            take()
            return node
        if tok == "!":
            take()
            return Not(atom())
        take()
        if tok == "true":
            return TRUE
        if tok == "false":
            return FALSE
        if tok in (")", "|", "&"):
            raise PcSyntaxError(f"unexpected {tok!r}")
        return Var(check_feature_name(tok))

    def conjunction() -> Pc:
        node = atom()
        while peek() == "&":
            take()
            node = And(node, atom())
        return node

    def disjunction() -> Pc:
        node = conjunction()
        while peek() == "|":
            take()
            node = Or(node, conjunction())
        return node

    result = disjunction()
    if idx != len(tokens):
        raise PcSyntaxError(f"unexpected token {tokens[idx]!r}")
    return result


def evaluate(pc: Pc, config: frozenset[str] | set[str]) -> bool:
    """Truth-table semantics; a literal not in ``config`` is false."""
    if isinstance(pc, Const):
        return pc.value
    if isinstance(pc, Var):
        return pc.name in config
    if isinstance(pc, Not):
        return not evaluate(pc.operand, config)
    if isinstance(pc, And):
        return evaluate(pc.left, config) and evaluate(pc.right, config)
    return evaluate(pc.left, config) or evaluate(pc.right, config)


def disjoin_feature(pc: Pc, feature_name: str) -> Pc:
    """Left-disjoin a feature literal: F | pc. The input is unchanged."""
    check_feature_name(feature_name)
    return Or(Var(feature_name), pc)


def mapped_features(pc: Pc) -> list[str]:
    """Feature names referenced by the formula, in order of first appearance."""
    seen: list[str] = []

    def walk(node: Pc) -> None:
        if isinstance(node, Var):
            if node.name not in seen:
                seen.append(node.name)
        elif isinstance(node, Not):
            walk(node.operand)
        elif isinstance(node, (And, Or)):
            walk(node.left)
            walk(node.right)

    walk(pc)
    return seen


def replace_literal(pc: Pc, feature_name: str, replacement: Pc = FALSE) -> Pc:
    """Substitute every occurrence of a literal, preserving formula shape."""
    if isinstance(pc, Var):
        return replacement if pc.name == feature_name else pc
    if isinstance(pc, Not):
        return Not(replace_literal(pc.operand, feature_name, replacement))
    if isinstance(pc, And):
        return And(
            replace_literal(pc.left, feature_name, replacement),
            replace_literal(pc.right, feature_name, replacement),
        )
    if isinstance(pc, Or):
        return Or(
            replace_literal(pc.left, feature_name, replacement),
            replace_literal(pc.right, feature_name, replacement),
        )
    return pc


def rename_literal(pc: Pc, old: str, new: str) -> Pc:
    return replace_literal(pc, old, Var(check_feature_name(new)))
