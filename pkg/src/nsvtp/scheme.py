"""Blueprint scheme language.

A blueprint is a component's machine-readable self-description::

    blueprint "cpu-core/high" revision 1 {
      scheme dvfs {
        const P0 = 142.2 [W];
        const load [MIPS];
        param freq_step : {1.0, 2.0, 3.0} [GHz];
        param latency : {2e-05} [s];
        outcome power;
        formula set_freq : (P0 + P3 * (freq_step / f_max) ^ n_dvfs) * (load / l_max) -> power;
      }
    }

``const`` declarations are model symbols. A const without a value must be
supplied by the caller at evaluation time. Formulas may carry a guard
(``when x <= 2 and y > 0``) selecting the operating regime they describe.
``//`` starts a comment running to the end of the line.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Union

from .errors import (
    AmbiguousRegime,
    DivisionByZero,
    DomainError,
    DuplicateName,
    GuardFailed,
    MissingBinding,
    NoRegimeMatches,
    OutOfFeasibleSet,
    SchemeSyntaxError,
    UnboundParam,
    UnknownFormula,
    UnknownIdentifier,
    UnknownScheme,
)

STATUS_SCHEME = "status"

KEYWORDS = frozenset(
    {"blueprint", "revision", "scheme", "param", "outcome", "formula", "const", "when", "and"}
)

# -- expression trees --------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError("numeric literals are finite and non-negative; use Neg for signs")
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str  # one of <= < >= > == !=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class All:
    """Conjunction of comparisons."""

    terms: tuple


Expr = Union[Num, Var, Neg, BinOp]
Guard = Union[Compare, All]

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return 5


def format_number(value: float) -> str:
    return repr(float(value))


def format_expr(node) -> str:
    """Render an expression with the fewest parentheses that preserve its tree."""
    if isinstance(node, Num):
        return format_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = format_expr(node.operand)
        if _prec(node.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        left, right = format_expr(node.left), format_expr(node.right)
        if node.op == "^":
            # right-associative
            if _prec(node.left) <= p:
                left = f"({left})"
            if _prec(node.right) < p:
                right = f"({right})"
        else:
            if _prec(node.left) < p:
                left = f"({left})"
            if _prec(node.right) <= p:
                right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Compare):
        return f"{format_expr(node.left)} {node.op} {format_expr(node.right)}"
    if isinstance(node, All):
        return " and ".join(format_expr(t) for t in node.terms)
    raise TypeError(f"not an expression node: {node!r}")


def free_names(node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return free_names(node.operand)
    if isinstance(node, (BinOp, Compare)):
        return free_names(node.left) | free_names(node.right)
    if isinstance(node, All):
        out = set()
        for t in node.terms:
            out |= free_names(t)
        return out
    raise TypeError(f"not an expression node: {node!r}")


# -- blueprint structure -----------------------------------------------------


@dataclass(frozen=True)
class FiniteSet:
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ValueError("finite feasible sets must be non-empty")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __contains__(self, x) -> bool:
        return float(x) in self.values

    def covers(self, other) -> bool:
        if isinstance(other, FiniteSet):
            return set(other.values) <= set(self.values)
        return other.lo == other.hi and other.lo in self.values


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if not self.lo <= self.hi:
            raise ValueError(f"interval bounds out of order: [{self.lo}, {self.hi}]")

    def __contains__(self, x) -> bool:
        return self.lo <= float(x) <= self.hi

    def covers(self, other) -> bool:
        if isinstance(other, FiniteSet):
            return all(v in self for v in other.values)
        return self.lo <= other.lo and other.hi <= self.hi


FeasibleSet = Union[FiniteSet, Interval]


@dataclass(frozen=True)
class ParamSpec:
    name: str
    feasible: FeasibleSet
    unit: str = ""


@dataclass(frozen=True)
class Constant:
    name: str
    value: float | None = None
    unit: str = ""


@dataclass(frozen=True)
class Formula:
    name: str
    body: Expr
    outcome: str
    guard: Guard | None = None


@dataclass(frozen=True)
class Scheme:
    name: str
    params: tuple = ()
    outcomes: tuple = ()
    formulas: tuple = ()
    constants: tuple = ()

    def param(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise UnknownIdentifier(f"scheme {self.name!r} has no param {name!r}")

    def formula(self, name: str) -> Formula:
        for f in self.formulas:
            if f.name == name:
                return f
        raise UnknownFormula(f"scheme {self.name!r} has no formula {name!r}")

    def constant_defaults(self) -> dict[str, float]:
        return {c.name: c.value for c in self.constants if c.value is not None}


@dataclass(frozen=True)
class Blueprint:
    model: str
    revision: int = 1
    schemes: tuple = ()

    def scheme(self, name: str) -> Scheme:
        for s in self.schemes:
            if s.name == name:
                return s
        raise UnknownScheme(f"blueprint {self.model!r} has no scheme {name!r}")

    def has_scheme(self, name: str) -> bool:
        return any(s.name == name for s in self.schemes)

    @property
    def status_scheme(self) -> Scheme | None:
        return next((s for s in self.schemes if s.name == STATUS_SCHEME), None)

    def covers(self, other: "Blueprint") -> bool:
        """True when every scheme of ``other`` exists here with at least its feasible ranges."""
        for theirs in other.schemes:
            if not self.has_scheme(theirs.name):
                return False
            ours = self.scheme(theirs.name)
            for p in theirs.params:
                try:
                    mine = ours.param(p.name)
                except UnknownIdentifier:
                    return False
                if not mine.feasible.covers(p.feasible):
                    return False
            if not {f.name for f in theirs.formulas} <= {f.name for f in ours.formulas}:
                return False
        return True

    def to_text(self) -> str:
        return print_blueprint(self)

    def to_bytes(self) -> bytes:
        return print_blueprint(self).encode("utf-8")


def check_scheme(scheme: Scheme) -> Scheme:
    """Enforce name uniqueness and reference resolution inside one scheme."""
    seen: set[str] = set()
    groups = (scheme.constants, scheme.params, [Var(o) for o in scheme.outcomes], scheme.formulas)
    for group in groups:
        for item in group:
            if item.name in seen:
                raise DuplicateName(f"{item.name!r} declared twice in scheme {scheme.name!r}")
            seen.add(item.name)
    symbols = {p.name for p in scheme.params} | {c.name for c in scheme.constants}
    for f in scheme.formulas:
        refs = free_names(f.body)
        if f.guard is not None:
            refs |= free_names(f.guard)
        unknown = sorted(refs - symbols)
        if unknown:
            raise UnknownIdentifier(
                f"formula {f.name!r} in scheme {scheme.name!r} references undeclared {unknown[0]!r}"
            )
        if f.outcome not in scheme.outcomes:
            raise UnknownIdentifier(
                f"formula {f.name!r} targets undeclared outcome {f.outcome!r}"
            )
    return scheme


def check_blueprint(bp: Blueprint) -> Blueprint:
    names = set()
    for s in bp.schemes:
        if s.name in names:
            raise DuplicateName(f"scheme {s.name!r} declared twice")
        names.add(s.name)
        check_scheme(s)
    return bp


# -- lexer / parser ----------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"\n]*")
  | (?P<op><=|>=|==|!=|->|[-+*/^<>{}\[\](),;:=.])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tok = self._lex()

    # The unit tag after a feasible set is free text, so lexing is on demand
    # rather than a pre-built token list.
    def _lex(self) -> _Tok:
        while True:
            if self.pos >= len(self.text):
                return _Tok("eof", "", self.pos)
            m = _TOKEN.match(self.text, self.pos)
            if m is None:
                self._fail(f"unexpected character {self.text[self.pos]!r}", self.pos)
            start, self.pos = self.pos, m.end()
            if m.lastgroup != "ws":
                return _Tok(m.lastgroup, m.group(), start)

    def _where(self, pos: int):
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def _fail(self, message, pos, expected=None):
        line, col = self._where(pos)
        raise SchemeSyntaxError(message, position=pos, line=line, column=col, expected=expected)

    def advance(self) -> _Tok:
        tok, self.tok = self.tok, self._lex()
        return tok

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "ident")

    def expect(self, text: str) -> _Tok:
        if not self.at(text):
            shown = self.tok.text or "end of input"
            self._fail(f"expected {text!r}, found {shown!r}", self.tok.pos, expected=text)
        return self.advance()

    def ident(self) -> str:
        if self.tok.kind != "ident" or self.tok.text in KEYWORDS:
            shown = self.tok.text or "end of input"
            self._fail(f"expected identifier, found {shown!r}", self.tok.pos, expected="identifier")
        return self.advance().text

    def number(self) -> float:
        neg = False
        if self.at("-"):
            self.advance()
            neg = True
        if self.tok.kind != "number":
            shown = self.tok.text or "end of input"
            self._fail(f"expected number, found {shown!r}", self.tok.pos, expected="number")
        value = float(self.advance().text)
        if not math.isfinite(value):
            self._fail("number out of range", self.tok.pos)
        return -value if neg else value

    def unit(self) -> str:
        # self.tok is '[' and self.pos sits just after it
        end = self.text.find("]", self.pos)
        newline = self.text.find("\n", self.pos)
        if end < 0 or (0 <= newline < end):
            self._fail("unterminated unit tag", self.tok.pos, expected="]")
        unit = self.text[self.pos:end].strip()
        self.pos = end + 1
        self.tok = self._lex()
        return unit

    # blueprint := 'blueprint' STRING 'revision' INT '{' scheme* '}'
    def blueprint(self) -> Blueprint:
        self.expect("blueprint")
        if self.tok.kind != "string":
            self._fail("expected quoted model tag", self.tok.pos, expected="string")
        model = self.advance().text[1:-1]
        self.expect("revision")
        if self.tok.kind != "number" or not self.tok.text.isdigit():
            self._fail("expected integer revision", self.tok.pos, expected="integer")
        revision = int(self.advance().text)
        self.expect("{")
        schemes = []
        while not self.at("}"):
            schemes.append(self.scheme())
        self.expect("}")
        if self.tok.kind != "eof":
            self._fail(f"trailing input {self.tok.text!r}", self.tok.pos, expected="end of input")
        return Blueprint(model, revision, tuple(schemes))

    def scheme(self) -> Scheme:
        self.expect("scheme")
        name = self.ident()
        self.expect("{")
        consts, params, outcomes, formulas = [], [], [], []
        while not self.at("}"):
            if self.at("const"):
                consts.append(self.const())
            elif self.at("param"):
                params.append(self.param())
            elif self.at("outcome"):
                self.advance()
                outcomes.append(self.ident())
                self.expect(";")
            elif self.at("formula"):
                formulas.append(self.formula())
            else:
                shown = self.tok.text or "end of input"
                self._fail(
                    f"expected declaration, found {shown!r}",
                    self.tok.pos,
                    expected="const, param, outcome, formula or '}'",
                )
        self.expect("}")
        return Scheme(name, tuple(params), tuple(outcomes), tuple(formulas), tuple(consts))

    def const(self) -> Constant:
        self.expect("const")
        name = self.ident()
        value = None
        if self.at("="):
            self.advance()
            value = self.number()
        unit = self.unit() if self.at("[") else ""
        self.expect(";")
        return Constant(name, value, unit)

    def param(self) -> ParamSpec:
        self.expect("param")
        name = self.ident()
        self.expect(":")
        pos = self.tok.pos
        try:
            if self.at("{"):
                self.advance()
                values = [self.number()]
                while self.at(","):
                    self.advance()
                    values.append(self.number())
                self.expect("}")
                feasible = FiniteSet(tuple(values))
            elif self.at("["):
                self.advance()
                lo = self.number()
                self.expect(",")
                hi = self.number()
                self.expect("]")
                feasible = Interval(lo, hi)
            else:
                self._fail("expected feasible set", pos, expected="'{' or '['")
        except ValueError as exc:
            self._fail(str(exc), pos)
        unit = self.unit() if self.at("[") else ""
        self.expect(";")
        return ParamSpec(name, feasible, unit)

    def formula(self) -> Formula:
        self.expect("formula")
        name = self.ident()
        guard = None
        if self.at("when"):
            self.advance()
            guard = self.guard()
        self.expect(":")
        body = self.expr()
        self.expect("->")
        outcome = self.ident()
        self.expect(";")
        return Formula(name, body, outcome, guard)

    def guard(self) -> Guard:
        terms = [self.comparison()]
        while self.at("and"):
            self.advance()
            terms.append(self.comparison())
        return terms[0] if len(terms) == 1 else All(tuple(terms))

    def comparison(self) -> Compare:
        left = self.expr()
        op = self.tok.text
        if self.tok.kind != "op" or op not in ("<=", "<", ">=", ">", "==", "!="):
            self._fail(f"expected comparison, found {op!r}", self.tok.pos, expected="comparison")
        self.advance()
        return Compare(op, left, self.expr())

    def expr(self) -> Expr:
        node = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.at("-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.at("^"):
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        if self.tok.kind == "number":
            return Num(float(self.advance().text))
        if self.at("("):
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        return Var(self.ident())


def parse_blueprint(text: str) -> Blueprint:
    """Parse and check blueprint text.

    Raises SchemeSyntaxError (with line/column), DuplicateName or
    UnknownIdentifier.
    """
    return check_blueprint(_Parser(text).blueprint())


def parse_expr(text: str) -> Expr:
    p = _Parser(text)
    node = p.expr()
    if p.tok.kind != "eof":
        p._fail(f"trailing input {p.tok.text!r}", p.tok.pos, expected="end of input")
    return node


def parse_guard(text: str) -> Guard:
    p = _Parser(text)
    node = p.guard()
    if p.tok.kind != "eof":
        p._fail(f"trailing input {p.tok.text!r}", p.tok.pos, expected="end of input")
    return node


def _unit(unit: str) -> str:
    return f" [{unit}]" if unit else ""


def _feasible(fs: FeasibleSet) -> str:
    if isinstance(fs, FiniteSet):
        return "{" + ", ".join(_signed(v) for v in fs.values) + "}"
    return f"[{_signed(fs.lo)}, {_signed(fs.hi)}]"


def _signed(v: float) -> str:
    return format_number(v)


def print_blueprint(bp: Blueprint) -> str:
    """Canonical text: fixed indentation, declarations grouped by kind."""
    lines = [f'blueprint "{bp.model}" revision {bp.revision} {{']
    for s in bp.schemes:
        lines.append(f"  scheme {s.name} {{")
        for c in s.constants:
            value = f" = {_signed(c.value)}" if c.value is not None else ""
            lines.append(f"    const {c.name}{value}{_unit(c.unit)};")
        for p in s.params:
            lines.append(f"    param {p.name} : {_feasible(p.feasible)}{_unit(p.unit)};")
        for o in s.outcomes:
            lines.append(f"    outcome {o};")
        for f in s.formulas:
            guard = f" when {format_expr(f.guard)}" if f.guard is not None else ""
            lines.append(f"    formula {f.name}{guard} : {format_expr(f.body)} -> {f.outcome};")
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- evaluation --------------------------------------------------------------


def _checked(value) -> float:
    if isinstance(value, complex) or not math.isfinite(value):
        raise DomainError(f"arithmetic result {value!r} is not a finite real")
    return float(value)


def eval_expr(node, env: Mapping[str, float]) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return float(env[node.name])
        except KeyError:
            raise UnboundParam(f"{node.name!r} has no value") from None
    if isinstance(node, Neg):
        return -eval_expr(node.operand, env)
    if isinstance(node, BinOp):
        a = eval_expr(node.left, env)
        b = eval_expr(node.right, env)
        try:
            if node.op == "+":
                return _checked(a + b)
            if node.op == "-":
                return _checked(a - b)
            if node.op == "*":
                return _checked(a * b)
            if node.op == "/":
                if b == 0:
                    raise DivisionByZero(f"division by zero in {format_expr(node)}")
                return _checked(a / b)
            if node.op == "^":
                if a == 0 and b < 0:
                    raise DivisionByZero(f"zero raised to negative power in {format_expr(node)}")
                return _checked(a ** b)
        except OverflowError:
            raise DomainError(f"overflow in {format_expr(node)}") from None
    raise TypeError(f"not an arithmetic node: {node!r}")


_CMP = {
    "<=": lambda a, b: a <= b,
    "<": lambda a, b: a < b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def eval_guard(node, env: Mapping[str, float]) -> bool:
    if isinstance(node, Compare):
        return _CMP[node.op](eval_expr(node.left, env), eval_expr(node.right, env))
    if isinstance(node, All):
        return all(eval_guard(t, env) for t in node.terms)
    raise TypeError(f"not a guard node: {node!r}")


def _environment(scheme: Scheme, bindings, constants) -> dict[str, float]:
    env = scheme.constant_defaults()
    if constants:
        env.update({k: float(v) for k, v in constants.items()})
    for name, value in bindings.items():
        spec = scheme.param(name)
        if float(value) not in spec.feasible:
            raise OutOfFeasibleSet(
                f"{name}={value!r} is outside {_feasible(spec.feasible)} in scheme {scheme.name!r}"
            )
        env[name] = float(value)
    return env


def evaluate_formula(
    scheme: Scheme,
    formula: Formula,
    bindings: Mapping[str, float],
    constants: Mapping[str, float] | None = None,
) -> float:
    """Numeric value of ``formula`` under ``bindings``.

    Caller ``constants`` override the scheme's declared defaults. Raises
    UnboundParam, OutOfFeasibleSet, GuardFailed, DivisionByZero or DomainError.
    """
    env = _environment(scheme, bindings, constants)
    missing = sorted((free_names(formula.body) | _guard_names(formula)) - set(env))
    if missing:
        raise UnboundParam(f"{missing[0]!r} is unbound for formula {formula.name!r}")
    if formula.guard is not None and not eval_guard(formula.guard, env):
        raise GuardFailed(
            f"bindings violate guard of {formula.name!r}: {format_expr(formula.guard)}"
        )
    return eval_expr(formula.body, env)


def _guard_names(formula: Formula) -> set[str]:
    return free_names(formula.guard) if formula.guard is not None else set()


def select_regime(
    scheme: Scheme,
    bindings: Mapping[str, float],
    constants: Mapping[str, float] | None = None,
) -> Formula:
    """The formula whose guard holds; a guard-less formula is the fallback.

    Declaration order carries no priority: two satisfied guards (or two
    fallbacks) raise AmbiguousRegime.
    """
    if not scheme.formulas:
        raise NoRegimeMatches(f"scheme {scheme.name!r} has no formulas")
    env = _environment(scheme, bindings, constants)
    guarded = [f for f in scheme.formulas if f.guard is not None]
    defaults = [f for f in scheme.formulas if f.guard is None]
    hits = [f for f in guarded if eval_guard(f.guard, env)]
    if len(hits) > 1:
        names = ", ".join(f.name for f in hits)
        raise AmbiguousRegime(f"guards of {names} all hold in scheme {scheme.name!r}")
    if hits:
        return hits[0]
    if len(defaults) == 1:
        return defaults[0]
    if defaults:
        raise AmbiguousRegime(f"scheme {scheme.name!r} has several guard-less formulas")
    raise NoRegimeMatches(f"no regime of scheme {scheme.name!r} matches {dict(bindings)}")


# -- tweaks ------------------------------------------------------------------


@dataclass(frozen=True)
class Tweak:
    """A formula instance populated by a northern component."""

    scheme: str
    formula: str
    bindings: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        bindings = {str(k): float(v) for k, v in sorted(self.bindings.items())}
        if not all(math.isfinite(v) for v in bindings.values()):
            raise ValueError("tweak bindings must be finite")
        object.__setattr__(self, "bindings", bindings)

    def __hash__(self):
        return hash((self.scheme, self.formula, tuple(self.bindings.items())))

    def to_bytes(self) -> bytes:
        doc = {"bindings": self.bindings, "formula": self.formula, "scheme": self.scheme}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Tweak":
        doc = json.loads(data.decode("utf-8"))
        if not isinstance(doc, dict) or set(doc) != {"bindings", "formula", "scheme"}:
            raise ValueError("tweak payload must hold exactly scheme, formula, bindings")
        return cls(doc["scheme"], doc["formula"], doc["bindings"])

    def __str__(self):
        args = ", ".join(f"{k}={format_number(v)}" for k, v in self.bindings.items())
        return f"{self.scheme}.{self.formula}({args})"


@dataclass(frozen=True)
class ValidatedTweak:
    tweak: Tweak
    scheme: Scheme
    formula: Formula


def validate_tweak(
    tweak: Tweak,
    blueprint: Blueprint,
    constants: Mapping[str, float] | None = None,
) -> ValidatedTweak:
    """Check a tweak against the blueprint previously sent north.

    Beyond existence, completeness and feasibility, the bindings must land in
    the named formula's regime; otherwise GuardFailed.
    """
    scheme = blueprint.scheme(tweak.scheme)
    formula = scheme.formula(tweak.formula)
    declared = {p.name for p in scheme.params}
    extra = sorted(set(tweak.bindings) - declared)
    if extra:
        raise UnknownIdentifier(f"scheme {scheme.name!r} has no param {extra[0]!r}")
    missing = [p.name for p in scheme.params if p.name not in tweak.bindings]
    if missing:
        raise MissingBinding(f"tweak {tweak} leaves {missing[0]!r} unbound")
    for p in scheme.params:
        if tweak.bindings[p.name] not in p.feasible:
            raise OutOfFeasibleSet(
                f"{p.name}={format_number(tweak.bindings[p.name])} is outside {_feasible(p.feasible)}"
            )
    chosen = select_regime(scheme, tweak.bindings, constants)
    if chosen.name != formula.name:
        raise GuardFailed(
            f"bindings select regime {chosen.name!r}, not {formula.name!r}"
        )
    return ValidatedTweak(tweak, scheme, formula)
