"""Line-oriented problem specifications.

A spec is a sequence of declarations, equation statements, and run
parameters:

    grid shape=(64, 64)
    function m space_order=2
    timefunction u space_order=2 time_order=2
    sparsetimefunction src npoint=1 coords=((32.0, 32.0),)
    eq u.forward = solve(m*u.dt2 - u.laplace, u.forward)
    src.inject(field=u.forward, expr=src * dt**2 / m)
    params steps=50 mode=advanced precision=f64

Expressions support infix arithmetic (+ - * / ** and parentheses), the
builtin calls sin/cos/sqrt, solve(expr, target), derivative suffixes
(.dx, .dy, .dz, .dx2, ..., .dt, .dt2, .laplace) and time offsets
(.forward, .backward). Errors carry line and column positions.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..symbolic import (Eq, Equation, FunctionDecl, Grid, Symbol, call,
                        derivative, dt, dt2, inject, interpolate, laplace,
                        num, solve_for)
from ..symbolic.expr import Access, Expr, mul, pow_
from ..symbolic.grid import DeclarationError, Dimension

FUNC_KINDS = ("function", "timefunction", "sparsetimefunction")
PARAM_KEYS = ("steps", "mode", "block", "precision", "workers")


class SpecError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__("line %d, col %d: %s" % (line, col, msg))
        self.msg = msg
        self.line = line
        self.col = col


@dataclass
class ProblemSpec:
    grid: Optional[Grid] = None
    grid_args: dict = field(default_factory=dict)
    functions: Dict[str, FunctionDecl] = field(default_factory=dict)
    func_args: List[Tuple[str, str, dict]] = field(default_factory=list)
    equations: List[Equation] = field(default_factory=list)
    statements: List[str] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def signature(self) -> tuple:
        funcs = tuple((kind, name, tuple(sorted(kw.items())))
                      for kind, name, kw in self.func_args)
        return (tuple(sorted(self.grid_args.items())), funcs,
                tuple(repr((eq.lhs, eq.rhs, eq.region, eq.is_increment))
                      for eq in self.equations),
                tuple(sorted(self.params.items())))


# -- Expression tokenizer ----------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/(),.=])
  | (?P<ws>\s+)
""", re.VERBOSE)


@dataclass
class _Token:
    kind: str  # num | name | op | end
    text: str
    col: int


def _tokenize(text: str, line: int, col0: int) -> List[_Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecError("unexpected character %r" % text[pos],
                            line, col0 + pos + 1)
        if m.lastgroup != "ws":
            out.append(_Token(m.lastgroup, m.group(), col0 + pos + 1))
        pos = m.end()
    out.append(_Token("end", "", col0 + len(text) + 1))
    return out


class _ExprParser:
    """Recursive-descent expression parser over one statement."""

    def __init__(self, tokens: List[_Token], line: int, spec: ProblemSpec):
        self.toks = tokens
        self.i = 0
        self.line = line
        self.spec = spec

    def peek(self) -> _Token:
        return self.toks[self.i]

    def next(self) -> _Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Token:
        t = self.next()
        if t.text != text:
            raise SpecError("expected %r, got %r" % (text, t.text or "end"),
                            self.line, t.col)
        return t

    def fail(self, msg: str, tok: _Token):
        raise SpecError(msg, self.line, tok.col)

    # expr := prod (("+"|"-") prod)*
    def expr(self) -> Expr:
        out = self.prod()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self.prod()
            out = out + rhs if op == "+" else out - rhs
        return out

    def prod(self) -> Expr:
        out = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            rhs = self.unary()
            out = out * rhs if op == "*" else out / rhs
        return out

    def unary(self) -> Expr:
        if self.peek().text == "-":
            self.next()
            return mul(num(-1), self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().text == "**":
            self.next()
            t = self.peek()
            exp = self.unary()
            from ..symbolic.expr import Constant
            from fractions import Fraction
            if not (isinstance(exp, Constant) and
                    isinstance(exp.value, Fraction) and
                    exp.value.denominator == 1):
                self.fail("exponent must be an integer", t)
            return pow_(base, int(exp.value))
        return base

    def atom(self) -> Expr:
        t = self.next()
        if t.kind == "num":
            return num(ast.literal_eval(t.text))
        if t.text == "(":
            out = self.expr()
            self.expect(")")
            return out
        if t.kind == "name":
            if self.peek().text == "(":
                return self.call(t)
            return self.suffixed(self.resolve(t), t)
        self.fail("expected an expression", t)

    def call(self, t: _Token) -> Expr:
        self.expect("(")
        args = [self.expr()]
        while self.peek().text == ",":
            self.next()
            args.append(self.expr())
        self.expect(")")
        if t.text == "solve":
            if len(args) != 2:
                self.fail("solve takes (expr, target)", t)
            if not isinstance(args[1], Access):
                self.fail("solve target must be a function reference", t)
            try:
                return solve_for(args[0], args[1])
            except ValueError as err:
                self.fail(str(err), t)
        if t.text in ("sin", "cos", "sqrt"):
            if len(args) != 1:
                self.fail("%s takes one argument" % t.text, t)
            return call(t.text, args[0])
        self.fail("unknown call %r" % t.text, t)

    def resolve(self, t: _Token):
        name = t.text
        if name in self.spec.functions:
            return self.spec.functions[name]
        if self.spec.grid is not None:
            g = self.spec.grid
            known = {"dt"} | {s.name for s in g.spacing_symbols} \
                | {s.name for s in g.origin_symbols}
            if name in known:
                return Symbol(name)
        self.fail("undeclared identifier %r" % name, t)

    def suffixed(self, base, t: _Token) -> Expr:
        cur = base
        while self.peek().text == ".":
            self.next()
            s = self.next()
            if s.kind != "name":
                self.fail("expected a suffix name", s)
            cur = self.apply_suffix(cur, s)
        if isinstance(cur, FunctionDecl):
            return cur.at
        return cur

    def apply_suffix(self, cur, s: _Token):
        if not isinstance(cur, FunctionDecl):
            self.fail("suffix .%s needs a declared function" % s.text, s)
        name = s.text
        try:
            if name == "forward":
                return cur.forward
            if name == "backward":
                return cur.backward
            if name == "laplace":
                return laplace(cur)
            if name == "dt":
                return dt(cur)
            if name == "dt2":
                return dt2(cur)
        except (DeclarationError, ValueError) as err:
            self.fail(str(err), s)
        m = re.fullmatch(r"d([a-z])(2?)", name)
        if m is None:
            self.fail("unknown suffix %r" % name, s)
        letter, order = m.group(1), 2 if m.group(2) else 1
        dim = next((d for d in cur.grid.dimensions if d.name == letter), None)
        if dim is None:
            self.fail("unknown dimension %s" % letter, s)
        try:
            return derivative(cur, dim, cur.space_order, order)
        except ValueError as err:
            self.fail(str(err), s)


# -- Line parsing ------------------------------------------------------------


def _parse_kwargs(p: _ExprParser, ints: tuple) -> dict:
    """Integer key=value pairs from a declaration tail."""
    out = {}
    while p.peek().kind == "name":
        key = p.next()
        p.expect("=")
        if key.text not in ints:
            p.fail("unknown option %r" % key.text, key)
        v = p.next()
        if v.kind != "num":
            p.fail("expected an integer for %s" % key.text, v)
        out[key.text] = int(v.text)
    t = p.peek()
    if t.kind != "end":
        p.fail("unexpected %r" % t.text, t)
    return out


def _split_tuples(tail: str, line: int, col0: int):
    """Extract key=(...) chunks with balanced parentheses; returns the
    remaining tail and a {key: python value} dict."""
    out = {}
    pattern = re.compile(r"([A-Za-z_][A-Za-z_0-9]*)\s*=\s*\(")
    while True:
        m = pattern.search(tail)
        if m is None:
            return tail, out
        depth = 0
        end = None
        for i in range(m.end() - 1, len(tail)):
            if tail[i] == "(":
                depth += 1
            elif tail[i] == ")":
                depth -= 1
                if depth == 0:
                    end = i
                    break
        if end is None:
            raise SpecError("unbalanced parentheses", line,
                            col0 + m.start() + 1)
        literal = tail[m.end() - 1:end + 1]
        try:
            out[m.group(1)] = ast.literal_eval(literal)
        except (SyntaxError, ValueError):
            raise SpecError("bad literal %s" % literal, line,
                            col0 + m.end())
        tail = tail[:m.start()] + tail[end + 1:]


def _as_tuple(v):
    if isinstance(v, (int, float)):
        return (v,)
    return tuple(v)


def parse_spec(text: str) -> ProblemSpec:
    spec = ProblemSpec()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        col0 = len(line) - len(stripped)
        head = stripped.split(None, 1)[0]
        tail = stripped[len(head):].strip()
        tailcol = col0 + len(head) + 1
        if head == "grid":
            _parse_grid(spec, tail, lineno, tailcol)
        elif head in FUNC_KINDS:
            _parse_function(spec, head, tail, lineno, tailcol)
        elif head == "eq":
            _parse_eq(spec, tail, lineno, tailcol)
            spec.statements.append(" ".join(stripped.split()))
        elif head == "params":
            _parse_params(spec, tail, lineno, tailcol)
        elif "." in head and ("inject(" in stripped.replace(" ", "") or
                              "interpolate(" in stripped.replace(" ", "")):
            _parse_sparse_stmt(spec, stripped, lineno, col0)
            spec.statements.append(" ".join(stripped.split()))
        else:
            raise SpecError("unknown statement %r" % head, lineno, col0 + 1)
    return spec


def _require_grid(spec: ProblemSpec, lineno: int, col: int) -> Grid:
    if spec.grid is None:
        raise SpecError("no grid declared", lineno, col)
    return spec.grid


def _parse_grid(spec, tail, lineno, col0):
    if spec.grid is not None:
        raise SpecError("grid already declared", lineno, col0)
    rest, tuples = _split_tuples(tail, lineno, col0)
    if rest.strip():
        raise SpecError("unexpected %r" % rest.strip(), lineno, col0)
    if "shape" not in tuples:
        raise SpecError("grid needs shape=(...)", lineno, col0)
    args = {"shape": _as_tuple(tuples.pop("shape"))}
    for key in ("extent", "origin"):
        if key in tuples:
            args[key] = _as_tuple(tuples.pop(key))
    if tuples:
        raise SpecError("unknown grid option %r" % next(iter(tuples)),
                        lineno, col0)
    try:
        spec.grid = Grid(**args)
    except DeclarationError as err:
        raise SpecError(str(err), lineno, col0)
    spec.grid_args = args


def _parse_function(spec, kind, tail, lineno, col0):
    g = _require_grid(spec, lineno, col0)
    rest, tuples = _split_tuples(tail, lineno, col0)
    toks = _tokenize(rest, lineno, col0)
    if not toks or toks[0].kind != "name":
        raise SpecError("expected a function name", lineno, col0)
    name = toks[0].text
    if name in spec.functions:
        raise SpecError("duplicate name %r" % name, lineno, toks[0].col)
    p = _ExprParser(toks[1:], lineno, spec)
    kwargs = _parse_kwargs(p, ("space_order", "time_order", "save",
                               "npoint", "factor"))
    coords = tuples.pop("coords", None)
    if tuples:
        raise SpecError("unknown option %r" % next(iter(tuples)),
                        lineno, col0)
    build = dict(kwargs)
    factor = build.pop("factor", None)
    try:
        if kind == "timefunction" and factor is not None:
            ts = Dimension("t" + name, "conditional", parent=g.time_dim,
                           factor=factor)
            decl = FunctionDecl(name, kind, g, time_dim=ts, **build)
        elif kind == "sparsetimefunction":
            if coords is not None:
                build["coordinates"] = [tuple(float(c) for c in _as_tuple(pt))
                                        for pt in coords]
            decl = FunctionDecl(name, kind, g, **build)
        else:
            decl = FunctionDecl(name, kind, g, **build)
    except (DeclarationError, TypeError) as err:
        raise SpecError(str(err), lineno, col0)
    spec.functions[name] = decl
    record = dict(kwargs)
    if coords is not None:
        record["coords"] = tuple(tuple(pt) if isinstance(pt, (list, tuple))
                                 else (pt,) for pt in coords)
    spec.func_args.append((kind, name, record))


def _parse_eq(spec, tail, lineno, col0):
    _require_grid(spec, lineno, col0)
    region = "domain"
    m = re.search(r"\bregion\s*=\s*(\w+)\s*$", tail)
    if m:
        region = m.group(1)
        if region != "interior":
            raise SpecError("bad region %r" % region, lineno,
                            col0 + m.start(1))
        tail = tail[:m.start()].rstrip()
    toks = _tokenize(tail, lineno, col0)
    p = _ExprParser(toks, lineno, spec)
    t = p.next()
    if t.kind != "name":
        p.fail("expected a function name on the left", t)
    lhs = p.resolve(t)
    if not isinstance(lhs, FunctionDecl):
        p.fail("left side must be a declared function", t)
    while p.peek().text == ".":
        p.next()
        s = p.next()
        if s.text == "forward":
            lhs = lhs.forward
        elif s.text == "backward":
            lhs = lhs.backward
        else:
            p.fail("only .forward/.backward allowed on the left", s)
    if isinstance(lhs, FunctionDecl):
        lhs = lhs.at
    p.expect("=")
    rhs = p.expr()
    end = p.peek()
    if end.kind != "end":
        p.fail("unexpected %r" % end.text, end)
    try:
        spec.equations.append(Eq(lhs, rhs, region=region))
    except DeclarationError as err:
        raise SpecError(str(err), lineno, col0)


def _parse_sparse_stmt(spec, stripped, lineno, col0):
    _require_grid(spec, lineno, col0)
    toks = _tokenize(stripped, lineno, col0)
    p = _ExprParser(toks, lineno, spec)
    t = p.next()
    decl = p.resolve(t)
    if not isinstance(decl, FunctionDecl):
        p.fail("expected a sparse function", t)
    p.expect(".")
    op = p.next()
    p.expect("(")
    try:
        if op.text == "inject":
            key = p.next()
            if key.text != "field":
                p.fail("inject needs field=...", key)
            p.expect("=")
            fld = p.next()
            target = p.resolve(fld)
            field_acc = p.suffixed(target, fld)
            if not isinstance(field_acc, Access):
                p.fail("inject field must be a function reference", fld)
            p.expect(",")
            key = p.next()
            if key.text != "expr":
                p.fail("inject needs expr=...", key)
            p.expect("=")
            expr = p.expr()
            p.expect(")")
            spec.equations.extend(inject(decl, field_acc, expr))
        elif op.text == "interpolate":
            expr = p.expr()
            p.expect(")")
            spec.equations.extend(interpolate(decl, expr))
        else:
            p.fail("unknown statement .%s" % op.text, op)
    except DeclarationError as err:
        raise SpecError(str(err), lineno, op.col)
    end = p.peek()
    if end.kind != "end":
        p.fail("unexpected %r" % end.text, end)


def _parse_params(spec, tail, lineno, col0):
    for m in re.finditer(r"(\S+)", tail):
        item = m.group(1)
        col = col0 + m.start() + 1
        if "=" not in item:
            raise SpecError("expected key=value", lineno, col)
        key, value = item.split("=", 1)
        if key not in PARAM_KEYS:
            raise SpecError("unknown parameter %r" % key, lineno, col)
        if key in ("steps", "workers"):
            try:
                spec.params[key] = int(value)
            except ValueError:
                raise SpecError("bad integer %r" % value, lineno, col)
        else:
            spec.params[key] = value


# -- Printing ----------------------------------------------------------------


def _fmt_tuple(v) -> str:
    return "(" + ", ".join(repr(x) for x in v) + ("," if len(v) == 1 else "") \
        + ")"


def pretty_print(spec: ProblemSpec) -> str:
    lines = []
    if spec.grid_args:
        bits = ["grid"]
        for key in ("shape", "extent", "origin"):
            if key in spec.grid_args:
                bits.append("%s=%s" % (key, _fmt_tuple(spec.grid_args[key])))
        lines.append(" ".join(bits))
    for kind, name, kw in spec.func_args:
        bits = [kind, name]
        for key in ("space_order", "time_order", "save", "factor", "npoint"):
            if key in kw:
                bits.append("%s=%d" % (key, kw[key]))
        if "coords" in kw:
            bits.append("coords=(%s,)" % ", ".join(
                _fmt_tuple(pt) for pt in kw["coords"]))
        lines.append(" ".join(bits))
    lines.extend(spec.statements)
    if spec.params:
        lines.append("params " + " ".join(
            "%s=%s" % (k, v) for k, v in sorted(spec.params.items())))
    return "\n".join(lines) + "\n"
