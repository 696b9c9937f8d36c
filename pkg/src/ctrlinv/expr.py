"""Exact symbolic scalar engine used as the coefficient ring of the pipeline.

Expressions are sympy trees restricted to a fixed class: exact rational
constants, declared state variables and parameters, sums, products, integer
powers, quotients, and the trig atoms sin(v), cos(v) of a declared variable.
sin(v) and cos(v) are treated as independent indeterminates linked only by the
rewrite sin(v)**2 -> 1 - cos(v)**2, applied during normalization.

All functions here are pure; randomized ones take explicit seeds.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import sympy as sp

from .errors import (
    DivisionByZeroExpr,
    EvalSingular,
    NotPolynomial,
    UnknownSymbol,
)

NONZERO_WITNESS_TOL = 1e-9
EVAL_SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class SymbolContext:
    """Declared symbols of a system: ordered states, parameters, constraints.

    The generator order (states in declaration order, then parameters, then
    trig atoms) fixes the graded-lex term order used for all normal forms.
    """

    states: tuple[sp.Symbol, ...]
    params: tuple[sp.Symbol, ...] = ()
    # parameter -> '+' or '-' for declared sign constraints
    param_signs: dict = field(default_factory=dict)
    # expressions the user asserts nonzero on the working domain
    nonzero: tuple = ()

    @property
    def symbols(self):
        return self.states + self.params

    def trig_atoms(self):
        atoms = []
        for v in self.symbols:
            atoms.append(sp.sin(v))
            atoms.append(sp.cos(v))
        return tuple(atoms)

    def gens_for(self, *exprs):
        """Ordered generator list covering the given expressions.

        States first, then parameters, then (sin, cos) pairs of variables
        that actually occur under a trig atom.  sin before cos so that the
        leading term of sin(v)**2 + cos(v)**2 - 1 is sin(v)**2.
        """
        used_trig = set()
        for e in exprs:
            e = sp.sympify(e)
            for f in e.atoms(sp.sin, sp.cos):
                used_trig.add(f.args[0])
        trig = []
        for v in self.symbols:
            if v in used_trig:
                trig.append(sp.sin(v))
                trig.append(sp.cos(v))
        return self.states + self.params + tuple(trig)

    def check_symbols(self, e):
        """Raise UnknownSymbol if e mentions an undeclared symbol."""
        e = sp.sympify(e)
        declared = set(self.symbols)
        extra = e.free_symbols - declared
        if extra:
            names = ", ".join(sorted(str(s) for s in extra))
            raise UnknownSymbol(f"undeclared symbol(s): {names}")
        for f in e.atoms(sp.Function):
            if not isinstance(f, (sp.sin, sp.cos)):
                raise NotPolynomial(f"function outside expression class: {f}")
            if f.args[0] not in declared:
                raise UnknownSymbol(f"trig atom of undeclared symbol: {f}")


class Verdict(Enum):
    PROVEN_ZERO = "ProvenZero"
    PROVEN_NONZERO = "ProvenNonzero"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class ZeroVerdict:
    kind: Verdict
    witness: dict | None = None  # symbol -> float, only for PROVEN_NONZERO

    @property
    def is_zero(self):
        return self.kind is Verdict.PROVEN_ZERO

    @property
    def is_nonzero(self):
        return self.kind is Verdict.PROVEN_NONZERO


def _trig_reduce(poly_expr, gens):
    """Rewrite sin(v)**2 -> 1 - cos(v)**2 everywhere in a polynomial."""
    relations = []
    for g in gens:
        if isinstance(g, sp.sin):
            relations.append(g**2 + sp.cos(g.args[0]) ** 2 - 1)
    if not relations or not poly_expr.atoms(sp.sin):
        return sp.expand(poly_expr)
    _, rem = sp.reduced(poly_expr, relations, gens, order="grlex")
    return sp.expand(rem)


def normalize(e, ctx: SymbolContext):
    """Canonical form of an expression: a single reduced fraction num/den.

    The numerator and denominator are expanded polynomials over the context
    generators with sin**2 eliminated; the denominator is monic in grlex
    order (1 for polynomial input).
    """
    e = sp.sympify(e)
    if e.has(sp.zoo, sp.nan, sp.oo, -sp.oo):
        raise DivisionByZeroExpr("denominator normalizes to zero")
    # fast path: no quotients and no sin atoms means the fraction and
    # sin**2-rewrite stages are identities, so expansion alone is canonical
    if not e.has(sp.sin) and all(
            p.exp.is_Integer and p.exp > 0 for p in e.atoms(sp.Pow)):
        return sp.expand(e)
    e = sp.cancel(sp.together(e))
    num, den = sp.fraction(e)
    gens = ctx.gens_for(num, den)
    num = _trig_reduce(sp.expand(num), gens)
    den = _trig_reduce(sp.expand(den), gens)
    if den == 0:
        raise DivisionByZeroExpr("denominator normalizes to zero")
    if num == 0:
        return sp.Integer(0)
    if den.free_symbols or den.atoms(sp.sin, sp.cos):
        g = sp.cancel(num / den)
        num, den = sp.fraction(g)
        num = _trig_reduce(sp.expand(num), gens)
        den = _trig_reduce(sp.expand(den), gens)
    if den == 0:
        raise DivisionByZeroExpr("denominator normalizes to zero")
    if not (den.free_symbols or den.atoms(sp.sin, sp.cos)):
        return sp.expand(num / den)
    # monic denominator in the fixed term order
    lc = sp.Poly(den, *ctx.gens_for(den)).LC(order="grlex")
    num = sp.expand(num / lc)
    den = sp.expand(den / lc)
    return num / den


def is_polynomial(e, ctx: SymbolContext) -> bool:
    """True when normalize(e) has trivial denominator."""
    _, den = sp.fraction(normalize(e, ctx))
    return not (den.free_symbols or den.atoms(sp.sin, sp.cos))


def differentiate(e, v, ctx: SymbolContext):
    """Partial derivative with respect to a declared state variable."""
    if v not in ctx.states:
        raise UnknownSymbol(f"not a declared state variable: {v}")
    return normalize(sp.diff(sp.sympify(e), v), ctx)


def gradient(e, ctx: SymbolContext):
    return [differentiate(e, v, ctx) for v in ctx.states]


def _random_rational(rng):
    return Fraction(rng.randint(-40, 40), rng.randint(1, 20))


def random_point(ctx: SymbolContext, rng, margin=1e-3):
    """A random rational point satisfying sign and nonzero constraints."""
    for _ in range(200):
        point = {}
        for v in ctx.states:
            point[v] = _random_rational(rng)
        for p in ctx.params:
            val = Fraction(rng.randint(1, 40), rng.randint(1, 20))
            sign = ctx.param_signs.get(p)
            if sign == "-":
                val = -val
            elif sign is None and rng.random() < 0.5:
                val = -val
            point[p] = val
        ok = True
        for c in ctx.nonzero:
            try:
                if abs(evaluate(c, point, ctx)) <= margin:
                    ok = False
                    break
            except EvalSingular:
                ok = False
                break
        if ok:
            return point
    raise RuntimeError("could not sample a point satisfying domain constraints")


def is_zero(e, ctx: SymbolContext, seed: int = 0, samples: int = 8) -> ZeroVerdict:
    """Three-valued zero test: symbolic normal form, then random sampling."""
    n = normalize(e, ctx)
    if n == 0:
        return ZeroVerdict(Verdict.PROVEN_ZERO)
    rng = random.Random(seed)
    for _ in range(samples):
        point = random_point(ctx, rng)
        try:
            val = evaluate(n, point, ctx)
        except EvalSingular:
            continue
        if abs(val) > NONZERO_WITNESS_TOL:
            witness = {s: float(v) for s, v in point.items()}
            return ZeroVerdict(Verdict.PROVEN_NONZERO, witness)
    return ZeroVerdict(Verdict.UNKNOWN)


def _positive_leading(e, ctx):
    """Scale by -1 if the grlex leading coefficient is negative."""
    if not (e.free_symbols or e.atoms(sp.sin, sp.cos)):
        return (e, -1) if e.could_extract_minus_sign() else (e, 1)
    lc = sp.Poly(e, *ctx.gens_for(e)).LC(order="grlex")
    if lc.is_negative:
        return sp.expand(-e), -1
    return e, 1


def factor(e, ctx: SymbolContext):
    """Irreducible factors with multiplicities, up to a rational unit.

    Factors are normalized with positive leading coefficient and sorted in a
    deterministic order.  Trig atoms are treated as opaque indeterminates.
    """
    n = normalize(e, ctx)
    if not is_polynomial(n, ctx):
        raise NotPolynomial(f"not a polynomial after normalization: {n}")
    if n == 0:
        return []
    _, factors = sp.factor_list(n, *ctx.gens_for(n))
    out = []
    for base, mult in factors:
        base = sp.expand(base)
        base, _ = _positive_leading(base, ctx)
        out.append((normalize(base, ctx), int(mult)))
    out.sort(key=lambda fm: sp.default_sort_key(fm[0]))
    return out


def divide_exact(num, den, ctx: SymbolContext):
    """Exact polynomial quotient q with normalize(num - q*den) = 0, or None."""
    den_n = normalize(den, ctx)
    if den_n == 0:
        raise DivisionByZeroExpr("division by zero expression")
    num_n = normalize(num, ctx)
    if num_n == 0:
        return sp.Integer(0)
    q = normalize(sp.cancel(num_n / den_n), ctx)
    if not is_polynomial(q, ctx):
        return None
    if normalize(num_n - q * den_n, ctx) != 0:
        return None
    return q


def evaluate(e, point, ctx: SymbolContext | None = None) -> float:
    """IEEE-double evaluation; denominators below 1e-12 raise EvalSingular."""
    e = sp.sympify(e)
    lookup = {}
    for k, v in point.items():
        lookup[sp.Symbol(k) if isinstance(k, str) else k] = v
    return _eval(e, lookup)


def _eval(e, point):
    if e.is_Number:
        return float(e)
    if e.is_Symbol:
        try:
            return float(point[e])
        except KeyError:
            raise UnknownSymbol(f"no value assigned for {e}") from None
    if e.is_Add:
        return math.fsum(_eval(a, point) for a in e.args)
    if e.is_Mul:
        out = 1.0
        for a in e.args:
            out *= _eval(a, point)
        return out
    if e.is_Pow:
        base = _eval(e.base, point)
        exp = e.exp
        if not exp.is_Integer:
            raise NotPolynomial(f"non-integer exponent: {e}")
        if exp < 0 and abs(base) < EVAL_SINGULAR_TOL:
            raise EvalSingular(f"denominator below threshold in {e}")
        return base ** int(exp)
    if isinstance(e, sp.sin):
        return math.sin(_eval(e.args[0], point))
    if isinstance(e, sp.cos):
        return math.cos(_eval(e.args[0], point))
    if e is sp.S.NegativeOne:
        return -1.0
    raise NotPolynomial(f"node outside expression class: {e!r}")


def in_class(e, ctx: SymbolContext) -> bool:
    """True when e is built only from the allowed node types."""
    e = sp.sympify(e)
    try:
        ctx.check_symbols(e)
    except (UnknownSymbol, NotPolynomial):
        return False

    def walk(node):
        if node.is_Rational or node.is_Symbol:
            return True
        if node.is_Add or node.is_Mul:
            return all(walk(a) for a in node.args)
        if node.is_Pow:
            return node.exp.is_Integer and walk(node.base)
        if isinstance(node, (sp.sin, sp.cos)):
            return node.args[0].is_Symbol
        return False

    return walk(e)


def to_text(e) -> str:
    """Canonical text rendering used in reports and golden tests."""
    return sp.sstr(sp.sympify(e), order="grlex")
