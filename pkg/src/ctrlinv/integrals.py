"""First integrals and generalized first integrals.

First integrals come from closed generators of the terminal (integrable)
derived system via the straight-line homotopy of the Poincare lemma.
Generalized first integrals are non-degenerate common factors of the torsion
minors, confirmed by the ideal-membership condition: the differential of the
candidate must lie in the ideal generated by the candidate and the
annihilating 1-forms.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np
import sympy as sp

from .dsl import ControlAffineSystem
from .errors import NotClosed, NotPolynomial
from .expr import (
    SymbolContext,
    divide_exact,
    evaluate,
    factor,
    gradient,
    in_class,
    is_zero,
    normalize,
    to_text,
)
from .flag import (
    PfaffianFlag,
    PfaffianSystem,
    TorsionMatrix,
    _known_nonzero,
    derived_flag,
    flag_summary,
)
from .forms import (
    DifferentialForm,
    coefficient_vector,
    contract,
    d,
    form_to_text,
    one_form,
    reduce_mod,
)
from .numeric import (
    _PyRng,
    escape_test,
    invariance_test,
    leaf_controllability,
)
from .sampling import zero_locus_points

NONDEGENERACY_TOL = 1e-8
NUMERIC_MEMBERSHIP_TOL = 1e-8


class Classification(Enum):
    FIRST_INTEGRAL = "FirstIntegral"
    GENERALIZED = "GeneralizedFirstIntegral"
    REJECTED = "Rejected"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class CandidateIntegral:
    rhos: tuple  # the functions rho^1..rho^d
    classification: Classification
    provenance: str  # FromFlag | FromTorsionMinors | UserDeclared
    evidence: dict

    @property
    def d(self):
        return len(self.rhos)


# --- Poincare-lemma integration ---------------------------------------------

def _base_point(ctx: SymbolContext):
    """Origin, shifted along constrained variables if a constraint vanishes."""
    base = {v: sp.Integer(0) for v in ctx.states}
    for _ in range(8):
        bad = None
        for c in ctx.nonzero:
            c0 = normalize(sp.sympify(c).subs(base), ctx)
            if c0 == 0 or (not c0.free_symbols.difference(ctx.params)
                           and not c0.atoms(sp.sin, sp.cos) and c0 == 0):
                bad = c
                break
            if not c0.free_symbols and not c0.atoms(sp.sin, sp.cos) and c0 == 0:
                bad = c
                break
        if bad is None:
            return base
        for v in ctx.states:
            if v in sp.sympify(bad).free_symbols:
                base[v] = base[v] + 1
    return base


def poincare_integrate(omega: DifferentialForm):
    """Potential of a closed 1-form by the straight-line homotopy, or None.

    rho(x) = integral_0^1 sum_i a_i(base + t(x - base)) (x_i - base_i) dt.
    Returns None when the integral leaves the polynomial-trig class.
    """
    ctx = omega.ctx
    if omega.degree != 1:
        raise ValueError("poincare_integrate expects a 1-form")
    if not d(omega).is_zero_form:
        raise NotClosed("form is not closed")
    base = _base_point(ctx)
    t = sp.Dummy("t")
    subs = {v: base[v] + t * (v - base[v]) for v in ctx.states}
    integrand = sp.Integer(0)
    for (i,), c in omega.terms:
        v = ctx.states[i]
        integrand += sp.sympify(c).subs(subs, simultaneous=True) * (v - base[v])
    try:
        rho = sp.integrate(sp.expand_mul(integrand), (t, 0, 1))
    except Exception:
        return None
    if rho.has(sp.Integral):
        return None
    rho = sp.simplify(rho) if rho.atoms(sp.sin, sp.cos) else rho
    if not in_class(rho, ctx):
        return None
    rho = normalize(rho, ctx)
    check = one_form(gradient(rho, ctx), ctx) - omega
    if not check.is_zero_form:
        return None
    return rho


def _closed_pair_combination(gi, gj, ctx):
    """Rational constants (l, m) with d(l*gi + m*gj) = 0, or None."""
    l, m = sp.symbols("_l _m")
    dcomb = {}
    for form, coeff in ((d(gi), l), (d(gj), m)):
        for key, c in form.terms:
            dcomb[key] = dcomb.get(key, sp.Integer(0)) + coeff * c
    equations = []
    for c in dcomb.values():
        poly = sp.Poly(sp.expand(c), *ctx.gens_for(c))
        equations.extend(poly.coeffs())
    sol = sp.linsolve(equations, [l, m])
    for vec in sol:
        lv, mv = vec
        free = lv.free_symbols | mv.free_symbols
        # pick a nontrivial instance of the solution family
        subs = {s: sp.Integer(1) for s in free}
        lv, mv = lv.subs(subs), mv.subs(subs)
        if (lv, mv) != (0, 0) and lv.is_Rational and mv.is_Rational:
            return lv, mv
    return None


def first_integrals(flag: PfaffianFlag, ctx: SymbolContext,
                    fields=None) -> list:
    """First integrals from the terminal integrable system.

    Integrates closed terminal generators (and constant-coefficient pairs of
    non-closed ones); generators not captured are reported Undetermined with
    their closedness defect.
    """
    terminal = flag.terminal
    out = []
    unresolved = []
    for g in terminal.generators:
        if d(g).is_zero_form:
            rho = poincare_integrate(g)
            if rho is not None:
                out.append(_validated_first_integral(rho, g, ctx, fields))
                continue
        unresolved.append(g)
    for gi, gj in itertools.combinations(unresolved, 2):
        if len(out) >= flag.q:
            break
        combo = _closed_pair_combination(gi, gj, ctx)
        if combo is None:
            continue
        lv, mv = combo
        comb = one_form(
            [lv * a + mv * b for a, b in
             zip(coefficient_vector(gi), coefficient_vector(gj))], ctx)
        if d(comb).is_zero_form:
            rho = poincare_integrate(comb)
            if rho is not None:
                out.append(_validated_first_integral(rho, comb, ctx, fields))
    for g in unresolved:
        if len(out) >= flag.q:
            break
        out.append(CandidateIntegral(
            rhos=(), classification=Classification.UNDETERMINED,
            provenance="FromFlag",
            evidence={"generator": form_to_text(g),
                      "closedness_defect": form_to_text(d(g))}))
    return out[: flag.q]


def _validated_first_integral(rho, generator, ctx, fields):
    evidence = {"potential_of": form_to_text(generator)}
    if fields:
        for X in fields:
            drho = one_form(gradient(rho, ctx), ctx)
            assert contract(drho, X) == 0, \
                f"first integral fails annihilation against {X}"
        evidence["annihilates_fields"] = True
    return CandidateIntegral(rhos=(rho,),
                             classification=Classification.FIRST_INTEGRAL,
                             provenance="FromFlag", evidence=evidence)


# --- candidates from torsion minors -----------------------------------------

def _extended_ctx(ctx, extra_nonzero):
    extra = tuple(e for e in extra_nonzero if e not in ctx.nonzero)
    if not extra:
        return ctx
    return dataclasses.replace(ctx, nonzero=ctx.nonzero + extra)


def _clear_known_denominator(e, ctx):
    """Split a normalized expr into (numerator, cleared denominator).

    The denominator must be a product of declared- or certified-nonzero
    factors; otherwise NotPolynomial is raised.
    """
    n = normalize(e, ctx)
    num, den = sp.fraction(n)
    if den.free_symbols or den.atoms(sp.sin, sp.cos):
        if not _known_nonzero(den, ctx):
            raise NotPolynomial(
                f"denominator {den} is not certified nonzero on the domain")
    return sp.expand(num), den


def nondegenerate(rhos, ctx, seed=0, points=10):
    """drho^1 ^ ... ^ drho^d nonzero at sampled zero-locus points."""
    rhos = [sp.sympify(r) for r in rhos]
    for r in rhos:
        grad = gradient(r, ctx)
        if all(g == 0 for g in grad):
            return False
        # a repeated factor makes the gradient vanish on part of the locus
        try:
            if any(mult > 1 for _, mult in factor(r, ctx)):
                return False
        except NotPolynomial:
            pass
    rng = _PyRng(np.random.default_rng(seed + 13))
    try:
        pts = zero_locus_points(rhos, ctx, rng, count=points)
    except RuntimeError:
        return False
    grads = [[sp.diff(r, v) for v in ctx.states] for r in rhos]
    for pt in pts:
        J = np.array([[evaluate(g, pt, ctx) for g in row] for row in grads])
        sv = np.linalg.svd(J, compute_uv=False)
        if sv.size == 0 or sv[-1] <= NONDEGENERACY_TOL:
            return False
    return True


def gfi_candidates(T: TorsionMatrix, ctx: SymbolContext, dmax=3, seed=0,
                   extra_nonzero=()) -> list:
    """Non-degenerate common factors of the torsion minors.

    For each candidate count d, every minor of size s - d + 1 must vanish on
    the zero locus; factors of one minor that do not divide the rest are
    excluded.  Candidates deduplicated up to a rational unit.
    """
    s, ncols = T.shape()
    ctxe = _extended_ctx(ctx, extra_nonzero)
    found = []
    seen = set()
    for dd in range(1, min(dmax, s) + 1):
        size = s - dd + 1
        if size > s or size > ncols:
            continue
        minors = []
        for rows in itertools.combinations(range(s), size):
            for cols in itertools.combinations(range(ncols), size):
                sub = sp.Matrix([[T.entries[r][c] for c in cols]
                                 for r in rows])
                det = normalize(sub.det(method="berkowitz"), ctx)
                if det != 0:
                    num, _ = _clear_known_denominator(det, ctxe)
                    minors.append(normalize(num, ctx))
        if not minors:
            continue
        for f, _ in factor(minors[0], ctx):
            if not any(v in f.free_symbols for v in ctx.states) \
                    and not f.atoms(sp.sin, sp.cos):
                continue
            if any(divide_exact(mnr, f, ctx) is None for mnr in minors[1:]):
                continue
            key = to_text(f)
            if key in seen:
                continue
            seen.add(key)
            if nondegenerate([f], ctxe, seed=seed):
                found.append(f)
    return found


# --- membership condition d(rho) in (rho, theta) ----------------------------

def check_membership(rhos, system: PfaffianSystem, ctx: SymbolContext,
                     seed=0, provenance="UserDeclared") -> CandidateIntegral:
    """Classify a candidate system rho^1..rho^d against the ideal (rho, theta).

    Reduces each d(rho^mu) modulo (theta); surviving coefficients must be
    divisible by the candidate (with the reduction's cleared denominators
    certified nonzero).  All outcomes are classifications, never exceptions.
    """
    rhos = tuple(normalize(r, ctx) for r in rhos)
    ctxe = _extended_ctx(ctx, system.constraints)
    names = [str(v) for v in ctx.states]
    if not nondegenerate(rhos, ctxe, seed=seed):
        return CandidateIntegral(
            rhos=rhos, classification=Classification.REJECTED,
            provenance=provenance,
            evidence={"reason": "NonDegeneracyFailure"})

    gens = list(system.generators)
    pivots = list(system.pivots)
    theta_mat = sp.Matrix([coefficient_vector(g) for g in gens])
    quotient_cert = {}
    theta_cert = {}
    cleared = {}
    all_in_span = True
    for mu, rho in enumerate(rhos, start=1):
        drho = one_form(gradient(rho, ctx), ctx)
        red = reduce_mod(drho, gens, pivots, seed=seed)
        theta_cert[mu] = _theta_coefficients(drho, red, theta_mat, pivots, ctx)
        residues = {}
        for (i,), c in red.terms:
            all_in_span = False
            try:
                num, den = _clear_known_denominator(c, ctxe)
            except NotPolynomial as e:
                return CandidateIntegral(
                    rhos=rhos,
                    classification=Classification.UNDETERMINED,
                    provenance=provenance,
                    evidence={"reason": str(e),
                              "coefficient": to_text(c),
                              "column": f"d{names[i]}"})
            residues[i] = (c, num, den)
        if len(rhos) == 1:
            verdict = _divide_single(rho, residues, names, ctx, quotient_cert,
                                     cleared, mu)
        else:
            verdict = _divide_sequential(rhos, residues, names, ctx, ctxe,
                                         quotient_cert, cleared, mu, seed)
        if verdict is not None:
            return CandidateIntegral(rhos=rhos, classification=verdict[0],
                                     provenance=provenance,
                                     evidence=verdict[1])
    if all_in_span:
        return CandidateIntegral(
            rhos=rhos, classification=Classification.FIRST_INTEGRAL,
            provenance=provenance,
            evidence={"theta_coefficients": _render_theta(theta_cert)})
    return CandidateIntegral(
        rhos=rhos, classification=Classification.GENERALIZED,
        provenance=provenance,
        evidence={"theta_coefficients": _render_theta(theta_cert),
                  "quotients": quotient_cert,
                  "cleared_denominators": cleared})


def _theta_coefficients(drho, red, theta_mat, pivots, ctx):
    """Row vector b with d(rho) - reduced(d(rho)) = b . theta."""
    diff = drho - red
    v = sp.Matrix([[diff.coeff((i,)) for i in pivots]])
    M = theta_mat[:, list(pivots)]
    b = v * M.inv()
    return [normalize(e, ctx) for e in b]


def _render_theta(theta_cert):
    return {f"rho{mu}": [to_text(e) for e in b]
            for mu, b in theta_cert.items()}


def _divide_single(rho, residues, names, ctx, quotient_cert, cleared, mu):
    for i, (c, num, den) in residues.items():
        q = divide_exact(num, rho, ctx)
        if q is None:
            return (Classification.REJECTED,
                    {"reason": "membership failure: coefficient not "
                               "divisible by candidate",
                     "column": f"d{names[i]}",
                     "coefficient": to_text(c)})
        quotient_cert[f"rho{mu}:d{names[i]}"] = to_text(normalize(q / den, ctx))
        if den != 1:
            cleared[f"rho{mu}:d{names[i]}"] = to_text(den)
    return None


def _divide_sequential(rhos, residues, names, ctx, ctxe, quotient_cert,
                       cleared, mu, seed):
    numeric_cols = []
    for i, (c, num, den) in residues.items():
        gens_ = ctx.gens_for(num, *rhos)
        try:
            qs, rem = sp.reduced(num, list(rhos), gens_, order="grlex")
        except Exception:
            qs, rem = None, num
        if rem == 0:
            for lam, q in enumerate(qs, start=1):
                quotient_cert[f"rho{mu}:d{names[i]}:rho{lam}"] = \
                    to_text(normalize(q / den, ctx))
            if den != 1:
                cleared[f"rho{mu}:d{names[i]}"] = to_text(den)
        else:
            numeric_cols.append((i, c))
    if not numeric_cols:
        return None
    # numeric fallback: coefficients must vanish on sampled zero-locus points
    rng = _PyRng(np.random.default_rng(seed + 29))
    try:
        pts = zero_locus_points(list(rhos), ctxe, rng, count=50)
    except RuntimeError:
        return (Classification.UNDETERMINED,
                {"reason": "zero-locus sampling failed for numeric fallback"})
    worst = 0.0
    for i, c in numeric_cols:
        for pt in pts:
            try:
                worst = max(worst, abs(evaluate(c, pt, ctx)))
            except Exception:
                return (Classification.UNDETERMINED,
                        {"reason": "singular evaluation in numeric fallback",
                         "column": f"d{names[i]}"})
    if worst < NUMERIC_MEMBERSHIP_TOL:
        return (Classification.UNDETERMINED,
                {"reason": "membership supported numerically only",
                 "max_residual": worst,
                 "columns": [f"d{names[i]}" for i, _ in numeric_cols]})
    return (Classification.REJECTED,
            {"reason": "coefficient does not vanish on the zero locus",
             "max_residual": worst,
             "columns": [f"d{names[i]}" for i, _ in numeric_cols]})


# --- orchestration -----------------------------------------------------------

@dataclass(frozen=True)
class AnalysisConfig:
    seed: int = 42
    trials: int = 100
    pieces: int = 10
    horizon: float = 5.0
    step: float = 1e-3
    dmax: int = 3
    run_numeric: bool = True
    bracket_depth: int = 4


def analyze(sys: ControlAffineSystem, config: AnalysisConfig | None = None) -> dict:
    """Full pipeline: flag, foliation, isolated submanifolds, verdicts.

    Returns the JSON-ready invariant report.
    """
    cfg = config or AnalysisConfig()
    ctx = sys.ctx
    n = sys.n
    flag = derived_flag(sys, seed=cfg.seed)
    level0 = flag.levels[0].system
    report = {
        "schema": 1,
        "seed": cfg.seed,
        "system": _system_echo(sys),
        "flag": flag_summary(flag, ctx),
        "type": list(flag.type),
        "foliation": [],
        "isolated": [],
        "rejected": [],
        "undetermined": [],
        "domain_constraints": sorted(
            {to_text(c) for c in ctx.nonzero} |
            {to_text(c) for lv in flag.levels
             for c in lv.system.constraints}),
    }

    fields = sys.fields()
    rng = np.random.default_rng(cfg.seed)

    # foliation by level sets of first integrals (terminal integrable system)
    leaf_dim = n - flag.q
    if flag.q >= 1:
        for cand in first_integrals(flag, ctx, fields=fields):
            if cand.classification is Classification.FIRST_INTEGRAL:
                entry = _integral_entry(cand, leaf_dim)
                rho = cand.rhos[0]
                if cfg.run_numeric:
                    c0 = float(rng.uniform(-1, 1))
                    entry["leaf_controllability"] = leaf_controllability(
                        sys, [rho - c0], leaf_dim, seed=cfg.seed,
                        depth=cfg.bracket_depth)
                    entry["invariance"] = _verdict_json(invariance_test(
                        sys, [rho - c0], trials=cfg.trials, pieces=cfg.pieces,
                        horizon=cfg.horizon, h=cfg.step, seed=cfg.seed))
                    entry["leaf_offset"] = c0
                report["foliation"].append(entry)
            else:
                report["undetermined"].append(_integral_entry(cand, leaf_dim))

    # candidates for isolated invariant submanifolds
    candidates = []
    seen = {to_text(c.rhos[0]) if c.rhos else "" for c in []}
    seen = set()
    for entry in report["foliation"]:
        seen.add(entry["rho"][0])
    T0 = flag.levels[0].torsion
    if T0 is not None and not T0.is_trivial:
        for f in gfi_candidates(T0, ctx, dmax=cfg.dmax, seed=cfg.seed,
                                extra_nonzero=level0.constraints):
            if to_text(f) not in seen:
                seen.add(to_text(f))
                candidates.append(((f,), "FromTorsionMinors"))
    for rho in sys.candidates:
        if to_text(rho) not in seen:
            seen.add(to_text(rho))
            candidates.append(((rho,), "UserDeclared"))

    for rhos, prov in candidates:
        result = check_membership(rhos, level0, ctx, seed=cfg.seed,
                                  provenance=prov)
        dd = len(rhos)
        if result.classification is Classification.GENERALIZED:
            entry = _integral_entry(result, n - dd)
            if cfg.run_numeric:
                entry["leaf_controllability"] = leaf_controllability(
                    sys, list(rhos), n - dd, seed=cfg.seed,
                    depth=cfg.bracket_depth)
                entry["invariance"] = _verdict_json(invariance_test(
                    sys, list(rhos), trials=cfg.trials, pieces=cfg.pieces,
                    horizon=cfg.horizon, h=cfg.step, seed=cfg.seed))
            report["isolated"].append(entry)
        elif result.classification is Classification.FIRST_INTEGRAL:
            entry = _integral_entry(result, leaf_dim)
            if cfg.run_numeric:
                c0 = float(rng.uniform(-1, 1))
                entry["leaf_controllability"] = leaf_controllability(
                    sys, [rhos[0] - c0], n - dd, seed=cfg.seed,
                    depth=cfg.bracket_depth)
                entry["invariance"] = _verdict_json(invariance_test(
                    sys, [rhos[0] - c0], trials=cfg.trials, pieces=cfg.pieces,
                    horizon=cfg.horizon, h=cfg.step, seed=cfg.seed))
                entry["leaf_offset"] = c0
            report["foliation"].append(entry)
        elif result.classification is Classification.REJECTED:
            entry = _integral_entry(result, None)
            if cfg.run_numeric:
                esc = escape_test(sys, list(rhos), seed=cfg.seed,
                                  horizon=cfg.horizon)
                entry["escape"] = _escape_json(esc)
            report["rejected"].append(entry)
        else:
            report["undetermined"].append(_integral_entry(result, None))

    report["conclusion"] = _conclusion(report)
    return report


def _integral_entry(cand: CandidateIntegral, leaf_dim):
    entry = {
        "rho": [to_text(r) for r in cand.rhos],
        "classification": cand.classification.value,
        "provenance": cand.provenance,
        "evidence": _jsonable(cand.evidence),
    }
    if leaf_dim is not None:
        entry["leaf_dimension"] = leaf_dim
    return entry


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return to_text(obj) if isinstance(obj, sp.Basic) else str(obj)


def _verdict_json(v):
    return {
        "verdict": v.verdict,
        "max_rho": v.max_rho,
        "trials": len(v.trials),
        "seed": v.seed,
        "errors": list(v.errors),
    }


def _escape_json(esc):
    if esc is None:
        return None
    sched, t, val = esc
    return {
        "schedule": [[dur, list(u)] for dur, u in sched.pieces],
        "time": t,
        "value": val,
    }


def _system_echo(sys: ControlAffineSystem):
    from .dsl import print_system

    return {
        "n": sys.n,
        "m": sys.m,
        "driftless": sys.is_driftless,
        "source": print_system(sys),
    }


def _conclusion(report):
    parts = []
    if report["foliation"]:
        ld = report["foliation"][0].get("leaf_dimension")
        parts.append(f"foliation by {ld}-dimensional invariant submanifolds "
                     f"({len(report['foliation'])} first integral(s))")
    if report["isolated"]:
        parts.append(f"{len(report['isolated'])} isolated invariant "
                     "submanifold(s)")
    if not parts:
        return "no invariant submanifolds"
    return "; ".join(parts)
