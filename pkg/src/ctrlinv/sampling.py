"""Numeric sampling of parameter values and zero-locus points.

Shared by the membership checker (non-degeneracy, numeric fallback) and the
trajectory verifier (initial conditions on a candidate submanifold).
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from .expr import SymbolContext, evaluate

NEWTON_RESIDUAL_TOL = 1e-10
CONSTRAINT_MARGIN = 1e-6


def sample_params(ctx: SymbolContext, rng) -> dict:
    """Random parameter values honoring declared sign constraints."""
    vals = {}
    for p in ctx.params:
        v = rng.uniform(0.5, 2.0)
        sign = ctx.param_signs.get(p)
        if sign == "-":
            v = -v
        elif sign is None and rng.random() < 0.5:
            v = -v
        vals[p] = v
    return vals


def _constraints_ok(point, ctx, margin=CONSTRAINT_MARGIN):
    for c in ctx.nonzero:
        try:
            if abs(evaluate(c, point, ctx)) <= margin:
                return False
        except Exception:
            return False
    return True


def zero_locus_points(rhos, ctx: SymbolContext, rng, count=20,
                      param_values=None, box=1.0, newton_steps=20):
    """Points (state + parameter assignments) on the common zero set of rhos.

    Solves for one state variable when some rho is linear in it; otherwise
    projects random points by damped Newton steps.  Points that fail to
    converge or violate domain constraints are discarded and resampled.
    """
    rhos = [sp.sympify(r) for r in rhos]
    states = list(ctx.states)
    grads = [[sp.diff(r, v) for v in states] for r in rhos]
    points = []
    attempts = 0
    while len(points) < count and attempts < 60 * count:
        attempts += 1
        pvals = dict(param_values) if param_values else sample_params(ctx, rng)
        point = {v: rng.uniform(-box, box) for v in states}
        point.update(pvals)
        if _solve_linear(rhos, point, ctx, rng) or \
                _newton_project(rhos, grads, point, ctx, newton_steps):
            res = max(abs(evaluate(r, point, ctx)) for r in rhos)
            if res <= NEWTON_RESIDUAL_TOL and _constraints_ok(point, ctx):
                points.append(dict(point))
    if len(points) < count:
        raise RuntimeError(
            f"zero-locus sampling produced {len(points)}/{count} points")
    return points


def _solve_linear(rhos, point, ctx, rng):
    """Solve the system one variable at a time where rhos are linear."""
    remaining = list(rhos)
    solved = set()
    for rho in remaining:
        done = False
        for v in ctx.states:
            if v in solved:
                continue
            try:
                if sp.degree(sp.Poly(rho, v)) != 1:
                    continue
            except sp.PolynomialError:
                continue
            a = sp.diff(rho, v)
            if sp.diff(a, v) != 0:
                continue  # not actually linear
            try:
                aval = evaluate(a, point, ctx)
            except Exception:
                return False
            if abs(aval) < 1e-6:
                continue
            rest = rho - a * v
            point[v] = -evaluate(rest, point, ctx) / aval
            solved.add(v)
            done = True
            break
        if not done:
            return False
    return True


def _newton_project(rhos, grads, point, ctx, steps):
    states = list(ctx.states)
    x = np.array([point[v] for v in states], dtype=float)
    for _ in range(steps):
        try:
            r = np.array([evaluate(rho, _assign(point, states, x), ctx)
                          for rho in rhos])
            J = np.array([[evaluate(g, _assign(point, states, x), ctx)
                           for g in row] for row in grads])
        except Exception:
            return False
        if np.max(np.abs(r)) <= NEWTON_RESIDUAL_TOL:
            break
        try:
            step = J.T @ np.linalg.solve(J @ J.T, r)
        except np.linalg.LinAlgError:
            return False
        x = x - 0.8 * step
    for v, xv in zip(states, x):
        point[v] = float(xv)
    return True


def _assign(point, states, x):
    out = dict(point)
    for v, xv in zip(states, x):
        out[v] = float(xv)
    return out
