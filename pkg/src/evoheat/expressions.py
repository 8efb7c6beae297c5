"""Closed-form field expressions for configuration files.

Metric densities, drift components, potentials, and initial data are
declared as strings over the variables ``x`` (and ``y`` in 2D) and
``tau``, with a small fixed vocabulary: ``sin``, ``cos``, ``exp``,
``sqrt``, ``log``, ``pi``, and arithmetic. Expressions are parsed once
with sympy and evaluated on the lattice through numpy; the parsed form
also provides the analytic ``tau`` derivative used by metric sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp

_X, _Y, _TAU = sp.symbols("x y tau", real=True)

_ALLOWED_FUNCS = {sp.sin, sp.cos, sp.exp, sp.sqrt, sp.log}

_LOCALS = {
    "x": _X,
    "y": _Y,
    "tau": _TAU,
    "pi": sp.pi,
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "sqrt": sp.sqrt,
    "log": sp.log,
}


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class FieldExpression:
    """A compiled scalar field of ``x``(, ``y``) and ``tau``."""

    text: str
    dim: int
    _fn: Callable
    _dfn: Callable

    def __call__(self, *args) -> np.ndarray:
        return self._eval(self._fn, args)

    def dtau(self, *args) -> np.ndarray:
        return self._eval(self._dfn, args)

    @staticmethod
    def _eval(fn, args):
        arrs = [np.asarray(a, dtype=float) for a in args]
        out = np.asarray(fn(*arrs), dtype=float)
        if out.shape != arrs[0].shape:
            out = np.full_like(arrs[0], float(out))
        return out


def parse_field(text: str, dim: int = 1) -> FieldExpression:
    """Compile an expression string into a lattice-evaluable field.

    Parameters
    ----------
    text : str
        Expression over ``x``(, ``y``), ``tau``; e.g. ``1 + 0.1*tau`` or
        ``exp(0.02*sin(2*pi*x))``.
    dim : int
        Spatial dimension; controls the call signature
        ``f(x, tau)`` versus ``f(x, y, tau)``.
    """
    try:
        expr = sp.sympify(text, locals=dict(_LOCALS), rational=False)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ExpressionError(f"cannot parse field expression {text!r}") from exc

    allowed_syms = {_X, _TAU} if dim == 1 else {_X, _Y, _TAU}
    extra = expr.free_symbols - allowed_syms
    if extra:
        names = ", ".join(sorted(str(s) for s in extra))
        raise ExpressionError(f"unknown symbols in {text!r}: {names}")
    bad = {f.func for f in expr.atoms(sp.Function)} - _ALLOWED_FUNCS
    if bad:
        names = ", ".join(sorted(f.__name__ for f in bad))
        raise ExpressionError(f"functions outside the vocabulary in {text!r}: {names}")

    args = (_X, _TAU) if dim == 1 else (_X, _Y, _TAU)
    fn = sp.lambdify(args, expr, modules="numpy")
    dfn = sp.lambdify(args, sp.diff(expr, _TAU), modules="numpy")
    return FieldExpression(text=text, dim=dim, _fn=fn, _dfn=dfn)


def family_from_expression(kind: str, text: str, name: str | None = None):
    """Build a metric family whose density or exponent is an expression."""
    from .metrics import MetricFamily

    dim = 2 if kind == "conformal" else 1
    f = parse_field(text, dim=dim)
    return MetricFamily(kind=kind, value=f, dvalue_dtau=f.dtau,
                        name=name or text)
