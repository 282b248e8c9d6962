"""Compile scalar expression strings into plain ``math``-based functions.

Generated functions only use ``math`` and ``numpy.empty`` so numba can
compile them when the simulation kernel is built.
"""
import functools
import math

import numpy as np
import sympy
from sympy.parsing.sympy_parser import parse_expr, standard_transformations
from sympy.printing.pycode import pycode

from .errors import ConfigError

_ALLOWED_FUNCS = {
    name: getattr(sympy, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "sinh", "cosh", "atan", "Abs", "pi", "E")
}
_ALLOWED_FUNCS["abs"] = sympy.Abs


def parse(text, names):
    """Parse ``text`` allowing only the symbols in ``names`` and basic functions."""
    local = dict(_ALLOWED_FUNCS)
    symbols = {name: sympy.Symbol(name, real=True) for name in names}
    local.update(symbols)
    try:
        expr = parse_expr(str(text), local_dict=local, global_dict={"Integer": sympy.Integer,
                                                                    "Float": sympy.Float,
                                                                    "Rational": sympy.Rational,
                                                                    "Symbol": sympy.Symbol},
                          transformations=standard_transformations)
    except Exception as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from exc
    expr = sympy.sympify(expr)
    unknown = {s.name for s in expr.free_symbols} - set(names)
    if unknown:
        raise ConfigError(f"expression {text!r} uses unknown symbols {sorted(unknown)}")
    return expr, symbols


def _code(expr):
    return pycode(sympy.Float(expr) if expr.is_number else expr, fully_qualified_modules=True)


@functools.lru_cache(maxsize=256)
def _exec(src, name):
    """Compile ``src``; identical sources share one function so compiled kernels are reused."""
    namespace = {"math": math, "np": np}
    exec(compile(src, f"<generated {name}>", "exec"), namespace)
    fn = namespace[name]
    fn.source = src
    return fn


def scalar_function(expr, arg):
    """Build ``f(arg) -> float`` from a sympy expression."""
    return _exec(f"def generated_scalar({arg}):\n    return float({_code(expr)})\n", "generated_scalar")


def vector_function(exprs, args, unpack):
    """Build ``f(*args) -> ndarray`` evaluating ``exprs`` component-wise.

    ``unpack`` maps local names to source snippets, e.g. ``{"x1": "x[0]"}``.
    """
    lines = [f"def generated_vector({', '.join(args)}):"]
    lines += [f"    {name} = {src}" for name, src in unpack.items()]
    lines.append(f"    out = np.empty({len(exprs)})")
    lines += [f"    out[{k}] = {_code(e)}" for k, e in enumerate(exprs)]
    lines.append("    return out")
    return _exec("\n".join(lines) + "\n", "generated_vector")
