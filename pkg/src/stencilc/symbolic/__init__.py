from .expr import (Access, Add, Call, Constant, Expr, ExprError, Mul, Pow,
                   Symbol, access, add, call, evaluate, free_symbols, mul,
                   num, op_count, pow_, substitute)
from .fd import (FDError, SolveError, centered_weights, derivative,
                 derivative_of, dt, dt2, fornberg_weights, laplace, shift_expr,
                 solve_for)
from .grid import (DeclarationError, Dimension, Eq, Equation, FunctionDecl,
                   Grid)
from .sparse import inject, interpolate

__all__ = [
    "Access", "Add", "Call", "Constant", "Expr", "ExprError", "Mul", "Pow",
    "Symbol", "access", "add", "call", "evaluate", "free_symbols", "mul",
    "num", "op_count", "pow_", "substitute",
    "FDError", "SolveError", "centered_weights", "derivative", "derivative_of",
    "dt", "dt2", "fornberg_weights", "laplace", "shift_expr", "solve_for",
    "DeclarationError", "Dimension", "Eq", "Equation", "FunctionDecl", "Grid",
    "inject", "interpolate",
]
