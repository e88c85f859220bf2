"""Random ODE system sampling.

Each component function is drawn as a random unary-binary tree: a binary
skeleton sampled uniformly over shapes, decorated with add/mul, variable
leaves, a few unary insertions, then affine-wrapped unary arguments and a
multiplicative coefficient prepended to every top-level additive term.

Randomness comes from numpy's PCG64 generator, which is seeded explicitly
and platform independent, so identical seeds give identical sample streams.
Parallel workers use seed_base + worker_index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expressions import (
    Binary,
    Constant,
    Expression,
    GENERATOR_UNARY_OPS,
    OdeSystem,
    Unary,
    Variable,
)


@dataclass
class GeneratorConfig:
    d_max: int = 6
    b_max: int = 5
    u_max: int = 3
    c_min: float = 0.05
    c_max: float = 20.0
    p_add: float = 0.75
    p_mul: float = 0.25
    unary_pool: tuple[str, ...] = GENERATOR_UNARY_OPS
    max_unary_subtree_depth: int = 6

    def __post_init__(self):
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if not 0 < self.c_min < self.c_max:
            raise ValueError("need 0 < c_min < c_max")
        if abs(self.p_add + self.p_mul - 1.0) > 1e-12:
            raise ValueError("p_add + p_mul must equal 1")


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic, platform-independent random source."""
    return np.random.default_rng(seed)


def sample_dimension(cfg: GeneratorConfig, rng: np.random.Generator) -> int:
    return int(rng.integers(1, cfg.d_max + 1))


def _catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def sample_binary_skeleton(b: int, rng: np.random.Generator):
    """Full binary tree with exactly b internal nodes, uniform over shapes.

    Returned as nested tuples: a leaf is None, an internal node is
    (left, right). Uniformity comes from Catalan-weighted splits of the
    remaining internal-node budget.
    """
    if b < 0:
        raise ValueError("b must be >= 0")
    if b == 0:
        return None
    remaining = b - 1
    weights = np.array(
        [_catalan(k) * _catalan(remaining - k) for k in range(remaining + 1)],
        dtype=float,
    )
    k = int(rng.choice(remaining + 1, p=weights / weights.sum()))
    left = sample_binary_skeleton(k, rng)
    right = sample_binary_skeleton(remaining - k, rng)
    return (left, right)


def _decorate(skeleton, cfg: GeneratorConfig, dim: int, rng: np.random.Generator) -> Expression:
    if skeleton is None:
        return Variable(int(rng.integers(0, dim)))
    op = "add" if rng.random() < cfg.p_add else "mul"
    left = _decorate(skeleton[0], cfg, dim, rng)
    right = _decorate(skeleton[1], cfg, dim, rng)
    return Binary(op, left, right)


def _depth(expr: Expression) -> int:
    if isinstance(expr, (Constant, Variable)):
        return 1
    if isinstance(expr, Unary):
        return 1 + _depth(expr.child)
    return 1 + max(_depth(expr.left), _depth(expr.right))


def _collect_paths(expr: Expression, max_depth: int, path=()):
    """Paths (as child-index tuples) of nodes whose subtree depth < max_depth."""
    found = []
    if _depth(expr) < max_depth:
        found.append(path)
    if isinstance(expr, Unary):
        found.extend(_collect_paths(expr.child, max_depth, path + (0,)))
    elif isinstance(expr, Binary):
        found.extend(_collect_paths(expr.left, max_depth, path + (0,)))
        found.extend(_collect_paths(expr.right, max_depth, path + (1,)))
    return found


def _insert_unary(expr: Expression, path: tuple, op: str) -> Expression:
    if not path:
        return Unary(op, expr)
    if isinstance(expr, Unary):
        return Unary(expr.op, _insert_unary(expr.child, path[1:], op))
    if isinstance(expr, Binary):
        if path[0] == 0:
            return Binary(expr.op, _insert_unary(expr.left, path[1:], op), expr.right)
        return Binary(expr.op, expr.left, _insert_unary(expr.right, path[1:], op))
    raise ValueError("path descends below a leaf")


def sample_coefficient(cfg: GeneratorConfig, rng: np.random.Generator) -> float:
    """Magnitude log-uniform on [c_min, c_max], sign a fair coin."""
    magnitude = math.exp(rng.uniform(math.log(cfg.c_min), math.log(cfg.c_max)))
    return -magnitude if rng.random() < 0.5 else magnitude


def _wrap_unary_args(expr: Expression, cfg: GeneratorConfig, rng) -> Expression:
    """Wrap every unary operator's argument in a*arg + b (preorder draw order)."""
    if isinstance(expr, (Constant, Variable)):
        return expr
    if isinstance(expr, Unary):
        a = sample_coefficient(cfg, rng)
        b = sample_coefficient(cfg, rng)
        child = _wrap_unary_args(expr.child, cfg, rng)
        return Unary(expr.op, Binary("add", Binary("mul", Constant(a), child), Constant(b)))
    return Binary(
        expr.op,
        _wrap_unary_args(expr.left, cfg, rng),
        _wrap_unary_args(expr.right, cfg, rng),
    )


def _scale_terms(expr: Expression, cfg: GeneratorConfig, rng) -> Expression:
    """Prepend a fresh coefficient to every top-level additive term."""
    if isinstance(expr, Binary) and expr.op == "add":
        left = _scale_terms(expr.left, cfg, rng)
        right = _scale_terms(expr.right, cfg, rng)
        return Binary("add", left, right)
    return Binary("mul", Constant(sample_coefficient(cfg, rng)), expr)


def sample_component(cfg: GeneratorConfig, dim: int, rng: np.random.Generator) -> Expression:
    """One random component function over variables x_0 .. x_{dim-1}."""
    if not 1 <= dim <= cfg.d_max:
        raise ValueError(f"dim must be in [1, {cfg.d_max}]")
    b = int(rng.integers(1, cfg.b_max + 1))
    skeleton = sample_binary_skeleton(b, rng)
    expr = _decorate(skeleton, cfg, dim, rng)
    u = int(rng.integers(1, cfg.u_max + 1))
    for _ in range(u):
        sites = _collect_paths(expr, cfg.max_unary_subtree_depth)
        if not sites:
            continue  # every subtree too deep; skip rather than fail
        path = sites[int(rng.integers(0, len(sites)))]
        op = cfg.unary_pool[int(rng.integers(0, len(cfg.unary_pool)))]
        expr = _insert_unary(expr, path, op)
    expr = _wrap_unary_args(expr, cfg, rng)
    expr = _scale_terms(expr, cfg, rng)
    return expr


def sample_system(cfg: GeneratorConfig, rng: np.random.Generator) -> OdeSystem:
    dim = sample_dimension(cfg, rng)
    components = tuple(sample_component(cfg, dim, rng) for _ in range(dim))
    return OdeSystem(dim, components)


def max_component_complexity(cfg: GeneratorConfig) -> int:
    """Upper bound on node count implied by the sampling procedure.

    Worst case: b_max binary nodes + (b_max+1) leaves, u_max unary
    insertions each adding 5 nodes (op + affine add/mul + 2 constants),
    and a mul + constant on each of at most b_max+1 terms.
    """
    leaves = cfg.b_max + 1
    return cfg.b_max + leaves + 5 * cfg.u_max + 2 * leaves
