"""Potentials with exact derivatives and the built-in catalog."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expr import CompiledExpression

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ScaleSplit:
    """Decomposition ``V = V0 / eps + V1``."""

    fast: "Potential"
    slow: "Potential"
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class Potential:
    """Scalar potential on ℝ^dim, vectorized over leading axes of ``q``.

    ``eval(q)`` has shape ``q.shape[:-1]``, ``grad`` returns ``q.shape`` and
    ``hess`` returns ``q.shape + (dim,)``.
    """

    dim: int
    eval: ArrayFn
    grad: ArrayFn
    hess: ArrayFn
    name: str = "custom"
    params: dict = field(default_factory=dict)
    scale_split: Optional[ScaleSplit] = None
    growth_certificate: Optional[float] = None
    hessian_matrix: Optional[np.ndarray] = None  # set for exactly quadratic V

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")

    @property
    def is_quadratic(self) -> bool:
        return self.hessian_matrix is not None


def _as_points(q, dim):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != dim:
        raise ValueError(f"expected trailing dimension {dim}, got {q.shape}")
    return q


def quadratic(H, name: str = "quadratic", params: dict | None = None,
              scale_split: ScaleSplit | None = None) -> Potential:
    """``V(q) = q·Hq / 2`` for a symmetric matrix ``H``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] != H.shape[1] or not np.allclose(H, H.T):
        raise ValueError("H must be symmetric")
    d = H.shape[0]
    Hc = H.copy()
    Hc.setflags(write=False)

    def ev(q):
        q = _as_points(q, d)
        return 0.5 * np.einsum("...i,ij,...j->...", q, Hc, q)

    def gr(q):
        q = _as_points(q, d)
        return q @ Hc.T

    def he(q):
        q = _as_points(q, d)
        return np.broadcast_to(Hc, q.shape[:-1] + (d, d)).copy()

    gc = float(max(1.0, np.abs(Hc).max() * d))
    return Potential(d, ev, gr, he, name=name, params=dict(params or {"H": Hc.tolist()}),
                     scale_split=scale_split, growth_certificate=gc, hessian_matrix=Hc)


def coupled_quadratic(c: float, eps: float, stiffness: float = 1.0) -> Potential:
    """``a q1²/2 + q2²/(2 eps) + c q1 q2`` with fast part ``q2²/2``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    a = float(stiffness)
    H = np.array([[a, c], [c, 1.0 / eps]])
    if np.linalg.eigvalsh(H).min() <= 0:
        raise ValueError("coupled quadratic is not confining: need a/eps > c^2")
    split = ScaleSplit(fast=quadratic(np.diag([0.0, 1.0]), name="fast"),
                       slow=quadratic(np.array([[a, c], [c, 0.0]]), name="slow"), eps=eps)
    return quadratic(H, name="coupled_quadratic",
                     params={"c": float(c), "eps": float(eps), "stiffness": a}, scale_split=split)


def _double_well_parts(height: float, c: float):
    def ev(q):
        q1, q2 = q[..., 0], q[..., 1]
        return height * (q1 ** 2 - 1.0) ** 2 + c * q1 * q2

    def gr(q):
        q1, q2 = q[..., 0], q[..., 1]
        return np.stack([4 * height * q1 * (q1 ** 2 - 1.0) + c * q2, c * q1], axis=-1)

    def he(q):
        q1 = q[..., 0]
        out = np.zeros(q.shape + (2,))
        out[..., 0, 0] = height * (12 * q1 ** 2 - 4.0)
        out[..., 0, 1] = out[..., 1, 0] = c
        return out

    return ev, gr, he


def double_well_fast(eps: float, height: float = 1.0, c: float = 0.0) -> Potential:
    """``h (q1² − 1)² + q2²/(2 eps) + c q1 q2``: double well in the slow variable."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    sev, sgr, she = _double_well_parts(height, c)
    slow = Potential(2, sev, sgr, she, name="slow")
    fast = quadratic(np.diag([0.0, 1.0]), name="fast")

    def ev(q):
        q = _as_points(q, 2)
        return sev(q) + q[..., 1] ** 2 / (2 * eps)

    def gr(q):
        q = _as_points(q, 2)
        g = sgr(q)
        g[..., 1] += q[..., 1] / eps
        return g

    def he(q):
        q = _as_points(q, 2)
        h = she(q)
        h[..., 1, 1] += 1.0 / eps
        return h

    # quartic growth: no quadratic certificate
    return Potential(2, ev, gr, he, name="double_well_fast",
                     params={"eps": float(eps), "height": float(height), "c": float(c)},
                     scale_split=ScaleSplit(fast=fast, slow=slow, eps=eps), growth_certificate=None)


def from_expression(text: str, dim: int | None = None, name: str = "expression",
                    growth_certificate: float | None = None) -> Potential:
    """Potential defined by an arithmetic expression in ``q1..qd``."""
    ce = CompiledExpression(text, dim)
    return Potential(ce.dim, ce.value, ce.gradient, ce.hessian, name=name,
                     params={"expression": text}, growth_certificate=growth_certificate)


CATALOG: dict[str, Callable[..., Potential]] = {
    "quadratic": lambda H=((1.0, 0.0), (0.0, 1.0)): quadratic(H),
    "coupled_quadratic": coupled_quadratic,
    "double_well_fast": double_well_fast,
}


def catalog_potential(name: str, **params) -> Potential:
    """Build a catalog potential by name; ``expression`` builds from text."""
    if name == "expression":
        return from_expression(params["text"], params.get("dim"))
    try:
        factory = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown potential {name!r}; known: {sorted(CATALOG) + ['expression']}") from None
    return factory(**params)


# ------------------------------------------------------------ validation

def _sample_box(rng, dim, radius, n):
    return rng.uniform(-radius, radius, size=(n, dim))


def check_derivatives(pot: Potential, radius: float = 3.0, n: int = 200, seed: int = 0,
                      rel_tol: float = 1e-6) -> dict:
    """Compare ``grad``/``hess`` with centered finite differences at random points.

    Returns a dict with the worst relative errors and a ``pass`` flag.
    """
    rng = np.random.default_rng(seed)
    q = _sample_box(rng, pot.dim, radius, n)
    g = pot.grad(q)
    H = pot.hess(q)
    h = 1e-5
    g_fd = np.empty_like(g)
    H_fd = np.empty_like(H)
    for i in range(pot.dim):
        e = np.zeros(pot.dim)
        e[i] = h
        g_fd[:, i] = (pot.eval(q + e) - pot.eval(q - e)) / (2 * h)
        H_fd[:, :, i] = (pot.grad(q + e) - pot.grad(q - e)) / (2 * h)
    scale_g = np.maximum(np.abs(g), 1.0)
    scale_H = np.maximum(np.abs(H), 1.0)
    err_g = float(np.max(np.abs(g - g_fd) / scale_g))
    err_H = float(np.max(np.abs(H - H_fd) / scale_H))
    out = {"grad_rel_err": err_g, "hess_rel_err": err_H, "pass": err_g <= rel_tol and err_H <= rel_tol}
    if pot.scale_split is not None:
        s = pot.scale_split
        resid = np.max(np.abs(pot.eval(q) - (s.fast.eval(q) / s.eps + s.slow.eval(q))))
        out["split_residual"] = float(resid)
        out["pass"] = out["pass"] and resid <= 1e-10 * max(1.0, float(np.abs(pot.eval(q)).max()))
    return out


def check_growth(pot: Potential, radius: float = 1e3, n: int = 2000, seed: int = 0) -> dict:
    """Test the declared growth certificate on a box of the given radius."""
    if pot.growth_certificate is None:
        return {"declared": False, "pass": None}
    C = pot.growth_certificate
    rng = np.random.default_rng(seed)
    q = _sample_box(rng, pot.dim, radius, n)
    r2 = np.sum(q * q, axis=-1)
    v_ok = np.abs(pot.eval(q)) <= C * (1 + r2)
    g_ok = np.linalg.norm(pot.grad(q), axis=-1) <= C * (1 + np.sqrt(r2))
    h_ok = np.linalg.norm(pot.hess(q), ord=2, axis=(-2, -1)) <= C
    return {"declared": True, "C": C, "pass": bool(v_ok.all() and g_ok.all() and h_ok.all())}
