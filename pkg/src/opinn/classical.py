"""Mechanical opinion-dynamics models and the discrete diffusion / convection /
reaction recurrences they are special cases of.

All step functions are synchronous: every node reads the same old state.
The DCR recurrences are written out in their general weighted form so that
their equivalence with DeGroot, HK and FJ can be tested rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rng
from .errors import DegenerateInputError, InvalidParameterError, ShapeError
from .graph import Graph

MODELS = (
    "voter",
    "degroot",
    "fj",
    "hk",
    "dcr_diffusion",
    "dcr_convection",
    "dcr_reaction_diffusion",
)


@dataclass(frozen=True)
class ClassicalConfig:
    model: str = "degroot"
    alpha: float = 0.5
    epsilon: float = 0.3
    delta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidParameterError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.epsilon < 0:
            raise InvalidParameterError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParameterError(f"alpha must lie in [0, 1], got {self.alpha}")


def _vec(g: Graph | None, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"opinion vector must be 1-D, got shape {x.shape}")
    if g is not None and len(x) != g.n_nodes:
        raise ShapeError(f"opinion vector has {len(x)} entries, graph has {g.n_nodes} nodes")
    return x


def _require_no_isolated(g: Graph, what: str) -> None:
    isolated = np.flatnonzero(g.degree == 0)
    if len(isolated):
        raise DegenerateInputError(
            f"{what} is undefined for isolated nodes (node {int(isolated[0])} has degree 0)"
        )


def uniform_weights(g: Graph, offset: int = 1) -> np.ndarray:
    """Per directed-edge weights ``1 / (deg(i) + offset)``, aligned with ``g.adjacency.data``."""
    a = g.adjacency
    deg = np.diff(a.indptr)
    rows = np.repeat(np.arange(g.n_nodes), deg)
    return 1.0 / (deg[rows] + offset)


def step_degroot(g: Graph, x) -> np.ndarray:
    x = _vec(g, x)
    return (x + g.adjacency @ x) / (g.degree + 1.0)


def step_hk(x, epsilon: float) -> np.ndarray:
    """Global bounded-confidence step; a user with no peer within ``epsilon`` keeps its opinion.

    Peers are found by bisection on the sorted opinions, using the exact
    predicate ``|x_i - x_j| <= epsilon`` so the result matches a dense
    pairwise evaluation. Cost O(N log N).
    """
    x = _vec(None, x)
    if epsilon < 0:
        raise InvalidParameterError(f"epsilon must be >= 0, got {epsilon}")
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    csum = np.concatenate([[0.0], np.cumsum(xs)])
    rank = np.arange(n)

    # smallest k with |xs[k] - xs[i]| <= eps (monotone for k <= i)
    lo_a, lo_b = np.zeros(n, dtype=np.int64), rank.copy()
    while np.any(lo_a < lo_b):
        mid = (lo_a + lo_b) // 2
        ok = np.abs(xs[mid] - xs) <= epsilon
        lo_b = np.where(ok, mid, lo_b)
        lo_a = np.where(ok, lo_a, mid + 1)
    # largest k with |xs[k] - xs[i]| <= eps (monotone for k >= i)
    hi_a, hi_b = rank.copy(), np.full(n, n - 1, dtype=np.int64)
    while np.any(hi_a < hi_b):
        mid = (hi_a + hi_b + 1) // 2
        ok = np.abs(xs[mid] - xs) <= epsilon
        hi_a = np.where(ok, mid, hi_a)
        hi_b = np.where(ok, hi_b, mid - 1)

    count = hi_a - lo_a  # excludes self
    total = csum[hi_a + 1] - csum[lo_a] - xs
    new_sorted = np.where(count > 0, total / np.maximum(count, 1), xs)
    out = np.empty(n)
    out[order] = new_sorted
    return out


def step_fj(g: Graph, x, x0, alpha: float, clamp: bool = True) -> np.ndarray:
    """``alpha * x0 + mean(neighbours of x)``, then clipped to [-1, 1] unless ``clamp=False``."""
    x, x0 = _vec(g, x), _vec(g, x0)
    _require_no_isolated(g, "FJ")
    out = alpha * x0 + (g.adjacency @ x) / g.degree
    return np.clip(out, -1.0, 1.0) if clamp else out


def step_voter(g: Graph, x, rng: np.random.Generator) -> np.ndarray:
    """Every non-isolated node copies one uniformly drawn neighbour's old opinion.

    One uniform variate is drawn per node (isolated ones included) so the
    stream position does not depend on the graph's degree pattern.
    """
    x = _vec(g, x)
    a = g.adjacency
    deg = np.diff(a.indptr)
    u = rng.random(g.n_nodes)
    pick = np.minimum((u * deg).astype(np.int64), np.maximum(deg - 1, 0))
    out = x.copy()
    has = deg > 0
    out[has] = x[a.indices[a.indptr[:-1][has] + pick[has]]]
    return out


def step_dcr_diffusion(g: Graph, x, weights) -> np.ndarray:
    """Forward-Euler diffusion step ``(1 - sum_j w_ij) x_i + sum_j w_ij x_j``.

    ``weights`` is a scalar or an array aligned with ``g.adjacency.data``
    (row i holds the velocities ``w_ij`` of node i's neighbours).
    """
    x = _vec(g, x)
    a = g.adjacency
    w = np.broadcast_to(np.asarray(weights, dtype=float), a.data.shape)
    wmat = a.copy()
    wmat.data = np.array(w, dtype=float)
    out_flow = np.asarray(wmat.sum(axis=1)).ravel()
    if np.any(out_flow > 1.0 + 1e-12):
        i = int(np.argmax(out_flow))
        raise InvalidParameterError(f"diffusion weights of node {i} sum to {out_flow[i]:.6g} > 1")
    return (1.0 - out_flow) * x + wmat @ x


def step_dcr_convection(x, epsilon: float) -> np.ndarray:
    """Undirected global convection with uniform velocities over the epsilon-filtered set.

    Dense O(N^2) evaluation of ``(1 - sum_j w_ij) x_i + sum_j w_ij x_j`` with
    ``w_ij = 1/|S_i|`` on ``S_i = {j != i : |x_i - x_j| <= eps}``.
    """
    x = _vec(None, x)
    if epsilon < 0:
        raise InvalidParameterError(f"epsilon must be >= 0, got {epsilon}")
    mask = np.abs(x[:, None] - x[None, :]) <= epsilon
    np.fill_diagonal(mask, False)
    count = mask.sum(axis=1)
    w = np.where(mask, 1.0 / np.maximum(count, 1)[:, None], 0.0)
    return (1.0 - w.sum(axis=1)) * x + w @ x


def step_dcr_reaction_diffusion(g: Graph, x, x0, delta: float, weights=None,
                                 clamp: bool = True) -> np.ndarray:
    """Diffusion step plus the source reaction ``delta * x0``.

    Default weights are ``1/deg(i)``, which makes the step coincide with FJ.
    """
    x, x0 = _vec(g, x), _vec(g, x0)
    _require_no_isolated(g, "reaction-diffusion with 1/deg weights")
    if weights is None:
        weights = uniform_weights(g, offset=0)
    a = g.adjacency
    wmat = a.copy()
    wmat.data = np.array(np.broadcast_to(np.asarray(weights, dtype=float), a.data.shape))
    out_flow = np.asarray(wmat.sum(axis=1)).ravel()
    out = (1.0 - out_flow) * x + wmat @ x + delta * x0
    return np.clip(out, -1.0, 1.0) if clamp else out


def simulate(g: Graph, x0, cfg: ClassicalConfig, steps: int) -> np.ndarray:
    """Roll a model forward; returns an ``N x (steps + 1)`` series with column 0 = ``x0``."""
    if steps < 1:
        raise InvalidParameterError(f"steps must be >= 1, got {steps}")
    x0 = _vec(g, x0)
    rng = _rng.stream(cfg.seed, "voter")
    step = {
        "voter": lambda x: step_voter(g, x, rng),
        "degroot": lambda x: step_degroot(g, x),
        "fj": lambda x: step_fj(g, x, x0, cfg.alpha),
        "hk": lambda x: step_hk(x, cfg.epsilon),
        "dcr_diffusion": lambda x: step_dcr_diffusion(g, x, uniform_weights(g)),
        "dcr_convection": lambda x: step_dcr_convection(x, cfg.epsilon),
        "dcr_reaction_diffusion": lambda x: step_dcr_reaction_diffusion(g, x, x0, cfg.delta),
    }[cfg.model]
    out = np.empty((g.n_nodes, steps + 1))
    out[:, 0] = x0
    x = x0
    for t in range(1, steps + 1):
        x = step(x)
        out[:, t] = x
    return out
