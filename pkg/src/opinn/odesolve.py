"""Explicit integrators for autonomous fields ``dz/dt = f(z)``.

Euler and RK4 only use ``+`` and scalar ``*`` on the state, so they work on
plain arrays and on recorded Tensors alike (gradients flow by unrolling).
Dopri5 is adaptive and evaluated without recording.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, InvalidParameterError, NonConvergenceError

METHODS = ("euler", "rk4", "dopri5")

# Dormand–Prince 5(4) tableau
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_DP_E = tuple(b5 - b4 for b5, b4 in zip(_DP_B5, _DP_B4))


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4"
    step_size: float = 1.0
    rtol: float = 1e-5
    atol: float = 1e-7
    max_substeps: int = 1000

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameterError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.step_size <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise InvalidParameterError("step_size, rtol and atol must be > 0")


def euler_step(field, z, h):
    return z + h * field(z)


def rk4_step(field, z, h):
    k1 = field(z)
    k2 = field(z + (h / 2) * k1)
    k3 = field(z + (h / 2) * k2)
    k4 = field(z + h * k3)
    return z + (h / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def dopri5_substep(field, z, h):
    """One Dormand–Prince step on arrays; returns ``(z_next, error_estimate)``.

    ``z_next`` is the 5th-order solution, the error is its difference from
    the embedded 4th-order one.
    """
    z = np.asarray(z, dtype=float)
    k = []
    for a_row in _DP_A:
        zi = z
        for a, kj in zip(a_row, k):
            if a:
                zi = zi + (h * a) * kj
        k.append(np.asarray(field(zi), dtype=float))
    z_next = z + h * sum(b * kj for b, kj in zip(_DP_B5, k) if b)
    err = h * sum(e * kj for e, kj in zip(_DP_E, k) if e)
    return z_next, err


def _values(x):
    return x.data if isinstance(x, ad.Tensor) else np.asarray(x)


def _check_finite(z, t):
    if not np.all(np.isfinite(_values(z))):
        raise DivergenceError(f"non-finite state at system time {t}")


def _dopri5_interval(field, z, cfg: SolverConfig, h0: float):
    """Integrate over one unit of time; returns ``(z, next step proposal, substeps used)``."""
    t, h, used = 0.0, min(h0, 1.0), 0
    while t < 1.0 - 1e-12:
        h = min(h, 1.0 - t)
        if used >= cfg.max_substeps:
            raise NonConvergenceError(f"dopri5 needed more than {cfg.max_substeps} substeps")
        used += 1
        z_new, err = dopri5_substep(field, z, h)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(z), np.abs(z_new))
        ratio = float(np.max(np.abs(err) / scale)) if err.size else 0.0
        if not np.isfinite(ratio):
            raise DivergenceError("non-finite error estimate in dopri5")
        if ratio <= 1.0:
            t += h
            z = z_new
        factor = 5.0 if ratio == 0.0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
        h = h * factor
    return z, h, used


def integrate(field, z0, n_system_steps: int, cfg: SolverConfig = SolverConfig()):
    """States at system times ``1 .. n_system_steps`` (each one unit of time apart)."""
    if n_system_steps < 1:
        raise InvalidParameterError(f"n_system_steps must be >= 1, got {n_system_steps}")
    states = []
    if cfg.method == "dopri5":
        def fnp(v):
            return _values(field(v if not isinstance(z0, ad.Tensor) else ad.Tensor(v)))

        with ad.no_grad():
            z = np.array(_values(z0), dtype=float)
            h = 1.0
            for t in range(1, n_system_steps + 1):
                z, h, _ = _dopri5_interval(fnp, z, cfg, h)
                _check_finite(z, t)
                states.append(ad.Tensor(z) if isinstance(z0, ad.Tensor) else z)
        return states

    step = euler_step if cfg.method == "euler" else rk4_step
    n_sub = max(1, int(round(1.0 / cfg.step_size)))
    h = 1.0 / n_sub
    z = z0
    for t in range(1, n_system_steps + 1):
        for _ in range(n_sub):
            z = step(field, z, h)
        _check_finite(z, t)
        states.append(z)
    return states
