"""Neural diffusion-convection-reaction vector field on a latent state ``Z`` of shape ``(..., N, D)``.

    dZ/dt = w * relu(A_hat Z W_D)                 local diffusion over the graph
          + (1 - w) * softmax(V) Z W_C            global convection, V_ij = relu((z_i - z_j) W_V)
          + d * R(Z)                              reaction (source / linear / MLP)

with gates ``w = sigmoid(omega_raw)`` and ``d = sigmoid(delta_raw)``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import InvalidParameterError, ShapeError
from .graph import NormalizedOperator

REACTIONS = ("source", "linear", "nonlinear")
ABLATIONS = ("full", "no_dif", "no_con", "no_rea")


def init_field_params(dim: int, reaction: str, rng: np.random.Generator, prefix="field.") -> dict:
    """Glorot-uniform weights, zero biases, zero raw gates (both gates start at 0.5)."""
    if reaction not in REACTIONS:
        raise InvalidParameterError(f"unknown reaction {reaction!r}; choose from {REACTIONS}")

    def glorot(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, (fan_in, fan_out))

    p = {
        "w_diff": glorot(dim, dim),
        "w_conv": glorot(dim, dim),
        "w_vel": glorot(dim, 1),
    }
    if reaction == "linear":
        p["rea_w"] = glorot(dim, dim)
        p["rea_b"] = np.zeros(dim)
    elif reaction == "nonlinear":
        p["rea_w1"] = glorot(dim, dim)
        p["rea_b1"] = np.zeros(dim)
        p["rea_w2"] = glorot(dim, dim)
        p["rea_b2"] = np.zeros(dim)
    p["gate_omega_raw"] = np.zeros(())
    p["gate_delta_raw"] = np.zeros(())
    return {prefix + k: ad.parameter(v, name=prefix + k) for k, v in p.items()}


class DcrField:
    """Callable vector field ``f(Z)``; parameters are shared Tensors owned by the caller."""

    def __init__(self, params: dict, operator: NormalizedOperator, reaction="nonlinear",
                 ablation="full", prefix="field."):
        if reaction not in REACTIONS:
            raise InvalidParameterError(f"unknown reaction {reaction!r}; choose from {REACTIONS}")
        if ablation not in ABLATIONS:
            raise InvalidParameterError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
        self.params = params
        self.operator = operator
        self.reaction = reaction
        self.ablation = ablation
        self._p = prefix

    def __getitem__(self, key) -> ad.Tensor:
        return self.params[self._p + key]

    @property
    def dim(self) -> int:
        return self["w_diff"].shape[0]

    def _check(self, z: ad.Tensor) -> None:
        if z.ndim < 2 or z.shape[-2] != self.operator.n_nodes or z.shape[-1] != self.dim:
            raise ShapeError(
                f"state shape {z.shape} incompatible with N={self.operator.n_nodes}, D={self.dim}"
            )

    def omega(self) -> ad.Tensor:
        return ad.sigmoid(self["gate_omega_raw"])

    def delta(self) -> ad.Tensor:
        return ad.sigmoid(self["gate_delta_raw"])

    def gates(self) -> dict:
        w = float(self.omega().data)
        return {"omega": w, "one_minus_omega": 1.0 - w, "delta": float(self.delta().data)}

    def diffusion(self, z) -> ad.Tensor:
        z = ad.as_tensor(z)
        self._check(z)
        return ad.relu(ad.matmul(ad.sparse_apply(self.operator.matrix, z), self["w_diff"]))

    def velocity(self, z) -> ad.Tensor:
        """``V_ij = relu((z_i - z_j) W_V)``, computed as ``relu(s_i - s_j)`` with ``s = Z W_V``."""
        z = ad.as_tensor(z)
        s = ad.matmul(z, self["w_vel"])  # (..., N, 1)
        return ad.relu(ad.sub(s, ad.swapaxes(s)))

    def convection(self, z) -> ad.Tensor:
        z = ad.as_tensor(z)
        self._check(z)
        attn = ad.pairwise_relu_softmax(ad.matmul(z, self["w_vel"]))
        return ad.matmul(ad.matmul(attn, z), self["w_conv"])

    def reaction_term(self, z) -> ad.Tensor:
        z = ad.as_tensor(z)
        if self.reaction == "source":
            return z
        if self.reaction == "linear":
            return ad.add(ad.matmul(z, self["rea_w"]), self["rea_b"])
        hidden = ad.tanh(ad.add(ad.matmul(z, self["rea_w1"]), self["rea_b1"]))
        return ad.add(ad.matmul(hidden, self["rea_w2"]), self["rea_b2"])

    def __call__(self, z) -> ad.Tensor:
        z = ad.as_tensor(z)
        self._check(z)
        ab = self.ablation
        terms = []
        if ab == "no_con":
            terms.append(self.diffusion(z))
        elif ab == "no_dif":
            terms.append(self.convection(z))
        else:
            w = self.omega()
            terms.append(ad.mul(w, self.diffusion(z)))
            terms.append(ad.mul(ad.sub(1.0, w), self.convection(z)))
        if ab != "no_rea":
            terms.append(ad.mul(self.delta(), self.reaction_term(z)))
        out = terms[0]
        for t in terms[1:]:
            out = ad.add(out, t)
        return out


def field_eval(f: DcrField, z) -> ad.Tensor:
    return f(z)


def diffusion_term(f: DcrField, z) -> ad.Tensor:
    return f.diffusion(z)


def convection_term(f: DcrField, z) -> ad.Tensor:
    return f.convection(z)


def reaction_term(f: DcrField, z) -> ad.Tensor:
    return f.reaction_term(z)
