"""The OPINN forecaster: encoder -> neural DCR ODE -> decoder, plus training.

A context of ``c`` observed steps per user is encoded into a latent state
``Z`` (N x D). Each unit of integration time (one *system step*) stands for
one block of ``block_len`` observed steps; the decoder turns every future
state into a block of ``block_len`` opinions, and blocks are concatenated in
time order.
"""

from __future__ import annotations

import copy
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _alloc, _gru_kernels, _rng
from . import autodiff as ad
from .dynamics import ABLATIONS, DcrField, init_field_params
from .errors import DivergenceError, InvalidParameterError, ShapeError
from .evaluation import SplitSpec, gather_windows, rmse, window_starts
from .graph import Graph, propagation_operator
from .odesolve import SolverConfig, integrate

log = logging.getLogger(__name__)

ENCODERS = ("gru", "linear", "mlp", "transformer_block")

# full hyper-parameter search space; grid_search fixes any axis left out of ``space``
SEARCH_SPACE = {
    "learning_rate": (0.001, 0.005, 0.01, 0.05),
    "hidden_dim": (8, 16, 32, 64, 128),
    "batch_size": (1, 4, 16, 32, 64),
}


@dataclass(frozen=True)
class OpinnConfig:
    hidden_dim: int = 32
    context_len: int = 30
    block_len: int = 30
    horizon_steps: int = 1
    encoder: str = "gru"
    reaction: str = "nonlinear"
    ablation: str = "full"
    solver: SolverConfig = field(default_factory=SolverConfig)
    learning_rate: float = 0.005
    batch_size: int = 16
    epochs: int = 200
    weight_decay: float = 5e-5
    seed: int = 0

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise InvalidParameterError(f"unknown encoder {self.encoder!r}; choose from {ENCODERS}")
        if self.ablation not in ABLATIONS:
            raise InvalidParameterError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        for name in ("hidden_dim", "context_len", "block_len", "horizon_steps", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be >= 1")
        if self.epochs < 0 or self.learning_rate < 0 or self.weight_decay < 0:
            raise InvalidParameterError("epochs, learning_rate and weight_decay must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OpinnConfig":
        d = dict(d)
        if isinstance(d.get("solver"), dict):
            d["solver"] = SolverConfig(**d["solver"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def _init_encoder(cfg: OpinnConfig, rng) -> dict:
    d, c = cfg.hidden_dim, cfg.context_len
    if cfg.encoder == "gru":
        k = 1.0 / np.sqrt(d)
        # gate blocks along the last axis: [reset | update | candidate]
        p = {
            "w_x": rng.uniform(-k, k, (1, 3 * d)),
            "w_h": rng.uniform(-k, k, (d, 3 * d)),
            "b": rng.uniform(-k, k, 3 * d),
        }
    elif cfg.encoder == "linear":
        p = {"w": _glorot(rng, c, d), "b": np.zeros(d)}
    elif cfg.encoder == "mlp":
        p = {"w1": _glorot(rng, c, d), "b1": np.zeros(d), "w2": _glorot(rng, d, d), "b2": np.zeros(d)}
    else:
        p = {
            "w_emb": _glorot(rng, 1, d),
            "pos": rng.normal(0.0, 0.02, (c, d)),
            "w_q": _glorot(rng, d, d),
            "w_k": _glorot(rng, d, d),
            "w_v": _glorot(rng, d, d),
            "w_o": _glorot(rng, d, d),
            "w_f1": _glorot(rng, d, d),
            "b_f1": np.zeros(d),
            "w_f2": _glorot(rng, d, d),
            "b_f2": np.zeros(d),
        }
    return {"enc." + k: ad.parameter(v, name="enc." + k) for k, v in p.items()}


def _init_decoder(cfg: OpinnConfig, rng) -> dict:
    d = cfg.hidden_dim
    p = {
        "w1": _glorot(rng, d, d),
        "b1": np.zeros(d),
        "w2": _glorot(rng, d, cfg.block_len),
        "b2": np.zeros(cfg.block_len),
    }
    return {"dec." + k: ad.parameter(v, name="dec." + k) for k, v in p.items()}


def gru_cell(x, h, w_x, w_h, b):
    """One GRU step on ``x`` (M, k) and ``h`` (M, D), recorded as a single operation::

        r = sigmoid(x Wx_r + h Wh_r + b_r)
        u = sigmoid(x Wx_u + h Wh_u + b_u)
        n = tanh(x Wx_n + r * (h Wh_n) + b_n)
        h' = (1 - u) * n + u * h

    Fused weights are column blocks ``[r | u | n]``. The ``r`` and ``u``
    pre-activations come from one product of ``[h | x | 1]`` with the stacked
    weights and bias.
    """
    x, h = ad.as_tensor(x), ad.as_tensor(h)
    d = h.shape[-1]
    xd, hd = np.ascontiguousarray(x.data), np.ascontiguousarray(h.data)
    m, k = xd.shape
    wx, wh, bd = w_x.data, w_h.data, b.data
    aug = np.empty((m, d + k + 1))
    aug[:, :d] = hd
    aug[:, d:d + k] = xd
    aug[:, d + k] = 1.0
    a_ru = np.vstack([wh[:, :2 * d], wx[:, :2 * d], bd[None, :2 * d]])
    wh_ru = np.ascontiguousarray(wh[:, :2 * d])
    wh_n = np.ascontiguousarray(wh[:, 2 * d:])
    ru = aug @ a_ru
    ru *= 0.5
    np.tanh(ru, out=ru)
    hn = hd @ wh_n
    n = _gru_kernels.gates(ru, hn, xd, np.ascontiguousarray(wx[:, 2 * d:]), bd[2 * d:].copy())
    np.tanh(n, out=n)
    out = _gru_kernels.blend(n, ru, hd)

    def vjp(g):
        da_ru, da_n, da_hn, dh = _gru_kernels.backward(np.ascontiguousarray(g), hd, ru, n, hn)
        dh += da_ru @ wh_ru.T
        dh += da_hn @ wh_n.T
        dx = None
        if x.requires_grad:
            dx = da_ru @ wx[:, :2 * d].T + da_n @ wx[:, 2 * d:].T
        g_ru = aug.T @ da_ru
        g_xn = xd.T @ da_n
        return (
            dx,
            dh,
            np.concatenate([g_ru[d:d + k], g_xn], axis=1),
            np.concatenate([g_ru[:d], hd.T @ da_hn], axis=1),
            np.concatenate([g_ru[d + k], da_n.sum(axis=0)]),
        )

    return ad.record(out, (x, h, w_x, w_h, b), vjp)


class OpinnModel:
    """Parameter bundle plus forward pass; parameters live in ``self.params`` (name -> Tensor)."""

    def __init__(self, graph: Graph, cfg: OpinnConfig = OpinnConfig()):
        self.graph = graph
        self.cfg = cfg
        rng = _rng.stream(cfg.seed, "weights")
        self.params = {}
        self.params.update(_init_encoder(cfg, rng))
        self.params.update(init_field_params(cfg.hidden_dim, cfg.reaction, rng))
        self.params.update(_init_decoder(cfg, rng))
        self.field = DcrField(self.params, propagation_operator(graph), cfg.reaction, cfg.ablation)
        self.adam = ad.AdamState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)

    @property
    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def _p(self, key):
        return self.params[key]

    # -- forward --------------------------------------------------------------

    def encode(self, context) -> ad.Tensor:
        """``(..., N, c)`` opinions -> ``(..., N, D)`` latent state."""
        ctx = np.asarray(context.data if isinstance(context, ad.Tensor) else context, dtype=float)
        n, c = self.graph.n_nodes, self.cfg.context_len
        if ctx.ndim < 2 or ctx.shape[-2:] != (n, c):
            raise ShapeError(f"context shape {ctx.shape}, expected (..., {n}, {c})")
        lead = ctx.shape[:-1]
        flat = ctx.reshape(-1, c)
        d = self.cfg.hidden_dim
        enc = self.cfg.encoder
        if enc == "gru":
            h = ad.Tensor(np.zeros((flat.shape[0], d)))
            w_x, w_h, b = self._p("enc.w_x"), self._p("enc.w_h"), self._p("enc.b")
            for k in range(c):
                h = gru_cell(ad.Tensor(flat[:, k:k + 1]), h, w_x, w_h, b)
            z = h
        elif enc == "linear":
            z = ad.add(ad.matmul(ad.Tensor(flat), self._p("enc.w")), self._p("enc.b"))
        elif enc == "mlp":
            hid = ad.relu(ad.add(ad.matmul(ad.Tensor(flat), self._p("enc.w1")), self._p("enc.b1")))
            z = ad.add(ad.matmul(hid, self._p("enc.w2")), self._p("enc.b2"))
        else:
            z = self._encode_attention(flat)
        return ad.reshape(z, lead + (d,))

    def _encode_attention(self, flat: np.ndarray) -> ad.Tensor:
        """Single self-attention block over the context positions, mean-pooled."""
        d = self.cfg.hidden_dim
        x = ad.Tensor(flat[:, :, None])  # (M, c, 1)
        emb = ad.add(ad.matmul(x, self._p("enc.w_emb")), self._p("enc.pos"))
        q = ad.matmul(emb, self._p("enc.w_q"))
        k = ad.matmul(emb, self._p("enc.w_k"))
        v = ad.matmul(emb, self._p("enc.w_v"))
        att = ad.row_softmax(ad.scale(ad.matmul(q, ad.swapaxes(k)), 1.0 / np.sqrt(d)))
        h = ad.add(emb, ad.matmul(ad.matmul(att, v), self._p("enc.w_o")))
        ff = ad.relu(ad.add(ad.matmul(h, self._p("enc.w_f1")), self._p("enc.b_f1")))
        h = ad.add(h, ad.add(ad.matmul(ff, self._p("enc.w_f2")), self._p("enc.b_f2")))
        return ad.mean(h, axis=1)

    def decode(self, z) -> ad.Tensor:
        hid = ad.relu(ad.add(ad.matmul(z, self._p("dec.w1")), self._p("dec.b1")))
        return ad.tanh(ad.add(ad.matmul(hid, self._p("dec.w2")), self._p("dec.b2")))

    def forward(self, context, horizon_steps: int) -> ad.Tensor:
        """Differentiable forecast of ``horizon_steps * block_len`` values per user."""
        z0 = self.encode(context)
        states = integrate(self.field, z0, horizon_steps, self.cfg.solver)
        blocks = [self.decode(z) for z in states]
        return blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=-1)

    def forecast(self, context, horizon_steps: int) -> np.ndarray:
        if horizon_steps < 1:
            raise InvalidParameterError(f"horizon_steps must be >= 1, got {horizon_steps}")
        with ad.no_grad():
            return self.forward(context, horizon_steps).data

    def predict(self, contexts, horizon: int) -> np.ndarray:
        """Forecaster interface: ``horizon`` observed steps, rounded up to whole blocks then cut."""
        steps = -(-int(horizon) // self.cfg.block_len)
        return self.forecast(contexts, steps)[..., :horizon]

    def gates(self) -> dict:
        return self.field.gates()

    # -- persistence -----------------------------------------------------------

    def state_arrays(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_arrays(self, arrays: dict) -> None:
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ShapeError(f"parameter {k!r}: got {arrays[k].shape}, expected {p.shape}")
            p.data = arrays[k].copy()

    def save(self, path) -> None:
        ad.save_parameters(self.params, path, extra={"config": self.cfg.to_dict()})

    @classmethod
    def load(cls, path, graph: Graph) -> "OpinnModel":
        arrays, extra = ad.load_parameters(path)
        model = cls(graph, OpinnConfig.from_dict(extra.get("config", {})))
        ad.load_parameters(path, into=model.params)
        return model


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)
    initial_val_rmse: float = float("nan")
    best_epoch: int = -1
    best_val_rmse: float = float("inf")
    gates: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _val_rmse(model: OpinnModel, ctx, tgt, steps: int, batch=64) -> float:
    sq, count = 0.0, 0
    for i in range(0, len(ctx), batch):
        d = model.forecast(ctx[i:i + batch], steps) - tgt[i:i + batch]
        sq += float(np.sum(d * d))
        count += d.size
    return float(np.sqrt(sq / count))


def train(model: OpinnModel, opinions, cfg: OpinnConfig | None = None,
          split: SplitSpec = SplitSpec()) -> TrainReport:
    """Mini-batch Adam on MSE over stride-1 training windows; keeps the best-validation weights."""
    cfg = cfg or model.cfg
    _alloc.keep_heap_mapped()
    opinions = np.asarray(opinions.opinions if hasattr(opinions, "opinions") else opinions, dtype=float)
    c = cfg.context_len
    horizon = cfg.horizon_steps * cfg.block_len
    n_steps = opinions.shape[1]
    train_idx = window_starts(n_steps, split, "train", c, horizon)
    val_idx = window_starts(n_steps, split, "val", c, horizon)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise InvalidParameterError(
            f"{n_steps} columns cannot hold train and validation windows of length {c + horizon}"
        )
    x_tr, y_tr = gather_windows(opinions, train_idx, c, horizon)
    x_va, y_va = gather_windows(opinions, val_idx, c, horizon)

    model.adam.learning_rate = cfg.learning_rate
    model.adam.weight_decay = cfg.weight_decay
    rng = _rng.stream(cfg.seed, "batching")
    report = TrainReport()
    report.initial_val_rmse = report.best_val_rmse = _val_rmse(model, x_va, y_va, cfg.horizon_steps)
    best = model.state_arrays()
    report.best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_idx))
        total, cells = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            sel = order[i:i + cfg.batch_size]
            with ad.Tape() as tape:
                pred = model.forward(x_tr[sel], cfg.horizon_steps)
                loss = ad.mse(pred, y_tr[sel])
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            grads = tape.backward(loss, model.params)
            ad.adam_step(model.adam, model.params, grads)
            total += value * pred.data.size
            cells += pred.data.size
        report.train_loss.append(total / cells)
        val = _val_rmse(model, x_va, y_va, cfg.horizon_steps)
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation RMSE at epoch {epoch}")
        report.val_rmse.append(val)
        if val < report.best_val_rmse:
            report.best_val_rmse, report.best_epoch = val, epoch
            best = model.state_arrays()
        log.info("epoch %d train_mse %.6g val_rmse %.6g", epoch, report.train_loss[-1], val)

    model.load_state_arrays(best)
    report.gates = model.gates()
    return report


def grid_search(graph: Graph, opinions, base: OpinnConfig, space: dict,
                split: SplitSpec = SplitSpec()) -> tuple[OpinnConfig, list]:
    """Train every combination of ``space`` keys ``learning_rate``, ``hidden_dim``, ``batch_size``.

    Returns the config with the lowest best-validation RMSE (ties: smaller
    hidden_dim, then smaller batch_size) and a record per combination.
    Combinations whose training diverges are recorded with ``val_rmse=None``.
    """
    keys = ("learning_rate", "hidden_dim", "batch_size")
    grids = [list(space.get(k, [getattr(base, k)])) for k in keys]
    if not all(grids):
        raise InvalidParameterError("grid search space has an empty axis")
    records = []
    for combo in itertools.product(*grids):
        cfg = replace(base, **dict(zip(keys, combo)))
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                rep = train(OpinnModel(graph, cfg), opinions, cfg, split)
            score = rep.best_val_rmse if np.isfinite(rep.best_val_rmse) else None
        except DivergenceError:
            score = None
        records.append({**dict(zip(keys, combo)), "val_rmse": score})
    ok = [r for r in records if r["val_rmse"] is not None]
    if not ok:
        raise DivergenceError("every grid point diverged")
    best = min(ok, key=lambda r: (r["val_rmse"], r["hidden_dim"], r["batch_size"]))
    return replace(base, **{k: best[k] for k in keys}), records


def clone(model: OpinnModel) -> OpinnModel:
    out = OpinnModel(model.graph, model.cfg)
    out.load_state_arrays(model.state_arrays())
    out.adam = copy.deepcopy(model.adam)
    return out
