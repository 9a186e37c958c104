"""Metrics, chronological splits, mechanical baselines and the evaluation harness.

A forecaster is any object with ``predict(contexts, horizon)`` mapping a
``(B, N, c)`` batch of context windows to ``(B, N, horizon)`` predictions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classical
from .errors import InvalidParameterError, ShapeError
from .graph import Graph

DISPLAY_SCALE = 100.0  # tables report metrics x 10^-2


def rmse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f"rmse: shapes {pred.shape} and {truth.shape} differ")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f"mae: shapes {pred.shape} and {truth.shape} differ")
    return float(np.mean(np.abs(pred - truth)))


SPLIT_KINDS = {"standard": (0.6, 0.2, 0.2), "fewshot": (0.3, 0.1, 0.6)}


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train / validation / test split of the time axis."""

    ratios: tuple = SPLIT_KINDS["standard"]
    kind: str = "standard"

    @classmethod
    def of(cls, kind: str) -> "SplitSpec":
        if kind not in SPLIT_KINDS:
            raise InvalidParameterError(f"unknown split {kind!r}; choose from {sorted(SPLIT_KINDS)}")
        return cls(SPLIT_KINDS[kind], kind)

    def __post_init__(self):
        r = tuple(float(v) for v in self.ratios)
        if len(r) != 3 or min(r) <= 0 or abs(sum(r) - 1.0) > 1e-9:
            raise InvalidParameterError(f"split ratios must be 3 positive values summing to 1, got {r}")

    def bounds(self, n_steps: int) -> tuple[int, int]:
        """Column indices ``(train_end, val_end)``; spans are ``[0, train_end)``, ``[train_end, val_end)``, ``[val_end, T)``."""
        tr = int(round(n_steps * self.ratios[0]))
        va = int(round(n_steps * (self.ratios[0] + self.ratios[1])))
        return tr, va


def window_starts(n_steps: int, split: SplitSpec, part: str, context: int, horizon: int) -> np.ndarray:
    """Start columns of stride-1 windows ``[s, s + context + horizon)``.

    Training windows lie wholly inside the training span. Validation and test
    windows keep their *targets* inside their span; the context may reach
    back into earlier (already observed) columns.
    """
    tr, va = split.bounds(n_steps)
    if part == "train":
        lo, hi = 0, tr - context - horizon
    elif part == "val":
        lo, hi = max(tr - context, 0), va - context - horizon
    elif part == "test":
        lo, hi = max(va - context, 0), n_steps - context - horizon
    else:
        raise InvalidParameterError(f"unknown split part {part!r}")
    if hi < lo:
        return np.zeros(0, dtype=np.int64)
    return np.arange(lo, hi + 1)


def gather_windows(opinions: np.ndarray, starts, context: int, horizon: int):
    """Stack ``(B, N, context)`` contexts and ``(B, N, horizon)`` targets."""
    starts = np.asarray(starts, dtype=np.int64)
    idx_c = starts[:, None] + np.arange(context)
    idx_t = starts[:, None] + context + np.arange(horizon)
    return (np.moveaxis(opinions[:, idx_c], 1, 0), np.moveaxis(opinions[:, idx_t], 1, 0))


class MechanicalBaseline:
    """Classical update rule stepped once per observed column from the last context value.

    FJ anchors on the first column of the context window.
    """

    def __init__(self, model: str, graph: Graph, alpha=0.1, epsilon=0.3, seed=0):
        if model not in ("voter", "degroot", "fj", "hk"):
            raise InvalidParameterError(f"unsupported baseline {model!r}")
        self.model, self.graph = model, graph
        self.alpha, self.epsilon, self.seed = alpha, epsilon, seed

    @property
    def name(self) -> str:
        return self.model.upper() if self.model in ("fj", "hk") else self.model.capitalize()

    def predict(self, contexts, horizon: int) -> np.ndarray:
        contexts = np.asarray(contexts, dtype=float)
        out = np.empty(contexts.shape[:2] + (horizon,))
        cfg = classical.ClassicalConfig(
            model=self.model, alpha=self.alpha, epsilon=self.epsilon, seed=self.seed
        )
        for b, ctx in enumerate(contexts):
            x = ctx[:, -1]
            if self.model == "fj":
                series = np.empty((len(x), horizon))
                x0 = ctx[:, 0]
                for k in range(horizon):
                    x = classical.step_fj(self.graph, x, x0, self.alpha)
                    series[:, k] = x
            else:
                series = classical.simulate(self.graph, x, cfg, horizon)[:, 1:]
            out[b] = series
        return out


def baseline_parameters(meta: dict, alpha: float = 0.1, epsilon: float = 0.3) -> tuple[float, float]:
    """FJ ``alpha`` and HK ``epsilon`` for a dataset: its generating stubbornness and
    confidence bound when ``meta`` records them, else the given fallbacks."""
    cfg = meta.get("config", {}) if isinstance(meta, dict) else {}
    return float(cfg.get("lam", alpha)), float(cfg.get("epsilon", epsilon))


def evaluate(forecaster, opinions, split: SplitSpec, horizons, context_len: int = 30,
             batch: int = 64) -> dict:
    """Score ``forecaster`` on every test window; returns ``{horizon: {"rmse", "mae"}}``.

    All predicted cells of all windows are pooled before computing the metrics.
    """
    opinions = np.asarray(opinions, dtype=float)
    result = {}
    for h in horizons:
        starts = window_starts(opinions.shape[1], split, "test", context_len, h)
        if len(starts) == 0:
            raise InvalidParameterError(
                f"no test window fits context {context_len} + horizon {h} in {opinions.shape[1]} columns"
            )
        sq = ab = 0.0
        count = 0
        for i in range(0, len(starts), batch):
            ctx, tgt = gather_windows(opinions, starts[i:i + batch], context_len, h)
            pred = np.asarray(forecaster.predict(ctx, h), dtype=float)
            if pred.shape != tgt.shape:
                raise ShapeError(f"forecaster returned {pred.shape}, expected {tgt.shape}")
            d = pred - tgt
            sq += float(np.sum(d * d))
            ab += float(np.sum(np.abs(d)))
            count += d.size
        result[int(h)] = {"rmse": float(np.sqrt(sq / count)), "mae": ab / count}
    return result


def tune_baseline(model: str, graph: Graph, opinions, split: SplitSpec, horizon: int,
                  context_len: int, grid) -> tuple[MechanicalBaseline, float]:
    """Pick the baseline parameter (alpha for FJ, epsilon for HK) with the lowest validation RMSE."""
    key = {"fj": "alpha", "hk": "epsilon"}[model]
    opinions = np.asarray(opinions, dtype=float)
    starts = window_starts(opinions.shape[1], split, "val", context_len, horizon)
    ctx, tgt = gather_windows(opinions, starts, context_len, horizon)
    best, best_err = None, np.inf
    for value in grid:
        bl = MechanicalBaseline(model, graph, **{key: value})
        err = rmse(bl.predict(ctx, horizon), tgt)
        if err < best_err:
            best, best_err = bl, err
    return best, best_err


@dataclass
class EvalReport:
    """Per-model, per-horizon metrics over one or more runs (seeds)."""

    runs: dict = field(default_factory=dict)  # model -> seed -> horizon -> {"rmse", "mae"}

    def add(self, model: str, seed: int, scores: dict) -> None:
        self.runs.setdefault(model, {})[int(seed)] = {int(h): dict(v) for h, v in scores.items()}

    @property
    def horizons(self) -> list[int]:
        hs = set()
        for per_seed in self.runs.values():
            for scores in per_seed.values():
                hs.update(scores)
        return sorted(hs)

    def summary(self) -> dict:
        """``model -> horizon -> metric -> (mean, std)`` with seeds in sorted order."""
        out = {}
        for model, per_seed in self.runs.items():
            out[model] = {}
            for h in self.horizons:
                out[model][h] = {}
                for metric in ("rmse", "mae"):
                    vals = np.array([per_seed[s][h][metric] for s in sorted(per_seed) if h in per_seed[s]])
                    out[model][h][metric] = (float(vals.mean()), float(vals.std()))
        return out

    def to_json(self) -> str:
        summ = self.summary()
        doc = {
            "scale": "x1e-2",
            "seeds": {m: sorted(s) for m, s in self.runs.items()},
            "models": {
                m: {
                    f"{h}T": {
                        metric: {"mean": mu * DISPLAY_SCALE, "std": sd * DISPLAY_SCALE}
                        for metric, (mu, sd) in hv.items()
                    }
                    for h, hv in per_h.items()
                }
                for m, per_h in summ.items()
            },
        }
        return json.dumps(doc, indent=2)

    def to_csv(self) -> str:
        summ = self.summary()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = [f"{h}T_{metric}" for h in self.horizons for metric in ("rmse", "mae")]
        w.writerow(["model"] + cols + [c + "_std" for c in cols])
        for m, per_h in summ.items():
            means = [f"{per_h[h][metric][0] * DISPLAY_SCALE:.4f}" for h in self.horizons for metric in ("rmse", "mae")]
            stds = [f"{per_h[h][metric][1] * DISPLAY_SCALE:.4f}" for h in self.horizons for metric in ("rmse", "mae")]
            w.writerow([m] + means + stds)
        return buf.getvalue()

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(self.to_json() + "\n")
        (directory / "report.csv").write_text(self.to_csv())
