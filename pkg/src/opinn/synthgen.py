"""Synthetic opinion datasets on BA graphs: stubborn bounded-confidence dynamics
with Gaussian noise, linearly resampled to a fixed number of time points.

On disk a dataset is a directory with ``graph.csv`` (``u,v`` edge list),
``opinions.csv`` (header ``t0,t1,...``; row i is user i) and ``meta.json``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _rng
from .errors import DatasetFormatError, InvalidParameterError, ShapeError
from .graph import Graph, generate_ba_graph, load_edge_list, save_edge_list

PATTERN_DEFAULTS = {
    "consensus": {"lam": 0.2, "epsilon": 0.5, "eta": 0.015},
    "polarization": {"lam": 0.1, "epsilon": 0.3, "eta": 0.015},
    "clustering": {"lam": 0.15, "epsilon": 0.2, "eta": 0.015},
}

# standard chronological train / validation / test ratios, echoed in meta.json
SPLIT_RATIOS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings. ``lam`` is the stubbornness weight on the initial opinion."""

    pattern: str = "consensus"
    n: int = 10_000
    m_ba: int = 10
    lam: float = 0.2
    epsilon: float = 0.5
    eta: float = 0.015
    raw_steps: int = 50
    target_steps: int = 400
    seed: int = 0

    @classmethod
    def for_pattern(cls, pattern: str, **overrides) -> "SynthConfig":
        if pattern not in PATTERN_DEFAULTS:
            raise InvalidParameterError(
                f"unknown pattern {pattern!r}; choose from {sorted(PATTERN_DEFAULTS)}"
            )
        return cls(pattern=pattern, **{**PATTERN_DEFAULTS[pattern], **overrides})

    def validate(self) -> None:
        if self.pattern not in PATTERN_DEFAULTS:
            raise InvalidParameterError(f"unknown pattern {self.pattern!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidParameterError(f"lam must lie in [0, 1], got {self.lam}")
        if self.epsilon < 0 or self.eta < 0:
            raise InvalidParameterError("epsilon and eta must be >= 0")
        if self.raw_steps < 1:
            raise InvalidParameterError(f"raw_steps must be >= 1, got {self.raw_steps}")
        if self.target_steps < self.raw_steps + 1:
            raise InvalidParameterError(
                f"target_steps ({self.target_steps}) must be >= raw_steps + 1 ({self.raw_steps + 1})"
            )
        if self.n <= self.m_ba or self.m_ba < 1:
            raise InvalidParameterError(f"BA graph requires n > m >= 1, got n={self.n}, m={self.m_ba}")


@dataclass(eq=False)
class Dataset:
    graph: Graph
    opinions: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.opinions = np.asarray(self.opinions, dtype=float)
        if self.opinions.ndim != 2 or self.opinions.shape[0] != self.graph.n_nodes:
            raise ShapeError(
                f"opinions shape {self.opinions.shape} does not match {self.graph.n_nodes} nodes"
            )

    @property
    def n_users(self) -> int:
        return self.opinions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.opinions.shape[1]


def simulate_raw(g: Graph, x0: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Run the noisy stubborn bounded-confidence recurrence; returns ``N x (raw_steps + 1)``.

    Each step: neighbours j of i with ``|x_i - x_j| <= eps`` are averaged
    (own opinion if none), mixed with the initial opinion by ``lam``, noised
    by ``eta * N(0, 1)`` and clipped to [-1, 1].
    """
    u = np.concatenate([g.edges[:, 0], g.edges[:, 1]])
    v = np.concatenate([g.edges[:, 1], g.edges[:, 0]])
    n = g.n_nodes
    out = np.empty((n, cfg.raw_steps + 1))
    out[:, 0] = x = x0
    # one draw per (user, step), user-major: noise[i, t-1] feeds step t of user i
    noise = rng.standard_normal((n, cfg.raw_steps))
    for t in range(1, cfg.raw_steps + 1):
        close = np.abs(x[u] - x[v]) <= cfg.epsilon
        count = np.bincount(u[close], minlength=n)
        total = np.bincount(u[close], weights=x[v[close]], minlength=n)
        nbr = np.where(count > 0, total / np.maximum(count, 1), x)
        x = np.clip(cfg.lam * x0 + (1.0 - cfg.lam) * nbr + cfg.eta * noise[:, t - 1], -1.0, 1.0)
        out[:, t] = x
    return out


def interpolate_linear(series, target: int) -> np.ndarray:
    """Resample each row onto ``target`` evenly spaced points spanning the original index range."""
    series = np.asarray(series, dtype=float)
    if series.ndim != 2:
        raise ShapeError(f"series must be 2-D, got shape {series.shape}")
    t_in = series.shape[1]
    if target < 2 or t_in < 2:
        raise InvalidParameterError(f"need target >= 2 and >= 2 input columns, got {target}, {t_in}")
    if target < t_in:
        raise InvalidParameterError(f"target ({target}) must be >= input columns ({t_in})")
    pos = np.linspace(0.0, t_in - 1, target)
    left = np.minimum(np.floor(pos).astype(np.int64), t_in - 2)
    frac = pos - left
    out = series[:, left] * (1.0 - frac) + series[:, left + 1] * frac
    # exact endpoints regardless of rounding in the blend
    out[:, 0] = series[:, 0]
    out[:, -1] = series[:, -1]
    exact = frac == 0.0
    out[:, exact] = series[:, left[exact]]
    return out


def generate(cfg: SynthConfig) -> Dataset:
    cfg.validate()
    g = generate_ba_graph(cfg.n, cfg.m_ba, seed=cfg.seed)
    x0 = _rng.stream(cfg.seed, "init-opinions").uniform(-1.0, 1.0, cfg.n)
    raw = simulate_raw(g, x0, cfg, _rng.stream(cfg.seed, "noise"))
    opinions = interpolate_linear(raw, cfg.target_steps)
    meta = {"pattern": cfg.pattern, "config": asdict(cfg), "seed": cfg.seed, "split_ratios": list(SPLIT_RATIOS)}
    return Dataset(g, opinions, meta)


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(d: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_edge_list(d.graph, directory / "graph.csv")
    with (directory / "opinions.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"t{k}" for k in range(d.n_steps)])
        for row in d.opinions:
            w.writerow([_fmt(v) for v in row])
    meta = {**d.meta, "n_nodes": d.graph.n_nodes}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetFormatError(directory, "dataset directory not found")
    meta_path = directory / "meta.json"
    meta = {}
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(meta_path, exc.msg, line=exc.lineno) from None
    op_path = directory / "opinions.csv"
    if not op_path.exists():
        raise DatasetFormatError(op_path, "file not found")
    rows = []
    with op_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DatasetFormatError(op_path, "missing header", line=1)
        expected = [f"t{k}" for k in range(len(header))]
        if header != expected:
            raise DatasetFormatError(op_path, "header must be t0,t1,...,t{T-1}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetFormatError(
                    op_path, f"expected {len(header)} fields, got {len(row)}", line=lineno
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DatasetFormatError(op_path, "non-numeric opinion value", line=lineno) from None
    opinions = np.array(rows, dtype=float).reshape(len(rows), len(header))
    n_nodes = meta.get("n_nodes", len(rows))
    graph = load_edge_list(directory / "graph.csv", n_nodes=n_nodes)
    if graph.n_nodes != len(rows):
        raise DatasetFormatError(op_path, f"{len(rows)} user rows but graph has {graph.n_nodes} nodes")
    meta.pop("n_nodes", None)
    return Dataset(graph, opinions, meta)


def with_meta(d: Dataset, **extra) -> Dataset:
    return replace(d, meta={**d.meta, **extra})


def cluster_count(x, gap: float = 0.1) -> int:
    """Number of groups in sorted ``x`` when consecutive differences above ``gap`` split groups."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    if x.size == 0:
        return 0
    return int(np.sum(np.diff(x) > gap)) + 1


def histogram_modes(x, bins: int = 20, lo: float = -1.0, hi: float = 1.0) -> tuple[np.ndarray, list[int]]:
    """Histogram counts and indices of local maxima (plateaus count once, at their left edge)."""
    counts, _ = np.histogram(np.asarray(x, dtype=float).ravel(), bins=bins, range=(lo, hi))
    padded = np.concatenate([[-1], counts, [-1]])
    peaks = []
    i = 1
    while i <= bins:
        j = i
        while j < bins and padded[j + 1] == padded[i]:
            j += 1
        if padded[i] > 0 and padded[i] > padded[i - 1] and padded[i] > padded[j + 1]:
            peaks.append(i - 1)
        i = j + 1
    return counts, peaks


def is_bimodal(x, bins: int = 20) -> bool:
    """True when two histogram peaks have at least one empty bin between them."""
    counts, peaks = histogram_modes(x, bins)
    return any(
        np.any(counts[a + 1 : b] == 0) for k, a in enumerate(peaks) for b in peaks[k + 1 :]
    )
