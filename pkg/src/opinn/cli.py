"""Command-line entry point: ``opinn <subcommand> ...``.

Every subcommand accepts ``--config FILE`` (JSON). Values are resolved as
built-in defaults, then the config file, then explicit flags. The effective
settings are echoed into the ``meta.json`` written next to every output.

Exit codes: 0 success, 2 invalid arguments, 3 data error, 4 numerical divergence.
Set ``OPINN_NUM_THREADS`` to cap BLAS worker threads.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import autodiff as ad
from . import classical, synthgen
from .dynamics import ABLATIONS
from .errors import (
    DatasetFormatError,
    DegenerateInputError,
    DivergenceError,
    InvalidParameterError,
    NonConvergenceError,
    ShapeError,
)
from .evaluation import (
    SPLIT_KINDS,
    EvalReport,
    MechanicalBaseline,
    SplitSpec,
    baseline_parameters,
    evaluate,
    tune_baseline,
)
from .model import ENCODERS, SEARCH_SPACE, OpinnConfig, OpinnModel, grid_search, train
from .odesolve import METHODS, SolverConfig

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
THREADS_ENV = "OPINN_NUM_THREADS"

FJ_ALPHA_GRID = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9)
HK_EPSILON_GRID = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0)


class UsageError(Exception):
    """Bad flag or config value detected after argparse."""


# -- helpers ----------------------------------------------------------------


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind.__name__} values, got {text!r}")
    return parse


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    return doc


def _resolve(args, keys, config: dict) -> dict:
    """Config-file values overridden by any flag the user actually passed."""
    out = {k: config[k] for k in keys if k in config}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _load_data(path):
    if path is None:
        raise UsageError("--data is required")
    return synthgen.load_dataset(path)


# -- model configuration -----------------------------------------------------

_MODEL_FLAGS = {
    # flag dest -> OpinnConfig field
    "hidden_dim": "hidden_dim",
    "context_len": "context_len",
    "block_len": "block_len",
    "horizon_steps": "horizon_steps",
    "encoder": "encoder",
    "reaction": "reaction",
    "ablation": "ablation",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "weight_decay": "weight_decay",
    "seed": "seed",
}
_SOLVER_FLAGS = {"solver": "method", "step_size": "step_size", "rtol": "rtol", "atol": "atol"}


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--hidden-dim", type=int)
    g.add_argument("--context-len", type=int)
    g.add_argument("--block-len", type=int)
    g.add_argument("--horizon-steps", type=int, help="system steps predicted per training window")
    g.add_argument("--encoder", choices=ENCODERS)
    g.add_argument("--reaction", choices=("source", "linear", "nonlinear"))
    g.add_argument("--ablation", choices=ABLATIONS)
    g.add_argument("--solver", choices=METHODS)
    g.add_argument("--step-size", type=float)
    g.add_argument("--rtol", type=float)
    g.add_argument("--atol", type=float)
    g.add_argument("--lr", type=float, help="learning rate")
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--split", choices=sorted(SPLIT_KINDS))


def _model_config(args, config: dict) -> tuple[OpinnConfig, SplitSpec]:
    cfg_doc = dict(config.get("model", {}))
    solver_doc = dict(cfg_doc.pop("solver", {}))
    for dest, name in _SOLVER_FLAGS.items():
        if getattr(args, dest, None) is not None:
            solver_doc[name] = getattr(args, dest)
    for dest, name in _MODEL_FLAGS.items():
        if getattr(args, dest, None) is not None:
            cfg_doc[name] = getattr(args, dest)
    known = {f.name for f in fields(OpinnConfig)}
    unknown = set(cfg_doc) - known
    if unknown:
        raise UsageError(f"unknown model config keys {sorted(unknown)}")
    unknown = set(solver_doc) - {f.name for f in fields(SolverConfig)}
    if unknown:
        raise UsageError(f"unknown solver config keys {sorted(unknown)}")
    cfg = OpinnConfig(**{**cfg_doc, "solver": SolverConfig(**solver_doc)})
    split = SplitSpec.of(args.split or config.get("split", "standard"))
    return cfg, split


def _label(data, override=None) -> str:
    return override or data.meta.get("pattern") or "dataset"


# -- subcommands ---------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    config = _load_config(args.config)
    keys = ("pattern", "nodes", "m_ba", "lam", "epsilon", "eta", "raw_steps", "target_steps", "seed")
    eff = _resolve(args, keys, config)
    pattern = eff.pop("pattern", "consensus")
    if "nodes" in eff:
        eff["n"] = eff.pop("nodes")
    cfg = synthgen.SynthConfig.for_pattern(pattern, **eff)
    data = synthgen.generate(cfg)
    out = synthgen.save_dataset(data, args.out)
    print(f"wrote {data.n_users} users x {data.n_steps} steps ({cfg.pattern}) to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    eff = _resolve(args, ("model", "steps", "alpha", "epsilon", "delta", "seed", "start_column"), config)
    model = eff.pop("model", None)
    steps = eff.pop("steps", None)
    if model is None or steps is None:
        raise UsageError("--model and --steps are required")
    start = eff.pop("start_column", 0)
    data = synthgen.load_dataset(args.input)
    if not 0 <= start < data.n_steps:
        raise UsageError(f"--start-column {start} outside 0..{data.n_steps - 1}")
    cfg = classical.ClassicalConfig(model=model, **eff)
    series = classical.simulate(data.graph, data.opinions[:, start], cfg, steps)
    meta = {
        "source": str(args.input),
        "source_meta": data.meta,
        "simulation": {**asdict(cfg), "steps": steps, "start_column": start},
    }
    out = synthgen.save_dataset(synthgen.Dataset(data.graph, series, meta), args.out)
    print(f"wrote {model} trajectory ({series.shape[1]} columns) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args.config)
    cfg, split = _model_config(args, config)
    data = _load_data(args.data)
    model = OpinnModel(data.graph, cfg)
    report = train(model, data.opinions, cfg, split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ad.save_parameters(model.params, out / "checkpoint.json",
                       extra={"config": cfg.to_dict(), "label": _label(data, args.label),
                              "split": split.kind})
    (out / "train_report.json").write_text(report.to_json() + "\n")
    _write_json(out / "meta.json", {"command": "train", "data": str(args.data), "split": split.kind,
                                    "config": cfg.to_dict(), "dataset_meta": data.meta})
    g = report.gates
    print(f"best epoch {report.best_epoch}: val RMSE {report.best_val_rmse:.6f} "
          f"(initial {report.initial_val_rmse:.6f}); omega {g['omega']:.4f} delta {g['delta']:.4f}")
    return EXIT_OK


def _load_checkpoint(path, graph) -> OpinnModel:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(path, "checkpoint not found")
    return OpinnModel.load(path, graph)


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    eff = _resolve(args, ("horizons", "baselines", "context_len", "alpha", "epsilon", "tune"), config)
    horizons = eff.get("horizons", [30])
    baselines = eff.get("baselines", [])
    context_len = eff.get("context_len", 30)
    split = SplitSpec.of(args.split or config.get("split", "standard"))
    data = _load_data(args.data)
    if not args.checkpoint and not baselines:
        raise UsageError("nothing to evaluate: pass --checkpoint and/or --baselines")
    report = EvalReport()
    tuned, used = {}, {}
    for path in args.checkpoint or []:
        model = _load_checkpoint(path, data.graph)
        name = "OPINN" if model.cfg.ablation == "full" else f"OPINN-{model.cfg.ablation}"
        report.add(name, model.cfg.seed, evaluate(model, data.opinions, split, horizons, model.cfg.context_len))
    for b in baselines:
        if b not in ("voter", "degroot", "fj", "hk"):
            raise UsageError(f"unknown baseline {b!r}")
        if b in ("fj", "hk") and eff.get("tune"):
            grid = FJ_ALPHA_GRID if b == "fj" else HK_EPSILON_GRID
            bl, _ = tune_baseline(b, data.graph, data.opinions, split, horizons[0], context_len, grid)
            tuned[b] = bl.alpha if b == "fj" else bl.epsilon
        else:
            alpha, epsilon = baseline_parameters(data.meta)
            bl = MechanicalBaseline(b, data.graph, alpha=eff.get("alpha", alpha),
                                    epsilon=eff.get("epsilon", epsilon))
        used[bl.name] = {"alpha": bl.alpha, "epsilon": bl.epsilon}
        report.add(bl.name, 0, evaluate(bl, data.opinions, split, horizons, context_len))
    if args.out:
        report.write(args.out)
        _write_json(Path(args.out) / "meta.json", {
            "command": "evaluate", "data": str(args.data), "split": split.kind,
            "checkpoints": [str(p) for p in args.checkpoint or []],
            "settings": {**eff, "horizons": horizons, "baselines": baselines, "context_len": context_len},
            "tuned_baseline_parameters": tuned,
            "baseline_parameters": used,
        })
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _load_config(args.config)
    cfg, split = _model_config(args, config)
    horizons = args.horizons or config.get("horizons", [30])
    seeds = args.seeds or config.get("seeds", [cfg.seed])
    data = _load_data(args.data)
    out = Path(args.out)
    report = EvalReport()
    gates = {}
    for variant in ABLATIONS:
        for seed in seeds:
            vcfg = replace(cfg, ablation=variant, seed=seed)
            model = OpinnModel(data.graph, vcfg)
            train(model, data.opinions, vcfg, split)
            report.add(variant, seed, evaluate(model, data.opinions, split, horizons, vcfg.context_len))
            gates[f"{variant}/seed{seed}"] = model.gates()
            if args.keep_checkpoints:
                model.save(out / f"{variant}_seed{seed}.json")
    report.write(out)
    _write_json(out / "meta.json", {"command": "ablate", "data": str(args.data), "split": split.kind,
                                    "config": cfg.to_dict(), "seeds": seeds, "horizons": horizons,
                                    "gates": gates})
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_grid_search(args) -> int:
    config = _load_config(args.config)
    cfg, split = _model_config(args, config)
    grid = dict(SEARCH_SPACE) if args.full_space else {}
    grid.update(config.get("grid", {}))
    for dest, key in (("lr_grid", "learning_rate"), ("dim_grid", "hidden_dim"), ("batch_grid", "batch_size")):
        if getattr(args, dest) is not None:
            grid[key] = getattr(args, dest)
    data = _load_data(args.data)
    best, records = grid_search(data.graph, data.opinions, cfg, grid, split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["learning_rate", "hidden_dim", "batch_size", "val_rmse"],
                       lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({**r, "val_rmse": "diverged" if r["val_rmse"] is None else repr(r["val_rmse"])})
    (out / "grid.csv").write_text(buf.getvalue())
    _write_json(out / "best_config.json", best.to_dict())
    _write_json(out / "meta.json", {"command": "grid-search", "data": str(args.data), "split": split.kind,
                                    "base_config": cfg.to_dict(), "grid": grid})
    sys.stdout.write(buf.getvalue())
    print(f"best: learning_rate={best.learning_rate} hidden_dim={best.hidden_dim} batch_size={best.batch_size}")
    return EXIT_OK


def gate_table(rows) -> str:
    """Render ``(label, gates)`` pairs as a fixed-width table, two decimals."""
    head = ("Dataset", "Diffusion weight (omega)", "Convection weight (1-omega)", "Reaction weight (delta)")
    width = max([len(head[0])] + [len(str(lbl)) for lbl, _ in rows])
    lines = [f"{head[0]:<{width}}  {head[1]:>24}  {head[2]:>27}  {head[3]:>23}"]
    for lbl, g in rows:
        lines.append(f"{lbl:<{width}}  {g['omega']:>24.2f}  {g['one_minus_omega']:>27.2f}  {g['delta']:>23.2f}")
    return "\n".join(lines) + "\n"


def read_gates(path) -> tuple[str, dict]:
    """Gate values straight from a checkpoint (no graph needed)."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(path, "checkpoint not found")
    arrays, extra = ad.load_parameters(path)
    try:
        w = float(ad.logistic(arrays["field.gate_omega_raw"]))
        d = float(ad.logistic(arrays["field.gate_delta_raw"]))
    except KeyError as exc:
        raise DatasetFormatError(path, f"checkpoint lacks {exc.args[0]}") from None
    return extra.get("label") or path.stem, {"omega": w, "one_minus_omega": 1.0 - w, "delta": d}


def cmd_inspect_gates(args) -> int:
    rows = [read_gates(p) for p in args.checkpoints]
    if args.labels:
        if len(args.labels) != len(rows):
            raise UsageError("--labels needs one label per checkpoint")
        rows = [(lbl, g) for lbl, (_, g) in zip(args.labels, rows)]
    if args.json:
        print(json.dumps({lbl: g for lbl, g in rows}, indent=2))
    else:
        sys.stdout.write(gate_table(rows))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opinn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")

    s = sub.add_parser("gen-synthetic", help="generate a synthetic dataset directory")
    s.add_argument("--config")
    s.add_argument("--pattern", choices=sorted(synthgen.PATTERN_DEFAULTS))
    s.add_argument("--nodes", type=int)
    s.add_argument("--m-ba", type=int, help="BA attachment count")
    s.add_argument("--lam", type=float, help="stubbornness weight on the initial opinion")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--eta", type=float, help="noise standard deviation")
    s.add_argument("--raw-steps", type=int)
    s.add_argument("--target-steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("simulate", help="roll a classical model forward from a dataset column")
    s.add_argument("--config")
    s.add_argument("--model", choices=classical.MODELS)
    s.add_argument("--steps", type=int)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--start-column", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train an OPINN model and save a checkpoint")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.add_argument("--label", help="name shown by inspect-gates")
    _add_model_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score checkpoints and mechanical baselines on the test span")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--checkpoint", action="append")
    s.add_argument("--baselines", type=_csv_list(str), help="comma list of voter,degroot,fj,hk")
    s.add_argument("--horizons", type=_csv_list(int))
    s.add_argument("--context-len", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--tune", action="store_true", default=None,
                   help="pick FJ alpha / HK epsilon by validation RMSE")
    s.add_argument("--split", choices=sorted(SPLIT_KINDS))
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train full / no_dif / no_con / no_rea and report test metrics")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", type=_csv_list(int))
    s.add_argument("--horizons", type=_csv_list(int))
    s.add_argument("--keep-checkpoints", action="store_true")
    _add_model_flags(s)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("grid-search", help="select learning rate, hidden size and batch size")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.add_argument("--lr-grid", type=_csv_list(float))
    s.add_argument("--dim-grid", type=_csv_list(int))
    s.add_argument("--batch-grid", type=_csv_list(int))
    s.add_argument("--full-space", action="store_true",
                   help="search every axis over the full default space (100 runs)")
    _add_model_flags(s)
    s.set_defaults(func=cmd_grid_search)

    s = sub.add_parser("inspect-gates", help="print the learned gate values of checkpoints")
    s.add_argument("checkpoints", nargs="+")
    s.add_argument("--labels", type=_csv_list(str))
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_inspect_gates)
    return p


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _exit_code(exc: BaseException) -> int | None:
    if isinstance(exc, (DivergenceError, NonConvergenceError)):
        return EXIT_DIVERGENCE
    if isinstance(exc, (DatasetFormatError, DegenerateInputError, ShapeError, FileNotFoundError)):
        return EXIT_DATA
    if isinstance(exc, (InvalidParameterError, UsageError)):
        return EXIT_ARGS
    return None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limit is not None:
                limit.restore_original_limits()
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"opinn {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
