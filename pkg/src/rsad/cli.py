"""Command-line orchestration: synthetic data generation, training, detection,
and gradient verification, with reproducible file outputs.

Exit codes: 0 success, 2 configuration error, 3 data/input error, 4 numerical
divergence during training, 5 verification failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import detection, model as model_mod, training
from .config import ConfigError, RunConfig, default_config, load_config, resolve_seed, write_resolved
from .data import DataError, SeriesSet
from .model import ModelConfig
from .numerics import finite_diff_grad, max_relative_error
from .training import TrainingDivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_VERIFICATION = 5

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_PARAM_CAP = 5000


def write_series_csv(path, x: np.ndarray) -> None:
    """Series matrix as one timestamp per row; floats use shortest
    round-trip formatting so identical data gives identical bytes."""
    m = x.shape[0]
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(",".join(f"c{i}" for i in range(m)) + "\n")
        for t in range(x.shape[1]):
            fh.write(",".join(repr(float(v)) for v in x[:, t]) + "\n")


def read_series_csv(path) -> np.ndarray:
    try:
        data = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.float64)
    except OSError as err:
        raise DataError(f"cannot read series csv {path}: {err}") from err
    if data.ndim == 1:
        data = data[:, None]
    if data.size == 0 or not np.all(np.isfinite(data)):
        raise DataError(f"series csv {path} is empty or contains non-finite values")
    return data.T  # (m, t)


def write_labels_csv(path, labels: np.ndarray) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("label\n")
        for v in labels:
            fh.write(f"{int(v)}\n")


def read_labels_csv(path) -> np.ndarray:
    try:
        data = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.int64)
    except OSError as err:
        raise DataError(f"cannot read labels csv {path}: {err}") from err
    return np.atleast_1d(data).astype(bool)


def load_dataset(cfg: RunConfig) -> SeriesSet:
    src = cfg.data.source
    if src == "synth":
        return data_mod.synth_generate(cfg.synth.spec(), cfg.synth.seed)
    if src == "csv":
        if not cfg.data.series_csv or not cfg.data.labels_csv:
            raise ConfigError("data.source=csv requires series_csv and labels_csv paths")
        x = read_series_csv(cfg.data.series_csv)
        labels = read_labels_csv(cfg.data.labels_csv)
        if labels.shape[0] != x.shape[1]:
            raise DataError(
                f"labels length {labels.shape[0]} does not match series length {x.shape[1]}"
            )
        return SeriesSet(x=x, labels=labels, segment_bounds=[(0, x.shape[1])])
    if not cfg.data.daphnet_files:
        raise ConfigError("data.source=daphnet requires daphnet_files")
    parts = []
    for path in cfg.data.daphnet_files:
        records = data_mod.parse_daphnet(path)
        if cfg.data.decimate > 1:
            records = records[:: cfg.data.decimate]
        parts.append(data_mod.segmentize(records))
    return data_mod.concat_series(parts)


def _model_config(cfg: RunConfig, m: int) -> ModelConfig:
    return ModelConfig(
        m=m,
        w=cfg.data.window,
        h=cfg.data.horizon,
        d=cfg.model.hidden,
        mlp_hidden=cfg.model.mlp_hidden,
        reverse_reconstruction=cfg.model.reverse_reconstruction,
    )


def _init_rng(seed: int) -> np.random.Generator:
    # spawned child keeps the init stream independent of the shuffle stream
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    series = data_mod.synth_generate(cfg.synth.spec(), cfg.synth.seed)
    write_series_csv(out / "series.csv", series.x)
    write_labels_csv(out / "labels.csv", series.labels)
    write_resolved(cfg, out / "resolved_config.ini")
    print(f"wrote {series.m} channels x {series.t} steps to {out}")
    return EXIT_OK


def _prepared_splits(cfg: RunConfig, series: SeriesSet):
    train_set, val_set, test_set = data_mod.split(series, cfg.data.ratios)
    stats = data_mod.fit_normalize(train_set)
    return (
        data_mod.apply_normalize(train_set, stats),
        data_mod.apply_normalize(val_set, stats),
        data_mod.apply_normalize(test_set, stats),
        stats,
    )


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    series = load_dataset(cfg)
    train_set, val_set, _, stats = _prepared_splits(cfg, series)
    train_windows = data_mod.normal_only(
        data_mod.make_windows(train_set, cfg.data.window, cfg.data.horizon, cfg.data.train_stride)
    )
    if not train_windows:
        raise DataError("no normal training windows; all training windows carry anomalies")
    val_windows = data_mod.make_windows(
        val_set, cfg.data.window, cfg.data.horizon, cfg.data.train_stride
    )
    val_loss_windows = data_mod.normal_only(val_windows) or val_windows

    model_config = _model_config(cfg, series.m)
    params = model_mod.init_params(model_config, _init_rng(cfg.training.seed))
    params, history = training.fit(
        params, train_windows, val_loss_windows, cfg.loss, cfg.training
    )
    training.save_checkpoint(params, cfg.loss, stats, out / "checkpoint.rsad")
    training.write_history_csv(out / "history.csv", history)
    write_resolved(cfg, out / "resolved_config.ini")
    if history:
        last = history[-1]
        val_part = f" val_total={last.val.total:.4f}" if last.val else ""
        print(f"trained {len(history)} epochs; train_total={last.train.total:.4f}{val_part}")
    else:
        print("trained 0 epochs; checkpoint holds initialized weights")
    return EXIT_OK


def _select_tau(cfg, args, params, weights, val_set):
    if args.tau is not None:
        return float(args.tau), None
    if cfg.detection.tau is not None:
        return float(cfg.detection.tau), None
    val_windows = data_mod.make_windows(
        val_set, cfg.data.window, cfg.data.horizon, cfg.data.eval_stride
    )
    scores = detection.scalarize_all(
        detection.score_windows(params, val_windows), weights, cfg.detection.score_mode
    )
    labels = np.array([w.label for w in val_windows], dtype=bool)
    mode = cfg.detection.mode
    if mode == "best_f1" and not labels.any():
        warnings.warn(
            "no anomalous validation windows; falling back to percentile threshold",
            stacklevel=2,
        )
        mode = "percentile"
    tau = detection.select_threshold(
        scores, labels, mode=mode, percentile=cfg.detection.percentile
    )
    sweep = detection.threshold_sweep(scores, labels) if labels.any() else None
    return tau, sweep


def write_sweep_csv(path, sweep) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("tau,tp,fp,fn,tn,precision,recall,f1\n")
        for tau, m in sweep:
            fh.write(
                f"{tau!r},{m.tp},{m.fp},{m.fn},{m.tn},"
                f"{m.precision!r},{m.recall!r},{m.f1!r}\n"
            )


def cmd_detect(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    try:
        params, weights, stats = training.load_checkpoint(args.checkpoint)
    except OSError as err:
        raise DataError(f"cannot read checkpoint {args.checkpoint}: {err}") from err
    series = load_dataset(cfg)
    if series.m != params.config.m:
        raise DataError(
            f"dataset has {series.m} channels but checkpoint expects {params.config.m}"
        )
    if (cfg.data.window, cfg.data.horizon) != (params.config.w, params.config.h):
        raise DataError(
            f"config window/horizon ({cfg.data.window}, {cfg.data.horizon}) do not match "
            f"checkpoint ({params.config.w}, {params.config.h})"
        )
    train_set, val_set, test_set = data_mod.split(series, cfg.data.ratios)
    val_set = data_mod.apply_normalize(val_set, stats)
    test_set = data_mod.apply_normalize(test_set, stats)

    tau, sweep = _select_tau(cfg, args, params, weights, val_set)

    test_windows = data_mod.make_windows(
        test_set, cfg.data.window, cfg.data.horizon, cfg.data.eval_stride
    )
    vectors = detection.score_windows(params, test_windows)
    scalars = detection.scalarize_all(vectors, weights, cfg.detection.score_mode)
    truth = np.array([w.label for w in test_windows], dtype=bool)
    predicted = detection.classify(scalars, tau)
    metrics = detection.evaluate(predicted, truth)

    detection.write_scores_csv(out / "scores.csv", vectors, scalars, truth, predicted)
    detection.write_metrics(out / "metrics.txt", metrics, tau)
    if sweep is not None:
        write_sweep_csv(out / "threshold_sweep.csv", sweep)
    write_resolved(cfg, out / "resolved_config.ini")
    print(
        f"precision={metrics.precision:.3f} recall={metrics.recall:.3f} f1={metrics.f1:.3f}"
    )
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    gc = cfg.gradcheck
    model_config = ModelConfig(
        m=gc.m, w=gc.window, h=gc.horizon, d=gc.hidden, mlp_hidden=gc.mlp_hidden
    )
    rng = np.random.default_rng(cfg.training.seed)
    params = model_mod.init_params(model_config, rng)
    n_params = model_mod.count_params(params)
    if n_params > GRADCHECK_PARAM_CAP:
        raise ConfigError(
            f"gradcheck model has {n_params} parameters, above the cap of "
            f"{GRADCHECK_PARAM_CAP}; finite differences would be too slow"
        )
    x = rng.normal(size=(gc.m, gc.window))
    x_f = rng.normal(size=(gc.m, gc.horizon))
    grads, _, _, _ = model_mod.batch_backward(params, x[None], x_f[None], cfg.loss, reduce="sum")
    if args.perturb:
        if args.perturb not in grads:
            raise ConfigError(f"unknown gradient block {args.perturb!r}")
        grads[args.perturb] = grads[args.perturb] + 1e-2

    def loss_at() -> float:
        x_r, xf1, xf2 = model_mod.forward_full(params, x)
        return training.loss(x, x_r, x_f, xf1, xf2, cfg.loss).total

    worst = 0.0
    for name, arr in model_mod.param_blocks(params):

        def f(values, arr=arr):
            backup = arr.copy()
            arr[...] = values
            try:
                return loss_at()
            finally:
                arr[...] = backup

        numeric = finite_diff_grad(f, arr, h=1e-5)
        err = max_relative_error(grads[name], numeric)
        worst = max(worst, err)
        print(f"{name}: max relative error {err:.3e}")
    if worst < GRADCHECK_TOLERANCE:
        print(f"gradcheck passed: worst {worst:.3e} < {GRADCHECK_TOLERANCE:.0e}")
        return EXIT_OK
    print(f"gradcheck FAILED: worst {worst:.3e} >= {GRADCHECK_TOLERANCE:.0e}")
    return EXIT_VERIFICATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsad",
        description="Residual-based anomaly detection for multivariate time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="config file (INI sections)")
        p.add_argument("--out", type=str, default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score windows and evaluate against labels")
    common(p)
    p.add_argument("--checkpoint", type=str, required=True, help="trained checkpoint path")
    p.add_argument("--tau", type=float, default=None, help="explicit threshold, skips selection")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    common(p)
    p.add_argument(
        "--perturb",
        type=str,
        default=None,
        help="corrupt the named gradient block first (harness self-test)",
    )
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        cfg = resolve_seed(cfg, args.seed)
        return args.func(cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
