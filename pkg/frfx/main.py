"""Command-line entry point: ``python -m frfx.main <command> [flags]``."""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from .config import CLASS_NAMES, LOG_LEVEL, RunConfig
from .errors import CorruptModel, DegenerateScores, FrfxError, InvalidSpec, IoError
from .explain import (
    bubble_data,
    compute_fpcph,
    fpdp_all,
    importance_table,
    reconstruction_bands,
    scores_by_class,
)
from .fda_core import explained_variance, fit_fpca, variance_captured
from .frf import accuracy, describe_tree, fit_tree, oob_error
from .persist import export_artifact, load_artifact, load_model, save_model
from .pipeline import (
    SCALES,
    ExplainPipeline,
    FittedRun,
    fpca_frames,
    predictions_frame,
    scores_for,
    smooth_dataset,
    smoothed_frame,
    write_frame,
)
from .render import render_svg, spec_for
from .ucr import load_ucr

log = logging.getLogger("main")

EXPLAIN_TARGETS = ("pdp", "heatmap", "importance", "violin", "bubble", "bands")

# RunConfig field -> flag, for usage messages
_FLAG = {name: "--" + name.replace("_", "-") for name in RunConfig.model_fields}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--train", help="UCR training file")
    p.add_argument("--test", help="UCR test file")
    p.add_argument("--out", default="frfx_out", help="output directory (or .svg file for render)")
    p.add_argument("--model", help="model JSON (written by train, read by predict/explain)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-basis", type=int, default=None)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--penalty", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="number of FPCs")
    p.add_argument("--trees", type=int, default=None)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--criterion", choices=("gini", "entropy"), default=None)
    p.add_argument("--min-node-size", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--probability", choices=("vote", "leaf"), default=None)
    p.add_argument("--grid", type=int, default=None, help="FPDP grid size")
    p.add_argument("--heatmap-grid", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None, help="permutation repeats")
    p.add_argument("--windows", type=int, default=None, help="score windows per reconstruction band")
    p.add_argument("--scale", choices=("prob", "logit"), default=None)
    p.add_argument("--prune-alpha", type=float, default=None)
    p.add_argument("--explain-on", choices=("train", "test"), default=None)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frfx", description="Explainable functional random forests")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    sub.add_parser("smooth", parents=[common], help="B-spline smoothing of the training curves")
    sub.add_parser("fpca", parents=[common], help="FPCA of the smoothed training curves")
    sub.add_parser("train", parents=[common], help="fit a functional random forest and save it")
    sub.add_parser("predict", parents=[common], help="predict a UCR file with a saved model")
    ex = sub.add_parser("explain", parents=[common], help="compute one explainability artifact")
    ex.add_argument("target", choices=EXPLAIN_TARGETS)
    sub.add_parser("pipeline", parents=[common], help="full workflow into --out")
    r = sub.add_parser("render", parents=[common], help="render an exported JSON artifact to SVG")
    r.add_argument("--artifact", required=True, help="artifact JSON written by export")
    sub.add_parser("describe-tree", parents=[common], help="print the pruned single-tree rules")
    return parser


def _config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> RunConfig:
    values: Dict[str, Any] = {}
    for name in RunConfig.model_fields:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return RunConfig(**values)
    except ValidationError as e:
        err = e.errors()[0]
        loc = err["loc"][0] if err["loc"] else None
        flag = _FLAG.get(loc, "arguments") if isinstance(loc, str) else "arguments"
        parser.error(f"{flag}: {err['msg']}")


def _need(parser: argparse.ArgumentParser, args: argparse.Namespace, *flags: str):
    missing = [f for f in flags if not getattr(args, f.lstrip("-").replace("-", "_"), None)]
    if missing:
        parser.error(f"the following arguments are required for {args.command}: {', '.join(missing)}")


def _outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {path}: {e}") from e
    return path


def _fitted(cfg: RunConfig, model_path: Optional[str]) -> FittedRun:
    if not model_path:
        return ExplainPipeline(cfg).fit()
    loaded = load_model(model_path)
    if loaded.basis is None:
        raise CorruptModel(f"{model_path}: model has no basis record; cannot smooth new curves")
    train = load_ucr(cfg.train, label_values=loaded.label_values)
    if train.n_curves != loaded.forest.n_train:
        raise CorruptModel(f"{cfg.train} has {train.n_curves} curves, the model was trained on {loaded.forest.n_train}")
    basis, smoothed = loaded.basis, None
    test = load_ucr(cfg.test, label_values=train.label_values) if cfg.test else None
    test_scores = scores_for(test, basis, loaded.penalty, loaded.fpca) if test is not None else None
    return FittedRun(train, basis, smoothed, loaded.fpca, loaded.forest, test, test_scores)


def _export(art, out: str, name: str) -> List[str]:
    paths = [
        export_artifact(art, "csv", os.path.join(out, f"{name}.csv")),
        export_artifact(art, "json", os.path.join(out, f"{name}.json")),
    ]
    paths.append(render_svg(spec_for(art), os.path.join(out, f"{name}.svg")))
    return paths


def cmd_smooth(cfg: RunConfig) -> int:
    data = load_ucr(cfg.train)
    _, smoothed = smooth_dataset(data, cfg)
    out = _outdir(cfg.out)
    path = write_frame(smoothed_frame(smoothed), os.path.join(out, "smoothed.csv"))
    print(f"smoothed {smoothed.n_curves} curves onto {cfg.n_basis} B-splines of order {cfg.order} -> {path}")
    return 0


def cmd_fpca(cfg: RunConfig) -> int:
    data = load_ucr(cfg.train)
    _, smoothed = smooth_dataset(data, cfg)
    fpca = fit_fpca(smoothed, cfg.k)
    out = _outdir(cfg.out)
    eig, funcs, scores = fpca_frames(fpca)
    write_frame(eig, os.path.join(out, "fpca_eigenvalues.csv"))
    write_frame(funcs, os.path.join(out, "fpca_eigenfunctions.csv"))
    write_frame(scores, os.path.join(out, "fpca_scores.csv"))
    for k, (ev, vc) in enumerate(zip(explained_variance(fpca), variance_captured(fpca))):
        print(f"FPC{k + 1}: {ev:.4%} of retained, {vc:.4%} of total variance")
    return 0


def cmd_train(cfg: RunConfig, model_path: Optional[str]) -> int:
    run = ExplainPipeline(cfg).fit()
    path = model_path or os.path.join(_outdir(cfg.out), "model.json")
    save_model(run.forest, run.fpca, path, run.basis, cfg.penalty, label_values=run.train.label_values)
    print(f"train accuracy: {accuracy(run.forest, run.train_scores, run.train.labels):.4f}")
    print(f"OOB error: {oob_error(run.forest, run.train_scores, run.train.labels)}")
    if run.test is not None:
        print(f"test accuracy: {accuracy(run.forest, run.test_scores, run.test.labels):.4f}")
    print(f"model written to {path}")
    return 0


def cmd_predict(cfg: RunConfig, model_path: str) -> int:
    loaded = load_model(model_path)
    if loaded.basis is None:
        raise CorruptModel(f"{model_path}: model has no basis record; cannot smooth new curves")
    if loaded.label_values is None:
        log.warning("%s carries no training labels; mapping %s labels on their own", model_path, cfg.test)
    data = load_ucr(cfg.test, label_values=loaded.label_values)
    scores = scores_for(data, loaded.basis, loaded.penalty, loaded.fpca)
    path = write_frame(
        predictions_frame(loaded.forest, scores, data.labels), os.path.join(_outdir(cfg.out), "predictions.csv")
    )
    print(f"test accuracy: {accuracy(loaded.forest, scores, data.labels):.4f}")
    print(f"predictions written to {path}")
    return 0


def cmd_explain(cfg: RunConfig, model_path: Optional[str], target: str) -> int:
    run = _fitted(cfg, model_path)
    out = _outdir(cfg.out)
    y = run.train.labels
    use_test = cfg.explain_on == "test" and run.test_scores is not None
    X = run.test_scores if use_test else run.train_scores
    if target == "pdp":
        art = fpdp_all(run.forest, X, grid_size=cfg.grid, scale=SCALES[cfg.scale])
    elif target == "heatmap":
        art = compute_fpcph(run.forest, X, grid_size=cfg.heatmap_grid)
    elif target == "violin":
        art = scores_by_class(run.train_scores, y)
        target = "class_scores"
    elif target == "bands":
        art = []
        for k in range(run.fpca.n_components):
            try:
                art.append(reconstruction_bands(run.fpca, k=k, n_windows=cfg.windows))
            except DegenerateScores as e:
                log.warning("skipping bands: %s", e)
    else:
        art = importance_table(
            run.forest,
            run.fpca,
            run.train_scores,
            y,
            repeats=cfg.repeats,
            seed=cfg.seed,
            eval_scores=run.test_scores,
            eval_labels=None if run.test is None else run.test.labels,
        )
        if target == "bubble":
            art = bubble_data(art)
    for p in _export(art, out, target):
        print(p)
    return 0


def cmd_render(artifact_path: str, out: str) -> int:
    art = load_artifact(artifact_path)
    if out.endswith(".svg"):
        path = out
    else:
        stem = os.path.splitext(os.path.basename(artifact_path))[0]
        path = os.path.join(_outdir(out), f"{stem}.svg")
    if isinstance(art, list) and not art:
        raise InvalidSpec(f"{artifact_path} holds no artifacts")
    print(render_svg(spec_for(art), path))
    return 0


def cmd_describe_tree(cfg: RunConfig) -> int:
    data = load_ucr(cfg.train)
    _, smoothed = smooth_dataset(data, cfg)
    fpca = fit_fpca(smoothed, cfg.k)
    tree = fit_tree(fpca.scores, data.labels, prune_alpha=cfg.prune_alpha, config=cfg.forest_config())
    print(describe_tree(tree, CLASS_NAMES))
    return 0


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("smooth", "fpca", "train", "explain", "pipeline", "describe-tree"):
            _need(parser, args, "--train")
        if args.command == "predict":
            _need(parser, args, "--model", "--test")
        cfg = _config(parser, args)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    try:
        if args.command == "smooth":
            return cmd_smooth(cfg)
        if args.command == "fpca":
            return cmd_fpca(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.model)
        if args.command == "predict":
            return cmd_predict(cfg, args.model)
        if args.command == "explain":
            return cmd_explain(cfg, args.model, args.target)
        if args.command == "render":
            return cmd_render(args.artifact, args.out)
        if args.command == "describe-tree":
            return cmd_describe_tree(cfg)
        summary = ExplainPipeline(cfg).run()
        print(f"wrote {len(summary['files'])} files to {cfg.out}")
        if summary["test_accuracy"] is not None:
            print(f"test accuracy: {summary['test_accuracy']:.4f}")
        return 0
    except (FrfxError, OSError) as e:
        log.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
