"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every subcommand
echoes its resolved configuration (all flags, defaults included) to
stderr so a run can be reproduced from its output alone.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import harness, synth
from .errors import ConfigError
from .model import MatchingModel
from .tensor import no_grad
from .weaving import MERGE_MODES, MERGE_PRESENCE_MEAN, WeavingConfig, predict_matches


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_model_flags(parser):
    parser.add_argument("--k", type=int, default=16, help="candidate edges per node")
    parser.add_argument("--layers", type=int, default=6,
                        help="total layer count (weaving layers + output layer)")
    parser.add_argument("--dg", type=int, default=8, help="set-encoder output width")
    parser.add_argument("--df", type=int, default=32, help="point feature width")
    parser.add_argument("--merge-semantics", choices=MERGE_MODES,
                        default=MERGE_PRESENCE_MEAN,
                        help="how the two stream scores combine on partially "
                             "present candidate cells")
    parser.add_argument("--no-similarity-grad", action="store_true",
                        help="detach the similarity column of the edge features")
    parser.add_argument("--init-scale", type=float, default=0.1,
                        help="multiplier on the glorot init of all linear layers; "
                             "small values make the fixed learning rate act faster "
                             "relative to the weights, which short desk-scale runs need")
    parser.add_argument("--encoder-hidden", type=int, default=64)
    parser.add_argument("--encoder-neighbors", type=int, default=8,
                        help="sorted neighbor distances fed to the encoder per point")


def _add_train_flags(parser):
    _add_model_flags(parser)
    parser.add_argument("--lr", type=float, default=1e-4)
    parser.add_argument("--batch", type=int, default=10)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--no-symmetric-loss", action="store_true")
    parser.add_argument("--eval-slice", type=int, default=8,
                        help="pairs used for the per-epoch corr@0 log column")


def _weaving_config(args) -> WeavingConfig:
    return WeavingConfig(
        k=args.k, layers=args.layers, d_g=args.dg, d_f=args.df,
        merge=args.merge_semantics,
        similarity_grad=not args.no_similarity_grad,
        init_scale=args.init_scale,
    )


def _train_config(args) -> harness.TrainConfig:
    return harness.TrainConfig(
        weaving=_weaving_config(args),
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        symmetrize_loss=not args.no_symmetric_loss,
        encoder_hidden=args.encoder_hidden,
        encoder_neighbors=args.encoder_neighbors,
        eval_slice=args.eval_slice,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="pointweave", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", parents=[], help="generate synthetic matching pairs")
    p.add_argument("--kind", default="sphere",
                   help="shape kind or comma list cycled across pairs "
                        f"(choices: {', '.join(synth.SHAPE_KINDS)})")
    p.add_argument("--n", type=int, default=64, help="points per cloud")
    p.add_argument("--pairs", type=int, required=True, help="training pairs to generate")
    p.add_argument("--test-pairs", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="gaussian noise sigma")
    p.add_argument("--deform", type=float, default=0.0,
                   help="non-rigid kernel magnitude (0 keeps pairs rigid)")
    p.add_argument("--kernels", type=int, default=5)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the matcher on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against the baselines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--radii", default="0,0.01,0.02,0.03,0.04,0.05,0.06")
    p.add_argument("--nndr-threshold", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("match", help="match one pair file, print n,m,score lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pair", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    p.add_argument("--n", type=int, default=8, help="points per cloud (clouds are square)")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dg", type=int, default=4)
    p.add_argument("--df", type=int, default=8)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="sweep one hyperparameter axis")
    p.add_argument("--data", required=True)
    p.add_argument("--axis", choices=harness.ABLATION_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nndr-threshold", type=float, default=0.8)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("plot", help="render a curves or ablation CSV as SVG")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_plot)

    return parser


def _echo_config(args):
    skip = {"func", "command"}
    fields = " ".join(f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip)
    print(f"resolved-config {args.command} {fields}", file=sys.stderr)


def _cmd_gen_data(args) -> int:
    kinds = [k.strip() for k in args.kind.split(",") if k.strip()]
    manifest = synth.generate_dataset(
        args.out, kinds, args.n, args.pairs, test_pairs=args.test_pairs,
        seed=args.seed, noise_sigma=args.noise, deform_magnitude=args.deform,
        num_kernels=args.kernels, clusters=args.clusters)
    print(f"wrote {len(manifest.entries)} pair files and {synth.MANIFEST_NAME} to {args.out}")
    return 0


def _cmd_train(args) -> int:
    train_pairs = synth.load_pairs(args.data, "train")
    test_pairs = synth.load_pairs(args.data, "test")
    result = harness.train(_train_config(args), train_pairs, args.out,
                           eval_pairs=test_pairs or None)
    print(f"checkpoint: {result.checkpoint_dir}")
    print(f"log: {result.log_path}")
    print(f"final: {result.log_lines[-1]}")
    return 0


def _cmd_eval(args) -> int:
    split = None if args.split == "all" else args.split
    pairs = synth.load_pairs(args.data, split)
    if not pairs:
        raise ConfigError(f"no pairs in split {args.split!r} of {args.data}")
    radii = [float(r) for r in args.radii.split(",")]
    model = MatchingModel.load(args.checkpoint)
    curves = harness.evaluate(model, pairs, radii, args.nndr_threshold)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "curves.csv")
    svg_path = os.path.join(args.out, "curves.svg")
    harness.write_curves_csv(csv_path, curves)
    harness.plot_curves_svg(svg_path, curves)
    for method in harness.METHODS:
        curve = curves[method]
        joined = " ".join(f"{c:.4f}" for c in curve.corr)
        print(f"{method}: {joined}")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def _cmd_match(args) -> int:
    model = MatchingModel.load(args.checkpoint)
    pair = synth.read_pair(args.pair)
    with no_grad():
        score = model.match_clouds([(pair.cloud_a, pair.cloud_b)])[0]
    pred = predict_matches(score)
    for n, m in enumerate(pred):
        if m < 0:
            print(f"{n},-1,nan")
        else:
            print(f"{n},{m},{score.values.data[n, m]:.12g}")
    return 0


def _cmd_gradcheck(args) -> int:
    result = harness.pipeline_grad_check(
        n=args.n, k=args.k, layers=args.layers, d_g=args.dg, d_f=args.df,
        seed=args.seed, eps=args.eps)
    print(str(result))
    if result.max_error < args.threshold:
        print(f"ok: below threshold {args.threshold:g}")
        return 0
    print(f"FAILED: above threshold {args.threshold:g}", file=sys.stderr)
    return 2


def _cmd_ablate(args) -> int:
    values = [int(v) for v in args.values.split(",")]
    train_pairs = synth.load_pairs(args.data, "train")
    eval_pairs = synth.load_pairs(args.data, "test") or train_pairs
    rows = harness.ablation_sweep(_train_config(args), args.axis, values,
                                  train_pairs, eval_pairs, args.out,
                                  nndr_threshold=args.nndr_threshold)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "ablation.csv")
    svg_path = os.path.join(args.out, "ablation.svg")
    harness.write_ablation_csv(csv_path, rows)
    harness.plot_ablation_svg(svg_path, rows, args.axis)
    for value, method, corr in rows:
        print(f"{args.axis}={value} {method} corr@0={corr:.4f}")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def _cmd_plot(args) -> int:
    with open(args.csv, "r", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header == ["radius", "method", "corr"]:
        series: dict[str, tuple[list, list]] = {}
        for radius, method, corr in rows:
            xs, ys = series.setdefault(method, ([], []))
            xs.append(float(radius))
            ys.append(float(corr))
        harness.plot_series_svg(args.out, series, "tolerant error", "corr",
                                "matching performance")
    elif header == ["axis_value", "method", "corr@0"]:
        series = {}
        for value, method, corr in rows:
            xs, ys = series.setdefault(method, ([], []))
            xs.append(float(value))
            ys.append(float(corr))
        harness.plot_series_svg(args.out, series, "axis value", "corr@0", "ablation")
    else:
        raise ConfigError(f"unrecognized CSV header: {header}")
    print(f"wrote {args.out}")
    return 0


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse -h
        return int(exc.code or 0)
    if getattr(args, "command", None) is None or not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 1
    _echo_config(args)
    try:
        return int(args.func(args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
