"""``qfuse`` command line: gendata, train-stage1, train-stage2, eval, fuse.

Exit codes: 0 success, 2 configuration error, 3 I/O or missing artifact.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from qfuse import agent as A
from qfuse import config as C
from qfuse import data, gan, metrics
from qfuse.imageio import ImageFormatError, write_image

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
EVAL_MODES = ("adaptive", "equal", "single-mod1", "single-mod2")

log = logging.getLogger("qfuse")


class ArtifactError(Exception):
    """A required input file or checkpoint is missing or unreadable."""


def _require(path, what):
    p = Path(path)
    if not p.exists():
        raise ArtifactError(f"{what} not found: {p}")
    return p


def _load_dataset(path):
    _require(Path(path) / "manifest.csv", "dataset manifest")
    return data.load_dataset(path)


def _load_generators(stage1_dir):
    d = _require(stage1_dir, "stage-I directory")
    return [gan.load_net(_require(d / f"gen_mod{m + 1}", "generator checkpoint")) for m in range(data.MODALITIES)]


def _load_q(stage2_dir):
    return A.load_qnet(_require(Path(stage2_dir) / "q_network", "Q-network checkpoint"))


# ---------------------------------------------------------------- commands


def cmd_gendata(cfg, args):
    data.generate_dataset(cfg.synth(), args.out)
    log.info("wrote %d samples to %s", cfg.n_samples, args.out)


def cmd_train_stage1(cfg, args):
    samples = _load_dataset(args.data)
    result = gan.stage1_train(samples, cfg.stage1())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m, (g, d) in enumerate(zip(result.generators, result.discriminators)):
        gan.save_net(g, out / f"gen_mod{m + 1}")
        gan.save_net(d, out / f"disc_mod{m + 1}")
        gan.write_history(out / f"loss_mod{m + 1}.csv", result.history[m])
    log.info("stage I done: final mse %s", [round(h[-1][3], 5) for h in result.history])


def cmd_train_stage2(cfg, args):
    samples = _load_dataset(args.data)
    generators = _load_generators(args.stage1)
    contexts = A.prepare_all(samples, generators, cfg.state_size)
    result = A.train_fusion(contexts, cfg.agent())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    A.save_qnet(result.agent.q, out / "q_network")
    A.write_log(out / "train_log.csv", result.log)
    log.info("stage II done: %d episodes, %d updates", len(result.log), result.agent.updates)


def predictions(cfg, samples, generators, mode, q=None):
    """Per-sample output maps and weights for one evaluation arm."""
    contexts = A.prepare_all(samples, generators, cfg.state_size)
    preds, weights = [], []
    for ctx in contexts:
        if mode == "adaptive":
            w, fused, _ = A.infer_weights(ctx, q, cfg.agent())
        elif mode == "equal":
            w = A.WeightVector.uniform(2)
            fused = A.fuse_maps(ctx.coarse, w)
        else:
            m = int(mode[-1]) - 1
            w = A.WeightVector(tuple(1.0 if i == m else 0.0 for i in range(2)))
            fused = A.fuse_maps(ctx.coarse, w)
        preds.append(fused)
        weights.append(w)
    return preds, weights


def cmd_eval(cfg, args):
    samples = _load_dataset(args.data)
    generators = _load_generators(args.stage1)
    q = None
    if args.mode == "adaptive":
        if args.stage2 is None:
            raise ArtifactError("adaptive mode needs --stage2")
        q = _load_q(args.stage2)
    preds, weights = predictions(cfg, samples, generators, args.mode, q)
    report = metrics.evaluate_run(preds, [s.gt for s in samples], cfg.beta, cfg.beta_squared)
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    metrics.write_report(report, out / "report.csv", out / "summary.json", cfg.beta, cfg.beta_squared)
    with open(out / "weights.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "w1", "w2"])
        for s, wv, pred in zip(samples, weights, preds):
            w.writerow([s.name, repr(wv.w[0]), repr(wv.w[1])])
            write_image(out / "maps" / f"{s.name}_fused.pgm", pred)
    print(json.dumps(report.summary()))


def cmd_fuse(cfg, args):
    generators = _load_generators(args.stage1)
    sample = data.load_sample([_require(args.mod1, "modality 1 image"), _require(args.mod2, "modality 2 image"), None])
    ctx = A.prepare(sample, generators, cfg.state_size)
    if args.stage2 is None:
        w, fused = A.WeightVector.uniform(2), A.fuse_maps(ctx.coarse, A.WeightVector.uniform(2))
    else:
        w, fused, _ = A.infer_weights(ctx, _load_q(args.stage2), cfg.agent())
    write_image(args.out, fused)
    print(json.dumps({"w1": w.w[0], "w2": w.w[1], "output": str(args.out)}))


COMMANDS = {
    "gendata": cmd_gendata,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "eval": cmd_eval,
    "fuse": cmd_fuse,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults are used for missing keys)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qfuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gendata", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-stage1", parents=[common], help="train per-modality generators")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-stage2", parents=[common], help="train the fusion Q-network")
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="evaluate one fusion arm on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2")
    p.add_argument("--mode", choices=EVAL_MODES, default="adaptive")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fuse", parents=[common], help="fuse one pair of modality images")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", help="Q-network run directory; equal weights when omitted")
    p.add_argument("--mod1", required=True)
    p.add_argument("--mod2", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = C.load(args.config, args.set, args.seed)
    except C.ConfigError as exc:
        print(f"qfuse: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args)
    except (ArtifactError, ImageFormatError, FileNotFoundError, OSError) as exc:
        print(f"qfuse: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, data.DimensionError) as exc:
        print(f"qfuse: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
