"""Command-line entry point: ``dfmim <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .errors import DfmimError
from .folds import read_manifest
from .model import DfmimConfig
from .pipeline import chunk_dataset, extract_corpus, run_ser, run_simulation
from .simgen import SCENARIOS, load_dataset, make_scenario_dataset, save_dataset
from .training import evaluate_classification, evaluate_regression, format_confusion

log = logging.getLogger("dfmim")


class Output:
    """Collects report lines; echoes them unless ``--quiet``."""

    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, text: str = ""):
        if not self.quiet:
            print(text.rstrip("\n"), flush=True)


def _sim_run_config(args):
    run = load_config(args.config, base=DfmimConfig.simulation())
    model = run.model
    if args.seed is not None:
        model = model.replace(seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        model = model.replace(epochs=args.epochs)
    return model


def _ser_run_config(args):
    run = load_config(args.config)
    if getattr(args, "epochs", None) is not None:
        run = type(run)(run.model.replace(epochs=args.epochs), run.pipeline)
    return run


def cmd_simulate(args, out):
    seed = args.seed if args.seed is not None else 0
    ds = make_scenario_dataset(args.scenario, args.n, seed)
    if args.out:
        save_dataset(ds, args.out)
    noise = ds.y - ds.y_clean
    out(
        f"scenario={ds.scenario} n={len(ds)} seed={seed} y_mean={ds.y.mean()!r} "
        f"y_clean_mean={ds.y_clean.mean()!r} noise_var={noise.var()!r}"
        + (f" out={args.out}" if args.out else "")
    )
    return 0


def cmd_train_sim(args, out):
    config = _sim_run_config(args)
    seed = config.seed

    def progress(epoch, loss, metric):
        log.info("epoch %d train_loss=%.6g val_mse=%.6g", epoch, loss, metric)

    out("--- config\n" + "\n".join(f"{k} = {v!r}" for k, v in sorted(config.to_dict().items())))
    sizes = (args.n_train, args.n_val, args.n_test)
    model, result = run_simulation(args.scenario, config, seed, sizes, progress=progress)
    text = result.to_text()
    out(text)
    if args.out:
        dest = Path(args.out)
        dest.mkdir(parents=True, exist_ok=True)
        (dest / f"{args.scenario}.report").write_text(text, encoding="utf-8")
        save_checkpoint(model, dest / f"{args.scenario}.dfmx", extra={"scenario": args.scenario})
    return 0


def cmd_eval_sim(args, out):
    model, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    noisy, clean = evaluate_regression(model, ds)
    out(f"rmse_vs_noisy={noisy!r}\nrmse_vs_clean={clean!r}")
    return 0


def cmd_extract(args, out):
    run = _ser_run_config(args)
    manifest = read_manifest(args.manifest)
    if not args.out:
        raise DfmimError("extract needs --out DIR")
    feats = extract_corpus(manifest, run, args.out)
    total = sum(len(f.chunks) for f in feats)
    out(f"utterances={len(feats)} chunks={total} out={args.out}")
    return 0


def cmd_train_ser(args, out):
    run = _ser_run_config(args)
    seed = args.seed if args.seed is not None else run.model.seed
    manifest = read_manifest(args.manifest)
    out("--- config\n" + run.echo())

    def progress(fold, epoch, loss, metric):
        log.info("fold %d epoch %d train_loss=%.6g val_UA=%.4f", fold, epoch, loss, metric)

    result = run_ser(manifest, run, seed, args.folds, args.out, progress=progress)
    text = result.to_text()
    out(text)
    if args.out:
        Path(args.out, "summary.report").write_text(text, encoding="utf-8")
    return 0


def cmd_eval_ser(args, out):
    model, extra = load_checkpoint(args.checkpoint)
    run = _ser_run_config(args)
    manifest = read_manifest(args.manifest)
    speakers = args.speakers.split(",") if args.speakers else extra.get("fold", {}).get("test")
    if isinstance(speakers, str):
        speakers = [speakers]
    speakers = speakers or manifest.speakers()
    feats = extract_corpus(manifest, run)
    ds = chunk_dataset(feats, speakers)
    wa, ua, cm = evaluate_classification(model, ds)
    out(f"speakers={','.join(speakers)}\nWA={wa!r}\nUA={ua!r}")
    out(format_confusion(cm, list(run.pipeline.labels)))
    return 0


def cmd_gradcheck(args, out):
    from .gradcheck import TOLERANCE, run_gradchecks

    worst = {}
    for name, _, err in run_gradchecks(range(args.seeds)):
        worst[name] = max(worst.get(name, 0.0), err)
    failed = 0
    for name, err in worst.items():
        ok = err < TOLERANCE
        failed += not ok
        out(f"{'PASS' if ok else 'FAIL'} {name} max_rel_err={err:.3e}")
    out(f"gradcheck {'passed' if not failed else f'failed ({failed} cases)'}")
    return 1 if failed else 0


def cmd_selftest(args, out):
    from .selftest import run_selftest

    failures = 0
    for name, ok, detail in run_selftest():
        failures += not ok
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 1 if failures else 0


def cmd_synth_corpus(args, out):
    from .synth import make_synthetic_corpus

    if not args.out:
        raise DfmimError("synth-corpus needs --out DIR")
    seed = args.seed if args.seed is not None else 0
    path = make_synthetic_corpus(args.out, args.speakers, args.utterances, seed)
    out(f"manifest={path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--out", metavar="PATH", help="output file or directory")
    common.add_argument("--quiet", action="store_true", help="suppress report output")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")

    parser = argparse.ArgumentParser(prog="dfmim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="draw a scenario dataset")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--n", type=int, default=2000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-sim", parents=[common], help="train on a simulated scenario")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_sim)

    p = sub.add_parser("eval-sim", parents=[common], help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval_sim)

    p = sub.add_parser("extract", parents=[common], help="write MFCC chunk records for a corpus")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-ser", parents=[common], help="speaker-fold SER training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--folds", type=int, help="run only the first N folds")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_ser)

    p = sub.add_parser("eval-ser", parents=[common], help="evaluate a SER checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--speakers", help="comma-separated speakers (default: the fold's test speaker)")
    p.set_defaults(func=cmd_eval_ser)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", parents=[common], help="fast numerical self-checks")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("synth-corpus", parents=[common], help="write a synthetic labeled corpus")
    p.add_argument("--speakers", type=int, default=20)
    p.add_argument("--utterances", type=int, default=400)
    p.set_defaults(func=cmd_synth_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = Output(args.quiet)
    try:
        return args.func(args, out)
    except (DfmimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
