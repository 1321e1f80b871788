"""Command-line interface: train, attack, tune-tau, evaluate, reproduce.

Every command that writes files refuses to overwrite existing outputs and
leaves a ``manifest.json`` describing the run next to them.
"""
import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path


from . import __version__, attacks, data, detector, harness
from .ensemble import ConfigError, TrainConfig, TrainingDiverged, train
from .serialize import (
    CheckpointError,
    load_adv_batch,
    load_checkpoint,
    model_id,
    save_adv_batch,
    save_checkpoint,
    write_once,
)

log = logging.getLogger("dissent")

CONFIG_KEYS = {f.name for f in fields(TrainConfig)}
# keys a config file may carry besides the training hyperparameters
EXTRA_KEYS = {"train_size", "tau", "max_fp", "eval_size"}


class UsageError(Exception):
    pass


def read_config(path):
    """Parse a JSON config file; errors name the file, line and column."""
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}:1:1: config must be a JSON object")
    lines = text.splitlines()
    for key in cfg:
        if key not in CONFIG_KEYS | EXTRA_KEYS:
            lineno = next((i + 1 for i, line in enumerate(lines) if f'"{key}"' in line), 1)
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
    return cfg


def train_config(args, file_cfg):
    values = {k: v for k, v in file_cfg.items() if k in CONFIG_KEYS}
    overrides = {"seed": args.seed, "lam": args.lam, "eta": args.eta, "epochs": getattr(args, "epochs", None),
                 "learning_rate": getattr(args, "learning_rate", None)}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**values)
    except (ConfigError, TypeError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None


def fresh_dir(path):
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        raise UsageError(f"output directory {path} is not empty; outputs are write-once")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(out, command, **content):
    manifest = {"command": command, "version": __version__, "argv": sys.argv[1:], **content}
    write_once(Path(out) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def log_csv(logs):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "J", "Je", "Ja", "clean_acc"])
    for e in logs:
        writer.writerow([e.epoch, f"{e.J:.8g}", f"{e.Je:.8g}", f"{e.Ja:.8g}", f"{e.clean_acc:.6f}"])
    return buf.getvalue()


def load_splits(directory, val_fraction=1 / 6, split_seed=0):
    """``(train, val, test)`` from an MNIST-style IDX directory."""
    full, test = data.load_mnist(directory)
    tr, val = data.split(full, val_fraction, split_seed)
    return tr, val, test


def _limit(ds, n):
    return ds if n is None else ds.head(min(n, len(ds)))


def cmd_train(args):
    file_cfg = read_config(args.config) if args.config else {}
    cfg = train_config(args, file_cfg)
    out = fresh_dir(args.out)
    tr, val, _ = load_splits(args.data)
    tr = _limit(tr, args.train_size or file_cfg.get("train_size"))
    n_mon = min(1000, len(val))
    ens, logs = train(tr.inputs, tr.labels, cfg, tr.n_classes, monitor=(val.inputs[:n_mon], val.labels[:n_mon]),
                      on_epoch=lambda e, _: log.info("epoch %d J %.4f acc %.4f", e.epoch, e.J, e.clean_acc))
    save_checkpoint(ens, out / "model.ckpt")
    write_once(out / "train_log.csv", log_csv(logs))
    write_manifest(out, "train", config=asdict(cfg), train_size=len(tr), model_id=model_id(ens))
    print(f"model {model_id(ens)} written to {out / 'model.ckpt'}")
    return 0


def attack_spec(args):
    kw = {"epsilon": args.epsilon, "kappa": args.kappa, "lambda_attack": args.lambda_attack,
          "iterations": args.iterations}
    try:
        return attacks.AttackSpec(args.attack, **{k: v for k, v in kw.items() if v is not None})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_attack(args):
    spec = attack_spec(args)
    target = load_checkpoint(args.model)
    if args.mode == "white":
        source = target
    elif args.source:
        source = load_checkpoint(args.source)
    else:
        raise UsageError(f"--mode {args.mode} needs --source (the surrogate or conventional ensemble)")
    harness.ThreatModel(args.mode, target, source)
    _, _, test = load_splits(args.data)
    test = _limit(test, args.limit)
    out = fresh_dir(args.out)
    keep = harness.correctly_classified(source, test.inputs, test.labels)
    batch = attacks.generate(source, test.inputs[keep], test.labels[keep], spec, model_id(source))
    save_adv_batch(batch, out / "batch")
    write_manifest(out, "attack", attack=spec.to_dict(), mode=args.mode, target_id=model_id(target),
                   source_id=model_id(source), n_attacked=len(batch))
    print(f"{len(batch)} adversarial examples ({spec.kind}, {args.mode}) written to {out / 'batch'}")
    return 0


def parse_disagreements(text):
    try:
        values = [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"disagreements must be integers, got {text!r}") from None
    if not values:
        raise UsageError("no disagreement values given")
    return values


def cmd_tune_tau(args):
    if args.disagreements is not None:
        values = parse_disagreements(args.disagreements)
    elif args.model and args.data:
        ens = load_checkpoint(args.model)
        _, val, _ = load_splits(args.data)
        values = detector.disagreements(ens.softmaxes(_limit(val, args.limit).inputs))
    else:
        raise UsageError("give --disagreements, or --model with --data")
    try:
        tau = detector.tune_tau(values, args.max_fp)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(tau)
    return 0


def cmd_evaluate(args):
    ens = load_checkpoint(args.model)
    cond = {"dataset": "mnist", "mode": args.mode}
    if args.adv:
        batch = load_adv_batch(args.adv)
        report = harness.evaluate_batch(ens, args.tau, batch, condition=batch.attack.kind,
                                        lambda_attack=batch.attack.lambda_attack, **cond)
    else:
        _, _, test = load_splits(args.data)
        test = _limit(test, args.limit)
        if args.noise:
            report = harness.noise_eval(ens, args.tau, test, args.noise, args.seed or 0, **cond)
        else:
            report = harness.evaluate(ens, args.tau, test.inputs, test.labels, condition="clean", **cond)
    text = harness.reports_table([report])
    print(text, end="")
    if args.out:
        out = fresh_dir(args.out)
        write_once(out / "report.csv", harness.reports_csv([report]))
        write_once(out / "report.txt", text)
        write_manifest(out, "evaluate", tau=args.tau, model_id=model_id(ens), adv=args.adv, noise=args.noise)
    return 0


def cmd_reproduce(args):
    if args.dataset != "mnist":
        raise UsageError(f"unknown experiment {args.dataset!r}; only 'mnist' is available")
    file_cfg = read_config(args.config) if args.config else {}
    cfg = train_config(args, file_cfg)
    out = fresh_dir(args.out)
    tr, _, test = load_splits(args.data)
    tr = _limit(tr, args.train_size or file_cfg.get("train_size"))
    test = _limit(test, args.limit or file_cfg.get("eval_size"))
    tau = args.tau if args.tau is not None else file_cfg.get("tau", detector.DEFAULT_TAU)
    log.info("training target ensemble on %d examples", len(tr))
    target, logs = train(tr.inputs, tr.labels, cfg, tr.n_classes)
    sources = {}
    for mode in ("black", "oblivious"):
        log.info("training %s-box gradient source", mode)
        sources[mode] = harness.build_threat(mode, target, tr, cfg).gradient_source
    cells = harness.mnist_cells(cw_kappa=args.kappa if args.kappa is not None else 5.0,
                                include_cw=not args.skip_cw)
    suite = harness.Suite("MNIST", target, tau, test, cells, sources)
    reports = harness.run_experiment(suite, out)
    save_checkpoint(target, out / "target.ckpt")
    for mode, ens in sources.items():
        save_checkpoint(ens, out / f"{mode}_source.ckpt")
    write_once(out / "train_log.csv", log_csv(logs))
    write_manifest(out, "reproduce", **harness.suite_manifest(suite, cfg, {"train_size": len(tr)}))
    print((out / "report.txt").read_text(), end="")
    failed = [r for r in reports if r.error]
    for r in failed:
        print(f"cell {r.condition}/{r.mode} failed: {r.error}", file=sys.stderr)
    return 1 if failed else 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of training settings")
    common.add_argument("--seed", type=int, help="64-bit training seed")
    common.add_argument("--out", help="output directory (must be new or empty)")
    common.add_argument("--tau", type=int, default=None, help="rank threshold")
    common.add_argument("--lambda", dest="lam", type=float, help="training weight of the agreement term")
    common.add_argument("--eta", type=float, help="training noise bound")
    common.add_argument("--attack", default="fgs", help="fgs, bim, deepfool or cw")
    common.add_argument("--mode", default="white", type=harness.canonical_mode,
                        help="threat model: white, black or oblivious")
    common.add_argument("--epsilon", type=float, help="L-inf budget for fgs/bim")
    common.add_argument("--kappa", type=float, help="C&W confidence margin")
    common.add_argument("--lambda-attack", type=float, help="weight on the agreement term in the attack objective")
    common.add_argument("--data", default="data/mnist", help="directory holding the MNIST IDX files")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dissent", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dissent {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a defended ensemble")
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--train-size", type=int, help="use only the first N training examples")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", parents=[common], help="generate adversarial examples from the test set")
    a.add_argument("--model", required=True, help="target checkpoint")
    a.add_argument("--source", help="gradient-source checkpoint for black/oblivious modes")
    a.add_argument("--iterations", type=int)
    a.add_argument("--limit", type=int, help="attack only the first N test examples")
    a.set_defaults(func=cmd_attack)

    u = sub.add_parser("tune-tau", parents=[common], help="smallest tau meeting a false-positive budget")
    u.add_argument("--disagreements", help="comma-separated disagreement values")
    u.add_argument("--model", help="checkpoint whose validation disagreements are used")
    u.add_argument("--max-fp", type=float, default=detector.DEFAULT_MAX_FP)
    u.add_argument("--limit", type=int)
    u.set_defaults(func=cmd_tune_tau)

    e = sub.add_parser("evaluate", parents=[common], help="accuracy and detection on clean, noisy or adversarial data")
    e.add_argument("--model", required=True)
    e.add_argument("--adv", help="adversarial batch directory written by 'attack'")
    e.add_argument("--noise", type=float, help="evaluate on test inputs plus uniform noise of this bound")
    e.add_argument("--limit", type=int)
    e.set_defaults(func=cmd_evaluate, tau=None)

    r = sub.add_parser("reproduce", parents=[common], help="run a full experiment grid")
    r.add_argument("dataset", help="experiment name (mnist)")
    r.add_argument("--epochs", type=int)
    r.add_argument("--learning-rate", type=float)
    r.add_argument("--train-size", type=int)
    r.add_argument("--limit", type=int, help="evaluate on the first N test examples")
    r.add_argument("--skip-cw", action="store_true", help="leave out the slow C&W cells")
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command in ("evaluate",) and args.tau is None:
        args.tau = detector.DEFAULT_TAU
    try:
        return args.func(args)
    except (UsageError, CheckpointError, data.IdxFormatError, FileNotFoundError, FileExistsError,
            TrainingDiverged) as exc:
        print(f"dissent: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
