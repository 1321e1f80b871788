"""Threat models, evaluation metrics and the experiment runner.

Metrics for a set of inputs evaluated against a target ensemble:

* ``acc_all`` -- fraction whose distribution-summation label is correct,
  whether or not the detector accepts the input;
* ``acc_accepted`` -- the same among accepted inputs (``None`` when no input
  was accepted);
* ``det_rate`` -- fraction rejected by the rank threshold;
* ``mean_dist`` -- mean L2 distortion of the evaluated inputs.
"""
import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import attacks, detector
from .ensemble import NoiseSpec, TrainConfig, perturb_uniform, train
from .serialize import model_id

log = logging.getLogger(__name__)

MODES = ("white", "black", "oblivious")
_MODE_ALIASES = {
    "white": "white", "whitebox": "white", "white-box": "white",
    "black": "black", "blackbox": "black", "black-box": "black",
    "oblivious": "oblivious",
}


def canonical_mode(name):
    try:
        return _MODE_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown threat mode {name!r}; choose from {', '.join(MODES)}") from None


def worker_count():
    """Worker cap from ``DISSENT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("DISSENT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ThreatModel:
    mode: str
    target: object
    gradient_source: object

    def __post_init__(self):
        object.__setattr__(self, "mode", canonical_mode(self.mode))
        t, s = self.target.arch, self.gradient_source.arch
        if t[0] != s[0] or t[2] != s[2]:
            raise ValueError("gradient source and target must share input size and class count")


def surrogate_config(config):
    """Same hyperparameters, different seed."""
    return replace(config, seed=(config.seed + 1) % 2**64)


def oblivious_config(config):
    """A conventionally trained ensemble: no agreement term, no noise."""
    return replace(config, lam=0.0, eta=0.0)


def build_threat(mode, target, dataset=None, config=None, source=None):
    """Pair ``target`` with the ensemble an attacker in ``mode`` takes gradients from.

    White-box attackers use the target itself. Black-box attackers train a
    surrogate with the target's configuration but another seed; oblivious
    attackers train a conventional (lam = 0) ensemble. A pre-trained
    ``source`` skips that training.
    """
    mode = canonical_mode(mode)
    if mode == "white":
        return ThreatModel(mode, target, target)
    if source is None:
        if dataset is None or config is None:
            raise ValueError(f"{mode} threat needs training data and a config (or a source)")
        cfg = surrogate_config(config) if mode == "black" else oblivious_config(config)
        source, _ = train(dataset.inputs, dataset.labels, cfg, dataset.n_classes)
    return ThreatModel(mode, target, source)


@dataclass
class EvalReport:
    acc_all: float
    acc_accepted: Optional[float]
    det_rate: float
    mean_dist: float
    n_examples: int
    n_accepted: int
    n_correct: int
    n_correct_accepted: int
    dataset: str = ""
    condition: str = ""
    mode: str = ""
    lambda_attack: Optional[float] = None
    error: str = ""

    def row(self):
        return {
            "dataset": self.dataset,
            "condition": self.condition,
            "mode": self.mode,
            "lambda_attack": "" if self.lambda_attack is None else self.lambda_attack,
            "acc_all": _fmt(self.acc_all),
            "acc_accepted": "n/a" if self.acc_accepted is None else _fmt(self.acc_accepted),
            "det": _fmt(self.det_rate),
            "dist": _fmt(self.mean_dist),
            "n": self.n_examples,
            "n_accepted": self.n_accepted,
            "error": self.error,
        }


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.6f}"


def evaluate(target, tau, inputs, labels, mean_dist=0.0, **condition):
    """Detector verdicts and metrics for ``inputs`` against ``target``."""
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.ndim != 2 or labels.shape != (inputs.shape[0],):
        raise ValueError(f"{inputs.shape[0] if inputs.ndim else 0} inputs but {labels.size} labels")
    n = labels.size
    if n == 0:
        raise ValueError("nothing to evaluate")
    _, accepted, pred = detector.verdicts(target.softmaxes(inputs), tau)
    correct = pred == labels
    n_acc = int(accepted.sum())
    n_corr_acc = int((correct & accepted).sum())
    return EvalReport(
        acc_all=float(correct.mean()),
        acc_accepted=n_corr_acc / n_acc if n_acc else None,
        det_rate=1.0 - n_acc / n,
        mean_dist=float(mean_dist),
        n_examples=n,
        n_accepted=n_acc,
        n_correct=int(correct.sum()),
        n_correct_accepted=n_corr_acc,
        **condition,
    )


def evaluate_batch(target, tau, batch, **condition):
    return evaluate(target, tau, batch.adversarials, batch.labels, attacks.mean_l2(batch), **condition)


def noise_eval(target, tau, test, eta_eval=0.1, seed=0, clip=False, **condition):
    """Evaluate on the test set plus uniform noise in ``[-eta_eval, eta_eval)``.

    Noise is drawn exactly as during training (no clipping) unless ``clip``.
    """
    if eta_eval < 0:
        raise ValueError("eta_eval must be >= 0")
    x = test.inputs
    noisy = perturb_uniform(x, NoiseSpec.seeded(eta_eval, seed))
    if clip:
        noisy = np.clip(noisy, 0.0, 1.0)
    dist = float(np.mean(np.linalg.norm(noisy - x, axis=-1)))
    condition.setdefault("condition", "noise")
    return evaluate(target, tau, noisy, test.labels, dist, **condition)


def expected_noise_l2(dim, eta):
    """``sqrt(d * eta^2 / 3)``: RMS norm of uniform ``[-eta, eta)`` noise in d dimensions."""
    return float(np.sqrt(dim * eta**2 / 3.0))


def correctly_classified(ensemble, x, y):
    return np.flatnonzero(detector.classify_batch(ensemble.softmaxes(x)) == np.asarray(y))


def attack_and_evaluate(threat, tau, x, y, spec, **condition):
    """Attack with the threat's gradient source, evaluate on its target.

    Only inputs the gradient source classifies correctly are attacked.
    """
    keep = correctly_classified(threat.gradient_source, x, y)
    batch = attacks.generate(threat.gradient_source, x[keep], np.asarray(y)[keep], spec, model_id(threat.gradient_source))
    return evaluate_batch(threat.target, tau, batch, **condition), batch


@dataclass(frozen=True)
class Cell:
    """One experiment condition: an attack (or clean/noise) under a threat mode."""
    condition: str
    mode: str = "white"
    spec: Optional[attacks.AttackSpec] = None
    eta_eval: float = 0.1


@dataclass
class Suite:
    dataset_name: str
    target: object
    tau: int
    test: object
    cells: list = field(default_factory=list)
    sources: dict = field(default_factory=dict)
    noise_seed: int = 0


def _run_cell(suite, cell):
    cond = dict(dataset=suite.dataset_name, condition=cell.condition, mode=cell.mode,
                lambda_attack=cell.spec.lambda_attack if cell.spec is not None else None)
    x, y = suite.test.inputs, suite.test.labels
    if cell.condition == "clean":
        return evaluate(suite.target, suite.tau, x, y, 0.0, **cond)
    if cell.condition == "noise":
        return noise_eval(suite.target, suite.tau, suite.test, cell.eta_eval, suite.noise_seed, **cond)
    source = suite.target if cell.mode == "white" else suite.sources[cell.mode]
    threat = ThreatModel(cell.mode, suite.target, source)
    report, _ = attack_and_evaluate(threat, suite.tau, x, y, cell.spec, **cond)
    return report


def run_experiment(suite, out_dir=None, workers=None):
    """Run every cell; a failing cell is recorded with its error and the run continues.

    Writes ``report.csv`` and ``report.txt`` into ``out_dir`` when given and
    the suite is non-empty.
    """
    if not suite.cells:
        return []

    def run(cell):
        try:
            return _run_cell(suite, cell)
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            log.exception("cell %s/%s failed", cell.condition, cell.mode)
            nan = float("nan")
            return EvalReport(nan, None, nan, nan, 0, 0, 0, 0, suite.dataset_name, cell.condition, cell.mode,
                              cell.spec.lambda_attack if cell.spec else None, f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
        reports = list(pool.map(run, suite.cells))
    if out_dir is not None:
        from .serialize import write_once
        write_once(os.path.join(out_dir, "report.csv"), reports_csv(reports))
        write_once(os.path.join(out_dir, "report.txt"), reports_table(reports))
    return reports


CSV_FIELDS = ["dataset", "condition", "mode", "lambda_attack", "acc_all", "acc_accepted", "det", "dist",
              "n", "n_accepted", "error"]


def reports_csv(reports):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def _pct(v):
    return "-" if v is None or np.isnan(v) else f"{100 * v:.1f}"


def reports_table(reports):
    """Aligned text: one row per (dataset, mode), ``Acc all/accepted | Det | Dist`` per condition."""
    columns = []
    for r in reports:
        key = r.condition if r.lambda_attack in (None, 0, 0.0) else f"{r.condition} lam={r.lambda_attack:g}"
        if key not in columns:
            columns.append(key)
    rows = []
    for r in reports:
        if (r.dataset, r.mode) not in rows:
            rows.append((r.dataset, r.mode))
    cells = {}
    for r in reports:
        key = r.condition if r.lambda_attack in (None, 0, 0.0) else f"{r.condition} lam={r.lambda_attack:g}"
        if r.error:
            cells[(r.dataset, r.mode, key)] = ("error", "", "")
        else:
            cells[(r.dataset, r.mode, key)] = (f"{_pct(r.acc_all)}/{_pct(r.acc_accepted)}", _pct(r.det_rate),
                                               f"{r.mean_dist:.1f}")
    head1 = ["", ""] + [c for c in columns for _ in range(3)]
    head2 = ["Dataset", "Mode"] + ["Acc.", "Det.", "Dist."] * len(columns)
    body = []
    for ds, mode in rows:
        line = [ds, mode]
        for c in columns:
            line.extend(cells.get((ds, mode, c), ("", "", "")))
        body.append(line)
    table = [head1, head2] + body
    widths = [max(len(str(row[i])) for row in table) for i in range(len(head2))]
    # condition names span their three columns; print them once
    out = []
    spans = ["Dataset".ljust(widths[0]), "Mode".ljust(widths[1])]
    for j, c in enumerate(columns):
        w = sum(widths[2 + 3 * j: 5 + 3 * j]) + 4
        spans.append(c.center(w))
    out.append("  ".join(spans).rstrip())
    for line in [head2[0:0] + ["", ""] + head2[2:]] + body:
        out.append("  ".join(str(v).ljust(w) for v, w in zip(line, widths)).rstrip())
    return "\n".join(out) + "\n"


def mnist_cells(lambdas=(4.0, 1.0, 0.25), cw_kappa=5.0, cw_iterations=200, include_cw=True):
    """Cells for the MNIST rows of the clean/noise/attack tables and the combined-objective grid."""
    fgs = attacks.AttackSpec("fgs", epsilon=0.1)
    bim = attacks.AttackSpec("bim", epsilon=0.1, step_size=0.01, iterations=20)
    df = attacks.AttackSpec("deepfool")
    cells = [Cell("clean"), Cell("noise", eta_eval=0.1)]
    for mode in ("white", "black"):
        cells += [Cell("fgs", mode, fgs), Cell("bim", mode, bim), Cell("deepfool", mode, df)]
    if include_cw:
        cw = attacks.AttackSpec("cw", kappa=cw_kappa, iterations=cw_iterations)
        cells += [Cell("cw", mode, cw) for mode in MODES]
    for lam in lambdas:
        for mode in ("white", "black"):
            cells += [Cell("fgs", mode, replace(fgs, lambda_attack=lam)),
                      Cell("bim", mode, replace(bim, lambda_attack=lam))]
    return cells


def suite_manifest(suite, config, extra=None):
    """JSON-serialisable description of a suite run."""
    from . import __version__
    return {
        "version": __version__,
        "dataset": suite.dataset_name,
        "tau": suite.tau,
        "train_config": asdict(config) if isinstance(config, TrainConfig) else config,
        "target_id": model_id(suite.target),
        "source_ids": {k: model_id(v) for k, v in suite.sources.items()},
        "noise_seed": suite.noise_seed,
        "cells": [
            {"condition": c.condition, "mode": c.mode, "eta_eval": c.eta_eval,
             "attack": c.spec.to_dict() if c.spec else None}
            for c in suite.cells
        ],
        **(extra or {}),
    }
