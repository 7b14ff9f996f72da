"""Run orchestration: dataset build, noise injection, training per method,
per-epoch diagnostics, and deterministic result emission.

Outputs per trial directory: ``epochs.csv`` (one row per epoch),
``metrics.csv`` (long-form diagnostics ledger), ``losses.csv`` (per-sample
losses per epoch), ``confusion_epoch_<k>.csv`` for the last epoch, and a
targets checkpoint for the correcting methods. One ``summary.json`` sits at
the run root. Reruns with the same config are byte-identical: no
timestamps, fixed column orders, 6 significant digits, LF endings.

Environment: ``SELC_OUT_DIR`` overrides the config's output directory;
``SELC_THREADS`` bounds trial parallelism (default 1, sequential).
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import AUTO, ExperimentConfig, MethodSpecConfig, alpha_values
from .data import BlobSpec, NoisyDataset, generate_blobs, load_csv_dataset, load_idx
from .diagnostics import (
    append_metrics_ledger,
    confusion_of_corrections,
    correction_accuracy,
    memorization_stats,
    write_confusion_csv,
)
from .errors import ParameterError
from .mlp import init_mlp, make_optimizer, one_hot, predict_proba, soft_ce_loss
from .noise import (
    TransitionMatrix,
    build_asymmetric_q,
    build_symmetric_q,
    inject_noise,
    load_mapping,
)
from .rng import stream
from .targets import save_state
from .training import (
    METHOD_CE,
    SelcRunConfig,
    default_activation_epoch,
    run_selc_plus,
    run_training,
)
from .turning import (
    LossSnapshot,
    OnlineTurningPointDetector,
    fit_gmm2,
    fit_kmeans2_and_m3,
    metric_m1,
    metric_m2,
    normalize_losses,
    save_loss_snapshots,
)

EPOCH_COLUMNS = (
    "epoch", "lr", "train_loss", "train_acc", "test_acc",
    "m1", "m2", "m3", "correction_acc",
    "clean_correct_frac", "clean_incorrect_frac",
    "mislabeled_correct_frac", "mislabeled_memorized_frac", "mislabeled_other_frac",
)
LEDGER_METRICS = (
    "correction_acc", "clean_correct_frac", "clean_incorrect_frac",
    "mislabeled_correct_frac", "mislabeled_memorized_frac", "mislabeled_other_frac",
)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6g}"


def _round6(value):
    """Clamp floats to 6 significant digits for JSON emission."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(f"{float(value):.6g}")
    if isinstance(value, dict):
        return {k: _round6(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round6(v) for v in value]
    return value


def _write_json(data, path) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(_round6(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def desk_benchmark_config(method: str = "selc", out_dir: str = "out",
                          trials=(1, 2, 3), alpha=0.9,
                          activation_epoch=AUTO) -> ExperimentConfig:
    """The fixed in-repo benchmark: 4 Gaussian blob classes, 40% symmetric
    label noise, a small two-hidden-layer net, 60 epochs with two lr drops.
    """
    from .config import (
        DatasetSpecConfig,
        ModelSpecConfig,
        NoiseSpecConfig,
        OptimizerSpecConfig,
    )

    return ExperimentConfig(
        dataset=DatasetSpecConfig(kind="blobs", n=4000, dim=16, num_classes=4,
                                  cluster_std=1.0, seed=0),
        noise=NoiseSpecConfig(kind="symmetric", eta=0.4),
        model=ModelSpecConfig(hidden_dims=[64, 64], activation="relu"),
        optimizer=OptimizerSpecConfig(lr=0.06, momentum=0.9, weight_decay=0.0,
                                      milestones=[24, 48], decay_factor=10.0,
                                      batch_size=128, epochs=60),
        method=MethodSpecConfig(name=method, alpha=alpha, activation_epoch=activation_epoch),
        trials=list(trials),
        out_dir=out_dir,
    )


def _build_clean_data(cfg: ExperimentConfig):
    """Returns (train_features, train_labels, test_features, test_labels, C)."""
    ds = cfg.dataset
    if ds.kind == "blobs":
        spec = BlobSpec(n=ds.n, dim=ds.dim, num_classes=ds.num_classes,
                        cluster_std=ds.cluster_std, seed=ds.seed, test_n=ds.test_n)
        train_x, train_y = generate_blobs(spec, split="train")
        test_x, test_y = generate_blobs(spec, split="test")
        return train_x, train_y, test_x, test_y, ds.num_classes
    if ds.kind == "idx":
        train_x, train_y = load_idx(ds.train_images, ds.train_labels)
        test_x, test_y = load_idx(ds.test_images, ds.test_labels)
    else:
        train_x, train_y = load_csv_dataset(ds.train_csv)
        test_x, test_y = load_csv_dataset(ds.test_csv)
    num_classes = int(max(train_y.max(), test_y.max())) + 1
    return train_x, train_y, test_x, test_y, num_classes


def _build_transition(cfg: ExperimentConfig, num_classes: int) -> TransitionMatrix:
    noise = cfg.noise
    if noise.kind == "none":
        return build_symmetric_q(num_classes, 0.0)
    if noise.kind == "symmetric":
        return build_symmetric_q(num_classes, noise.eta,
                                 exclude_true_class=noise.exclude_true_class)
    mapping = load_mapping(noise.mapping_file)
    return build_asymmetric_q(num_classes, noise.eta, mapping)


@dataclass
class _TrialResult:
    seed: int
    activation_epoch: int | None
    last_test_acc: float
    last_correction_acc: float
    last_memorized_frac: float
    plus_last_test_acc: float | None = None


class _EpochObserver:
    """Epoch hook that computes all per-epoch diagnostics for one run."""

    def __init__(self, model, view, true_labels, test_x, test_y):
        self.model = model
        self.view = view
        self.true_labels = true_labels
        self.test_x = test_x
        self.test_y = test_y
        self.noisy_onehot = one_hot(view.noisy_labels, view.num_classes)
        self.rows = []
        self.snapshots = []
        self.final_targets = None

    def __call__(self, event):
        per_sample, _ = soft_ce_loss(self.noisy_onehot, event.snapshot.probs)
        snap = LossSnapshot.from_losses(event.epoch, per_sample)
        self.snapshots.append(snap)
        gmm = fit_gmm2(snap.normalized)
        _, m3 = fit_kmeans2_and_m3(snap.normalized)
        test_probs = predict_proba(self.model, self.test_x)
        test_acc = float(np.mean(test_probs.argmax(axis=1) == self.test_y))
        targets = event.state.targets if event.state is not None else self.noisy_onehot
        self.final_targets = targets
        mem = memorization_stats(event.snapshot.probs, self.view.noisy_labels,
                                 self.true_labels, event.epoch)
        self.rows.append({
            "epoch": event.epoch,
            "lr": event.lr,
            "train_loss": event.train_loss,
            "train_acc": event.train_acc,
            "test_acc": test_acc,
            "m1": metric_m1(gmm),
            "m2": metric_m2(gmm),
            "m3": m3,
            "correction_acc": correction_accuracy(targets, self.true_labels),
            "clean_correct_frac": mem.clean_correct_frac,
            "clean_incorrect_frac": mem.clean_incorrect_frac,
            "mislabeled_correct_frac": mem.mislabeled_correct_frac,
            "mislabeled_memorized_frac": mem.mislabeled_memorized_frac,
            "mislabeled_other_frac": mem.mislabeled_other_frac,
        })
        return False


def _write_epochs_csv(rows, path) -> None:
    lines = [",".join(EPOCH_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in EPOCH_COLUMNS))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _estimate_activation_epoch(view, cfg: ExperimentConfig, seed: int) -> int:
    """CE warm phase with the online separation detector.

    The warm model uses the same init and shuffle streams as the main run,
    so the main run's pre-activation epochs replay this phase exactly.
    """
    method = cfg.method
    detector = OnlineTurningPointDetector(patience=method.detector_patience)
    noisy_onehot = one_hot(view.noisy_labels, view.num_classes)
    values = []

    def hook(event):
        per_sample, _ = soft_ce_loss(noisy_onehot, event.snapshot.probs)
        normalized = normalize_losses(per_sample)
        if method.metric_choice == "m3":
            _, value = fit_kmeans2_and_m3(normalized)
        else:
            gmm = fit_gmm2(normalized)
            value = metric_m1(gmm) if method.metric_choice == "m1" else metric_m2(gmm)
        values.append(value)
        return detector.observe(event.epoch, value)

    dims = [view.features.shape[1]] + [int(h) for h in cfg.model.hidden_dims] + [view.num_classes]
    model = init_mlp(dims, stream(seed, "init"), activation=cfg.model.activation)
    opt = make_optimizer(model, base_lr=cfg.optimizer.lr, momentum=cfg.optimizer.momentum,
                         weight_decay=cfg.optimizer.weight_decay,
                         milestones=cfg.optimizer.milestones,
                         decay_factor=cfg.optimizer.decay_factor)
    warm_cfg = SelcRunConfig(total_epochs=cfg.optimizer.epochs)
    run_training(view, model, opt, warm_cfg, METHOD_CE,
                 cfg.optimizer.batch_size, seed, epoch_hook=hook)
    if detector.fired:
        estimated = detector.estimate
    else:
        # ran out of epochs before the patience rule tripped
        estimated = int(np.argmax(values))
    return default_activation_epoch(estimated)


def _run_trial(cfg: ExperimentConfig, alpha: float, seed: int, trial_dir: str) -> _TrialResult:
    os.makedirs(trial_dir, exist_ok=True)
    train_x, train_y, test_x, test_y, num_classes = _build_clean_data(cfg)
    tm = _build_transition(cfg, num_classes)
    dataset = NoisyDataset(
        features=train_x,
        noisy_labels=inject_noise(train_y, tm, seed),
        true_labels=train_y,
        ids=np.arange(train_x.shape[0]),
        num_classes=num_classes,
    )
    view = dataset.train_view()
    method = cfg.method

    activation_epoch = None
    if method.name in ("selc", "option1", "selc_plus"):
        if method.activation_epoch == AUTO:
            activation_epoch = _estimate_activation_epoch(view, cfg, seed)
        else:
            activation_epoch = int(method.activation_epoch)

    run_cfg = SelcRunConfig(
        total_epochs=cfg.optimizer.epochs,
        activation_epoch=activation_epoch if activation_epoch is not None else 0,
        alpha=alpha,
        bootstrap_beta=method.beta,
        mixup_beta_param=method.mixup_beta_param,
    )
    dims = [view.features.shape[1]] + [int(h) for h in cfg.model.hidden_dims] + [num_classes]
    model = init_mlp(dims, stream(seed, "init"), activation=cfg.model.activation)
    opt = make_optimizer(model, base_lr=cfg.optimizer.lr, momentum=cfg.optimizer.momentum,
                         weight_decay=cfg.optimizer.weight_decay,
                         milestones=cfg.optimizer.milestones,
                         decay_factor=cfg.optimizer.decay_factor)
    observer = _EpochObserver(model, view, dataset.true_labels, test_x, test_y)
    train_method = "selc" if method.name == "selc_plus" else method.name
    model, state, _ = run_training(view, model, opt, run_cfg, train_method,
                                   cfg.optimizer.batch_size, seed, epoch_hook=observer)

    _write_epochs_csv(observer.rows, os.path.join(trial_dir, "epochs.csv"))
    save_loss_snapshots(observer.snapshots, os.path.join(trial_dir, "losses.csv"))
    ledger_path = os.path.join(trial_dir, "metrics.csv")
    if os.path.exists(ledger_path):
        os.remove(ledger_path)
    for row in observer.rows:
        for name in LEDGER_METRICS:
            append_metrics_ledger(ledger_path, row["epoch"], name, row[name])
    last = observer.rows[-1]
    confusion = confusion_of_corrections(observer.final_targets, dataset.true_labels)
    write_confusion_csv(confusion, os.path.join(trial_dir, f"confusion_epoch_{last['epoch']}.csv"))
    if state is not None:
        save_state(state, os.path.join(trial_dir, "targets_final.txt"))

    plus_acc = None
    if method.name == "selc_plus":
        plus_epochs = method.plus_epochs or cfg.optimizer.epochs
        plus_cfg = replace(run_cfg, total_epochs=plus_epochs)
        plus_model = init_mlp(dims, stream(seed, "plus_init"), activation=cfg.model.activation)
        plus_opt = make_optimizer(plus_model, base_lr=cfg.optimizer.lr,
                                  momentum=cfg.optimizer.momentum,
                                  weight_decay=cfg.optimizer.weight_decay,
                                  milestones=cfg.optimizer.milestones,
                                  decay_factor=cfg.optimizer.decay_factor)
        plus_rows = []

        def plus_hook(event):
            test_probs = predict_proba(plus_model, test_x)
            acc = float(np.mean(test_probs.argmax(axis=1) == test_y))
            plus_rows.append({"epoch": event.epoch, "lr": event.lr,
                              "train_loss": event.train_loss,
                              "train_acc": event.train_acc, "test_acc": acc})
            return False

        run_selc_plus(view.features, state.targets, plus_model, plus_opt, plus_cfg,
                      cfg.optimizer.batch_size, seed, epoch_hook=plus_hook)
        plus_acc = plus_rows[-1]["test_acc"]
        cols = ("epoch", "lr", "train_loss", "train_acc", "test_acc")
        lines = [",".join(cols)]
        for row in plus_rows:
            lines.append(",".join(_fmt(row[c]) for c in cols))
        with open(os.path.join(trial_dir, "plus_epochs.csv"), "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    return _TrialResult(
        seed=seed,
        activation_epoch=activation_epoch,
        last_test_acc=last["test_acc"],
        last_correction_acc=last["correction_acc"],
        last_memorized_frac=last["mislabeled_memorized_frac"],
        plus_last_test_acc=plus_acc,
    )


def _mean_stddev(values):
    values = [float(v) for v in values]
    if not values:
        return None, None
    mean = float(np.mean(values))
    stddev = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return mean, stddev


def _aggregate(results, key):
    per_trial = {str(r.seed): getattr(r, key) for r in results}
    if any(v is None for v in per_trial.values()):
        return None
    mean, stddev = _mean_stddev(per_trial.values())
    return {"per_trial": per_trial, "mean": mean, "stddev": stddev}


def _thread_count() -> int:
    raw = os.environ.get("SELC_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ParameterError(f"SELC_THREADS must be an integer, got {raw!r}")
    return max(1, threads)


def _run_at_alpha(cfg: ExperimentConfig, alpha: float, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    failures = {}

    def safe(seed):
        trial_dir = os.path.join(out_dir, f"trial_{seed}")
        try:
            return seed, _run_trial(cfg, alpha, seed, trial_dir), None
        except (ValueError, RuntimeError, OSError) as exc:
            return seed, None, f"{type(exc).__name__}: {exc}"

    threads = _thread_count()
    if threads > 1 and len(cfg.trials) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(safe, cfg.trials))
    else:
        outcomes = [safe(seed) for seed in cfg.trials]
    for seed, result, error in outcomes:
        if error is None:
            results[seed] = result
        else:
            failures[str(seed)] = error

    ordered = [results[s] for s in cfg.trials if s in results]
    summary = {
        "empty": len(ordered) == 0,
        "method": cfg.method.name,
        "alpha": alpha,
        "trials": list(cfg.trials),
        "completed": [r.seed for r in ordered],
        "failed": failures,
        "activation_epochs": {str(r.seed): r.activation_epoch for r in ordered},
        "last_epoch_test_acc": _aggregate(ordered, "last_test_acc") if ordered else None,
        "last_epoch_correction_acc": _aggregate(ordered, "last_correction_acc") if ordered else None,
        "last_epoch_memorized_frac": _aggregate(ordered, "last_memorized_frac") if ordered else None,
    }
    if cfg.method.name == "selc_plus" and ordered:
        summary["plus_last_epoch_test_acc"] = _aggregate(ordered, "plus_last_test_acc")
    _write_json(summary, os.path.join(out_dir, "summary.json"))
    return summary


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run all trials (and the alpha sweep, if configured); returns the
    root summary dict that is also written to ``summary.json``.
    """
    out_dir = os.environ.get("SELC_OUT_DIR") or cfg.out_dir
    alphas = alpha_values(cfg.method)
    uses_alpha = cfg.method.name in ("selc", "option1", "selc_plus")
    if uses_alpha and len(alphas) > 1:
        os.makedirs(out_dir, exist_ok=True)
        runs = {}
        for alpha in alphas:
            sub_dir = os.path.join(out_dir, f"alpha_{alpha:g}")
            runs[f"{alpha:g}"] = _run_at_alpha(cfg, alpha, sub_dir)
        means = [r["last_epoch_test_acc"]["mean"] for r in runs.values()
                 if r["last_epoch_test_acc"] is not None]
        summary = {
            "alpha_sweep": [f"{a:g}" for a in alphas],
            "runs": runs,
            "test_acc_spread": (max(means) - min(means)) if means else None,
        }
        _write_json(summary, os.path.join(out_dir, "summary.json"))
        return summary
    return _run_at_alpha(cfg, alphas[0], out_dir)
