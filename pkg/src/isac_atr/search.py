"""Random architecture search with a reproducible trial ledger.

Each trial draws one configuration uniformly from the search space,
trains it with the fixed optimizer settings and records the final
eval-mode test loss.  Trial seeds are split off a master seed sequence
in counter mode, so results do not depend on execution order and the
ledger is bit-reproducible.  Ranking is (loss, parameter count, seed);
only trials with status 'ok' are ranked.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataset import class_weights, label_counts
from .errors import ArchitectureError, DivergenceError, SearchError
from .model import Detector, DetectorConfig, TrainConfig, build_detector, evaluate, train

SAMPLED_FIELDS = ("C", "k_c", "s_c", "o_c", "k_m", "s_m", "f", "d")


@dataclass(frozen=True)
class SearchSpace:
    C: tuple = (2, 3, 4)
    k_c: tuple = (7, 5, 3)
    s_c: tuple = (2, 1)
    o_c: tuple = (16, 8, 4)
    k_m: tuple = (2, 1)
    s_m: tuple = (2, 1)
    f: tuple = (16, 32, 64)
    d: tuple = (0.8, 0.5)
    trials_per_factor: int = 80


@dataclass
class TrialRecord:
    index: int
    config: DetectorConfig
    status: str  # ok | infeasible | diverged
    loss: float
    accuracy: float
    param_count: int
    seed: int

    def rank_key(self):
        return (self.loss, self.param_count, self.seed)


def sample_config(space: SearchSpace, rng, factor: int = 0, num_classes: int = 8) -> DetectorConfig:
    """Independent uniform draw per field; first kernel follows the factor."""
    drawn = {
        name: getattr(space, name)[int(rng.integers(len(getattr(space, name))))]
        for name in SAMPLED_FIELDS
    }
    return DetectorConfig(F=factor, T=num_classes, **drawn)


def run_search(
    train_samples,
    test_samples,
    factor: int,
    trials: int,
    master_seed: int,
    epochs: int = 15,
    space: SearchSpace = None,
    num_classes: int = 8,
    injected=(),
    lr: float = 0.001,
    batch_size: int = 32,
):
    """Train `trials` sampled configs; returns (records, best_record, best_model).

    `injected` configurations occupy the first trial slots instead of a
    random draw (they still get the slot's training seed).
    """
    space = space or SearchSpace()
    shape = train_samples[0].features.data.shape
    input_hw = shape[:2]
    in_channels = shape[2]
    weights = class_weights(label_counts(train_samples, num_classes))
    children = np.random.SeedSequence(master_seed).spawn(trials)
    records = []
    best = None
    best_model = None
    for index, child in enumerate(children):
        cfg_seq, seed_seq = child.spawn(2)
        train_seed = int(np.random.default_rng(seed_seq).integers(0, 2**63))
        if index < len(injected):
            cfg = injected[index]
        else:
            cfg = sample_config(space, np.random.default_rng(cfg_seq), factor, num_classes)
        try:
            model = build_detector(cfg, input_hw, in_channels, seed=train_seed)
        except ArchitectureError:
            records.append(TrialRecord(index, cfg, "infeasible", float("nan"), float("nan"), 0, train_seed))
            continue
        tc = TrainConfig(batch_size=batch_size, lr=lr, epochs=epochs, seed=train_seed)
        try:
            train(model, train_samples, test_samples, tc, weights)
        except DivergenceError:
            records.append(
                TrialRecord(index, cfg, "diverged", float("nan"), float("nan"), model.param_count(), train_seed)
            )
            continue
        report = evaluate(model, test_samples, weights)
        record = TrialRecord(
            index, cfg, "ok", report.mean_loss, report.overall_accuracy, model.param_count(), train_seed
        )
        records.append(record)
        if best is None or record.rank_key() < best.rank_key():
            best = record
            best_model = model
    if best is None:
        raise SearchError(f"all {trials} trials infeasible or diverged")
    return records, best, best_model


LEDGER_COLUMNS = (
    "trial,status,C,k_c,k_first,s_c,o_c,k_m,s_m,f,d,F,T,loss,accuracy,param_count,seed"
)


def write_ledger(records, path) -> None:
    """Deterministic CSV, one row per trial.  Wall-clock timing belongs in
    the run manifest, not here, so reruns are byte-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LEDGER_COLUMNS + "\n")
        for r in records:
            c = r.config
            fh.write(
                f"{r.index},{r.status},{c.C},{c.k_c},{c.k_first},{c.s_c},{c.o_c},"
                f"{c.k_m},{c.s_m},{c.f},{c.d!r},{c.F},{c.T},{r.loss!r},{r.accuracy!r},"
                f"{r.param_count},{r.seed}\n"
            )
