"""The bias-shift comparison: baseline vs grounded encoder under changing priors.

Trains both variants over several seeds on one dataset whose out-of-
distribution test split inverts the train answer priors, and summarizes
median accuracies, the out-of-distribution gap between the variants, and the
constant-majority floor (the score of pure prior exploitation).
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

from .data import SyntheticDataset
from .evaluate import constant_majority_floor, evaluate_split
from .model import ModelConfig, init_model
from .train import TrainConfig, constant_schedule, train

EXPERIMENT_EPOCHS = 6
EXPERIMENT_LR = 1e-3


@dataclass
class VariantOutcome:
    iid: list[float] = field(default_factory=list)
    ood: list[float] = field(default_factory=list)

    @property
    def median_iid(self) -> float:
        return statistics.median(self.iid)

    @property
    def median_ood(self) -> float:
        return statistics.median(self.ood)


@dataclass
class ExperimentResult:
    outcomes: dict[str, VariantOutcome]
    floor_iid: float
    floor_ood: float
    seconds: float

    @property
    def ood_gap(self) -> float:
        return self.outcomes["vgqe"].median_ood - self.outcomes["baseline"].median_ood

    @property
    def iid_delta(self) -> float:
        return self.outcomes["vgqe"].median_iid - self.outcomes["baseline"].median_iid

    def summary_lines(self) -> list[str]:
        base, vgqe = self.outcomes["baseline"], self.outcomes["vgqe"]
        return [
            f"constant-majority floor: iid {self.floor_iid:.3f}, ood {self.floor_ood:.3f}",
            f"baseline median: iid {base.median_iid:.3f}, ood {base.median_ood:.3f}",
            f"vgqe     median: iid {vgqe.median_iid:.3f}, ood {vgqe.median_ood:.3f}",
            f"out-of-distribution gap: {100 * self.ood_gap:+.1f} points",
            f"in-distribution delta:   {100 * self.iid_delta:+.1f} points",
            f"wall time: {self.seconds:.0f}s",
        ]


def experiment_train_config(seed: int, epochs: int = EXPERIMENT_EPOCHS,
                            lr: float = EXPERIMENT_LR) -> TrainConfig:
    """Short constant-rate recipe sized for the CPU budget of the comparison."""
    return TrainConfig(epochs=epochs, batch_size=128, seed=seed,
                       schedule=constant_schedule(lr))


def run_bias_shift(ds: SyntheticDataset, seeds=(0, 1, 2, 3, 4),
                   epochs: int = EXPERIMENT_EPOCHS, lr: float = EXPERIMENT_LR,
                   progress=None) -> ExperimentResult:
    started = time.perf_counter()
    outcomes = {"baseline": VariantOutcome(), "vgqe": VariantOutcome()}
    for variant in ("baseline", "vgqe"):
        for seed in seeds:
            cfg = ModelConfig(variant=variant, d_v=ds.config.d_v,
                              d_w=ds.config.d_w,
                              answer_count=ds.vocab.answer_count,
                              vocab_size=len(ds.vocab.tokens), seed=seed)
            params = init_model(cfg, embedding_vectors=ds.vocab.embedding)
            train(params, ds.train, experiment_train_config(seed, epochs, lr))
            iid = evaluate_split(params, ds.test_iid, ds).overall
            ood = evaluate_split(params, ds.test, ds).overall
            outcomes[variant].iid.append(iid)
            outcomes[variant].ood.append(ood)
            if progress is not None:
                progress(f"{variant} seed {seed}: iid {iid:.3f} ood {ood:.3f}")
    return ExperimentResult(
        outcomes=outcomes,
        floor_iid=constant_majority_floor(ds.train, ds.test_iid),
        floor_ood=constant_majority_floor(ds.train, ds.test),
        seconds=time.perf_counter() - started,
    )
