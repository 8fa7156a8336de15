"""Accuracy metric, per-question-type reporting, and bias-gap summaries.

The accuracy of a prediction against a ground-truth answer list follows the
multi-annotator convention min(matching annotators / 3, 1). Synthetic examples
carry a single ground truth, which counts as three matching annotators when it
equals the prediction, so scores stay in {0, 1}.

Reports are built purely from stored (example, ground truth, prediction)
records, so they can be regenerated without re-running a model. Histograms in
the report are complete (each sums to 1); display-side CSVs truncate to the
top-8 answers per type for readability.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import DatasetSplit, SyntheticDataset
from .model import ModelParams, forward_batch
from .train import length_bucketed_batches, stack_batch


def vqa_accuracy(prediction: int, ground_truth) -> float:
    """min(#annotators matching the prediction / 3, 1); single-annotator
    examples count as three matches when equal."""
    gts = list(ground_truth)
    if not gts:
        raise ValueError("ground truth answer list must be non-empty")
    matches = sum(1 for g in gts if g == prediction)
    if len(gts) == 1:
        matches *= 3
    return min(matches / 3.0, 1.0)


@dataclass
class PredictionRecord:
    example_id: str
    qtype: int
    answer: int
    prediction: int


@dataclass
class TypeReport:
    name: str
    count: int
    accuracy: float
    gt_histogram: list[float]
    pred_histogram: list[float]


@dataclass
class EvalReport:
    split: str
    variant: str
    count: int
    overall: float
    per_type: dict[int, TypeReport]
    predictions: list[PredictionRecord]
    answers: list[str] = field(default_factory=list)
    checkpoint: str = ""
    data_dir: str = ""

    def type_weighted_mean(self) -> float:
        total = sum(tr.count for tr in self.per_type.values())
        return sum(tr.count * tr.accuracy for tr in self.per_type.values()) / total


def predict_split(params: ModelParams, split: DatasetSplit,
                  batch_size: int = 256) -> list[int]:
    """Deterministic predictions for every example, original order."""
    preds = np.zeros(len(split.examples), dtype=int)
    with T.no_grad():
        for batch in length_bucketed_batches(split, batch_size, rng=None):
            visual, labels, tokens, _ = stack_batch(split, batch)
            logits = forward_batch(params, visual, labels, tokens, training=False)
            preds[batch] = logits.data.argmax(axis=1)
    return [int(p) for p in preds]


def summarize_predictions(records: list[PredictionRecord], answer_count: int,
                          type_names: dict[int, str], split: str = "",
                          variant: str = "") -> EvalReport:
    """Aggregate stored predictions into overall/per-type accuracy tables and
    normalized answer histograms."""
    if not records:
        raise ValueError("cannot summarize an empty prediction list")
    by_type: dict[int, list[PredictionRecord]] = {}
    for rec in records:
        by_type.setdefault(rec.qtype, []).append(rec)
    per_type = {}
    for qtype in sorted(by_type):
        rows = by_type[qtype]
        gt_hist = np.zeros(answer_count)
        pred_hist = np.zeros(answer_count)
        acc = 0.0
        for rec in rows:
            gt_hist[rec.answer] += 1
            pred_hist[rec.prediction] += 1
            acc += vqa_accuracy(rec.prediction, [rec.answer])
        per_type[qtype] = TypeReport(
            name=type_names.get(qtype, str(qtype)),
            count=len(rows),
            accuracy=acc / len(rows),
            gt_histogram=(gt_hist / len(rows)).tolist(),
            pred_histogram=(pred_hist / len(rows)).tolist(),
        )
    overall = sum(vqa_accuracy(r.prediction, [r.answer]) for r in records) / len(records)
    return EvalReport(split=split, variant=variant, count=len(records),
                      overall=overall, per_type=per_type, predictions=records)


def evaluate_split(params: ModelParams, split: DatasetSplit,
                   ds: SyntheticDataset, batch_size: int = 256) -> EvalReport:
    """Run the model over a split (dropout off) and summarize."""
    if not split.examples:
        raise ValueError("cannot evaluate an empty split")
    preds = predict_split(params, split, batch_size)
    records = [PredictionRecord(example_id=ex.example_id, qtype=ex.qtype,
                                answer=ex.answer, prediction=p)
               for ex, p in zip(split.examples, preds)]
    report = summarize_predictions(records, ds.vocab.answer_count,
                                   ds.type_names(), split=split.name,
                                   variant=params.config.variant)
    report.answers = list(ds.vocab.answers)
    return report


def bias_gap(report_iid: EvalReport, report_ood: EvalReport) -> float:
    """In-distribution minus out-of-distribution overall accuracy."""
    return report_iid.overall - report_ood.overall


def constant_majority_floor(train_split: DatasetSplit, eval_split: DatasetSplit) -> float:
    """Accuracy of always answering each type's train-majority answer,
    computed by counting (the prior-exploitation baseline)."""
    majorities: dict[int, int] = {}
    counts: dict[int, dict[int, int]] = {}
    for ex in train_split.examples:
        counts.setdefault(ex.qtype, {})
        counts[ex.qtype][ex.answer] = counts[ex.qtype].get(ex.answer, 0) + 1
    for qtype, hist in counts.items():
        majorities[qtype] = max(sorted(hist), key=lambda a: hist[a])
    total = 0.0
    for ex in eval_split.examples:
        pred = majorities.get(ex.qtype)
        total += vqa_accuracy(pred, [ex.answer]) if pred is not None else 0.0
    return total / len(eval_split.examples)


# ---------------------------------------------------------------------------
# report files


def report_to_json(report: EvalReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "split": report.split,
        "variant": report.variant,
        "count": report.count,
        "overall": report.overall,
        "answers": report.answers,
        "checkpoint": report.checkpoint,
        "data_dir": report.data_dir,
        "per_type": {str(qt): asdict(tr) for qt, tr in report.per_type.items()},
        "predictions": [asdict(r) for r in report.predictions],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def report_from_json(path) -> EvalReport:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"evaluation report not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    per_type = {int(qt): TypeReport(**tr) for qt, tr in payload["per_type"].items()}
    predictions = [PredictionRecord(**r) for r in payload["predictions"]]
    return EvalReport(split=payload["split"], variant=payload["variant"],
                      count=payload["count"], overall=payload["overall"],
                      per_type=per_type, predictions=predictions,
                      answers=payload.get("answers", []),
                      checkpoint=payload.get("checkpoint", ""),
                      data_dir=payload.get("data_dir", ""))


def comparison_csv(baseline: EvalReport, vgqe: EvalReport, path) -> None:
    """Side-by-side per-type accuracy table, overall row last."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    types = sorted(set(baseline.per_type) | set(vgqe.per_type))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_type", "n", "baseline", "vgqe"])
        for qt in types:
            b = baseline.per_type.get(qt)
            v = vgqe.per_type.get(qt)
            name = (b or v).name
            n = (b.count if b else 0) + (0 if b else v.count)
            writer.writerow([name, n,
                             "" if b is None else repr(b.accuracy),
                             "" if v is None else repr(v.accuracy)])
        writer.writerow(["overall", baseline.count,
                         repr(baseline.overall), repr(vgqe.overall)])


def histograms_csv(reports: dict[str, EvalReport], train_hists: dict[int, np.ndarray],
                   answers: list[str], type_names: dict[int, str], path,
                   top: int = 8) -> None:
    """Long-format answer-distribution table: one row per (type, answer) with
    the train prior, the evaluated split's ground truth, and each model's
    prediction mass. Rows truncate to the top answers per type; the complete
    histograms live in the report JSONs.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sources = list(reports)
    first = reports[sources[0]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_type", "answer", "train_gt", "split_gt"]
                        + [f"{s}_pred" for s in sources])
        for qt in sorted(train_hists):
            train_hist = np.asarray(train_hists[qt])
            gt_hist = (np.asarray(first.per_type[qt].gt_histogram)
                       if qt in first.per_type else np.zeros_like(train_hist))
            mass = train_hist + gt_hist
            for a in np.argsort(-mass)[:top]:
                if mass[a] == 0:
                    continue
                row = [type_names.get(qt, str(qt)), answers[a],
                       repr(float(train_hist[a])), repr(float(gt_hist[a]))]
                for s in sources:
                    tr = reports[s].per_type.get(qt)
                    row.append("" if tr is None else repr(float(tr.pred_histogram[a])))
                writer.writerow(row)
