"""Evaluation metrics and their serialised forms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import WriteError


def confusion_matrix(true: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, np.int64), np.asarray(pred, np.int64)), 1)
    return cm


def snr_key(snr: float) -> str:
    return f"{float(snr):g}"


@dataclass
class MetricsReport:
    """Per-SNR and pooled accuracy plus confusion counts.

    ``overall_accuracy`` pools every test sample; ``highest_accuracy`` is the
    maximum of the per-SNR accuracies.
    """

    class_names: list[str]
    per_snr_accuracy: dict[float, float]
    per_snr_count: dict[float, int]
    overall_accuracy: float
    highest_accuracy: float
    confusion: dict[float, np.ndarray]
    overall_confusion: np.ndarray
    loss: float | None = None
    loss_curve: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, labels, preds, snr_db, class_names, loss=None) -> "MetricsReport":
        labels, preds = np.asarray(labels), np.asarray(preds)
        snr_db = np.asarray(snr_db, dtype=np.float64)
        k = len(class_names)
        per_acc, per_n, conf = {}, {}, {}
        for s in np.unique(snr_db):
            mask = snr_db == s
            per_n[float(s)] = int(mask.sum())
            per_acc[float(s)] = float(np.mean(labels[mask] == preds[mask]))
            conf[float(s)] = confusion_matrix(labels[mask], preds[mask], k)
        overall = float(np.mean(labels == preds)) if len(labels) else 0.0
        return cls(list(class_names), per_acc, per_n, overall, max(per_acc.values(), default=0.0),
                   conf, confusion_matrix(labels, preds, k), loss)

    @property
    def snr_grid(self) -> list[float]:
        return sorted(self.per_snr_accuracy)

    def to_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "overall_accuracy": self.overall_accuracy,
            "highest_accuracy": self.highest_accuracy,
            "loss": self.loss,
            "per_snr_accuracy": {snr_key(s): self.per_snr_accuracy[s] for s in self.snr_grid},
            "per_snr_count": {snr_key(s): self.per_snr_count[s] for s in self.snr_grid},
            "confusion": {snr_key(s): self.confusion[s].tolist() for s in self.snr_grid},
            "overall_confusion": self.overall_confusion.tolist(),
            "loss_curve": self.loss_curve,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        def fkeys(m):
            return {float(k): v for k, v in m.items()}

        return cls(list(d["class_names"]), fkeys(d["per_snr_accuracy"]),
                   {k: int(v) for k, v in fkeys(d["per_snr_count"]).items()},
                   float(d["overall_accuracy"]), float(d["highest_accuracy"]),
                   {k: np.asarray(v, np.int64) for k, v in fkeys(d["confusion"]).items()},
                   np.asarray(d["overall_confusion"], np.int64), d.get("loss"),
                   list(d.get("loss_curve", [])), dict(d.get("extra", {})))

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def write(self, out_dir, prefix: str = "") -> dict[str, Path]:
        """metrics.json, per_snr_accuracy.csv and one confusion CSV per SNR bucket."""
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            paths = {"metrics": out / f"{prefix}metrics.json",
                     "per_snr": out / f"{prefix}per_snr_accuracy.csv",
                     "confusion_dir": out / f"{prefix}confusion"}
            paths["metrics"].write_text(self.to_json() + "\n")
            with open(paths["per_snr"], "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["snr_db", "accuracy", "count"])
                for s in self.snr_grid:
                    w.writerow([snr_key(s), repr(self.per_snr_accuracy[s]), self.per_snr_count[s]])
            paths["confusion_dir"].mkdir(exist_ok=True)
            for s in self.snr_grid:
                with open(paths["confusion_dir"] / f"snr_{snr_key(s)}.csv", "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["true\\pred"] + self.class_names)
                    for name, row in zip(self.class_names, self.confusion[s]):
                        w.writerow([name] + [int(c) for c in row])
        except OSError as exc:
            raise WriteError(f"cannot write metrics: {exc}", path=str(out)) from exc
        return paths
