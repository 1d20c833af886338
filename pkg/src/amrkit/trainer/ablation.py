"""The four-variant ablation protocol."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .. import tensorcore as tc
from ..errors import WriteError
from ..mcanet import McanetConfig, McanetModel
from .config import TrainConfig
from .loop import evaluate, train

VARIANTS: dict[str, dict] = {
    "full": {},
    "wo_paff": {"enable_paff": False},
    "wo_wavefilter": {"enable_wavefilter": False},
    "wo_fusion_gate": {"enable_fusion_gate": False},
}


@dataclass
class AblationRun:
    variant: str
    seed: int
    n_parameters: int
    overall_accuracy: float
    highest_accuracy: float
    best_epoch: int
    epochs_run: int
    best_val_loss: float
    seconds: float

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class AblationReport:
    runs: list[AblationRun]
    parameter_names: dict[str, list[str]] = field(default_factory=dict)

    def variants(self) -> list[str]:
        return list(dict.fromkeys(r.variant for r in self.runs))

    def n_parameters(self) -> dict[str, int]:
        return {r.variant: r.n_parameters for r in self.runs}

    def summary(self) -> dict[str, dict]:
        """Mean and sample std over seeds, with accuracy deltas relative to ``full``."""
        out = {}
        full = [r for r in self.runs if r.variant == "full"]
        full_by_seed = {r.seed: r.overall_accuracy for r in full}
        for v in self.variants():
            rs = [r for r in self.runs if r.variant == v]
            acc = np.array([r.overall_accuracy for r in rs])
            ebv = np.array([r.best_epoch for r in rs], dtype=float)
            deltas = np.array([r.overall_accuracy - full_by_seed[r.seed] for r in rs
                               if r.seed in full_by_seed])
            out[v] = {
                "n_parameters": rs[0].n_parameters,
                "seeds": [r.seed for r in rs],
                "overall_accuracy_mean": float(acc.mean()),
                "overall_accuracy_std": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
                "highest_accuracy_mean": float(np.mean([r.highest_accuracy for r in rs])),
                "epochs_to_best_val_mean": float(ebv.mean()),
                "epochs_to_best_val": [r.best_epoch for r in rs],
                "delta_vs_full_mean": float(deltas.mean()) if len(deltas) else None,
                "delta_vs_full_std": float(deltas.std(ddof=1)) if len(deltas) > 1 else 0.0,
            }
        return out

    def to_dict(self) -> dict:
        return {"runs": [r.to_dict() for r in self.runs], "summary": self.summary()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            paths = {"json": out / "ablation.json", "csv": out / "ablation.csv"}
            paths["json"].write_text(self.to_json() + "\n")
            with open(paths["csv"], "w", newline="") as fh:
                w = csv.writer(fh)
                cols = ["variant", "n_parameters", "overall_accuracy_mean", "overall_accuracy_std",
                        "delta_vs_full_mean", "delta_vs_full_std", "epochs_to_best_val_mean"]
                w.writerow(cols)
                for v, s in self.summary().items():
                    w.writerow([v] + [s[c] for c in cols[1:]])
        except OSError as exc:
            raise WriteError(f"cannot write ablation report: {exc}", path=str(out)) from exc
        return paths


def run_ablation(model_cfg: McanetConfig, train_set, val_set, test_set, train_cfg: TrainConfig | None = None,
                 seeds=(0, 1, 2), variants=None, out_dir=None,
                 progress: Callable[[str, int, dict], None] | None = None) -> AblationReport:
    """Train every variant under each seed with identical data and budget.

    Seed ``s`` sets both the model initialisation and the batch order.
    """
    train_cfg = train_cfg or TrainConfig()
    variants = variants or list(VARIANTS)
    runs, names = [], {}
    for v in variants:
        for seed in seeds:
            cfg = replace(model_cfg, init_seed=int(seed), **VARIANTS[v])
            with tc.default_dtype(np.float32):
                model = McanetModel(cfg)
            names[v] = [k for k, _ in model.named_parameters()]
            cb = None if progress is None else (lambda rec, v=v, seed=seed: progress(v, seed, rec))
            run_dir = None if out_dir is None else Path(out_dir) / v / f"seed{seed}"
            res = train(model, train_set, val_set, replace(train_cfg, seed=int(seed)), out_dir=run_dir,
                        progress=cb)
            rep = evaluate(model, test_set, train_cfg.eval_batch_size)
            rep.loss_curve = res.history
            if run_dir is not None:
                rep.write(run_dir)
            runs.append(AblationRun(v, int(seed), model.num_parameters(), rep.overall_accuracy,
                                    rep.highest_accuracy, res.best_epoch, res.epochs_run,
                                    res.best_val_loss, round(res.seconds, 3)))
    report = AblationReport(runs, names)
    if out_dir is not None:
        report.write(out_dir)
    return report
