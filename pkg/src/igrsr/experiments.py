"""Experiment orchestration: baseline vs IGR-SR, ablations, noise robustness
and token-count sweeps, with report emission.

Every trained model is identified by a deterministic run id derived from the
config fingerprint and the run's coordinates (model, variant, dataset, seed).
Runs are cached on the :class:`Experiment` object, so an ablation study that
follows a main comparison reuses the baseline and full-model runs instead of
retraining them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backbone import SASRec
from .config import VARIANTS, ExperimentConfig
from .data import (
    InteractionDataset,
    generate_synthetic,
    ingest,
    inject_noise,
    leave_one_out_split,
    load_dataset,
)
from .metrics import RankingMetrics, rank_and_score
from .model import IGRSR
from .trainer import FitResult, fit

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
PROTOCOL = {
    "ranking": "full",
    "candidates": "all items except the user's earlier interactions",
    "tie_break": "smaller item id ranks first",
    "split": "leave-one-out (last item test, second-to-last validation)",
    "model_selection": "early stopping on validation recall@10",
}
METRIC_KEYS = ("recall@10", "recall@20", "ndcg@10", "ndcg@20")


def load_data(config: ExperimentConfig) -> InteractionDataset:
    """The dataset named by ``config.data``: a file on disk or the synthetic generator."""
    dc = config.data
    if dc.path is not None:
        if dc.format == "dataset":
            return load_dataset(dc.path)
        return ingest(dc.path, dc.format, core=dc.core)
    return generate_synthetic(
        users=dc.synthetic_users,
        items=dc.synthetic_items,
        intent_count=dc.synthetic_intents,
        seq_len_range=(dc.seq_len_min, dc.seq_len_max),
        seed=dc.data_seed,
        noise=dc.synthetic_noise,
        switch_prob=dc.switch_prob,
        core=dc.core,
    )


@dataclass
class Run:
    run_id: str
    model_name: str  # "sasrec" or "igrsr:<variant>"
    dataset: str  # "clean" or "noisy"
    seed: int
    model: object
    fit: FitResult
    val: RankingMetrics
    test: RankingMetrics
    seconds: float

    def summary(self) -> dict:
        params = self.model.params
        return {
            "run_id": self.run_id,
            "model": self.model_name,
            "dataset": self.dataset,
            "seed": self.seed,
            "best_epoch": self.fit.best_epoch,
            "steps": self.fit.steps,
            "val": self.val.to_dict(),
            "test": self.test.to_dict(),
            "trainable_tensors": len(params.trainable()),
            "trainable_scalars": params.scalar_count(),
            "fingerprint": self.model.fingerprint(),
        }


def _mean_std(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0}


def relative_drop(clean: float, noisy: float) -> float:
    """``(clean - noisy) / clean``; NaN when the clean score is zero."""
    return (clean - noisy) / clean if clean > 0 else math.nan


class Experiment:
    """Owns the datasets, the run cache and the accumulated timing/log records."""

    def __init__(self, config: ExperimentConfig, dataset: InteractionDataset | None = None):
        self.config = config
        self.fingerprint = config.fingerprint()
        self._datasets: dict[str, InteractionDataset] = {}
        if dataset is not None:
            self._datasets["clean"] = dataset
        self._splits: dict[str, tuple] = {}
        self._runs: dict[tuple, Run] = {}
        self._backbones: dict[tuple, SASRec] = {}
        self.pretrained: dict[int, SASRec] = {}  # seed -> externally supplied frozen backbone (clean data)

    # -- data -----------------------------------------------------------------
    def dataset(self, tag: str = "clean") -> InteractionDataset:
        if tag not in self._datasets:
            if tag == "clean":
                self._datasets[tag] = load_data(self.config)
            elif tag == "noisy":
                self._datasets[tag] = inject_noise(self.dataset("clean"), self.config.noise_ratio, self.config.noise_seed)
            else:
                raise KeyError(tag)
        return self._datasets[tag]

    def splits(self, tag: str = "clean"):
        if tag not in self._splits:
            self._splits[tag] = leave_one_out_split(self.dataset(tag))
        return self._splits[tag]

    def run_id(self, key: tuple) -> str:
        """Same config fingerprint and same training coordinates give the same id."""
        return hashlib.sha256(json.dumps([self.fingerprint, *key]).encode()).hexdigest()[:12]

    @property
    def runs(self) -> list[Run]:
        return list(self._runs.values())

    # -- training ---------------------------------------------------------------
    def _train(self, key: tuple, model_name: str, tag: str, seed: int, model, train_config) -> Run:
        if key in self._runs:
            return self._runs[key]
        cfg = self.config
        ds, splits = self.dataset(tag), self.splits(tag)
        started = time.perf_counter()
        result = fit(model, ds, splits, replace(train_config, seed=seed), cfg.model.n_max, eval_batch_size=cfg.eval_batch_size)
        val = rank_and_score(model, ds, splits[1], cfg.model.n_max, cfg.eval_batch_size)
        test = rank_and_score(model, ds, splits[2], cfg.model.n_max, cfg.eval_batch_size)
        run = Run(self.run_id(key), model_name, tag, seed, model, result, val, test, time.perf_counter() - started)
        log.info("%s %s seed=%d test recall@10=%.4f (%.1fs)", model_name, tag, seed, test.recall[10], run.seconds)
        self._runs[key] = run
        return run

    def baseline(self, seed: int, tag: str = "clean") -> Run:
        """SASRec-style baseline at the main model width."""
        m = self.config.model
        model = SASRec(self.dataset(tag).item_count, m.hidden_dim, m.n_max, m.layers, m.heads, m.dropout, seed=seed)
        key = ("sasrec", model.hyperparams(), tag, seed, self.config.train)
        return self._train(_freeze_key(key), "sasrec", tag, seed, model, self.config.train)

    def backbone(self, seed: int, tag: str = "clean") -> SASRec:
        """Pretrained and frozen encoder for the intent distiller.

        When its shape and schedule coincide with the baseline's, the baseline
        run is the same computation and is reused.
        """
        if tag == "clean" and seed in self.pretrained:
            return self.pretrained[seed]
        m = self.config.model
        model = SASRec(self.dataset(tag).item_count, m.intent_dim, m.n_max, m.backbone_layers, m.backbone_heads, m.dropout, seed=seed)
        key = _freeze_key(("sasrec", model.hyperparams(), tag, seed, self.config.backbone))
        if key not in self._backbones:
            run = self._train(key, "sasrec", tag, seed, model, self.config.backbone)
            run.model.freeze()
            self._backbones[key] = run.model
        return self._backbones[key]

    def igrsr(self, seed: int, variant: str = "full", tag: str = "clean", **overrides) -> Run:
        mc = replace(self.config.model, variant=variant, **overrides)
        backbone = self.backbone(seed, tag) if variant != "no_lid" else None
        model = IGRSR(self.dataset(tag).item_count, mc, backbone, seed=seed)
        train = self.config.train if variant != "no_icr" else replace(self.config.train, lambda_icr=0.0)
        key = _freeze_key(("igrsr", mc, tag, seed, train))
        return self._train(key, f"igrsr:{variant}", tag, seed, model, train)

    # -- reports ----------------------------------------------------------------
    def _report(self, kind: str, runs: list[Run], **sections) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": kind,
            "config_fingerprint": self.fingerprint,
            "config": self.config.to_dict(),
            "protocol": PROTOCOL,
            "dataset": self.dataset("clean").stats(),
            "seeds": list(self.config.seeds),
            "runs": [r.summary() for r in runs],
            **sections,
        }

    @staticmethod
    def _aggregate(runs: list[Run]) -> dict:
        out: dict[str, dict] = {}
        for name in dict.fromkeys(f"{r.model_name}|{r.dataset}" for r in runs):
            group = [r for r in runs if f"{r.model_name}|{r.dataset}" == name]
            out[name] = {k: _mean_std([r.test.to_dict()[k] for r in group]) for k in METRIC_KEYS}
            out[name]["run_ids"] = [r.run_id for r in group]
        return out

    def run_main(self) -> dict:
        runs = []
        for seed in self.config.seeds:
            runs += [self.baseline(seed), self.igrsr(seed, "full")]
        summary = self._aggregate(runs)
        base, full = summary["sasrec|clean"], summary["igrsr:full|clean"]
        deltas = {k: (full[k]["mean"] - base[k]["mean"]) / base[k]["mean"] if base[k]["mean"] > 0 else math.nan for k in METRIC_KEYS}
        return self._report("main", runs, summary=summary, relative_gain_over_baseline=deltas)

    def run_ablations(self) -> dict:
        runs, census = [], {}
        for seed in self.config.seeds:
            runs.append(self.baseline(seed))
            for variant in VARIANTS:
                run = self.igrsr(seed, variant)
                runs.append(run)
                census[variant] = {
                    "trainable_tensors": len(run.model.params.trainable()),
                    "trainable_scalars": run.model.params.scalar_count(),
                }
        summary = self._aggregate(runs)
        full = summary["igrsr:full|clean"]["recall@10"]["mean"]
        margins = {name: full - s["recall@10"]["mean"] for name, s in summary.items() if name != "igrsr:full|clean"}
        return self._report("ablation", runs, summary=summary, parameter_census=census, full_minus_other_recall10=margins)

    def run_noise(self) -> dict:
        runs, drops = [], {}
        for name, build in (("sasrec", self.baseline), ("igrsr:full", lambda s, t: self.igrsr(s, "full", t))):
            per_seed = []
            for seed in self.config.seeds:
                clean, noisy = build(seed, "clean"), build(seed, "noisy")
                runs += [clean, noisy]
                per_seed.append(
                    {
                        "seed": seed,
                        "clean_run": clean.run_id,
                        "noisy_run": noisy.run_id,
                        "clean": clean.test.recall[10],
                        "noisy": noisy.test.recall[10],
                        "relative_drop": relative_drop(clean.test.recall[10], noisy.test.recall[10]),
                    }
                )
            mean_clean = float(np.mean([p["clean"] for p in per_seed]))
            mean_noisy = float(np.mean([p["noisy"] for p in per_seed]))
            drops[name] = {
                "per_seed": per_seed,
                "clean_recall@10": mean_clean,
                "noisy_recall@10": mean_noisy,
                "relative_drop": relative_drop(mean_clean, mean_noisy),
            }
        return self._report("noise", runs, noise_ratio=self.config.noise_ratio, summary=self._aggregate(runs), robustness=drops)

    def run_token_sweep(self) -> tuple[dict, list[dict]]:
        """One full-model run per (k, m, seed); all share the seed's frozen backbone."""
        runs, rows, backbone_fps = [], [], {}
        for seed in self.config.seeds:
            backbone_fps[seed] = self.backbone(seed).fingerprint()
            for k in self.config.sweep_prefix:
                for m in self.config.sweep_intents:
                    run = self.igrsr(seed, "full", prefix_tokens=k, intent_tokens=m)
                    runs.append(run)
                    rows.append({"k": k, "m": m, "seed": seed, "recall@10": run.test.recall[10], "ndcg@10": run.test.ndcg[10]})
        report = self._report("sweep", runs, grid=rows, backbone_fingerprints={str(s): f for s, f in backbone_fps.items()})
        return report, rows


def _freeze_key(key) -> tuple:
    """Hashable cache key from nested dataclasses/dicts."""
    return tuple(json.dumps(x.__dict__ if hasattr(x, "__dict__") else x, sort_keys=True, default=str) for x in key)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_outputs(out_dir: str | Path, report: dict, runs: list[Run]) -> None:
    """``report.json`` (deterministic), ``metrics.csv``, ``train_log.jsonl`` and ``timing.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "model", "dataset", "seed", "split", *METRIC_KEYS])
        for run in runs:
            for split, metrics in (("val", run.val), ("test", run.test)):
                values = metrics.to_dict()
                writer.writerow([run.run_id, run.model_name, run.dataset, run.seed, split, *(f"{values[k]:.6f}" for k in METRIC_KEYS)])
    with open(out / "train_log.jsonl", "w") as fh:
        for run in runs:
            for record in run.fit.log:
                fh.write(json.dumps({"run_id": run.run_id, "model": run.model_name, "dataset": run.dataset, "seed": run.seed, **record}) + "\n")
    timing = {"runs": {r.run_id: r.seconds for r in runs}, "total_seconds": sum(r.seconds for r in runs)}
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")


def write_sweep_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["k", "m", "seed", "recall@10", "ndcg@10"])
        writer.writeheader()
        writer.writerows(rows)
