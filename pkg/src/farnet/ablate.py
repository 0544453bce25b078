"""Ablation sweep over the loss-term configurations."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .config import RunConfig
from .data import Dataset
from .train import evaluate, train

__all__ = ["VARIANTS", "variant_query_source", "run_ablation", "write_ablation_csv"]

# (label, slug, config flag overrides)
VARIANTS = [
    ("w/o L_Late", "wo_late", {"use_late": False}),
    ("w/o L_Attention", "wo_attention", {"use_attention": False}),
    ("w/o L_PI", "wo_pi", {"use_pi": False}),
    ("w/o L_Res", "wo_res", {"use_res": False}),
    ("ESAM only", "esam_only", {"use_res": False, "use_pi": False}),
    ("ARM only", "arm_only", {"use_late": False, "use_attention": False}),
    ("FAR-Net", "farnet", {}),
]


def variant_query_source(cfg: RunConfig) -> str:
    """Evaluate each variant with a representation its own losses train.

    The cross-attention query projection only receives gradients from the
    resilience loss, and the fused-projection MLP only from the late loss;
    scoring a variant with an untrained head would measure initialization
    noise instead of the variant.
    """
    if cfg.use_res:
        return cfg.query_source
    if cfg.use_late:
        return "mlp_fu"
    return cfg.query_source


def run_ablation(cfg: RunConfig, dataset: Dataset, seeds: list[int],
                 out_dir: Path) -> list[dict]:
    out_dir = Path(out_dir)
    rows = []
    for label, slug, flags in VARIANTS:
        r1s, r5s, avgs = [], [], []
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed, **flags)
            run_dir = out_dir / slug / f"seed{seed}"
            result = train(run_cfg, dataset, run_dir)
            report = evaluate(result.model, dataset, "val", variant_query_source(run_cfg))
            r1s.append(report.recall_at[1])
            r5s.append(report.recall_at[5])
            avgs.append(report.avg)
        rows.append({
            "variant": label,
            "r1_per_seed": r1s,
            "mean_r1": sum(r1s) / len(r1s),
            "mean_r5": sum(r5s) / len(r5s),
            "mean_avg": sum(avgs) / len(avgs),
        })
    return rows


def write_ablation_csv(rows: list[dict], seeds: list[int], path: Path) -> None:
    header = ["variant"] + [f"r1_seed{s}" for s in seeds] + ["mean_r1", "mean_r5", "mean_avg"]
    lines = [",".join(header)]
    for row in rows:
        cells = [row["variant"]]
        cells += [repr(v) for v in row["r1_per_seed"]]
        cells += [repr(row["mean_r1"]), repr(row["mean_r5"]), repr(row["mean_avg"])]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
