"""Training loop, evaluation driver, and metrics logging."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import Dataset, Triplet
from .model import Model, ModelConfig, TripletArrays
from .numerics import AdamW, Rng, Tape
from .retrieval import EmbeddingIndex, RecallReport, build_report, rank_many

__all__ = [
    "METRIC_FIELDS",
    "model_config_from_run",
    "build_model",
    "batch_arrays",
    "evaluate",
    "train",
    "restore_model",
]

METRIC_FIELDS = ("epoch", "loss_late", "loss_attention", "loss_res", "loss_pi",
                 "loss_total", "val_recall_at_1")

_SHUFFLE_STREAM = 23
_PERTURB_STREAM = 29

# fixed-shape schedule: linear warmup into the configured peak rate, then
# cosine decay; sharp-temperature contrastive training collapses embeddings
# when the peak rate hits cold parameters
_WARMUP_FRAC = 0.1
_FINAL_LR_FRAC = 0.1


def lr_at_step(step: int, total_steps: int, peak: float) -> float:
    warmup = max(1, int(_WARMUP_FRAC * total_steps))
    if step < warmup:
        return peak * (step + 1) / warmup
    if total_steps <= warmup:
        return peak
    frac = (step - warmup) / max(1, total_steps - warmup)
    floor = _FINAL_LR_FRAC * peak
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * frac))


def model_config_from_run(cfg: RunConfig, dataset: Dataset) -> ModelConfig:
    image_size = dataset.manifest.image_size
    if cfg.image_size != image_size:
        raise ConfigError(
            f"config image_size={cfg.image_size} but dataset renders {image_size}"
        )
    if image_size % cfg.patch != 0:
        raise ConfigError(
            f"dataset image size {image_size} not divisible by patch {cfg.patch}"
        )
    return ModelConfig(
        vocab_size=len(dataset.vocabulary),
        d=cfg.d,
        layers=cfg.layers,
        heads=cfg.heads,
        patch=cfg.patch,
        image_size=image_size,
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
        tau=cfg.tau,
        negatives_mode=cfg.negatives_mode,
        attention_negatives=cfg.attention_negatives,
        stats_mode=cfg.stats_mode,
        share_image_encoders=cfg.share_image_encoders,
        use_late=cfg.use_late,
        use_attention=cfg.use_attention,
        use_res=cfg.use_res,
        use_pi=cfg.use_pi,
    )


def build_model(cfg: RunConfig, dataset: Dataset) -> Model:
    return Model(model_config_from_run(cfg, dataset), Rng(cfg.seed))


def batch_arrays(dataset: Dataset, triplets: list[Triplet]) -> TripletArrays:
    refs = np.stack([dataset.images[t.reference_id] for t in triplets])
    tgts = np.stack([dataset.images[t.target_id] for t in triplets])
    ids = np.asarray([dataset.token_ids(t) for t in triplets], dtype=np.int64)
    return TripletArrays(ref_images=refs, token_ids=ids, tgt_images=tgts)


def gallery_index(model: Model, dataset: Dataset) -> EmbeddingIndex:
    entries = dataset.manifest.gallery
    images = np.stack([dataset.images[e["id"]] for e in entries])
    return EmbeddingIndex(ids=[e["id"] for e in entries],
                          matrix=model.gallery_embeddings(images))


def evaluate(model: Model, dataset: Dataset, split: str,
             query_source: str, index: EmbeddingIndex | None = None) -> RecallReport:
    triplets = dataset.split(split)
    if not triplets:
        raise ConfigError(f"split {split!r} is empty")
    if index is None:
        index = gallery_index(model, dataset)
    batch = batch_arrays(dataset, triplets)
    queries = model.query_embeddings(batch.ref_images, batch.token_ids, query_source)
    rankings = rank_many(queries, index)
    truths = [t.target_id for t in triplets]
    groups = [set(dataset.groups[t.subset_group]) for t in triplets]
    return build_report(rankings, truths, groups)


def _val_recall_at_1(model: Model, dataset: Dataset, query_source: str) -> float:
    report = evaluate(model, dataset, "val", query_source)
    return report.recall_at[1]


def _epoch_record(epoch: int, sums: dict[str, float], n_steps: int,
                  val_r1: float) -> dict:
    rec = {"epoch": epoch}
    for key in ("loss_late", "loss_attention", "loss_res", "loss_pi", "loss_total"):
        rec[key] = sums[key] / max(n_steps, 1)
    rec["val_recall_at_1"] = val_r1
    return rec


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    records: list[dict]
    final_val_recall_at_1: float
    model: Model


def train(cfg: RunConfig, dataset: Dataset, out_dir: Path) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    import os
    _betas = tuple(float(x) for x in os.environ.get("FARNET_BETAS", "0.9,0.999").split(","))
    model = build_model(cfg, dataset)
    params = model.named_parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay, betas=_betas)
    shuffle_rng = Rng(cfg.seed, stream=_SHUFFLE_STREAM)
    step_rng = Rng(cfg.seed, stream=_PERTURB_STREAM)
    train_triplets = dataset.split("train")
    if len(train_triplets) < cfg.batch_size:
        raise ConfigError(
            f"train split has {len(train_triplets)} triplets, "
            f"fewer than batch_size={cfg.batch_size}"
        )

    metrics_path = out_dir / "metrics.jsonl"
    records: list[dict] = []

    def log(rec: dict) -> None:
        records.append(rec)
        with open(metrics_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec) + "\n")

    metrics_path.unlink(missing_ok=True)

    # epoch 0: losses at initialization, no updates
    init_sums = {k: 0.0 for k in ("loss_late", "loss_attention", "loss_res",
                                  "loss_pi", "loss_total")}
    init_batches = _batches(train_triplets, cfg.batch_size)
    probe_rng = Rng(cfg.seed, stream=_PERTURB_STREAM + 1)
    for chunk in init_batches:
        losses = model.forward_losses(batch_arrays(dataset, chunk), probe_rng)
        for k, v in losses.scalars().items():
            init_sums[k] += v
    log(_epoch_record(0, init_sums, len(init_batches),
                      _val_recall_at_1(model, dataset, cfg.query_source)))

    steps_per_epoch = len(_batches(train_triplets, cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = list(train_triplets)
        shuffle_rng.shuffle(order)
        sums = {k: 0.0 for k in init_sums}
        chunks = _batches(order, cfg.batch_size)
        for chunk in chunks:
            batch = batch_arrays(dataset, chunk)
            with Tape() as tape:
                losses = model.forward_losses(batch, step_rng)
                tape.backward(losses.total)
            opt.lr = lr_at_step(step, total_steps, cfg.lr)
            opt.step()
            opt.zero_grad()
            step += 1
            for k, v in losses.scalars().items():
                sums[k] += v
        log(_epoch_record(epoch, sums, len(chunks),
                          _val_recall_at_1(model, dataset, cfg.query_source)))

    _write_csv(out_dir / "metrics.csv", records)
    ckpt_path = out_dir / "checkpoint.bin"
    save_checkpoint(ckpt_path, CheckpointState(
        config_text=cfg.to_text(),
        params={name: p.data for name, p in params.items()},
        opt_step=opt.step_count,
        opt_m=opt.m,
        opt_v=opt.v,
        epoch=cfg.epochs,
        rng_state=step_rng.state(),
    ))
    return TrainResult(
        checkpoint_path=ckpt_path,
        metrics_path=metrics_path,
        records=records,
        final_val_recall_at_1=records[-1]["val_recall_at_1"],
        model=model,
    )


def _batches(items: list, size: int) -> list[list]:
    out = []
    for i in range(0, len(items), size):
        chunk = items[i:i + size]
        if len(chunk) >= 2:
            out.append(chunk)
    return out


def _write_csv(path: Path, records: list[dict]) -> None:
    lines = [",".join(METRIC_FIELDS)]
    for rec in records:
        lines.append(",".join(repr(rec[k]) if isinstance(rec[k], float) else str(rec[k])
                              for k in METRIC_FIELDS))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def restore_model(ckpt_path: Path, dataset: Dataset) -> tuple[Model, RunConfig, CheckpointState]:
    """Rebuild a model from a checkpoint, verifying parameter compatibility."""
    state = load_checkpoint(ckpt_path)
    cfg = RunConfig.from_text(state.config_text)
    model = build_model(cfg, dataset)
    params = model.named_parameters()
    if set(params) != set(state.params):
        raise ConfigError(
            "checkpoint parameter table does not match the model built from "
            "its config snapshot"
        )
    for name, p in params.items():
        saved = state.params[name]
        if saved.shape != p.data.shape:
            raise ConfigError(
                f"parameter {name} has shape {saved.shape} in checkpoint, "
                f"model expects {p.data.shape}"
            )
        p.data = saved.copy()
    return model, cfg, state
