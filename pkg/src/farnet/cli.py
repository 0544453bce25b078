"""Command-line entry point.

Commands: generate-data, train, eval, ablate, export-attention. Exit codes:
0 ok, 2 config error, 3 data error, 4 checkpoint error; failures print one
machine-readable ``ERROR:<KIND>:`` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import figures
from .ablate import run_ablation, write_ablation_csv
from .analysis import write_map_csv
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .data import DataError, generate_dataset, load_dataset, save_dataset
from .train import batch_arrays, evaluate, restore_model, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=str, default=None, help="override the output directory")


def _load_config(args) -> RunConfig:
    overrides = {"seed": args.seed, "out": args.out}
    return RunConfig.load(args.config, **overrides)


def cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out) if args.out else Path(cfg.dataset)
    manifest, images = generate_dataset(
        cfg.seed, cfg.n_triplets,
        (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio),
        cfg.image_size,
    )
    save_dataset(manifest, images, out_dir)
    sizes = {name: len(ids) for name, ids in manifest.splits.items()}
    print(f"dataset written to {out_dir}")
    print(f"triplets={manifest.n_triplets} gallery={len(manifest.gallery)} "
          f"splits=train:{sizes['train']}/val:{sizes['val']}/test:{sizes['test']} "
          f"image_size={manifest.image_size}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset(Path(cfg.dataset))
    out_dir = Path(cfg.out)
    result = train(cfg, dataset, out_dir)
    figures.save_training_curves(result.records, out_dir / "training_curves.png")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    print(f"final val R@1: {result.final_val_recall_at_1:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset(Path(cfg.dataset))
    model, snap_cfg, _ = restore_model(args.checkpoint, dataset)
    report = evaluate(model, dataset, args.split, snap_cfg.query_source)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"report_{args.split}.json"
    report_path.write_text(report.to_json(), encoding="utf-8")
    figures.save_recall_bars(report, out_dir / f"recall_{args.split}.png")
    sys.stdout.write(report.to_json())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset(Path(cfg.dataset))
    seeds = [cfg.seed, cfg.seed + 1, cfg.seed + 2]
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(cfg, dataset, seeds, out_dir)
    write_ablation_csv(rows, seeds, out_dir / "ablation.csv")
    figures.save_ablation_chart([r["variant"] for r in rows],
                                [r["mean_r1"] for r in rows],
                                out_dir / "ablation.png")
    for row in rows:
        print(f"{row['variant']:>18}: mean R@1 = {row['mean_r1']:.4f}")
    print(f"table: {out_dir / 'ablation.csv'}")
    return EXIT_OK


def cmd_export_attention(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset(Path(cfg.dataset))
    model, _, _ = restore_model(args.checkpoint, dataset)
    triplets = dataset.split(args.split)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    batch = batch_arrays(dataset, triplets)
    a_ref, a_tgt = model.attention_maps(batch.ref_images, batch.token_ids,
                                        batch.tgt_images)
    index = []
    for i, t in enumerate(triplets):
        ref_csv = out_dir / f"attn_{t.id:05d}_ref.csv"
        tgt_csv = out_dir / f"attn_{t.id:05d}_tgt.csv"
        write_map_csv(ref_csv, a_ref[i])
        write_map_csv(tgt_csv, a_tgt[i])
        figures.save_attention_heatmap(a_ref[i], list(t.tokens),
                                       out_dir / f"attn_{t.id:05d}_ref.png")
        index.append({
            "triplet_id": t.id,
            "reference_id": t.reference_id,
            "target_id": t.target_id,
            "tokens": list(t.tokens),
            "ref_map": ref_csv.name,
            "tgt_map": tgt_csv.name,
        })
    (out_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n",
                                        encoding="utf-8")
    print(f"wrote {len(index)} attention map pairs to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="farnet",
                                     description="composed image retrieval at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render a synthetic triplet dataset")
    _add_common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model and write metrics/checkpoint")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score all loss-term variants")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-attention", help="write per-query attention maps")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_export_attention)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"ERROR:CONFIG: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"ERROR:DATA: {e}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as e:
        print(f"ERROR:CHECKPOINT: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
