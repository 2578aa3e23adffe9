"""Command line entry point: ``tsadp {gen-data,train,eval,gradcheck,inspect}``.

Exit codes: 0 success, 1 validation or check failure, 2 I/O or file-format
failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import CliConfig, load_config, with_seed
from .dpg import WindowSpec
from .errors import FormatError, NonFiniteLossError, TsadpError
from .gradients import backward, gradcheck
from .model import TrainingBatch, init_model
from .synthbench import SynthConfig, check_compatible, evaluate, generate_dataset, \
    load_dataset, save_dataset
from .trainer import MaskSpec, TrainConfig, mask_rng, sample_mask, train

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _window(cfg: CliConfig, ablation: str) -> WindowSpec:
    return WindowSpec(0 if ablation == "no_dpg" else cfg.loss.k)


def _new_model(cfg: CliConfig, d_visual: int, d_language: int):
    m = cfg.model
    return init_model(d_visual, d_language, m.d_proj, m.d_out, m.d_prompt, m.d_emb,
                      m.heads, m.init_seed)


def cmd_gen_data(cfg: CliConfig, args) -> int:
    out = args.out or cfg.paths.dataset
    ds = generate_dataset(cfg.synth)
    save_dataset(ds, out)
    s = cfg.synth
    print(json.dumps({"path": str(out), "sequences": s.num_sequences, "T": s.T,
                      "d_visual": s.d_visual, "d_language": s.d_language,
                      "latent_dim": s.latent_dim, "seed": s.seed, "map_seed": s.map_seed}))
    return EXIT_OK


def train_config(cfg: CliConfig, args) -> TrainConfig:
    tc = cfg.train_config()
    if args.ablation:
        tc = dataclasses.replace(tc, ablation=args.ablation)
    return tc


def cmd_train(cfg: CliConfig, args) -> int:
    tc = train_config(cfg, args)
    ds = load_dataset(args.dataset or cfg.paths.dataset)
    model = _new_model(cfg, ds.d_visual, ds.d_language)
    out = args.out or cfg.paths.checkpoint
    metrics = args.metrics or cfg.paths.metrics
    try:
        model, history = train(model, ds, tc, metrics_path=metrics)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    save_checkpoint(model, out)
    last = history[-1]
    print(json.dumps({"checkpoint": str(out), "metrics": str(metrics),
                      "ablation": tc.ablation, "epochs": len(history),
                      "loss_total": last["loss_total"], "loss_tcl": last["loss_tcl"],
                      "loss_mtp": last["loss_mtp"]}))
    return EXIT_OK


def cmd_eval(cfg: CliConfig, args) -> int:
    ablation = args.ablation or cfg.train.ablation
    model = load_checkpoint(args.checkpoint or cfg.paths.checkpoint, heads=cfg.model.heads)
    ds = load_dataset(args.dataset or cfg.paths.dataset)
    check_compatible(model, ds)
    seed = cfg.eval.seed
    result = evaluate(model, ds, _window(cfg, ablation), seed=seed, mask_rate=cfg.loss.mask_rate)
    record = dataclasses.asdict(result)
    record.update({"chronology_seed": seed, "mask_seed": seed + 1, "ablation": ablation,
                   "k": _window(cfg, ablation).k, "sequences": len(ds)})
    text = json.dumps(record)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def gradcheck_problem(cfg: CliConfig):
    """Seeded model, batch and loss settings for a gradient check."""
    g = cfg.gradcheck
    model = init_model(g.d, g.d, heads=cfg.model.heads, seed=g.seed)
    data = generate_dataset(SynthConfig(num_sequences=g.batch_size, T=g.T, d_visual=g.d,
                                        d_language=g.d, latent_dim=min(4, g.d),
                                        seed=g.seed, map_seed=g.seed))
    spec = MaskSpec(cfg.loss.mask_rate, seed=g.seed)
    masks = [sample_mask(g.T, spec, mask_rng(spec, i)) for i in range(g.batch_size)]
    batch = TrainingBatch([(s.visual, s.language) for s in data], masks)
    return model, batch, cfg.loss


def cmd_gradcheck(cfg: CliConfig, args) -> int:
    model, batch, loss_cfg = gradcheck_problem(cfg)
    g = cfg.gradcheck
    analytic = None
    if args.plant_fault:
        _, analytic = backward(model, batch, loss_cfg)
        analytic["w_q"][0, 0] += 1.0
    report = gradcheck(model, batch, loss_cfg, g.epsilon, g.tolerance, analytic=analytic)
    record = report.to_record()
    record.update({"seed": g.seed, "d": g.d, "T": g.T, "k": loss_cfg.k,
                   "batch_size": g.batch_size, "epsilon": g.epsilon,
                   "masks": [sorted(m) for m in batch.mask_sets]})
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(json.dumps(record) + "\n")
    if args.json:
        print(json.dumps(record))
    else:
        print(report.table())
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_inspect(cfg: CliConfig, args) -> int:
    path = args.checkpoint or cfg.paths.checkpoint
    with open(path, "rb") as fh:
        params = read_checkpoint(fh.read())
    load_checkpoint(path)  # full structural validation
    rows = [{"name": n, "shape": list(p.shape), "norm": float(np.linalg.norm(p))}
            for n, p in params.items()]
    if args.json:
        print(json.dumps({"path": str(path), "params": rows}))
    else:
        for r in rows:
            print(f"{r['name']:<12} {str(tuple(r['shape'])):<10} {r['norm']:.6g}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "inspect": cmd_inspect}
SEED_SECTION = {"gen-data": "synth", "train": "train", "eval": "eval", "gradcheck": "gradcheck"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsadp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the seed of the relevant section")
        p.add_argument("--out", help="output path")
        p.add_argument("--ablation", choices=("full", "no_dpg", "no_tcl"))
        if name in ("train", "eval"):
            p.add_argument("--dataset", help="dataset path (overrides [paths] dataset)")
        if name == "train":
            p.add_argument("--metrics", help="metrics JSONL path (overrides [paths] metrics)")
        if name in ("eval", "inspect"):
            p.add_argument("--checkpoint", help="checkpoint path (overrides [paths] checkpoint)")
        if name in ("gradcheck", "inspect"):
            p.add_argument("--json", action="store_true", help="print a JSON record")
        if name == "gradcheck":
            p.add_argument("--plant-fault", action="store_true",
                           help="add 1 to one analytic gradient entry (self-test)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.command in SEED_SECTION:
            cfg = with_seed(cfg, SEED_SECTION[args.command], args.seed)
        return COMMANDS[args.command](cfg, args)
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TsadpError, ValueError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
