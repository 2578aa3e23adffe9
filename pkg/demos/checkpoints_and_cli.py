"""Checkpoints round-trip byte for byte, and the CLI drives the same pieces.

Everything is written to a temporary directory.
"""
import json
import tempfile
from pathlib import Path

from tsadp.checkpoint import load_checkpoint, save_checkpoint
from tsadp.cli import main
from tsadp.model import init_model

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    model = init_model(16, 16, seed=5)
    save_checkpoint(model, tmp / "a.tsdp")
    save_checkpoint(load_checkpoint(tmp / "a.tsdp"), tmp / "b.tsdp")
    print("save -> load -> save identical:", (tmp / "a.tsdp").read_bytes() == (tmp / "b.tsdp").read_bytes())

    cfg = tmp / "run.ini"
    cfg.write_text("[synth]\nnum_sequences = 40\n[train]\nepochs = 5\n"
                   f"[paths]\ndataset = {tmp / 'data.tsds'}\ncheckpoint = {tmp / 'model.tsdp'}\n"
                   f"metrics = {tmp / 'metrics.jsonl'}\n")
    for argv in (["gen-data"], ["train"], ["eval"], ["inspect"]):
        print("$ tsadp", " ".join(argv), "--config run.ini")
        main(argv + ["--config", str(cfg)])
    rows = [json.loads(x) for x in (tmp / "metrics.jsonl").read_text().splitlines()]
    print("metrics records:", len(rows))
