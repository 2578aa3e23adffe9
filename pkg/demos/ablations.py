"""Switch parts of the objective off and compare retrieval.

no_tcl keeps the contrastive loss in the logs but gives it zero weight;
no_dpg shrinks every attention window to the frame itself.
"""
from tsadp.model import init_model
from tsadp.synthbench import SynthConfig, evaluate, generate_dataset
from tsadp.trainer import TrainConfig, train

train_set = generate_dataset(SynthConfig(num_sequences=100, seed=0))
held_out = generate_dataset(SynthConfig(num_sequences=50, seed=1))

for ablation in ("full", "no_tcl", "no_dpg"):
    cfg = TrainConfig(epochs=40, ablation=ablation)
    model, history = train(init_model(16, 16, seed=0), train_set, cfg)
    r = evaluate(model, held_out, cfg.window())
    print(f"{ablation:7s} retrieval {r.retrieval_accuracy:.3f}  chronology MAE "
          f"{r.chronology_mae:.3f}  masked ratio {r.masked_mse_ratio:.3f}  "
          f"final tcl {history[-1]['loss_tcl']:.2f}")
