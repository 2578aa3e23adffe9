"""Temporal prompts on a toy sequence.

Each frame gets a prompt built from a small window of its neighbours. We look
at the attention weights, check that far-away frames have no influence, and
see what a zero-width window reduces to.
"""
import numpy as np

from tsadp.dpg import WindowSpec, attention_scores, dpg_forward, extract_window, init_dpg_params
from tsadp.numeric import contract

rng = np.random.default_rng(0)
params = init_dpg_params(rng, d=6, d_proj=4, d_out=6, d_prompt=5, heads=1)
seq = rng.normal(size=(7, 6))
spec = WindowSpec(k=1)

# frame 0 sits at the edge, so its window repeats it: [v0, v0, v1]
window = extract_window(seq, 0, spec)
print("attention for frame 0 (rows sum to one):")
print(np.round(attention_scores(window, params), 3))

prompts = dpg_forward(seq, params, spec)
print("prompt shapes:", {p.shape for p in prompts}, "count:", len(prompts))

# frame 6 is outside frame 3's window, so changing it leaves prompt 3 alone
edited = seq.copy()
edited[6] += 100.0
print("prompt 3 unchanged after editing frame 6:",
      np.array_equal(prompts[3], dpg_forward(edited, params, spec)[3]))

# with k=0 every window is the frame itself and the prompt is W_p W_v v_t
flat = dpg_forward(seq, params, WindowSpec(0))
direct = [contract(params.w_p, contract(params.w_v, v)) for v in seq]
print("k=0 equals W_p W_v v_t bit for bit:",
      all(np.array_equal(a, b) for a, b in zip(flat, direct)))
