"""Demo: training loop mechanics on a small synthetic task.

Trains for a few epochs, then shows the loss history, the frozen-backbone
contract, and which parameters moved.
"""

import numpy as np

from papnf.data import SplitSpec, make_windows, split_series
from papnf.model import ModelConfig, PapNfModel
from papnf.seeding import derive_seed
from papnf.synthetic import ar1_seasonal
from papnf.train import TrainConfig, fit

series = ar1_seasonal(420, period=24, seed=4)
train_s, val_s, _ = split_series(series, SplitSpec(240, 90, 90))

cfg = ModelConfig(
    lookback=48, horizon=12, channels=1, patch_len=12, d_n=12, d_c=8, d_h=16,
    d_u=4, t_flow=2, k_prefix=3, recon_hidden=24, hyper_hidden=10,
    backbone={"n_layers": 1, "n_heads": 2, "d": 16, "ffn_width": 32, "max_len": 8},
)
train_w = make_windows(train_s, cfg.lookback, cfg.horizon)
val_w = make_windows(val_s, cfg.lookback, cfg.horizon)
print(f"{len(train_w)} train windows, {len(val_w)} val windows")

model = PapNfModel(cfg, seed=derive_seed(0, "init"))
hash_before = model.backbone.weight_hash()
before = {k: t.data.copy() for k, t in model.parameters().items()}

ckpt = fit(model, train_w, val_w, TrainConfig(model=cfg, epochs=5, seed=0))

print("\nepoch  train_loss  val_mse")
for row in ckpt.history:
    print(f"{row['epoch']:5d}  {row['train_loss']:10.4f}  {row['val_mse']:7.4f}")
print(f"best epoch: {ckpt.best_epoch} (lowest validation MSE, weights restored)")

print(f"\nfrozen backbone hash unchanged: {model.backbone.weight_hash() == hash_before}")
moved = sum(
    not np.array_equal(before[k], t.data) for k, t in model.parameters().items()
)
print(f"trainable tensors that moved: {moved}/{len(before)}")

# Deterministic training: the same seed reproduces the run exactly.
model2 = PapNfModel(cfg, seed=derive_seed(0, "init"))
ckpt2 = fit(model2, train_w, val_w, TrainConfig(model=cfg, epochs=5, seed=0))
same = all(
    np.array_equal(model.parameters()[k].data, model2.parameters()[k].data)
    for k in model.parameters()
)
print(f"rerun with same seed is bitwise identical: {same}")
