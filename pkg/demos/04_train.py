"""
Training a small model
======================

Two synthetic channels are windowed, fused, split by time and fitted
with Adam. Each epoch logs train and validation error.
"""

import tempfile

from greeneyes.dataset import WindowSpec, build_samples, chronological_split, fit_and_apply_normalizer, fuse_channels, synth_annotation, synth_generate
from greeneyes.nn import ModelConfig, init_params
from greeneyes.targets import polygonalize
from greeneyes.training import TrainConfig, load_checkpoint, train

n, spec = 3000, WindowSpec(window_size=128, stride=4)
sets = []
for seed in (0, 1):
    series = synth_generate(seed, n, channel=f"c{seed}").to_iaqi()
    target = polygonalize(synth_annotation(seed, n, spacing=150, channel=f"c{seed}"), n)
    sets.append(build_samples(series, target, spec))
train_set, val_set = chronological_split(fuse_channels(sets), 0.8)
train_set, (val_set,), stats = fit_and_apply_normalizer(train_set, [val_set])

cfg = ModelConfig(window_size=128, filters=8, block_layers=(4, 3), lstm_hidden=16, pool_factor=8)
with tempfile.TemporaryDirectory() as out:
    model, report, paths = train(init_params(cfg), train_set, val_set, TrainConfig(initial_lr=1e-3, epochs=6, lr_decay_epoch=4), out_dir=out)
    for r in report.records:
        print(f"epoch {r.epoch}  lr {r.lr:.0e}  train {r.train_mse:.4f}  val {r.val_mse:.4f}")
    print("min train / min val", round(report.ratio, 3))
    print("best validation checkpoints:", [p.name for p in paths])
    restored = load_checkpoint(f"{out}/checkpoints/last")
    print("restored epoch", restored.epoch, "same weights:", all((restored.params[k] == v).all() for k, v in model.params.items()))
