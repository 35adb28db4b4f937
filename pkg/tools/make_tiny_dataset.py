"""Regenerate the bundled tiny synthetic dataset under src/greeneyes/data/tiny."""

from pathlib import Path

from greeneyes.dataset import SynthParams, save_series_csv, synth_annotation, synth_generate
from greeneyes.targets import save_annotation

OUT = Path(__file__).resolve().parents[1] / "src" / "greeneyes" / "data" / "tiny"
LENGTH = 2000
PARAMS = SynthParams(base=30.0, amplitudes=(15.0, 6.0), periods=(700.0, 160.0), noise_std=2.0,
                     level_shift_rate=1 / 500, level_shift_scale=8.0)

for channel, seed in enumerate((11, 12)):
    series = synth_generate(seed, LENGTH, PARAMS, channel=f"sensor{channel}")
    save_series_csv(series, OUT / f"sensor{channel}.csv")
    save_annotation(synth_annotation(seed, LENGTH, PARAMS, spacing=100), OUT / f"annotation{channel}.csv")
