"""
From sparse labels to training windows
======================================

A few hand-placed anchors become a polygonal target over the whole
series. Sliding windows over the IAQI series then pair each window with
the target one step after its end.
"""

import numpy as np

from greeneyes.dataset import WindowSpec, build_samples, chronological_split, fit_and_apply_normalizer, synth_annotation, synth_generate
from greeneyes.targets import Annotation, polygonalize

a = Annotation("demo", ((0, 1.0), (4, 3.0), (10, 2.0)))
t = polygonalize(a, 12)
print("target", t.values)
print("slopes", [s.slope for s in t.segments])

# a synthetic channel and its stand-in labels
n = 5000
series = synth_generate(1, n).to_iaqi()
target = polygonalize(synth_annotation(1, n, spacing=250), n)

spec = WindowSpec(window_size=600, stride=10)
samples = build_samples(series, target, spec)
print(len(samples), "samples; formula gives", (n - 600 - 1) // 10 + 1)

train, val = chronological_split(samples, 0.8)
train, (val,), stats = fit_and_apply_normalizer(train, [val])
print("train", len(train), "val", len(val), "last train start", train.starts.max(), "first val start", val.starts.min())
print("mean", stats.mean, "std", stats.std)

X, y = train.take(np.arange(3))
print("batch", X.shape, "targets", np.round(y, 3))
