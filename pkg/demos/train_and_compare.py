"""Weighted cross-entropy vs the importance-aware loss, desk scale.

Trains the same small network twice from the same initialization on the
same scenes, once per loss, then evaluates both on a held-out stream.
The full acceptance experiment repeats this at full scale over five seed
pairs; this is one quick pair, so expect the numbers to wobble a little
around the average effect.  Takes well under a minute.
Run with  python3 demos/train_and_compare.py
"""

import time

from ialseg import (
    LossConfig,
    NetConfig,
    OptimConfig,
    SceneConfig,
    evaluate_report,
    make_dataset,
    train_model,
)

scene = SceneConfig(seed=9, height=48, width=96)
train_ds = make_dataset(scene, 60)
eval_ds = make_dataset(SceneConfig(seed=9, height=48, width=96, stream=1), 20)

net = NetConfig(height=48, width=96, encoder_channels=(8, 16),
                block_dilations=(1, 2), pyramid_bins=(1, 2, 4))
optim = OptimConfig(epochs=10)

reports = {}
for kind in ("wce", "ial"):
    t0 = time.time()
    result = train_model(train_ds, net, LossConfig(kind=kind), optim,
                         seed=33, batch_size=8)
    reports[kind] = evaluate_report(result.net, eval_ds)
    last = result.history[-1]
    print(f"{kind}: trained {optim.epochs} epochs in {time.time() - t0:.1f}s, "
          f"final total {last.total:.4f}")

print(f"\n{'group':6s} {'metric':10s} {'wce':>8s} {'ial':>8s} {'delta':>8s}")
for rank in (1, 2, 3):
    for metric in ("precision", "recall"):
        a = reports["wce"].group_mean(rank, metric)
        b = reports["ial"].group_mean(rank, metric)
        print(f"G{rank:<5d} {metric:10s} {a:8.4f} {b:8.4f} {b - a:+8.4f}")

for rank in (1, 2, 3):
    d = (reports["ial"].group_mean(rank, "recall")
         - reports["wce"].group_mean(rank, "recall"))
    print(f"G{rank} recall: {100 * d:+.1f} points")
