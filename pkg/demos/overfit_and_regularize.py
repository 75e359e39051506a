"""Watch a wide DNN memorise noise, then rein it in with early stopping and L1.

    python3 demos/overfit_and_regularize.py [out_dir]

Writes one SVG learning curve per regime and prints the train/test gaps.
"""

import sys
from pathlib import Path

from pvreg.analysis import evaluate
from pvreg.core import SeededRng
from pvreg.data import overfit_frame, prepare
from pvreg.models import ModelKind, ModelSpec, build
from pvreg.regularization import regime_spec
from pvreg.report import svg_curve
from pvreg.training import TrainConfig, train, weight_sparsity

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# one smooth driver, eight pure-noise inputs, noisy target
frame = overfit_frame(seed=0, n=2000)
windows, scaler, plan = prepare(frame, 0.3, lookback=4)
print(plan)

for regime in ("B1", "R1", "R3", "R4"):
    spec = ModelSpec(ModelKind.DNN, 4, len(windows.feature_names), hidden=(128, 128))
    model = build(spec, SeededRng(0, 1))
    model, hist = train(model, windows, regime_spec(regime), TrainConfig(max_epochs=100))
    rep = evaluate(model, windows, scaler, regime=regime, history=hist)
    (out / f"dnn_{regime}.svg").write_text(svg_curve(rep), encoding="utf-8")
    print(f"{regime}: {len(hist.records):3d} epochs (best {hist.best_epoch:3d})  "
          f"train RMSE {rep.train.rmse:.3f}  test RMSE {rep.test.rmse:.3f}  "
          f"gap {rep.diff.rmse_diff:+.3f}  small weights {weight_sparsity(model.params):.2%}")

# B1 ends far from its best validation epoch; the early-stopped runs restore it
