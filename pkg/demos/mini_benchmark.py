"""A pocket-sized version of the full grid: three models, all five regimes.

    python3 demos/mini_benchmark.py [out_dir]

Same code path as ``pvreg bench``; look at overfit_table.csv and
best_regime.csv in the output directory afterwards.
"""

import sys

from pvreg.analysis import BenchSettings, run_matrix
from pvreg.data import synthesize
from pvreg.report import read_csv, render
from pvreg.training import TrainConfig

out = sys.argv[1] if len(sys.argv) > 1 else "demo_bench"

frame = synthesize(seed=3, n=2500)
settings = BenchSettings(lookback=12, train=TrainConfig(max_epochs=15, clock="work"),
                         hidden={"dnn": [64, 32], "cnn": [8, 16], "rnn-lstm": [16]})

matrix = run_matrix(["dnn", "cnn", "rnn-lstm"], ["B1", "R1", "R2", "R3", "R4"], [0.1, 0.3], frame, settings,
                    base_seed=3, progress=lambda r: print(r.kind.label, r.regime.value, r.ratio, flush=True))
render(matrix, out)

for row in read_csv(f"{out}/overfit_table.csv"):
    print("overfit at", row["model"], row["regime"], "->", row["RMSE"] or "-")
for row in read_csv(f"{out}/best_regime.csv"):
    print("best regime", row)
