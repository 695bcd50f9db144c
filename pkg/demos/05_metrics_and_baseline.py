"""Scoring forecasts: sparse-aware metrics and the seasonal baseline.

The historical average is the reference point every learned model has
to beat; the metrics then quantify accuracy (MAE, KL), interval
sharpness (MPIW), and zero-handling (true-zero rate, weighted F1).
Run with `python3 demos/05_metrics_and_baseline.py` (about 15 seconds).
"""

import numpy as np

from odcast import (ModelConfig, Zone, ZoneTable, build_od_graph,
                    evaluate_model, ha_predict, historical_average, mae,
                    report_table, split, synth_generate, train)

zones = ZoneTable([Zone(f"z{i}", 0.01 * (i // 3), 0.01 * (i % 3))
                   for i in range(3)])
graph = build_od_graph(zones)

# hourly demand with a repeating daily rhythm (denser at "peak" slots)
season = 0.3 + 1.4 * np.exp(-0.5 * ((np.arange(24) - 8) / 3.0) ** 2)
demand = synth_generate(graph, num_steps=2400, pi=0.72, nb_n=2.0,
                        nb_p=0.5, seed=33, resolution_minutes=60,
                        seasonality=season)

spans = split(demand.num_steps)
slots = demand.slots()
tr, te = spans.train, spans.test
table = historical_average(demand.values[:, tr[0]:tr[1]].astype(float),
                           slots[tr[0]:tr[1]], demand.slots_per_day)
baseline = ha_predict(table, slots[te[0]:te[1]])
base_mae = mae(baseline, demand.values[:, te[0]:te[1]].astype(float))
print(f"historical-average MAE on the test span: {base_mae:.4f}")

config = ModelConfig(head="zinb", t_window=8, k_horizon=3,
                     diffusion_order=2, hidden_widths=(16, 16),
                     batch_size=64, learning_rate=0.005, max_epochs=15,
                     patience=4, seed=6)
model, _ = train(config, demand.values, graph)
report = evaluate_model(model, demand.values, graph)
print("\nmodel report on the same test span:")
print(report_table(report))

print("\nreading the report:")
print(f"  point accuracy    mae_mean {report.mae_mean:.4f}"
      f" (baseline {base_mae:.4f})")
print(f"  interval width    mpiw {report.mpiw:.4f} for the 10-90% band")
print(f"  zero handling     true_zero_rate_mean"
      f" {report.true_zero_rate_mean:.4f},"
      f" f1_mean {report.f1_mean:.4f}")
