"""
Configs, sweeps and result files
================================

Experiments are described by a flat key = value file. This script writes one,
runs a small sweep over the number of surface elements for the cheap
baselines and writes CSV and JSON results.
"""

import tempfile
from pathlib import Path

from risorch.harness import (config_fingerprint, config_to_text, emit_results, load_config, read_results_csv,
                             run_experiment)

work = Path(tempfile.mkdtemp())
cfg_path = work / "ucb.cfg"
cfg_path.write_text("""\
# UCB on the reference scene, short evaluation
agent.kind = ucb
agent.confidence_width = 0.6
reward.power_dbm = 40
eval_steps = 60
trials = 2
""")
config = load_config(cfg_path)
print("fingerprint", config_fingerprint(config))
print(config_to_text(config).splitlines()[:6])

tables = []
for n_tot in (32, 64):
    for kind in ("random", "ucb"):
        c = config.with_values(**{"n_tot": n_tot, "agent.kind": kind})
        tables.append(run_experiment(c, threads=1))
        print(f"n_tot={n_tot} {kind:>6}: mean {tables[-1].mean:.3f} ratio {tables[-1].normalized_ratio:.3f}")

csv_path = emit_results(tables, work / "sweep.csv")
json_path = emit_results(tables, work / "sweep.json", "json")
print(csv_path.read_text())
rows = read_results_csv(csv_path)
assert rows[0]["mean_reward"] == tables[0].trials[0].mean_reward
print("json bytes:", len(json_path.read_bytes()))
