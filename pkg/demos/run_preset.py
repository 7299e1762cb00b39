"""
Running and aggregating a preset from Python
============================================

The same entry points the ``qmle`` command uses. Two short seeds of the
continuous climbing game, then the across-seed summary.
"""

import tempfile

from qmle import harness

out = tempfile.mkdtemp()
config = harness.make_run_config("marl-climb", seeds=[0, 1], steps=3000, eval_interval=500, out=out,
                                 eval_episodes=5)
harness.run(config)

summary = harness.aggregate(config.out_dir / "marl-climb")
for agent, row in summary.items():
    print(f"{agent:5s} final joint reward {row['mean']:.2f} +- {row['stderr']:.2f} over {row['seeds']} seeds")
print("CSVs in", config.out_dir / "marl-climb")
