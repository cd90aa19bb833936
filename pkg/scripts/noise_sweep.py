"""Hybrid agent against cloning alone under label noise (epsilon) and missing states (eta)."""
from _figure import parse_args, run_arms, save

args = parse_args(__doc__)
arms = {}
for name, noise in (("eps0.1", dict(epsilon=0.1)), ("eta0.2", dict(eta=0.2))):
    arms[f"ours-{name}"] = dict(variant="ours", **noise)
    arms[f"bc-dual-{name}"] = dict(variant="bc-dual", **noise)
save(args, "noise_sweep", run_arms(args, arms), title="Noisy and incomplete demonstrations")
