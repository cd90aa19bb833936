"""Hybrid agent with inference-model rank 1, 2 and 4 against plain A2C."""
from _figure import parse_args, run_arms, save

args = parse_args(__doc__)
arms = {f"rank{r}": dict(variant="ours", rank=r) for r in (1, 2, 4)}
arms["a2c"] = dict(variant="a2c")
save(args, "rank_sweep", run_arms(args, arms), title="Inference-model rank")
