"""Average return against steps for every agent variant on clean demonstrations."""
from _figure import parse_args, run_arms, save

args = parse_args(__doc__)
arms = {v: dict(variant=v) for v in ("ours", "hybrid-mlp", "bc-dual", "bc-mlp", "il", "a2c")}
save(args, "learning_curves", run_arms(args, arms), title="Taxi, clean demonstrations")
