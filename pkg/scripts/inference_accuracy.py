"""Held-out action-inference accuracy of the dual model against the MLP inference model."""
from _figure import parse_args, run_arms, save

args = parse_args(__doc__)
arms = {"dual": dict(variant="ours"), "mlp": dict(variant="hybrid-mlp")}
save(args, "inference_accuracy", run_arms(args, arms, column="probe_accuracy"),
     title="Action inference on held-out transitions", ylabel="probe accuracy")
