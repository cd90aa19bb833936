"""Hybrid actor-critic and behavioural cloning from state-only demonstrations.

An inverse-dynamics model (a rank-R dual tensor model by default) trained
on the agent's own transitions labels expert state pairs with actions; the
policy is trained on environment reward plus the cloning likelihood of
those labels.
"""
__version__ = "0.1.0"
