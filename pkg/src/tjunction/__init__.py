"""T-intersection driving scenarios with preference-conditioned social agents.

Training, importance-weighted evaluation, and iterative proposal optimization
for an ego policy interacting with social vehicles whose behavior is indexed
by a scalar aggressiveness preference.
"""

__version__ = "0.1.0"
