"""Performance-driven adaptive hazard alerting toolkit.

Behavioral response times are decomposed with a two-accumulator linear
ballistic race model fitted by gradient-based MCMC, operators are grouped
into performance profiles, EEG epochs are turned into time-frequency images
and classified by a frozen-stem network with continual-learning strategies,
and the resulting performance predictions drive an adaptive alert-threshold
policy. Everything is validated end-to-end on synthetic ground-truth data.
"""

__version__ = "0.1.0"

HAZARD_TYPES = ("EL", "LEP", "SI")
PERFORMANCE_LEVELS = ("High", "Medium", "Low")
