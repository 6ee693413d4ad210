"""Frozen reference values for the figure-1 fold family.

Computed by the generating-family routines in ``oracles.py`` (critical
values of ``-f``, fibre min-max by dense sampling, sublevel bottleneck) and
stored here so the suite does not depend on rerunning the oracle.
"""

# -f at the four critical points of the base function, ascending
CRITICAL_ACTIONS = (-1.352079356016302, 0.637786981462882, 0.657157583820366, 0.757134790733054)
RHO_ONE = 0.757134790733054
RHO_PT = -1.352079356016302
MIN_F = -0.6534573800110808
ARGMIN_F = 0.011937830073212315
MAX_F = 0.7571347907330539
