"""drfmt: fair division of multiple resources grouped into meta-types.

Agents declare, per meta-type, which concrete resources they can use, a
demand per unit of utility, and a weight. The engine equalizes weighted
dominant meta-type shares through rounds of linear programs, checks the
fairness properties of the result (envy-freeness, Pareto optimality,
sharing incentives, proportionality), and ships a Nash-welfare baseline
plus a benchmark harness for comparing the two.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
