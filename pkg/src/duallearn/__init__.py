"""Dual-feasible neural optimization proxies with certified Lagrangian bounds.

Submodules:

* ``linalg``      small dense eigen/linear solvers
* ``cones``       membership, Euclidean and radial projections for standard cones
* ``completion``  closed-form optimal dual completions and their gradients
* ``neural``      numpy MLP, Adam and the patience learning-rate schedule
* ``problems``    knapsack / production-planning instances and JSONL datasets
* ``refsolve``    reference LP simplex, production-planning dual search, gap metric
* ``training``    DLL and DC3 training loops, inference and evaluation
* ``cli``         ``duallearn`` command line
"""

__version__ = "0.1.0"
