"""Pareto-optimal lane-change execution in mixed human/automated traffic.

The package simulates a lane-changing automated vehicle entering a gap in a
mixed platoon, searches the execution point and quintic trajectory with
NSGA-II over two objectives (the lane changer's own cost and the weighted
cost of the target-lane followers), tracks the winning plan with MPC and
measures the macroscopic effect with Edie's definitions.
"""

__version__ = "0.1.0"
