"""
Core module for evsched

Contains the charging models, the solvers, the feeder model and the
reference oracles used to check them.
"""
