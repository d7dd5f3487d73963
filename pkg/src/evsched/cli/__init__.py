"""
CLI module for evsched

Contains the command-line interface.
"""
