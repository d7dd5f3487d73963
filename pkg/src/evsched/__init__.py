"""
evsched - Decentralized EV charging schedulers

Frank-Wolfe valley filling for the network-free problem and a consensus-ADMM
solver for network-constrained charging over unbalanced radial feeders.
"""

__version__ = "0.1.0"
__author__ = "evsched Team"
__description__ = "Decentralized EV charging schedulers - Frank-Wolfe and network-constrained ADMM"
