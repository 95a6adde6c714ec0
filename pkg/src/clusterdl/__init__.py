"""clusterdl: a round-based simulator of clustered decentralized learning.

Nodes train a shared model core plus a bank of candidate heads, gossip
over fresh random regular graphs, and discover their cluster by picking
the head that fits their local data best. Baselines with a single head
(random-graph averaging, static-graph averaging, and a variant that never
shares heads) run under the same harness, together with group-fairness
metrics and convergence checks on quadratic toy networks.
"""

from .params import ParamVector, assemble, split

__all__ = ["ParamVector", "assemble", "split"]

__version__ = "0.1.0"
