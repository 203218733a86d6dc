"""Scene graph generation pipeline on synthetic fixtures.

Subgraph-clustered proposals, attention message passing refined with a
file-backed commonsense triple store, relation prediction, and an
object-to-image reconstruction regularizer, all running on a small
tape-differentiated tensor core.
"""

__version__ = "0.1.0"
