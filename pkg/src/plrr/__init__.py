"""Split transformer runtime with low-rank residual transmission.

A frozen decoder stack on the cloud node and the tied embedding/LM head
plus private trainable low-rank middles on the device node cooperate over
a framed binary protocol; an analytical model predicts the memory, FLOPs,
traffic and throughput of the arrangement.
"""

__version__ = "0.1.0"
