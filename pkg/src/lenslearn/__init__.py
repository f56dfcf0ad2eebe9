"""lenslearn: a simulated see-through window camera pipeline.

Forward-model simulation of a lensless capture rig, a from-scratch tensor
engine with verified backward passes, an encoder-decoder reconstruction
network trained with pixel-wise cross-entropy, and classification
benchmarks on original, raw-sensor, and reconstructed images.

Kept import-light so the CLI can cap BLAS thread counts before numpy loads.
"""

__version__ = "0.1.0"
