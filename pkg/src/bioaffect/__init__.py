"""Multi-modal affect estimation toolkit.

Signal preprocessing, a small reverse-mode differentiation engine, the
bio/spatial fusion networks with their autoencoder latent variants, and
the evaluation/assessment harness, all runnable on a CPU with synthetic
data.
"""

__version__ = "0.1.0"
