"""K-mer graph embeddings: metagenomic graph construction, GCN pre-training and evaluation."""

__version__ = "0.1.0"
