"""Place deduplication with embeddings."""
__version__ = "0.1.0"
