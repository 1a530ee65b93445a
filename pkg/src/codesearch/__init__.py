"""Natural-language-to-code search: contrastive training plus retrieval stack."""

__version__ = "0.1.0"
