"""dsiforge: neuro-symbolic dialog structure induction toolkit."""

__version__ = "0.1.0"
