"""Metamath theorem proving engine.

Parses Metamath databases, searches for proofs with a bandit tree search
guided by pluggable relevance/generative/payoff models, verifies every
result with an RPN stack machine, and extracts training datasets.
"""

from mmprover.database import Database, MMError, parse_database

__all__ = ["Database", "MMError", "parse_database"]
