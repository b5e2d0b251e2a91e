"""Error types shared across the package.

Kept deliberately small: everything the library can reject falls into one of
two buckets, a mathematical invariant that does not hold (bad state, bad POVM,
mismatched dimensions, inconsistent channel) or a problem size above the
desk-scale enumeration caps.
"""
from __future__ import annotations


class InvariantError(ValueError):
    """A constructed value violates one of its declared invariants."""


class CapExceededError(RuntimeError):
    """An enumeration or operator dimension exceeds the configured cap."""
