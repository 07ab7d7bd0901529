from .store import (
    IllegalTransition,
    InvalidRevision,
    ItemNotFound,
    ReviewStore,
    StaleVersion,
)

__all__ = [
    "ReviewStore",
    "ItemNotFound",
    "IllegalTransition",
    "InvalidRevision",
    "StaleVersion",
]
