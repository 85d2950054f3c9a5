"""Interchangeable bindings from the endpoint engine to stream services."""

from .base import Connector, StorageApi
from .memory import MemoryConnector, MemoryService
from .split import SplitConnector

__all__ = [
    "Connector",
    "MemoryConnector",
    "MemoryService",
    "SplitConnector",
    "StorageApi",
]
