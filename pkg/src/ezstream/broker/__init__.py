"""Stream notification service: registry, envelope relay, webhooks."""

from .core import BrokerCore, BrokerPolicy

__all__ = ["BrokerCore", "BrokerPolicy"]
