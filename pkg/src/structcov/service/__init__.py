from .app import Registry, create_app
from .client import ServiceClient, ServiceError

__all__ = ["Registry", "create_app", "ServiceClient", "ServiceError"]
