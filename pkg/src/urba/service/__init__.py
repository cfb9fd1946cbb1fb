"""FastAPI service layer: orchestrator app + mock backend server app."""

from .app import create_app
from .mock_app import create_mock_app

__all__ = ["create_app", "create_mock_app"]
