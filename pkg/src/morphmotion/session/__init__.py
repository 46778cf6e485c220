"""Persistence, CLI, gradient-check harness, and the interactive session service."""
from . import files
from .runner import Session, SessionError, SessionStore, settings_from_document
from .service import SessionService, serve

__all__ = [
    "files",
    "Session",
    "SessionError",
    "SessionStore",
    "settings_from_document",
    "SessionService",
    "serve",
]
