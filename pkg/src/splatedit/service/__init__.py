from .app import create_app, serve
from .core import SessionCore, replay_events

__all__ = ["create_app", "serve", "SessionCore", "replay_events"]
