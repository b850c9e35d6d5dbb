"""Session service: a wire-protocol bridge between the simulator and operator UIs."""

from viewservo.service.app import create_app
from viewservo.service.session import Session, SessionConfig

__all__ = ["Session", "SessionConfig", "create_app"]
