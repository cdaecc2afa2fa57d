"""HTTP service exposing the rewrite system."""

from collabqr.service.app import create_app

__all__ = ["create_app"]
