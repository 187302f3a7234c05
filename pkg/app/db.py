from __future__ import annotations

import logging
from typing import Optional

from fastapi import Request

from .config import Settings, get_settings
from .pipeline.operator import RequestOperator
from .service import SpsService

logger = logging.getLogger(__name__)


def build_service(settings: Optional[Settings] = None) -> SpsService:
    """In-memory service state for one process; nothing outlives it."""
    settings = settings or get_settings()
    return SpsService(settings)


def get_service(request: Request) -> SpsService:
    return request.app.state.service


def get_operator(request: Request) -> RequestOperator:
    return request.app.state.operator
