from __future__ import annotations

import argparse
import logging
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI

from .api.health_admin import router as health_admin_router
from .api.notifications import router as notifications_router
from .api.semantics import router as semantics_router
from .api.sps import router as sps_router
from .config import Settings, get_settings, load_settings
from .db import build_service
from .pipeline.operator import RequestOperator

logger = logging.getLogger(__name__)


def create_app(settings: Optional[Settings] = None) -> FastAPI:
    settings = settings or get_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    service = build_service(settings)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        service.start()
        try:
            yield
        finally:
            service.stop()

    app = FastAPI(title="Sensor Planning Service", version="2.0", lifespan=lifespan)
    app.state.service = service
    app.state.operator = RequestOperator(service)

    app.include_router(health_admin_router)
    app.include_router(sps_router)
    app.include_router(notifications_router)
    app.include_router(semantics_router)
    logger.info("app.create: listeners=%s debug_clock=%s", service.enabled_operations(), settings.debug_clock)
    return app


def main(argv: Optional[list[str]] = None) -> None:
    import uvicorn

    ap = argparse.ArgumentParser(description="Run the Sensor Planning Service.")
    ap.add_argument("--config", help="JSON config file (falls back to $SPS_CONFIG)")
    ap.add_argument("--host", help="override the configured host")
    ap.add_argument("--port", type=int, help="override the configured port")
    args = ap.parse_args(argv)

    settings = load_settings(args.config)
    app = create_app(settings)
    uvicorn.run(app, host=args.host or settings.host, port=args.port or settings.port, log_level=settings.log_level.lower())


if __name__ == "__main__":
    main()
