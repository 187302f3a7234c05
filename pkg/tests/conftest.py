from __future__ import annotations

import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.config import load_settings  # noqa: E402
from app.service import SpsService  # noqa: E402
from swe.description import parse_tasking_description  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
CONFIG = ROOT / "config" / "sps.json"

LISTING1 = "2010-08-20T12:37:00+02:00,2010-08-20T14:30:00+02:00,Y,pointToLookAt,51.902112,8.192728,0,Y,3.5"
IMAGER = "pointable-imager-01"
STATION = "weather-station-02"
CLOCK_START = datetime(2010, 8, 20, 10, 0, tzinfo=timezone.utc)


@pytest.fixture
def settings():
    return load_settings(CONFIG)


@pytest.fixture
def imager_desc():
    return parse_tasking_description((FIXTURES / "pointable-imager-01.xml").read_bytes())


@pytest.fixture
def service(settings):
    return SpsService(settings)


@pytest.fixture
def app(settings):
    from app.main import create_app

    return create_app(settings)


@pytest.fixture
def client(app):
    from fastapi.testclient import TestClient

    with TestClient(app) as c:
        yield c


@pytest.fixture
def listing1(imager_desc):
    from swe.codec import decode_parameter_data
    from swe.models import TextEncodingSpec

    return decode_parameter_data(imager_desc, TextEncodingSpec(), LISTING1)
