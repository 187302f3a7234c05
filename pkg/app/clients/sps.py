from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import httpx
from lxml import etree

from swe.models import TextEncodingSpec

from ..pipeline import xml_io

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "http://localhost:8484/sps"


@dataclass
class SpsReply:
    status: int
    body: bytes
    root: Optional[etree._Element]

    @property
    def exception(self) -> Optional[Tuple[str, str, Optional[str]]]:
        if self.root is None:
            if self.status < 400:
                return None
            return ("NoApplicableCode", f"HTTP {self.status} without XML body", None)
        return xml_io.read_exception(self.root)

    @property
    def ok(self) -> bool:
        return self.exception is None and self.status < 400


class SpsClient:
    """XML-over-HTTP client of one service endpoint.

    `client` may be any httpx.Client (a FastAPI TestClient in tests).
    """

    def __init__(self, endpoint: str = DEFAULT_ENDPOINT, *, client: Optional[httpx.Client] = None, timeout: float = 20.0) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.base = self.endpoint[: -len("/sps")] if self.endpoint.endswith("/sps") else self.endpoint
        self._owned = client is None
        self.http = client or httpx.Client(timeout=timeout)

    def close(self) -> None:
        if self._owned:
            self.http.close()

    def __enter__(self) -> "SpsClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    # ---- operations ----

    def post(self, document: bytes) -> SpsReply:
        r = self.http.post(self.endpoint, content=document, headers={"Content-Type": "application/xml"})
        return self._reply(r)

    def operation(self, name: str, **kwargs: Any) -> SpsReply:
        return self.post(xml_io.build_request(name, **kwargs))

    def capabilities(self) -> SpsReply:
        return self.operation("GetCapabilities", version=None)

    def describe_sensor(self, procedure: str) -> SpsReply:
        return self.operation("DescribeSensor", procedure=procedure)

    def describe_tasking(self, procedure: str) -> SpsReply:
        return self.operation("DescribeTasking", procedure=procedure)

    def tasking(
        self,
        name: str,
        procedure: str,
        encoding: TextEncodingSpec,
        values: str,
        feasibility_id: Optional[str] = None,
    ) -> SpsReply:
        return self.operation(name, procedure=procedure, parameters=(encoding, values), feasibility_id=feasibility_id)

    def command(self, name: str, task: str, parameters: Optional[Tuple[TextEncodingSpec, str]] = None) -> SpsReply:
        return self.operation(name, task=task, parameters=parameters)

    def status(self, task: Optional[str] = None, request: Optional[str] = None) -> SpsReply:
        return self.operation("GetStatus", task=task, request=request)

    def task(self, task: str) -> SpsReply:
        return self.operation("GetTask", task=task)

    def results(self, task: str) -> SpsReply:
        return self.operation("DescribeResultAccess", task=task)

    # ---- notifications and debug clock ----

    def topics(self) -> SpsReply:
        return self._reply(self.http.get(f"{self.endpoint}/topics"))

    def subscribe(self, topic: str) -> Dict[str, Any]:
        r = self.http.post(f"{self.endpoint}/subscriptions", json={"topic": topic})
        r.raise_for_status()
        return r.json()

    def drain(self, subscription_id: str, wait: float = 0.0) -> SpsReply:
        r = self.http.get(f"{self.endpoint}/subscriptions/{subscription_id}/events", params={"wait": wait})
        return self._reply(r)

    def advance(self, seconds: float) -> Optional[Dict[str, Any]]:
        """Move the server's virtual clock; None when the server does not expose it."""
        r = self.http.post(f"{self.base}/clock/advance", params={"seconds": seconds})
        if r.status_code in (400, 403, 404):
            return None
        r.raise_for_status()
        return r.json()

    def _reply(self, r: httpx.Response) -> SpsReply:
        root = None
        if r.content:
            try:
                root = xml_io.parse_document(r.content)
            except Exception:
                logger.warning("client.reply: non-XML body status=%s", r.status_code)
        return SpsReply(status=r.status_code, body=r.content, root=root)
