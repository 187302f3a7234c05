from fastapi import APIRouter, Depends, HTTPException, Query, Response

from ..db import get_service
from ..errors import SpsError
from ..notifications import topic_namespace_document
from ..pipeline import xml_io
from ..schemas import SubscriptionIn, SubscriptionOut
from ..service import SpsService

router = APIRouter()


@router.get("/sps/topics")
def topics():
    return Response(content=topic_namespace_document(), media_type="application/xml")


@router.post("/sps/subscriptions", response_model=SubscriptionOut, status_code=201)
def subscribe(body: SubscriptionIn, service: SpsService = Depends(get_service)):
    try:
        sub = service.hub.subscribe(body.topic)
    except SpsError as ex:
        raise HTTPException(status_code=ex.http_status, detail=ex.as_dict())
    return SubscriptionOut(
        subscription_id=sub.subscription_id,
        topic=sub.topic_filter,
        events_url=f"/sps/subscriptions/{sub.subscription_id}/events",
    )


@router.get("/sps/subscriptions/{subscription_id}/events")
def drain(
    subscription_id: str,
    wait: float = Query(0.0, ge=0.0, le=30.0, description="seconds to long-poll when the queue is empty"),
    service: SpsService = Depends(get_service),
):
    try:
        sub = service.hub.subscription(subscription_id)
    except SpsError as ex:
        raise HTTPException(status_code=ex.http_status, detail=ex.as_dict())
    events, overflowed = sub.drain(wait)
    body = xml_io.events_document(subscription_id, events, overflowed, service.description_or_none)
    return Response(content=body, media_type="application/xml")
