from fastapi import APIRouter, Depends, HTTPException, Query, status

from ..db import get_service
from ..errors import SpsError
from ..schemas import ClockOut
from ..service import SpsService

router = APIRouter()


@router.get("/health")
def health(service: SpsService = Depends(get_service)):
    return {
        "ok": True,
        "now": service.now().isoformat(),
        "clock": service.settings.clock,
        "procedures": sorted(service.descriptions),
        "tasks": len(service.store.tasks()),
    }


@router.post("/clock/advance", response_model=ClockOut)
def advance_clock(
    seconds: float = Query(..., ge=0, description="virtual seconds to move forward"),
    service: SpsService = Depends(get_service),
):
    if not service.settings.debug_clock:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="debug clock disabled")
    try:
        fired = service.advance_clock(seconds)
    except SpsError as ex:
        raise HTTPException(status_code=ex.http_status, detail=ex.as_dict())
    return ClockOut(now=service.now(), fired=fired, next_timer=service.next_timer())
