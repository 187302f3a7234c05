from fastapi import APIRouter, Depends, Query, Response

from ..db import get_service
from ..errors import SpsError
from ..pipeline import xml_io
from ..service import SpsService

router = APIRouter()


@router.get("/sps/semantics/query")
def query(
    q: str = Query(..., description="one triple pattern per line, e.g. ?t a sps:Task . then ?t sps:status ?s"),
    service: SpsService = Depends(get_service),
):
    try:
        variables, rows = service.semantics.query(q)
    except SpsError as ex:
        return Response(content=xml_io.exception_report(ex), status_code=ex.http_status, media_type="application/xml")
    return Response(content=xml_io.bindings_document(variables, rows), media_type="application/xml")


@router.get("/sps/semantics/dump")
def dump(service: SpsService = Depends(get_service)):
    return Response(content=service.semantics.dump(), media_type="text/plain")
