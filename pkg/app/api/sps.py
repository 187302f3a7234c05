from fastapi import APIRouter, Depends, HTTPException, Query, Request, Response
from starlette.concurrency import run_in_threadpool

from ..db import get_operator, get_service
from ..errors import InvalidParameterValue, InvalidRequest, SpsError, UnknownTask
from ..pipeline import xml_io
from ..pipeline.operator import RequestOperator
from ..service import SpsService

router = APIRouter()

XML = "application/xml"


@router.post("/sps")
async def sps_post(request: Request, operator: RequestOperator = Depends(get_operator)):
    raw = await request.body()
    # dispatch blocks on the service lock
    status, body = await run_in_threadpool(operator.dispatch, raw)
    return Response(content=body, status_code=status, media_type=XML)


@router.get("/sps")
def sps_kvp(
    service_name: str = Query(None, alias="service"),
    request_name: str = Query(None, alias="request"),
    operator: RequestOperator = Depends(get_operator),
):
    try:
        if not service_name:
            raise InvalidRequest("missing service parameter", "service")
        if service_name != xml_io.SERVICE:
            raise InvalidParameterValue(f"service must be {xml_io.SERVICE}", "service")
        if request_name != "GetCapabilities":
            raise InvalidParameterValue("only GetCapabilities is offered over KVP", "request")
    except SpsError as ex:
        return Response(content=xml_io.exception_report(ex), status_code=ex.http_status, media_type=XML)
    status, body = operator.dispatch(xml_io.build_request("GetCapabilities", version=None))
    return Response(content=body, status_code=status, media_type=XML)


@router.get("/results/{task_id}/{n}")
def result(task_id: str, n: int, service: SpsService = Depends(get_service)):
    try:
        ref = service.result(task_id, n)
        task = service.get_task(task_id)
    except UnknownTask as ex:
        raise HTTPException(status_code=ex.http_status, detail=ex.as_dict())
    return Response(content=xml_io.result_document(ref, task.procedure_id), media_type=XML)
