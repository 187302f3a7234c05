"""Command-line client of the Sensor Planning Service.

Parameter assignments are `name=value` pairs. A name may be any unique
case-insensitive suffix of a declared field (`target=` for measurementTarget).
Choices are written `branch:v1,v2,...` (e.g. `target=pointToLookAt:51.9,8.19,0`),
vectors as comma-separated components and booleans as Y/N or true/false.
"""
from __future__ import annotations

import argparse
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple, TypedDict

import httpx
from langgraph.graph import END, StateGraph
from lxml import etree

from swe.codec import decode_parameter_data, encode_parameter_data, parse_scalar, validate_values
from swe.description import parameter_data_from_xml, parse_tasking_description
from swe.models import (
    SCALAR_KINDS,
    ChoiceValue,
    CodecError,
    FieldDescriptor,
    FieldKind,
    LexicalError,
    ParameterData,
    ParameterDescription,
    TextEncodingSpec,
    TokenCountMismatch,
    UnknownSelector,
)

from .clients.sps import DEFAULT_ENDPOINT, SpsClient, SpsReply
from .pipeline import xml_io

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NETWORK = 2
EXIT_SERVICE = 3
EXIT_LOCAL = 4

TERMINAL_STATES = {"Completed", "Failed", "Cancelled", "ReservationExpired"}
TERMINAL_EVENTS = {"TaskCompletion", "TaskFailure", "TaskCancellation"}

REPORT_KEYS = ("task", "request", "requestStatus", "taskStatus", "percentCompletion", "dataAvailable", "reservationExpiration")


class CliError(Exception):
    def __init__(self, exit_code: int, message: str) -> None:
        super().__init__(message)
        self.exit_code = exit_code
        self.message = message


class ServiceFailure(CliError):
    def __init__(self, code: str, text: str, locator: Optional[str] = None) -> None:
        where = f" (locator={locator})" if locator else ""
        super().__init__(EXIT_SERVICE, f"error: {code}: {text}{where}")
        self.code = code


def _check(reply: SpsReply) -> SpsReply:
    exc = reply.exception
    if exc is not None:
        raise ServiceFailure(*exc)
    return reply


# ---- parameter assignments ----

def resolve_field(desc: ParameterDescription, name: str) -> FieldDescriptor:
    for fd in desc.fields:
        if fd.name == name:
            return fd
    hits = [fd for fd in desc.fields if fd.name.lower().endswith(name.lower())]
    if len(hits) != 1:
        raise CliError(EXIT_LOCAL, f"field {name!r} matches {len(hits)} declared fields of {desc.procedure_id}")
    return hits[0]


def _width(fd: FieldDescriptor) -> int:
    return len(fd.components) if fd.kind == FieldKind.VECTOR else 1


def parse_assignment_value(fd: FieldDescriptor, text: str, path: str) -> Any:
    if fd.kind == FieldKind.CHOICE:
        selector, _, rest = text.partition(":")
        branch = fd.branch(selector)
        if branch is None:
            raise UnknownSelector(f"{selector!r} is not a branch of {fd.name}", path)
        tokens = rest.split(",") if rest else []
        block: Dict[str, Any] = {}
        for sub in branch.fields:
            if not tokens:
                if sub.optional:
                    continue
                raise TokenCountMismatch(f"branch {selector} needs a value for {sub.name}", f"{path}/{sub.name}")
            chunk, tokens = tokens[: _width(sub)], tokens[_width(sub) :]
            block[sub.name] = parse_assignment_value(sub, ",".join(chunk), f"{path}/{selector}/{sub.name}")
        if tokens:
            raise TokenCountMismatch(f"{len(tokens)} surplus values for branch {selector}", path)
        return ChoiceValue(branch=selector, block=block)
    if fd.kind == FieldKind.VECTOR:
        parts = text.split(",")
        if len(parts) != len(fd.components):
            raise TokenCountMismatch(f"{fd.name} has {len(fd.components)} components, got {len(parts)}", path)
        return tuple(parse_scalar(FieldKind.VECTOR, p.strip(), f"{path}/{c.name}") for p, c in zip(parts, fd.components))
    if fd.kind == FieldKind.BOOLEAN:
        lowered = text.strip().lower()
        if lowered in ("true", "yes", "y", "1"):
            return True
        if lowered in ("false", "no", "n", "0"):
            return False
        raise LexicalError(f"not a boolean: {text!r}", path)
    return parse_scalar(fd.kind, text.strip(), path)


def defaults_block(desc: ParameterDescription) -> Dict[str, Any]:
    return {fd.name: fd.default for fd in desc.fields if fd.kind in SCALAR_KINDS and fd.default is not None}


def build_block(desc: ParameterDescription, assignments: Sequence[str], base: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    block = dict(base or {})
    for item in assignments:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise CliError(EXIT_LOCAL, f"expected name=value, got {item!r}")
        fd = resolve_field(desc, name.strip())
        try:
            block[fd.name] = parse_assignment_value(fd, value, fd.name)
        except CodecError as ex:
            raise CliError(EXIT_LOCAL, f"invalid value for {fd.name}: {ex}") from None
    report = validate_values(desc, block)
    if not report.ok:
        details = "; ".join(f"{v.path}: {v.kind}" for v in report.violations)
        raise CliError(EXIT_LOCAL, f"local validation failed: {details}")
    return block


def encode_block(desc: ParameterDescription, block: Dict[str, Any]) -> Tuple[TextEncodingSpec, str]:
    data = ParameterData(encoding=TextEncodingSpec(), blocks=(block,))
    try:
        return data.encoding, encode_parameter_data(desc, data)
    except CodecError as ex:
        raise CliError(EXIT_LOCAL, f"cannot encode parameters: {ex}") from None


# ---- response readers ----

def fetch_description(client: SpsClient, procedure: str) -> Tuple[SpsReply, ParameterDescription]:
    reply = _check(client.describe_tasking(procedure))
    el = reply.root.find(f".//{xml_io.q('TaskingParameterDescription')}")  # type: ignore[union-attr]
    if el is None:
        raise CliError(EXIT_SERVICE, "DescribeTasking response carries no description")
    return reply, parse_tasking_description(etree.tostring(el))


def task_parameters(reply: SpsReply, desc: ParameterDescription) -> Dict[str, Any]:
    holder = reply.root.find(f".//{xml_io.q('taskingParameters')}")  # type: ignore[union-attr]
    pd = holder.find(xml_io.q("ParameterData")) if holder is not None else None
    if pd is None:
        raise CliError(EXIT_SERVICE, "GetTask response carries no parameters")
    enc, values = parameter_data_from_xml(pd)
    return dict(decode_parameter_data(desc, enc, values).blocks[0])


def report_line(root: etree._Element) -> str:
    el = xml_io.find_report(root)
    if el is None:
        return ""
    fields = xml_io.read_status_report(el)
    return " ".join(f"{k}={fields[k]}" for k in REPORT_KEYS if fields.get(k))


def summarize(command: str, reply: SpsReply) -> List[str]:
    root = reply.root
    if root is None:
        return [reply.body.decode("utf-8", "replace")]
    lines: List[str] = []
    if command == "capabilities":
        ops = [op.get("name") for op in root.iter(xml_io.q("Operation"))]
        lines.append(f"operations ({len(ops)}): {' '.join(ops)}")
        for off in root.iter(xml_io.q("offering")):
            lines.append(f"offering procedure={off.findtext(xml_io.q('procedure'))} asset={off.findtext(xml_io.q('asset'))}")
    elif command == "describe-tasking":
        for fd in root.iter(xml_io.q("field")):
            flags = [k for k in ("optional", "updatable") if fd.get(k) == "true"]
            extra = f" default={fd.get('default')}" if fd.get("default") else ""
            lines.append(f"{fd.get('name')} {fd.get('kind')}{' ' + ','.join(flags) if flags else ''}{extra}")
    elif command == "describe-sensor":
        lines.append(f"document={etree.QName(root).localname} bytes={len(reply.body)}")
    elif command in ("feasibility", "submit", "reserve"):
        head = [f"{k}={root.findtext(xml_io.q(k))}" for k in ("request", "requestStatus", "task", "feasible") if root.findtext(xml_io.q(k))]
        lines.append(" ".join(head))
        alts = root.findall(f"{xml_io.q('alternatives')}/{xml_io.q('alternative')}")
        if alts:
            lines.append(f"alternatives={len(alts)}")
        reason = root.findtext(xml_io.q("reason"))
        if reason:
            lines.append(f"reason: {reason}")
    elif command == "task":
        task = root.find(xml_io.q("Task"))
        if task is not None:
            lines.append(f"task={task.get('id')} kind={task.findtext(xml_io.q('kind'))} state={task.findtext(xml_io.q('taskStatus'))}")
            for entry in task.iter(xml_io.q("entry")):
                lines.append(f"  {entry.get('event')} {entry.text or ''}".rstrip())
    elif command == "results":
        refs = list(root.iter(xml_io.q("reference")))
        lines.append(f"references={len(refs)}")
        lines.extend(f"  {r.get('uri')} partial={r.get('partial')}" for r in refs)
    elif command == "topics":
        lines.extend(
            ("  " if el.getparent().tag != root.tag else "") + el.get("name")
            for el in root.iter()
            if isinstance(el.tag, str) and el.get("name") and el is not root
        )
    elif command == "drain":
        lines.append(f"subscription={root.get('subscription')} overflow={root.get('overflow')}")
        for n in root.iter(xml_io.q("Notification")):
            lines.append(f"  {n.get('topic')} seq={n.get('sequence')} {report_line(n)}")
    if not lines or command in ("status", "confirm", "update", "cancel"):
        line = report_line(root)
        if line:
            lines.append(line)
    return lines


# ---- workflow ----

class WorkflowState(TypedDict, total=False):
    client: SpsClient
    procedure: str
    assignments: List[str]
    advance: float
    cancel_at: Optional[int]
    max_polls: int
    wait: float
    desc: ParameterDescription
    params: Tuple[TextEncodingSpec, str]
    task_id: str
    subscription: str
    lines: List[str]
    failure: Optional[CliError]


def _step(state: WorkflowState, text: str) -> None:
    n = sum(1 for l in state["lines"] if l.startswith("[")) + 1
    state["lines"].append(f"[{n}] {text}")


def _guard(fn):
    def node(state: WorkflowState) -> WorkflowState:
        try:
            return fn(state)
        except CliError as ex:
            state["failure"] = ex
        except (httpx.TransportError, httpx.HTTPStatusError) as ex:
            state["failure"] = _http_failure(ex)
        return state

    return node


def _node_capabilities(state: WorkflowState) -> WorkflowState:
    root = _check(state["client"].capabilities()).root
    ops = [op.get("name") for op in root.iter(xml_io.q("Operation"))]  # type: ignore[union-attr]
    offered = [el.findtext(xml_io.q("procedure")) for el in root.iter(xml_io.q("offering"))]  # type: ignore[union-attr]
    if state["procedure"] not in offered:
        raise CliError(EXIT_SERVICE, f"procedure {state['procedure']} is not offered")
    _step(state, f"capabilities: operations={len(ops)} offerings={len(offered)}")
    return state


def _node_describe(state: WorkflowState) -> WorkflowState:
    _, desc = fetch_description(state["client"], state["procedure"])
    block = build_block(desc, state.get("assignments") or [], base=defaults_block(desc))
    state["desc"] = desc
    state["params"] = encode_block(desc, block)
    _step(state, f"describe-tasking: procedure={desc.procedure_id} fields={len(desc.fields)} values={state['params'][1]}")
    return state


def _node_feasibility(state: WorkflowState) -> WorkflowState:
    enc, values = state["params"]
    root = _check(state["client"].tasking("GetFeasibility", state["procedure"], enc, values)).root
    feasible = root.findtext(xml_io.q("feasible"))  # type: ignore[union-attr]
    _step(state, f"feasibility: request={root.findtext(xml_io.q('request'))} task={root.findtext(xml_io.q('task'))} feasible={feasible}")  # type: ignore[union-attr]
    if feasible != "true":
        raise CliError(EXIT_SERVICE, f"procedure {state['procedure']} is not feasible: {root.findtext(xml_io.q('reason'))}")  # type: ignore[union-attr]
    return state


def _node_submit(state: WorkflowState) -> WorkflowState:
    client = state["client"]
    state["subscription"] = client.subscribe("TaskEvent")["subscription_id"]
    enc, values = state["params"]
    root = _check(client.tasking("Submit", state["procedure"], enc, values)).root
    task_id = root.findtext(xml_io.q("task"))  # type: ignore[union-attr]
    if not task_id:
        raise CliError(EXIT_SERVICE, f"submit was not accepted: {root.findtext(xml_io.q('requestStatus'))}")  # type: ignore[union-attr]
    state["task_id"] = task_id
    fields = xml_io.read_status_report(xml_io.find_report(root))  # type: ignore[arg-type]
    _step(state, f"submit: request={root.findtext(xml_io.q('request'))} status={root.findtext(xml_io.q('requestStatus'))} task={task_id} state={fields['taskStatus']}")  # type: ignore[union-attr]
    return state


def _node_status(state: WorkflowState) -> WorkflowState:
    client, task_id = state["client"], state["task_id"]
    _step(state, f"status: task={task_id}")
    cancelled = False
    for poll in range(1, state["max_polls"] + 1):
        fields = xml_io.read_status_report(xml_io.find_report(_check(client.status(task=task_id)).root))  # type: ignore[arg-type]
        task_state, percent = fields["taskStatus"], int(fields["percentCompletion"] or 0)
        state["lines"].append(f"    poll {poll}: state={task_state} percent={percent}")
        if task_state in TERMINAL_STATES:
            break
        if not cancelled and state.get("cancel_at") is not None and percent >= state["cancel_at"]:  # type: ignore[operator]
            report = xml_io.read_status_report(xml_io.find_report(_check(client.command("Cancel", task_id)).root))  # type: ignore[arg-type]
            state["lines"].append(f"    cancel: state={report['taskStatus']}")
            cancelled = True
            continue
        if state.get("advance") and client.advance(state["advance"]) is not None:
            continue
        client.drain(state["subscription"], wait=state.get("wait", 5.0))
    events = _drain_task_events(client, state["subscription"], task_id)
    for topic, seq in events:
        state["lines"].append(f"    event {topic} seq={seq}")
    if not any(topic in TERMINAL_EVENTS for topic, _ in events):
        raise CliError(EXIT_SERVICE, f"no terminal notification observed for {task_id}")
    return state


def _drain_task_events(client: SpsClient, subscription: str, task_id: str) -> List[Tuple[str, str]]:
    out: List[Tuple[str, str]] = []
    root = _check(client.drain(subscription)).root
    for n in root.iter(xml_io.q("Notification")):  # type: ignore[union-attr]
        report = xml_io.find_report(n)
        if report is not None and report.findtext(xml_io.q("task")) == task_id:
            out.append((n.get("topic"), n.get("sequence")))
    return out


def _node_results(state: WorkflowState) -> WorkflowState:
    root = _check(state["client"].results(state["task_id"])).root
    refs = list(root.iter(xml_io.q("reference")))  # type: ignore[union-attr]
    _step(state, f"results: task={state['task_id']} references={len(refs)}")
    state["lines"].extend(f"    {r.get('uri')} partial={r.get('partial')}" for r in refs)
    if not refs:
        raise CliError(EXIT_SERVICE, f"no result references for {state['task_id']}")
    return state


WORKFLOW_STEPS = (
    ("capabilities", _node_capabilities),
    ("describe_tasking", _node_describe),
    ("feasibility", _node_feasibility),
    ("submit", _node_submit),
    ("status", _node_status),
    ("results", _node_results),
)


def build_workflow_graph():
    g = StateGraph(WorkflowState)
    for name, fn in WORKFLOW_STEPS:
        g.add_node(name, _guard(fn))
    g.set_entry_point(WORKFLOW_STEPS[0][0])
    for (name, _), (nxt, _) in zip(WORKFLOW_STEPS, WORKFLOW_STEPS[1:]):
        g.add_conditional_edges(name, lambda s, nxt=nxt: END if s.get("failure") else nxt, {nxt: nxt, END: END})
    g.add_edge(WORKFLOW_STEPS[-1][0], END)
    return g.compile()


def run_workflow(client: SpsClient, args: argparse.Namespace) -> Tuple[int, str]:
    state: WorkflowState = {
        "client": client,
        "procedure": args.procedure,
        "assignments": list(args.assignments),
        "advance": args.advance,
        "cancel_at": args.cancel_at_percent,
        "max_polls": args.max_polls,
        "wait": min(args.timeout, 5.0),
        "lines": [],
        "failure": None,
    }
    out = build_workflow_graph().invoke(state)
    lines = list(out.get("lines") or [])
    failure = out.get("failure")
    if failure is not None:
        lines.append(failure.message)
        return failure.exit_code, "\n".join(lines)
    lines.append("workflow: ok")
    return EXIT_OK, "\n".join(lines)


# ---- single commands ----

def _http_failure(ex: Exception) -> CliError:
    if isinstance(ex, httpx.HTTPStatusError):
        try:
            detail = ex.response.json().get("detail") or {}
        except ValueError:
            detail = {}
        if isinstance(detail, dict) and detail.get("code"):
            return ServiceFailure(detail["code"], detail.get("text") or "", detail.get("locator"))
        return CliError(EXIT_SERVICE, f"error: HTTP {ex.response.status_code}")
    return CliError(EXIT_NETWORK, f"network error: {ex}")


def _tasking_params(client: SpsClient, args: argparse.Namespace) -> Tuple[TextEncodingSpec, str]:
    _, desc = fetch_description(client, args.procedure)
    return encode_block(desc, build_block(desc, args.assignments))


def _update_params(client: SpsClient, args: argparse.Namespace) -> Tuple[TextEncodingSpec, str]:
    task_reply = _check(client.task(args.task))
    procedure = task_reply.root.findtext(f".//{xml_io.q('procedure')}")  # type: ignore[union-attr]
    _, desc = fetch_description(client, procedure)
    return encode_block(desc, build_block(desc, args.assignments, base=task_parameters(task_reply, desc)))


def execute_command(client: SpsClient, args: argparse.Namespace) -> Tuple[int, str]:
    cmd = args.command
    if cmd == "workflow":
        return run_workflow(client, args)
    if cmd == "subscribe":
        sub = client.subscribe(args.topic)
        return EXIT_OK, f"subscription={sub['subscription_id']} topic={sub['topic']} events={sub['events_url']}"

    if cmd == "capabilities":
        reply = client.capabilities()
    elif cmd == "describe-sensor":
        reply = client.describe_sensor(args.procedure)
    elif cmd == "describe-tasking":
        reply = client.describe_tasking(args.procedure)
    elif cmd in ("feasibility", "submit", "reserve"):
        enc, values = _tasking_params(client, args)
        op = {"feasibility": "GetFeasibility", "submit": "Submit", "reserve": "Reserve"}[cmd]
        reply = client.tasking(op, args.procedure, enc, values, getattr(args, "feasibility_id", None))
    elif cmd in ("confirm", "cancel"):
        reply = client.command(cmd.capitalize(), args.task)
    elif cmd == "update":
        reply = client.command("Update", args.task, _update_params(client, args))
    elif cmd == "status":
        if not (args.task or args.request):
            raise CliError(EXIT_LOCAL, "status needs --task or --request")
        reply = client.status(task=args.task, request=args.request)
    elif cmd == "task":
        reply = client.task(args.task)
    elif cmd == "results":
        reply = client.results(args.task)
    elif cmd == "topics":
        reply = client.topics()
    elif cmd == "drain":
        reply = client.drain(args.subscription, wait=args.wait)
    else:  # pragma: no cover - argparse restricts the choices
        raise CliError(EXIT_LOCAL, f"unknown command {cmd}")

    _check(reply)
    if args.output == "xml":
        return EXIT_OK, reply.body.decode("utf-8").rstrip("\n")
    return EXIT_OK, "\n".join(summarize(cmd, reply))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sps", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--endpoint", default=DEFAULT_ENDPOINT, help="service endpoint (default %(default)s)")
    ap.add_argument("--output", choices=("xml", "summary"), default="summary")
    ap.add_argument("--timeout", type=float, default=20.0, help="HTTP timeout in seconds")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("capabilities", help="GetCapabilities")
    for name in ("describe-sensor", "describe-tasking"):
        sub.add_parser(name).add_argument("--procedure", required=True)
    for name in ("feasibility", "submit", "reserve"):
        p = sub.add_parser(name, help="tasking request; parameters as name=value")
        p.add_argument("--procedure", required=True)
        if name != "feasibility":
            p.add_argument("--feasibility-id", help="rejected by the service; feasibility studies are not reusable")
        p.add_argument("assignments", nargs="*", metavar="name=value")
    for name in ("confirm", "cancel", "task", "results"):
        sub.add_parser(name).add_argument("--task", required=True)
    p = sub.add_parser("update", help="Update updatable fields of a task")
    p.add_argument("--task", required=True)
    p.add_argument("assignments", nargs="+", metavar="name=value")
    p = sub.add_parser("status", help="GetStatus of a task or request")
    p.add_argument("--task")
    p.add_argument("--request")
    sub.add_parser("topics", help="topic namespace")
    sub.add_parser("subscribe").add_argument("--topic", required=True)
    p = sub.add_parser("drain", help="pending events of a subscription")
    p.add_argument("--subscription", required=True)
    p.add_argument("--wait", type=float, default=0.0)
    p = sub.add_parser("workflow", help="capabilities -> describe-tasking -> feasibility -> submit -> status -> results")
    p.add_argument("--procedure", required=True)
    p.add_argument("--advance", type=float, default=30.0, help="virtual seconds to advance between polls (0 disables)")
    p.add_argument("--cancel-at-percent", type=int, default=None)
    p.add_argument("--max-polls", type=int, default=10)
    p.add_argument("assignments", nargs="*", metavar="name=value")
    return ap


def run(argv: Sequence[str], client: Optional[httpx.Client] = None) -> Tuple[int, str]:
    """Run one invocation; returns (exit code, rendered output)."""
    args = build_parser().parse_args(list(argv))
    with SpsClient(args.endpoint, client=client, timeout=args.timeout) as sps:
        try:
            return execute_command(sps, args)
        except CliError as ex:
            return ex.exit_code, ex.message
        except (httpx.TransportError, httpx.HTTPStatusError) as ex:
            err = _http_failure(ex)
            return err.exit_code, err.message


def main(argv: Optional[Sequence[str]] = None) -> None:
    import sys

    code, output = run(sys.argv[1:] if argv is None else argv)
    if output:
        print(output)
    raise SystemExit(code)


if __name__ == "__main__":
    main()
