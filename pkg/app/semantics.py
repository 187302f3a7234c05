from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

from rdflib import BNode, Graph, Literal, Namespace, URIRef, Variable
from rdflib.namespace import RDF, RDFS, XSD
from rdflib.term import Identifier

from swe.models import ChoiceValue

from .errors import CyclicSchema, MalformedPattern
from .models import RequestKind, ResultReference, Task, TaskingRequest

logger = logging.getLogger(__name__)

SPS = Namespace("http://www.opengis.net/sps/2.0#")

PREFIXES: Dict[str, str] = {
    "sps": str(SPS),
    "rdf": "http://www.w3.org/1999/02/22-rdf-syntax-ns#",
    "rdfs": "http://www.w3.org/2000/01/rdf-schema#",
    "xsd": "http://www.w3.org/2001/XMLSchema#",
}

OPERATION_CLASS = {
    RequestKind.FEASIBILITY: ("getfes", SPS.GetFeasibility),
    RequestKind.SUBMIT: ("submit", SPS.Submit),
    RequestKind.RESERVE: ("reserve", SPS.Reserve),
}

Triple = Tuple[Identifier, Identifier, Identifier]
Binding = Dict[Variable, Identifier]


# ---- schema ----

@dataclass(frozen=True)
class OntologySchema:
    subclass_of: frozenset = field(default_factory=frozenset)  # {(C, D)}: C rdfs:subClassOf D
    subproperty_of: frozenset = field(default_factory=frozenset)  # {(P, Q)}

    def check_acyclic(self) -> None:
        for label, pairs in (("class", self.subclass_of), ("property", self.subproperty_of)):
            _assert_acyclic(label, pairs)

    def triples(self) -> Set[Triple]:
        return {(c, RDFS.subClassOf, d) for c, d in self.subclass_of} | {
            (p, RDFS.subPropertyOf, q) for p, q in self.subproperty_of
        }


def _assert_acyclic(label: str, pairs: Iterable[Tuple[Any, Any]]) -> None:
    parents: Dict[Any, List[Any]] = {}
    for child, parent in pairs:
        parents.setdefault(child, []).append(parent)
    done: Set[Any] = set()
    for start in list(parents):
        if start in done:
            continue
        stack: List[Tuple[Any, Iterator[Any]]] = [(start, iter(parents.get(start, ())))]
        on_path = {start}
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on_path.discard(node)
                done.add(node)
                continue
            if nxt in on_path:
                raise CyclicSchema(f"{label} hierarchy has a cycle through {nxt}", str(nxt))
            if nxt not in done:
                on_path.add(nxt)
                stack.append((nxt, iter(parents.get(nxt, ()))))


DEFAULT_SCHEMA = OntologySchema(
    subclass_of=frozenset(
        {
            (SPS.GetFeasibility, SPS.TaskingRequest),
            (SPS.Submit, SPS.TaskingRequest),
            (SPS.Reserve, SPS.TaskingRequest),
            (SPS.FeasibilityStudy, SPS.Task),
            (SPS.Submission, SPS.Task),
            (SPS.TaskingRequest, SPS.SpsConcept),
            (SPS.Task, SPS.SpsConcept),
            (SPS.StatusReport, SPS.SpsConcept),
        }
    ),
    subproperty_of=frozenset(
        {
            (SPS.procedure, SPS.relatedTo),
            (SPS.hasResult, SPS.relatedTo),
            (SPS.onAsset, SPS.relatedTo),
        }
    ),
)


# ---- inference ----

def _closure_into(graph: Graph, schema: OntologySchema) -> int:
    supers: Dict[Identifier, List[Identifier]] = {}
    for c, d in schema.subclass_of:
        supers.setdefault(c, []).append(d)
    superprops: Dict[Identifier, List[Identifier]] = {}
    for p, q in schema.subproperty_of:
        superprops.setdefault(p, []).append(q)
    added = 0
    while True:
        fresh: Set[Triple] = set()
        for s, p, o in graph:
            if p == RDF.type:
                for d in supers.get(o, ()):
                    fresh.add((s, RDF.type, d))
            for q in superprops.get(p, ()):
                fresh.add((s, q, o))
        fresh = {t for t in fresh if t not in graph}
        if not fresh:
            return added
        for t in fresh:
            graph.add(t)
        added += len(fresh)


def rdfs_closure(store: Graph, schema: OntologySchema) -> Graph:
    """Forward-chain the subclass and subproperty rules to a fixpoint; the input is untouched."""
    schema.check_acyclic()
    out = Graph()
    for t in store:
        out.add(t)
    _closure_into(out, schema)
    return out


# ---- BGP ----

def _check_pattern(pattern: Sequence[Any]) -> Triple:
    if not isinstance(pattern, (tuple, list)) or len(pattern) != 3:
        raise MalformedPattern(f"pattern must have three terms: {pattern!r}")
    s, p, o = pattern
    for term in pattern:
        if not isinstance(term, Identifier):
            raise MalformedPattern(f"not an RDF term: {term!r}")
    if isinstance(s, Literal):
        raise MalformedPattern(f"literal in subject position: {s.n3()}")
    if not isinstance(p, (URIRef, Variable)):
        raise MalformedPattern(f"predicate must be an IRI or a variable: {p.n3()}")
    return s, p, o


def query_bgp(graph: Graph, patterns: Sequence[Sequence[Any]]) -> List[Binding]:
    """All solution mappings of a conjunctive triple pattern, duplicates removed."""
    if not patterns:
        raise MalformedPattern("empty pattern list")
    checked = [_check_pattern(p) for p in patterns]

    def solve(i: int, binding: Binding) -> Iterator[Binding]:
        if i == len(checked):
            yield binding
            return
        bound = tuple(binding.get(t, t) if isinstance(t, Variable) else t for t in checked[i])
        lookup = tuple(None if isinstance(t, Variable) else t for t in bound)
        for triple in graph.triples(lookup):  # type: ignore[arg-type]
            b = dict(binding)
            ok = True
            for pat, val in zip(bound, triple):
                if isinstance(pat, Variable):
                    if pat in b and b[pat] != val:
                        ok = False
                        break
                    b[pat] = val
            if ok:
                yield from solve(i + 1, b)

    seen: Set[frozenset] = set()
    out: List[Binding] = []
    for b in solve(0, {}):
        key = frozenset(b.items())
        if key not in seen:
            seen.add(key)
            out.append(b)
    out.sort(key=lambda b: tuple((str(k), v.n3()) for k, v in sorted(b.items())))
    return out


_TOKEN = re.compile(
    r'\s*(?:(?P<var>\?[A-Za-z_][\w]*)'
    r'|(?P<iri><[^<>"\s]*>)'
    r'|(?P<lit>"(?:[^"\\]|\\.)*")(?:\^\^(?P<dt><[^<>\s]*>|[A-Za-z][\w-]*:[\w\-/]*))?'
    r'|(?P<bnode>_:[\w-]+)'
    r'|(?P<pname>[A-Za-z][\w-]*:[\w\-/]*)'
    r'|(?P<a>a)(?=\s)'
    r'|(?P<dot>\.))'
)


def _expand(pname: str) -> URIRef:
    prefix, _, local = pname.partition(":")
    if prefix not in PREFIXES:
        raise MalformedPattern(f"unknown prefix {prefix!r}")
    return URIRef(PREFIXES[prefix] + local)


def _unescape(quoted: str) -> str:
    return re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t"}.get(m.group(1), m.group(1)), quoted[1:-1])


def parse_bgp(text: str) -> List[Triple]:
    """Parse one `s p o .` pattern per line (`?var`, `<iri>`, `prefix:local`, `"lex"^^xsd:type`)."""
    patterns: List[Triple] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        terms: List[Identifier] = []
        pos = 0
        dot = False
        while pos < len(line):
            m = _TOKEN.match(line, pos)
            if not m or m.end() == pos:
                raise MalformedPattern(f"cannot tokenize line {lineno} at column {pos + 1}", f"line {lineno}")
            pos = m.end()
            if dot:
                raise MalformedPattern(f"text after '.' on line {lineno}", f"line {lineno}")
            if m.group("var"):
                terms.append(Variable(m.group("var")[1:]))
            elif m.group("iri"):
                terms.append(URIRef(m.group("iri")[1:-1]))
            elif m.group("lit"):
                dt = m.group("dt")
                datatype = None
                if dt:
                    datatype = URIRef(dt[1:-1]) if dt.startswith("<") else _expand(dt)
                terms.append(Literal(_unescape(m.group("lit")), datatype=datatype, normalize=False))
            elif m.group("bnode"):
                terms.append(BNode(m.group("bnode")[2:]))
            elif m.group("pname"):
                terms.append(_expand(m.group("pname")))
            elif m.group("a"):
                terms.append(RDF.type)
            elif m.group("dot"):
                dot = True
            if pos < len(line) and line[pos:].strip() == "":
                break
        if len(terms) != 3:
            raise MalformedPattern(f"line {lineno} has {len(terms)} terms, expected 3", f"line {lineno}")
        patterns.append(_check_pattern(terms))
    if not patterns:
        raise MalformedPattern("empty query")
    return patterns


# ---- translation ----

def procedure_iri(procedure_id: str) -> URIRef:
    return URIRef(procedure_id) if ":" in procedure_id else SPS["procedure/" + procedure_id]


def request_subject(req: TaskingRequest) -> URIRef:
    prefix, _ = OPERATION_CLASS[req.kind]
    return SPS[f"{prefix}_{req.request_id.rpartition('_')[2]}"]


def task_subject(task_id: str) -> URIRef:
    return SPS[task_id]


def _instant(value: datetime) -> Literal:
    return Literal(value.isoformat(), datatype=XSD.dateTime, normalize=False)


def value_literal(value: Any) -> Literal:
    if isinstance(value, datetime):
        return _instant(value)
    if isinstance(value, bool):
        return Literal("Y" if value else "N")
    if isinstance(value, (Decimal, int, float)):
        return Literal(repr(value) if isinstance(value, float) else str(value), datatype=XSD.decimal, normalize=False)
    if isinstance(value, ChoiceValue):
        inner = ",".join(str(value_literal(v)) for v in value.block.values())
        return Literal(f"{value.branch}:{inner}" if inner else value.branch)
    if isinstance(value, (tuple, list)):
        return Literal(",".join(str(value_literal(v)) for v in value))
    return Literal(str(value))


def translate_request(req: TaskingRequest) -> Set[Triple]:
    s = request_subject(req)
    local = s[len(str(SPS)):]
    _, cls = OPERATION_CLASS[req.kind]
    triples: Set[Triple] = {
        (s, RDF.type, cls),
        (s, SPS.requestId, Literal(req.request_id)),
        (s, SPS.procedure, procedure_iri(req.procedure_id)),
        (s, SPS.status, Literal(req.status.value)),
        (s, SPS.receivedAt, _instant(req.received_at)),
    }
    if req.task_id:
        triples.add((s, SPS.resultingTask, task_subject(req.task_id)))
    for i, block in enumerate(req.parameters.blocks):
        for name, value in block.items():
            if value is None:
                continue
            node = BNode(f"{local}_b{i}_{name}")
            triples |= {
                (s, SPS.parameter, node),
                (node, SPS.name, Literal(name)),
                (node, SPS.value, value_literal(value)),
                (node, SPS.block, Literal(str(i), datatype=XSD.decimal, normalize=False)),
            }
    return triples


def translate_task(task: Task, references: Sequence[ResultReference] = ()) -> Set[Triple]:
    s = task_subject(task.task_id)
    triples: Set[Triple] = {
        (s, RDF.type, SPS.Task),
        (s, RDF.type, SPS[task.kind.value]),
        (s, SPS.status, Literal(task.state.value)),
        (s, SPS.procedure, procedure_iri(task.procedure_id)),
        (s, SPS.createdAt, _instant(task.created_at)),
        (s, SPS.updatedAt, _instant(task.updated_at)),
    }
    if task.asset_id:
        triples.add((s, SPS.onAsset, SPS["asset/" + task.asset_id]))
    if task.request_id:
        triples.add((s, SPS.requestId, Literal(task.request_id)))
    if task.reservation_expiration is not None:
        triples.add((s, SPS.reservationExpiration, _instant(task.reservation_expiration)))
    for ref in references:
        triples.add((s, SPS.hasResult, URIRef("urn:sps:" + ref.uri)))
    return triples


def extract_request(graph: Graph, subject: URIRef) -> Dict[str, Any]:
    """Inverse of translate_request: operation class, procedure, request id and parameter values."""
    classes = {cls: kind for kind, (_, cls) in OPERATION_CLASS.items()}
    operation = next((classes[o] for o in graph.objects(subject, RDF.type) if o in classes), None)
    procedure = next(iter(graph.objects(subject, SPS.procedure)), None)
    request_id = next(iter(graph.objects(subject, SPS.requestId)), None)
    blocks: Dict[int, Dict[str, str]] = {}
    for node in graph.objects(subject, SPS.parameter):
        name = graph.value(node, SPS.name)
        value = graph.value(node, SPS.value)
        block = graph.value(node, SPS.block)
        blocks.setdefault(int(str(block)), {})[str(name)] = str(value)
    return {
        "operation": operation,
        "procedure": procedure,
        "request_id": str(request_id) if request_id is not None else None,
        "parameters": [blocks[i] for i in sorted(blocks)],
    }


# ---- store ----

class SemanticStore:
    """RDF image of requests and tasks with materialized RDFS inference."""

    def __init__(self, schema: OntologySchema = DEFAULT_SCHEMA, *, inference: bool = True) -> None:
        schema.check_acyclic()
        self.schema = schema
        self.inference = inference
        self.graph = Graph()
        self.graph.bind("sps", SPS)
        self._lock = threading.RLock()
        self._subjects: Dict[str, Set[Identifier]] = {}
        for t in schema.triples():
            self.graph.add(t)

    def put(self, owner: str, triples: Set[Triple]) -> None:
        """Replace everything previously asserted for `owner` (retracting its inferences too)."""
        for t in triples:
            if any(isinstance(term, Variable) for term in t):
                raise MalformedPattern(f"variables cannot be stored: {t}")
        batch = Graph()
        for t in triples:
            batch.add(t)
        if self.inference:
            _closure_into(batch, self.schema)
        with self._lock:
            for subj in self._subjects.get(owner, ()):
                self.graph.remove((subj, None, None))
            for t in batch:
                self.graph.add(t)
            self._subjects[owner] = {s for s, _, _ in triples}
        logger.info("semantics.put: owner=%s triples=%s", owner, len(batch))

    def record_request(self, req: TaskingRequest) -> URIRef:
        self.put(req.request_id, translate_request(req))
        return request_subject(req)

    def record_task(self, task: Task, references: Sequence[ResultReference] = ()) -> URIRef:
        self.put(task.task_id, translate_task(task, references))
        return task_subject(task.task_id)

    def query(self, text: str) -> Tuple[List[str], List[Binding]]:
        patterns = parse_bgp(text)
        variables: List[str] = []
        for pattern in patterns:
            for term in pattern:
                if isinstance(term, Variable) and str(term) not in variables:
                    variables.append(str(term))
        with self._lock:
            return variables, query_bgp(self.graph, patterns)

    def __len__(self) -> int:
        with self._lock:
            return len(self.graph)

    def dump(self) -> str:
        with self._lock:
            lines = sorted(f"{s.n3()} {p.n3()} {o.n3()} ." for s, p, o in self.graph)
        return "\n".join(lines) + ("\n" if lines else "")
