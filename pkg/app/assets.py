from __future__ import annotations

import hashlib
import logging
import threading
from datetime import datetime, timedelta
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from geopy.distance import great_circle
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from swe.models import ChoiceValue, ParameterData

from .errors import CapacityExhausted, NotHeld, ProcedureMismatch, UnknownTask
from .models import ResultReference

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
START_FIELD = "measurementStart"
END_FIELD = "measurementEnd"


class AssetProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    asset_id: str = Field(min_length=1)
    procedure_id: str = Field(min_length=1)
    windows: Tuple[Tuple[datetime, datetime], ...] = ()
    center: Tuple[float, float]
    radius_km: float = Field(gt=0)
    capacity: PositiveInt = 1
    execution_duration_s: PositiveInt = 60
    failure_rate: float = Field(0.0, ge=0.0, le=1.0)
    decision_delay_s: int = Field(0, ge=0)
    partial_results: bool = True

    @model_validator(mode="after")
    def _windows_ordered(self) -> "AssetProfile":
        prev_end: Optional[datetime] = None
        for start, end in self.windows:
            if start.tzinfo is None or end.tzinfo is None:
                raise ValueError(f"window of {self.asset_id} needs explicit offsets")
            if end <= start:
                raise ValueError(f"empty window in {self.asset_id}")
            if prev_end is not None and start < prev_end:
                raise ValueError(f"windows of {self.asset_id} overlap or are unordered")
            prev_end = end
        return self


class FeasibilityResult(BaseModel):
    feasible: bool
    asset_id: Optional[str] = None
    alternatives: List[ParameterData] = Field(default_factory=list)
    reason: str = ""
    failed_checks: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _feasible_shape(self) -> "FeasibilityResult":
        if self.feasible and (self.asset_id is None or self.alternatives):
            raise ValueError("a feasible result names its asset and offers no alternatives")
        return self

    @property
    def capacity_only(self) -> bool:
        return self.failed_checks == ("capacity",)


class ExecutionStep(BaseModel):
    at: datetime
    progress: int
    outcome: Optional[str] = None  # None | "completed" | "failed"
    publish_partial: bool = False


def great_circle_km(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return great_circle(a, b, radius=EARTH_RADIUS_KM).km


def failure_draw(seed: int, task_id: str) -> float:
    """Uniform value in [0, 1) derived only from (seed, task_id)."""
    digest = hashlib.sha256(f"{seed}:{task_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def will_fail(seed: int, task_id: str, failure_rate: float) -> bool:
    return failure_draw(seed, task_id) < failure_rate


def _target_point(block: Dict[str, Any]) -> Optional[Tuple[float, float]]:
    for value in block.values():
        if isinstance(value, ChoiceValue):
            hit = _target_point(value.block)
            if hit is not None:
                return hit
        elif isinstance(value, tuple) and len(value) >= 2:
            return float(value[0]), float(value[1])
    return None


def _overlap_s(start: datetime, end: datetime, window: Tuple[datetime, datetime]) -> float:
    lo = max(start, window[0])
    hi = min(end, window[1])
    return (hi - lo).total_seconds()


def _time_ok(profile: AssetProfile, block: Dict[str, Any]) -> bool:
    start, end = block.get(START_FIELD), block.get(END_FIELD)
    if not isinstance(start, datetime) or not isinstance(end, datetime):
        return True
    return any(_overlap_s(start, end, w) >= profile.execution_duration_s for w in profile.windows)


def _shift_into(block: Dict[str, Any], window: Tuple[datetime, datetime], duration_s: int) -> Dict[str, Any]:
    start, end = block[START_FIELD], block[END_FIELD]
    span = max((end - start).total_seconds(), duration_s)
    new_start = window[0]
    new_end = min(new_start + timedelta(seconds=span), window[1])
    out = dict(block)
    out[START_FIELD] = new_start.astimezone(start.tzinfo)
    out[END_FIELD] = new_end.astimezone(end.tzinfo)
    return out


def _alternatives(profile: AssetProfile, params: ParameterData, limit: int) -> List[ParameterData]:
    candidates = [w for w in profile.windows if (w[1] - w[0]).total_seconds() >= profile.execution_duration_s]
    out: List[ParameterData] = []
    for window in candidates[:limit]:
        blocks = tuple(
            b if _time_ok(profile, b) else _shift_into(b, window, profile.execution_duration_s)
            for b in params.blocks
        )
        out.append(ParameterData(encoding=params.encoding, blocks=blocks))
    return out


def check_feasibility(
    profile: AssetProfile,
    params: ParameterData,
    *,
    procedure_id: Optional[str] = None,
    available: Optional[int] = None,
    max_alternatives: int = 3,
) -> FeasibilityResult:
    """Time window, footprint and capacity checks of one asset against every block of `params`.

    `available` is the number of free capacity units (None means unconstrained).
    """
    if procedure_id is not None and procedure_id != profile.procedure_id:
        raise ProcedureMismatch(f"asset {profile.asset_id} serves {profile.procedure_id}, not {procedure_id}")
    failed: List[str] = []
    reasons: List[str] = []
    if not all(_time_ok(profile, b) for b in params.blocks):
        failed.append("time")
        reasons.append("no availability window covers the execution duration")
    for b in params.blocks:
        point = _target_point(b)
        if point is None:
            continue
        dist = great_circle_km(profile.center, point)
        if dist > profile.radius_km:
            failed.append("footprint")
            reasons.append(f"outside footprint ({dist:.1f} km > {profile.radius_km:g} km)")
            break
    if available is not None and available < 1:
        failed.append("capacity")
        reasons.append("capacity exhausted")
    if not failed:
        return FeasibilityResult(feasible=True, asset_id=profile.asset_id, reason="feasible")
    alternatives = _alternatives(profile, params, max_alternatives) if failed == ["time"] else []
    return FeasibilityResult(
        feasible=False,
        asset_id=profile.asset_id,
        alternatives=alternatives,
        reason="; ".join(reasons),
        failed_checks=tuple(failed),
    )


def execute(task_id: str, profile: AssetProfile, started_at: datetime, seed: int) -> Iterator[ExecutionStep]:
    """Progress plan of one execution: 0% now, 50% at half time, final step at full duration."""
    half = timedelta(seconds=profile.execution_duration_s / 2)
    full = timedelta(seconds=profile.execution_duration_s)
    yield ExecutionStep(at=started_at, progress=0)
    yield ExecutionStep(at=started_at + half, progress=50, publish_partial=profile.partial_results)
    if will_fail(seed, task_id, profile.failure_rate):
        yield ExecutionStep(at=started_at + full, progress=50, outcome="failed")
    else:
        yield ExecutionStep(at=started_at + full, progress=100, outcome="completed")


class AssetLayer:
    """Data-access layer over the simulated assets: capacity ledger, feasibility, results."""

    def __init__(self, profiles: Iterable[AssetProfile], *, seed: int = 42, max_alternatives: int = 3) -> None:
        self._profiles: Dict[str, AssetProfile] = {}
        for p in profiles:
            if p.asset_id in self._profiles:
                raise ValueError(f"duplicate asset id {p.asset_id}")
            self._profiles[p.asset_id] = p
        self.seed = seed
        self.max_alternatives = max_alternatives
        self._lock = threading.RLock()
        self._held: Dict[str, set[str]] = {a: set() for a in self._profiles}
        self._produced: Dict[str, List[ResultReference]] = {}
        self._superseded: set[str] = set()

    # ---- profiles ----

    @property
    def profiles(self) -> List[AssetProfile]:
        return list(self._profiles.values())

    def profile(self, asset_id: str) -> AssetProfile:
        return self._profiles[asset_id]

    def profiles_for(self, procedure_id: str) -> List[AssetProfile]:
        return [p for p in self._profiles.values() if p.procedure_id == procedure_id]

    # ---- capacity ----

    def reserve_capacity(self, profile: AssetProfile, task_id: str) -> None:
        with self._lock:
            held = self._held.setdefault(profile.asset_id, set())
            if task_id in held:
                return
            if len(held) >= profile.capacity:
                raise CapacityExhausted(f"asset {profile.asset_id} has no free capacity", profile.asset_id)
            held.add(task_id)
            logger.info("assets.reserve: asset=%s task=%s blocked=%s", profile.asset_id, task_id, len(held))

    def release_capacity(self, profile: AssetProfile, task_id: str) -> None:
        with self._lock:
            held = self._held.setdefault(profile.asset_id, set())
            if task_id not in held:
                raise NotHeld(f"task {task_id} holds no capacity on {profile.asset_id}", task_id)
            held.discard(task_id)
            logger.info("assets.release: asset=%s task=%s blocked=%s", profile.asset_id, task_id, len(held))

    def blocked(self, asset_id: str) -> int:
        with self._lock:
            return len(self._held.get(asset_id, ()))

    def available(self, profile: AssetProfile, exclude_task: Optional[str] = None) -> int:
        with self._lock:
            held = self._held.get(profile.asset_id, set())
            used = len(held) - (1 if exclude_task is not None and exclude_task in held else 0)
            return profile.capacity - used

    # ---- feasibility ----

    def assess(
        self, procedure_id: str, params: ParameterData, *, exclude_task: Optional[str] = None
    ) -> FeasibilityResult:
        """First feasible asset of the procedure wins; otherwise the first asset's verdict."""
        verdicts = [
            check_feasibility(
                p,
                params,
                procedure_id=procedure_id,
                available=self.available(p, exclude_task),
                max_alternatives=self.max_alternatives,
            )
            for p in self.profiles_for(procedure_id)
        ]
        if not verdicts:
            raise ProcedureMismatch(f"no asset serves {procedure_id}", procedure_id)
        for v in verdicts:
            if v.feasible:
                return v
        return next((v for v in verdicts if v.alternatives), verdicts[0])

    # ---- results ----

    def track(self, task_id: str) -> None:
        with self._lock:
            self._produced.setdefault(task_id, [])

    def publish_result(self, task_id: str, at: datetime, *, partial: bool) -> ResultReference:
        with self._lock:
            refs = self._produced.setdefault(task_id, [])
            if not partial:
                self._superseded.update(r.uri for r in refs if r.partial)
            n = len(refs) + 1
            ref = ResultReference(
                task_id=task_id,
                uri=f"results/{task_id}/{n}",
                produced_at=at,
                description=("partial product at 50%" if partial else "final product"),
                partial=partial,
            )
            refs.append(ref)
            logger.info("assets.result: task=%s uri=%s partial=%s", task_id, ref.uri, partial)
            return ref

    def result_references(self, task_id: str) -> List[ResultReference]:
        with self._lock:
            if task_id not in self._produced:
                raise UnknownTask(f"unknown task {task_id}", task_id)
            return [r for r in self._produced[task_id] if r.uri not in self._superseded]

    def reference(self, task_id: str, n: int) -> Optional[ResultReference]:
        with self._lock:
            refs = self._produced.get(task_id, [])
            return refs[n - 1] if 1 <= n <= len(refs) else None

    def snapshot(self) -> Dict[str, Sequence[str]]:
        with self._lock:
            return {a: sorted(h) for a, h in self._held.items()}
