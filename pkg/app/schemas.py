from __future__ import annotations

import json
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field
from pydantic.alias_generators import to_camel

from .assets import AssetProfile


class _Camel(BaseModel):
    model_config = ConfigDict(alias_generator=to_camel, populate_by_name=True, extra="forbid")


class WindowIn(_Camel):
    start: datetime
    end: datetime


class PointIn(_Camel):
    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)


class AssetProfileIn(_Camel):
    asset_id: str
    procedure_id: str
    availability_windows: List[WindowIn] = []
    footprint_center: PointIn
    footprint_radius_km: float = Field(gt=0)
    capacity: int = Field(1, ge=1)
    execution_duration: int = Field(60, gt=0, description="seconds of virtual time")
    failure_rate: float = Field(0.0, ge=0.0, le=1.0)
    decision_delay: int = Field(0, ge=0, description="seconds; 0 decides synchronously")
    partial_results: bool = True

    def to_profile(self) -> AssetProfile:
        return AssetProfile(
            asset_id=self.asset_id,
            procedure_id=self.procedure_id,
            windows=tuple((w.start, w.end) for w in self.availability_windows),
            center=(self.footprint_center.lat, self.footprint_center.lon),
            radius_km=self.footprint_radius_km,
            capacity=self.capacity,
            execution_duration_s=self.execution_duration,
            failure_rate=self.failure_rate,
            decision_delay_s=self.decision_delay,
            partial_results=self.partial_results,
        )


class AssetsFileIn(_Camel):
    assets: List[AssetProfileIn]


def load_asset_profiles(path: Path) -> List[AssetProfile]:
    doc = AssetsFileIn.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    return [a.to_profile() for a in doc.assets]


class SubscriptionIn(BaseModel):
    topic: str


class SubscriptionOut(BaseModel):
    subscription_id: str
    topic: str
    events_url: str


class ClockOut(BaseModel):
    now: datetime
    fired: int = 0
    next_timer: Optional[datetime] = None
