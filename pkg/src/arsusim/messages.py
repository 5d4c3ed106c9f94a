"""Safety-message types shared by every other module.

Basic safety messages (BSM) are modeled as typed records carrying the
semantic field subset (position, accuracy, speed, heading, timestamp,
origin technology) rather than a wire encoding. Camera detections and
MQTT envelopes live here too, together with the constructors and the
validator that enforce field ranges.

Simulation time is integer microseconds everywhere inside the package;
milliseconds (3 decimals) appear only in serialized/reported form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional

US_PER_MS = 1000


def ms_to_us(ms: float) -> int:
    """Convert milliseconds to integer microseconds (round to nearest)."""
    return int(round(ms * US_PER_MS))


def us_to_ms(us: int) -> float:
    return us / US_PER_MS


class LinkTech(str, Enum):
    """Communication technology of a link endpoint.

    Camera is a passive uplink only: camera data enters the system as
    Detection records, never as a transmit technology.
    """

    DSRC = "DSRC"
    CV2X = "CV2X"
    CELL_MQTT = "CellMqtt"
    CAMERA = "Camera"


class Topic(str, Enum):
    """The four broker topics; a closed set, no wildcards."""

    IPU = "IPU"
    DSRC = "DSRC"
    CV2X = "CV2X"
    CELL = "Cell"


#: Identifiers generated by the gateway for confirmed non-connected road
#: users live in this reserved namespace; scenario ids must not use it.
SYNTHETIC_ID_PREFIX = "ipu:"


@dataclass(frozen=True, order=True)
class RoadUserId:
    """Opaque, scenario-unique road user identifier (BSM transmitter id)."""

    value: str

    @property
    def is_synthetic(self) -> bool:
        return self.value.startswith(SYNTHETIC_ID_PREFIX)

    def __str__(self) -> str:
        return self.value


class ValidationError(ValueError):
    """A message field is outside its allowed range."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class Position:
    lat_deg: float
    lon_deg: float
    elev_m: float = 0.0


@dataclass(frozen=True)
class PositionAccuracy:
    """Reported positioning quality: 1-sigma horizontal error and DOP."""

    horizontal_sigma_m: float
    dop: float = 1.0


@dataclass(frozen=True)
class Bsm:
    """One road user's basic safety message (semantic subset)."""

    id: RoadUserId
    position: Position
    accuracy: PositionAccuracy
    speed_kmh: float
    heading_deg: float
    generated_at_us: int
    origin_tech: LinkTech


@dataclass(frozen=True)
class Detection:
    """A camera/IPU estimate of one road user's kinematic state.

    ``available_at_us`` is when the estimate leaves the image-processing
    pipeline (capture time plus processing latency). ``truth_id`` is a
    simulation-only ground-truth link used by the ghost metric; it is
    never serialized and never consulted by the matching filter.
    """

    estimate: Position
    speed_kmh: float
    heading_deg: float
    captured_at_us: int
    available_at_us: int
    truth_id: Optional[RoadUserId] = None

    def __post_init__(self):
        if self.available_at_us < self.captured_at_us:
            raise ValidationError(
                "available_at", "detection available before capture"
            )


@dataclass(frozen=True)
class MqttEnvelope:
    topic: Topic
    payload: Bsm
    published_at_us: int

    def __post_init__(self):
        if not isinstance(self.topic, Topic):
            raise ValidationError("topic", f"unknown topic {self.topic!r}")


def make_bsm(
    user_id: RoadUserId,
    position: Position,
    speed_kmh: float,
    heading_deg: float,
    accuracy: PositionAccuracy,
    tech: LinkTech,
    now_us: int,
) -> Bsm:
    """Build a validated BSM stamped ``generated_at = now``.

    Heading is normalized into [0, 360). Camera is rejected: camera data
    becomes a BSM only through the gateway's generation path for
    confirmed non-connected users (see :func:`make_ipu_bsm`).
    """
    if tech is LinkTech.CAMERA:
        raise ValidationError("origin_tech", "camera is not a BSM origin")
    bsm = Bsm(
        id=user_id,
        position=position,
        accuracy=accuracy,
        speed_kmh=speed_kmh,
        heading_deg=heading_deg % 360.0,
        generated_at_us=now_us,
        origin_tech=tech,
    )
    violations = validate_bsm(bsm)
    if violations:
        raise ValidationError("bsm", violations[0])
    return bsm


def make_ipu_bsm(
    synthetic_id: RoadUserId,
    detection: Detection,
    sigma_m: float,
) -> Bsm:
    """Build the gateway-generated BSM for a confirmed non-connected user.

    The message carries the detection's kinematics, origin Camera, the
    calibration error as its reported accuracy, and the capture time as
    its data epoch.
    """
    if not synthetic_id.is_synthetic:
        raise ValidationError(
            "id", f"generated BSM id must start with {SYNTHETIC_ID_PREFIX!r}"
        )
    return Bsm(
        id=synthetic_id,
        position=detection.estimate,
        accuracy=PositionAccuracy(horizontal_sigma_m=sigma_m, dop=1.0),
        speed_kmh=detection.speed_kmh,
        heading_deg=detection.heading_deg % 360.0,
        generated_at_us=detection.captured_at_us,
        origin_tech=LinkTech.CAMERA,
    )


def validate_bsm(bsm: Bsm, now_us: Optional[int] = None) -> list[str]:
    """Return every invariant violation (empty list means valid).

    Violations are data, not failures: callers decide whether to raise.
    """
    violations = []
    if not -90.0 <= bsm.position.lat_deg <= 90.0:
        violations.append("latitude out of range [-90, 90]")
    if not -180.0 <= bsm.position.lon_deg <= 180.0:
        violations.append("longitude out of range [-180, 180]")
    if bsm.accuracy.horizontal_sigma_m < 0.0:
        violations.append("horizontal_sigma out of range (negative)")
    if bsm.accuracy.dop < 1.0:
        violations.append("dop out of range (< 1)")
    if bsm.speed_kmh < 0.0:
        violations.append("speed out of range (negative)")
    if not 0.0 <= bsm.heading_deg < 360.0:
        violations.append("heading out of [0, 360)")
    if bsm.generated_at_us < 0:
        violations.append("negative timestamp")
    elif now_us is not None and bsm.generated_at_us > now_us:
        violations.append("generated_at exceeds current simulation time")
    if bsm.origin_tech is LinkTech.CAMERA and not bsm.id.is_synthetic:
        violations.append("camera origin requires a synthetic id")
    return violations


# --- JSON-compatible serialization (stable field names) ---

def bsm_to_dict(bsm: Bsm) -> dict:
    return {
        "id": bsm.id.value,
        "lat": bsm.position.lat_deg,
        "lon": bsm.position.lon_deg,
        "elev": bsm.position.elev_m,
        "sigma": bsm.accuracy.horizontal_sigma_m,
        "dop": bsm.accuracy.dop,
        "speed_kmh": bsm.speed_kmh,
        "heading_deg": bsm.heading_deg,
        "generated_at_ms": round(us_to_ms(bsm.generated_at_us), 3),
        "origin_tech": bsm.origin_tech.value,
    }


def bsm_from_dict(data: dict) -> Bsm:
    return Bsm(
        id=RoadUserId(data["id"]),
        position=Position(data["lat"], data["lon"], data["elev"]),
        accuracy=PositionAccuracy(data["sigma"], data["dop"]),
        speed_kmh=data["speed_kmh"],
        heading_deg=data["heading_deg"],
        generated_at_us=ms_to_us(data["generated_at_ms"]),
        origin_tech=LinkTech(data["origin_tech"]),
    )


def envelope_to_dict(env: MqttEnvelope) -> dict:
    data = bsm_to_dict(env.payload)
    data["topic"] = env.topic.value
    data["published_at_ms"] = round(us_to_ms(env.published_at_us), 3)
    return data


def envelope_from_dict(data: dict) -> MqttEnvelope:
    payload = bsm_from_dict({k: v for k, v in data.items()
                             if k not in ("topic", "published_at_ms")})
    return MqttEnvelope(
        topic=Topic(data["topic"]),
        payload=payload,
        published_at_us=ms_to_us(data["published_at_ms"]),
    )


def canonical_bsm_json(bsm: Bsm) -> str:
    """Canonical serialized form, used for byte-identity comparisons."""
    return json.dumps(bsm_to_dict(bsm), sort_keys=True, separators=(",", ":"))
