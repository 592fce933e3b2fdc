"""Alert engine: classify telemetry records and raise notifications.

Polls the store's history stream with a persisted cursor, classifies each
record with the cached model file, evaluates the alert rules, writes the
classified activity back to the stored record, and delivers events to an
append-only notification log plus an optional webhook. Also issues the
find-my-bag alarm command.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .clock import RealClock
from .gateway import StoreUnavailable

logger = logging.getLogger(__name__)

# Fixed emission order for events from one record.
KIND_ORDER = ("SOS", "GAS", "WATER", "ACTIVITY")

SEVERITY = {"SOS": "EMERGENCY", "GAS": "WARN", "WATER": "WARN",
            "ACTIVITY": "EMERGENCY", "ALARM_TRIGGERED": "INFO"}


class RecordSchemaError(Exception):
    pass


@dataclass(frozen=True)
class AlertRuleSet:
    mq2_max: float = 300.0
    mq135_max: float = 200.0
    water_alert: bool = True
    sos_alert: bool = True
    alert_classes: frozenset = frozenset({"Falling"})
    dedup_window_ms: int = 30000

    def __post_init__(self):
        if self.mq2_max <= 0 or self.mq135_max <= 0:
            raise ValueError("gas thresholds must be > 0")
        if self.dedup_window_ms < 0:
            raise ValueError("dedup window must be >= 0")
        object.__setattr__(self, "alert_classes", frozenset(self.alert_classes))


@dataclass(frozen=True)
class AlertEvent:
    kind: str
    severity: str
    device: str
    ts: int
    message: str
    activity: str | None = None

    def to_json(self) -> dict:
        return {"ts": self.ts, "device": self.device, "kind": self.kind,
                "severity": self.severity, "activity": self.activity,
                "message": self.message}


@dataclass
class AlarmCommand:
    device: str
    issued_ts: int
    state: str = "REQUESTED"  # REQUESTED | DELIVERED


_RECORD_FEATURES = (
    ("imu", "ax"), ("imu", "ay"), ("imu", "az"),
    ("imu", "yaw"), ("imu", "pitch"), ("imu", "roll"),
    ("load", "left"), ("load", "right"),
    ("gas", "mq2"), ("gas", "mq135"),
    ("env", "temp"), ("env", "hum"),
    ("water",),
)


def record_features(record: dict) -> np.ndarray:
    """Pull the 13 activity features out of a telemetry document."""
    values = []
    for keys in _RECORD_FEATURES:
        node = record
        for key in keys:
            if not isinstance(node, dict) or key not in node:
                raise RecordSchemaError(f"missing field {'.'.join(keys)}")
            node = node[key]
        if not isinstance(node, (int, float)) or isinstance(node, bool):
            raise RecordSchemaError(f"non-numeric field {'.'.join(keys)}")
        values.append(float(node))
    return np.array(values)


def classify_record(model, vocabulary, record: dict):
    """Classify one record; returns (activity name, probability vector)."""
    cls, probs = nn.predict(model, record_features(record))
    return vocabulary[cls], probs


def eval_rules(record: dict, activity: str | None, rules: AlertRuleSet,
               dedup_state: dict, now_ms: int) -> list:
    """Pure rule evaluation; emits in the fixed kind order, deduplicated
    per (device, kind) within the window. Thresholds are strict."""
    device = record.get("deviceId", "?")
    ts = record.get("ts", now_ms)
    candidates = []
    if rules.sos_alert and record.get("sos") == 1:
        candidates.append(("SOS", "SOS button pressed"))
    gas = record.get("gas", {})
    if gas.get("mq2", 0) > rules.mq2_max or gas.get("mq135", 0) > rules.mq135_max:
        candidates.append(
            ("GAS", f"gas level high (mq2={gas.get('mq2')}, mq135={gas.get('mq135')})"))
    if rules.water_alert and record.get("water") == 1:
        candidates.append(("WATER", "water detected inside the bag"))
    if activity is not None and activity in rules.alert_classes:
        candidates.append(("ACTIVITY", f"alerting activity detected: {activity}"))

    events = []
    for kind, message in candidates:
        key = (device, kind)
        last = dedup_state.get(key)
        if last is not None and now_ms - last < rules.dedup_window_ms:
            continue
        dedup_state[key] = now_ms
        events.append(AlertEvent(kind, SEVERITY[kind], device, ts, message,
                                 activity))
    return events


class NotificationLog:
    """Append-only JSONL sink."""

    def __init__(self, path):
        self.path = path

    def deliver(self, event: AlertEvent) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_json()) + "\n")

    def read(self) -> list:
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                return [json.loads(line) for line in fh if line.strip()]
        except FileNotFoundError:
            return []


class WebhookSink:
    """POSTs each event; at most max_tries attempts, failure is non-fatal."""

    def __init__(self, url: str, max_tries: int = 3, timeout: float = 5.0,
                 session=None):
        import requests

        self.url = url
        self.max_tries = max_tries
        self.timeout = timeout
        self.session = session or requests.Session()

    def deliver(self, event: AlertEvent) -> None:
        import requests

        for attempt in range(self.max_tries):
            try:
                resp = self.session.post(self.url, json=event.to_json(),
                                         timeout=self.timeout)
                if resp.status_code < 400:
                    return
            except requests.RequestException:
                pass
        logger.warning("webhook delivery failed after %d tries", self.max_tries)


@dataclass
class AlertServiceConfig:
    device_id: str = "BAG1"
    poll_interval_ms: int = 1000
    alarm_ttl_ms: int = 60000
    rules: AlertRuleSet = field(default_factory=AlertRuleSet)


class AlertService:
    """The mobile-app brain without the screen."""

    def __init__(self, store, model_path, config: AlertServiceConfig = None,
                 cursor_path=None, sinks=(), clock=None):
        self.store = store
        self.config = config or AlertServiceConfig()
        self.cursor_path = cursor_path
        self.sinks = list(sinks)
        self.clock = clock or RealClock()
        self.model, self.model_spec, self.vocabulary = self._load_model(model_path)
        self.cursor = self._load_cursor()
        self.dedup_state = {}
        self.skipped = 0
        self.outstanding_alarm: AlarmCommand | None = None

    @staticmethod
    def _load_model(model_path):
        with open(model_path, "rb") as fh:
            return nn.import_model(fh.read())

    def _load_cursor(self):
        if self.cursor_path is None:
            return None
        try:
            with open(self.cursor_path, "r", encoding="utf-8") as fh:
                return json.load(fh).get("cursor")
        except FileNotFoundError:
            return None

    def _save_cursor(self) -> None:
        if self.cursor_path is not None:
            with open(self.cursor_path, "w", encoding="utf-8") as fh:
                json.dump({"cursor": self.cursor}, fh)

    def _emit(self, event: AlertEvent) -> None:
        for sink in self.sinks:
            sink.deliver(event)

    def _process_entry(self, entry_id: str, record: dict) -> None:
        now = self.clock.now_ms()
        device = self.config.device_id
        try:
            activity, _ = classify_record(self.model, self.vocabulary, record)
        except RecordSchemaError as e:
            logger.warning("skipping malformed record %s: %s", entry_id, e)
            self.skipped += 1
            return
        try:
            self.store.patch(f"bags/{device}/latest", {"activity": activity})
        except StoreUnavailable:
            logger.warning("could not write activity back for %s", entry_id)
        for event in eval_rules(record, activity, self.config.rules,
                                self.dedup_state, now):
            self._emit(event)

    def poll_once(self) -> int:
        """Fetch and process new history entries; returns how many."""
        device = self.config.device_id
        entries = self.store.get_history(f"bags/{device}/history",
                                         since=self.cursor)
        for entry in entries:
            self._process_entry(entry.push_id, entry.doc)
            # advance only after the entry is fully processed
            self.cursor = entry.push_id
            self._save_cursor()
        self._check_alarm()
        return len(entries)

    # -- find-my-bag alarm ------------------------------------------------

    def trigger_alarm(self) -> AlarmCommand:
        """Request the bag's alarm; a single command stays outstanding per
        device until the gateway acknowledges it."""
        device = self.config.device_id
        now = self.clock.now_ms()
        doc = self.store.get(f"bags/{device}/commands")
        if doc and doc.get("alarm") == 1:
            if self.outstanding_alarm is None:
                self.outstanding_alarm = AlarmCommand(device, doc.get("issuedTs", now))
            return self.outstanding_alarm
        self.store.patch(f"bags/{device}/commands", {"alarm": 1, "issuedTs": now})
        self.outstanding_alarm = AlarmCommand(device, now)
        return self.outstanding_alarm

    def _check_alarm(self) -> None:
        if self.outstanding_alarm is None:
            return
        device = self.config.device_id
        now = self.clock.now_ms()
        try:
            doc = self.store.get(f"bags/{device}/commands")
        except StoreUnavailable:
            return
        if doc is not None and doc.get("alarm") == 0:
            self.outstanding_alarm.state = "DELIVERED"
            self.outstanding_alarm = None
            return
        if now - self.outstanding_alarm.issued_ts >= self.config.alarm_ttl_ms:
            self._emit(AlertEvent(
                "ALARM_TRIGGERED", "WARN", device, now,
                "alarm command not acknowledged before TTL"))
            self.outstanding_alarm = None

    def run(self, max_polls: int = None) -> None:
        """Poll loop; store failures back off and retry, never fatal."""
        backoff = 1
        polls = 0
        while True:
            try:
                self.poll_once()
                backoff = 1
            except StoreUnavailable as e:
                logger.warning("store unreachable: %s", e)
                self.clock.sleep_ms(self.config.poll_interval_ms * backoff)
                backoff = min(backoff * 2, 32)
            polls += 1
            if max_polls is not None and polls >= max_polls:
                return
            self.clock.sleep_ms(self.config.poll_interval_ms)
