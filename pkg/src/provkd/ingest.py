"""Audit-log ingestion: canonical JSONL events, CADETS-style scenarios, mimicry.

The canonical record looks like::

    {"event_id": "e1", "ts": 10, "relation": "read",
     "subject": {"id": "p1", "kind": "process", "name": "nginx"},
     "object": {"id": "f1", "kind": "file", "path": "/tmp/vUgefal"}}

Unknown top-level keys are ignored. Every key of ``subject``/``object`` other
than ``id`` and ``kind`` is kept as a string attribute.
"""

from __future__ import annotations

import json
import random
import sys
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import IllegalRelation, InvalidConfig, MalformedRecord


class EntityKind(str, Enum):
    PROCESS = "process"
    FILE = "file"
    NETFLOW = "netflow"
    MEMORY = "memory"


# Subject is always a process; the object kind selects the relation family.
RELATIONS: dict[tuple[EntityKind, EntityKind], frozenset[str]] = {
    (EntityKind.PROCESS, EntityKind.PROCESS): frozenset({"fork", "execute", "exit", "clone", "change"}),
    (EntityKind.PROCESS, EntityKind.FILE): frozenset({"read", "open", "close", "write", "rename"}),
    (EntityKind.PROCESS, EntityKind.NETFLOW): frozenset({"connect", "send", "recv", "read", "close"}),
    (EntityKind.PROCESS, EntityKind.MEMORY): frozenset({"read", "mprotect", "mmap"}),
}
RELATION_VOCAB = frozenset().union(*RELATIONS.values())


def is_legal(relation: str, subject_kind: EntityKind, object_kind: EntityKind) -> bool:
    return relation in RELATIONS.get((subject_kind, object_kind), ())


@dataclass(frozen=True)
class Event:
    event_id: str
    ts: int
    relation: str
    subject_id: str
    object_id: str
    subject_kind: EntityKind
    object_kind: EntityKind
    subject_attrs: dict[str, str] = field(default_factory=dict, compare=True, hash=False)
    object_attrs: dict[str, str] = field(default_factory=dict, compare=True, hash=False)

    def to_record(self) -> dict:
        return {
            "event_id": self.event_id,
            "ts": self.ts,
            "relation": self.relation,
            "subject": {"id": self.subject_id, "kind": self.subject_kind.value, **self.subject_attrs},
            "object": {"id": self.object_id, "kind": self.object_kind.value, **self.object_attrs},
        }


@dataclass(frozen=True)
class Scenario:
    events: tuple[Event, ...]
    ground_truth: frozenset[str]
    seed: int

    def entity_keys(self) -> set[str]:
        keys: set[str] = set()
        for ev in self.events:
            keys.add(ev.subject_id)
            keys.add(ev.object_id)
        return keys


# ---------------------------------------------------------------------------
# parsing / serialization


def _parse_entity(obj, line_no: int, role: str) -> tuple[str, EntityKind, dict[str, str]]:
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, f"{role} must be an object")
    ent_id = obj.get("id")
    kind = obj.get("kind")
    if not isinstance(ent_id, str) or not ent_id:
        raise MalformedRecord(line_no, f"{role}.id must be a nonempty string")
    try:
        kind = EntityKind(kind)
    except ValueError:
        raise MalformedRecord(line_no, f"{role}.kind {kind!r} is not an entity kind") from None
    attrs = {}
    for k, v in obj.items():
        if k in ("id", "kind"):
            continue
        if isinstance(v, bool) or not isinstance(v, (str, int, float)):
            raise MalformedRecord(line_no, f"{role}.{k} must be a scalar")
        attrs[k] = str(v)
    return sys.intern(ent_id), kind, attrs


def parse_record(rec, line_no: int) -> Event:
    if not isinstance(rec, dict):
        raise MalformedRecord(line_no, "record is not an object")
    event_id = rec.get("event_id")
    ts = rec.get("ts")
    relation = rec.get("relation")
    if not isinstance(event_id, str) or not event_id:
        raise MalformedRecord(line_no, "event_id must be a nonempty string")
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise MalformedRecord(line_no, "ts must be a non-negative integer")
    if not isinstance(relation, str):
        raise MalformedRecord(line_no, "relation must be a string")
    if "subject" not in rec or "object" not in rec:
        raise MalformedRecord(line_no, "missing subject/object")
    s_id, s_kind, s_attrs = _parse_entity(rec["subject"], line_no, "subject")
    o_id, o_kind, o_attrs = _parse_entity(rec["object"], line_no, "object")
    if s_id == o_id:
        raise MalformedRecord(line_no, f"entity {s_id!r} is both subject and object")
    if not is_legal(relation, s_kind, o_kind):
        raise IllegalRelation(line_no, relation, s_kind.value, o_kind.value)
    return Event(event_id, ts, relation, s_id, o_id, s_kind, o_kind, s_attrs, o_attrs)


def parse_events(stream: bytes | str, format: str = "jsonl") -> list[Event]:
    """Parse a newline-delimited event stream.

    Line numbers in errors are 1-based. Blank lines are skipped. An entity key
    that reappears with a different kind, or a repeated event id, is reported
    as a malformed record.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    if isinstance(stream, bytes):
        try:
            stream = stream.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedRecord(0, f"stream is not UTF-8: {exc}") from None

    events: list[Event] = []
    seen_ids: set[str] = set()
    kinds: dict[str, EntityKind] = {}
    for line_no, line in enumerate(stream.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from None
        ev = parse_record(rec, line_no)
        if ev.event_id in seen_ids:
            raise MalformedRecord(line_no, f"duplicate event_id {ev.event_id!r}")
        seen_ids.add(ev.event_id)
        for key, kind in ((ev.subject_id, ev.subject_kind), (ev.object_id, ev.object_kind)):
            prev = kinds.setdefault(key, kind)
            if prev is not kind:
                raise MalformedRecord(line_no, f"entity {key!r} seen as {prev.value} and {kind.value}")
        events.append(ev)
    return events


def serialize_events(events: Iterable[Event]) -> bytes:
    lines = [json.dumps(ev.to_record(), separators=(",", ":")) for ev in events]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def read_events(path: str | Path) -> list[Event]:
    return parse_events(Path(path).read_bytes())


def write_scenario(s: Scenario, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>`` (events) and ``<path minus suffix>.labels``."""
    path = Path(path)
    path.write_bytes(serialize_events(s.events))
    labels = path.with_suffix(".labels")
    labels.write_text("".join(f"{k}\n" for k in sorted(s.ground_truth)), encoding="utf-8")
    return path, labels


def read_labels(path: str | Path) -> frozenset[str]:
    return frozenset(line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip())


def read_scenario(path: str | Path, seed: int = 0, labels: str | Path | None = None) -> Scenario:
    """Events plus ground truth; ``labels`` defaults to the ``.labels`` sidecar (optional)."""
    path = Path(path)
    events = read_events(path)
    if labels is None:
        labels = path.with_suffix(".labels")
        truth = read_labels(labels) if labels.exists() else frozenset()
    else:
        truth = read_labels(labels)
    return Scenario(tuple(events), truth, seed)


# ---------------------------------------------------------------------------
# synthetic scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    n_benign: int = 200
    event_rate: float = 4.0  # benign events per benign entity
    seed: int = 0
    start_ts: int = 1_523_600_000_000_000_000
    duration_ns: int = 3_600_000_000_000


MIN_BENIGN = 50

_BROWSERS = ("firefox", "chromium", "curl", "wget")
_EDITORS = ("vim", "nano", "emacs", "libreoffice")
_DAEMONS = ("cron", "syslogd", "ntpd", "sshd", "dhclient")
_SHELLS = ("sh", "bash")
_DOC_DIRS = ("/home/alice/docs", "/home/bob/notes", "/home/alice/src")
_DOC_EXT = ("txt", "md", "c", "py", "odt")
_CONFIGS = ("/etc/passwd", "/etc/hosts", "/etc/resolv.conf", "/etc/crontab", "/etc/ssh/sshd_config",
            "/etc/ntp.conf", "/etc/nginx/nginx.conf", "/etc/login.conf")
_LOGS = ("/var/log/messages", "/var/log/auth.log", "/var/log/cron", "/var/log/nginx/access.log",
         "/var/log/ntp.log", "/var/log/debug.log")


class _Builder:
    """Accumulates entities and events for one synthetic scenario."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.entities: dict[str, tuple[EntityKind, dict[str, str]]] = {}
        self.raw: list[tuple[int, str, str, str]] = []  # (ts, relation, subject, object)
        self._ids: set[str] = set()

    def new_id(self, prefix: str) -> str:
        while True:
            key = f"{prefix}-{self.rng.getrandbits(40):010x}"
            if key not in self._ids:
                self._ids.add(key)
                return key

    def entity(self, kind: EntityKind, **attrs: str) -> str:
        key = self.new_id(kind.value[0])
        self.entities[key] = (kind, dict(attrs))
        return key

    def emit(self, ts: int, relation: str, subj: str, obj: str) -> None:
        self.raw.append((ts, relation, subj, obj))

    def events(self, prefix: str = "e") -> list[Event]:
        order = sorted(range(len(self.raw)), key=lambda i: (self.raw[i][0], i))
        out = []
        for n, i in enumerate(order):
            ts, rel, s, o = self.raw[i]
            sk, sa = self.entities[s]
            ok, oa = self.entities[o]
            out.append(Event(f"{prefix}{n}", ts, rel, s, o, sk, ok, dict(sa), dict(oa)))
        return out


def _benign_background(b: _Builder, cfg: ScenarioConfig) -> dict[str, list[str]]:
    rng = b.rng
    n = cfg.n_benign
    # fixed shares per role; every role gets at least one entity
    shares = {
        "browser": 0.05, "editor": 0.05, "daemon": 0.05, "nginx": 0.04, "shell": 0.03,
        "doc": 0.14, "cache": 0.10, "config": 0.04, "log": 0.04, "web": 0.12, "lib": 0.05,
        "remote": 0.10, "client": 0.12, "memory": 0.07,
    }
    counts = {role: max(1, int(n * s)) for role, s in shares.items()}
    roles = list(shares)
    while sum(counts.values()) < n:
        counts[roles[rng.randrange(len(roles))]] += 1
    while sum(counts.values()) > n:
        role = roles[rng.randrange(len(roles))]
        if counts[role] > 1:
            counts[role] -= 1

    pools: dict[str, list[str]] = {r: [] for r in roles}
    P, F, N, M = EntityKind.PROCESS, EntityKind.FILE, EntityKind.NETFLOW, EntityKind.MEMORY
    for i in range(counts["browser"]):
        pools["browser"].append(b.entity(P, name=rng.choice(_BROWSERS)))
    for i in range(counts["editor"]):
        pools["editor"].append(b.entity(P, name=rng.choice(_EDITORS)))
    for i in range(counts["daemon"]):
        pools["daemon"].append(b.entity(P, name=_DAEMONS[i % len(_DAEMONS)]))
    for i in range(counts["nginx"]):
        pools["nginx"].append(b.entity(P, name="nginx"))
    for i in range(counts["shell"]):
        pools["shell"].append(b.entity(P, name=rng.choice(_SHELLS)))
    for i in range(counts["doc"]):
        pools["doc"].append(b.entity(F, path=f"{rng.choice(_DOC_DIRS)}/file{i}.{rng.choice(_DOC_EXT)}"))
    for i in range(counts["cache"]):
        pools["cache"].append(b.entity(F, path=f"/home/alice/.cache/{rng.choice(_BROWSERS)}/entry{i:04x}"))
    for i in range(counts["config"]):
        pools["config"].append(b.entity(F, path=_CONFIGS[i % len(_CONFIGS)]))
    for i in range(counts["log"]):
        pools["log"].append(b.entity(F, path=_LOGS[i % len(_LOGS)]))
    for i in range(counts["web"]):
        pools["web"].append(b.entity(F, path=f"/usr/local/www/site/page{i}.html"))
    for i in range(counts["lib"]):
        pools["lib"].append(b.entity(F, path=f"/usr/lib/lib{rng.choice('abcdefgh')}{i}.so"))
    for i in range(counts["remote"]):
        ip = f"{rng.randrange(100, 200)}.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(1, 255)}"
        pools["remote"].append(b.entity(N, ip=ip, port=str(rng.choice((80, 443)))))
    for i in range(counts["client"]):
        ip = f"10.0.{rng.randrange(256)}.{rng.randrange(1, 255)}"
        pools["client"].append(b.entity(N, ip=ip, port=str(rng.randrange(30000, 60000))))
    for i in range(counts["memory"]):
        pools["memory"].append(b.entity(M, name=f"anon{i}"))
    procs = pools["browser"] + pools["editor"] + pools["daemon"] + pools["nginx"] + pools["shell"]

    t0, span = cfg.start_ts, cfg.duration_ns

    def ts() -> int:
        return t0 + rng.randrange(span)

    def browse(p=None, net=None, f=None):
        p = p or rng.choice(pools["browser"])
        net = net or rng.choice(pools["remote"])
        f = f or rng.choice(pools["cache"])
        t = ts()
        b.emit(t, "connect", p, net)
        b.emit(t + 1_000, "send", p, net)
        b.emit(t + 2_000, "recv", p, net)
        b.emit(t + 3_000, "write", p, f)

    def edit(p=None, f=None):
        p = p or rng.choice(pools["editor"])
        f = f or rng.choice(pools["doc"])
        t = ts()
        b.emit(t, "open", p, f)
        b.emit(t + 1_000, "read", p, f)
        b.emit(t + 2_000, "write", p, f)
        b.emit(t + 3_000, "close", p, f)

    def heartbeat(p=None, c=None, lg=None, sh=None):
        p = p or rng.choice(pools["daemon"])
        c = c or rng.choice(pools["config"])
        lg = lg or rng.choice(pools["log"])
        t = ts()
        b.emit(t, "read", p, c)
        b.emit(t + 1_000, "write", p, lg)
        if sh is not None or rng.random() < 0.3:
            sh = sh or rng.choice(pools["shell"])
            b.emit(t + 2_000, "fork", p, sh)
            b.emit(t + 3_000, "read", sh, c)
            b.emit(t + 4_000, "exit", p, sh)

    def serve(p=None, cl=None, w=None):
        p = p or rng.choice(pools["nginx"])
        cl = cl or rng.choice(pools["client"])
        w = w or rng.choice(pools["web"])
        t = ts()
        b.emit(t, "recv", p, cl)
        b.emit(t + 1_000, "read", p, w)
        b.emit(t + 2_000, "send", p, cl)

    def load(p=None, lib=None, mem=None):
        p = p or rng.choice(procs)
        lib = lib or rng.choice(pools["lib"])
        mem = mem or rng.choice(pools["memory"])
        t = ts()
        b.emit(t, "read", p, lib)
        b.emit(t + 1_000, "mmap", p, mem)
        if rng.random() < 0.5:
            b.emit(t + 2_000, "mprotect", p, mem)

    cover = {
        "browser": lambda e: browse(p=e), "remote": lambda e: browse(net=e), "cache": lambda e: browse(f=e),
        "editor": lambda e: edit(p=e), "doc": lambda e: edit(f=e),
        "daemon": lambda e: heartbeat(p=e), "config": lambda e: heartbeat(c=e), "log": lambda e: heartbeat(lg=e),
        "shell": lambda e: heartbeat(sh=e),
        "nginx": lambda e: serve(p=e), "client": lambda e: serve(cl=e), "web": lambda e: serve(w=e),
        "lib": lambda e: load(lib=e), "memory": lambda e: load(mem=e),
    }
    # every benign entity takes part in at least one template instance
    for role in roles:
        for ent in pools[role]:
            cover[role](ent)
    templates = (browse, edit, heartbeat, serve, load)
    weights = (3, 3, 2, 3, 1)
    budget = int(round(cfg.event_rate * n))
    while len(b.raw) < budget:
        rng.choices(templates, weights)[0]()
    return pools


def _attack_chain(b: _Builder, cfg: ScenarioConfig, pools: dict[str, list[str]] | None) -> list[str]:
    """Script of the nginx -> shell -> /tmp/vUgefal -> lateral movement -> sshd -> /var/log/devc chain.

    The shell that nginx hands the attacker is its own process entity; it
    downloads and starts the payload.
    """
    P, F, N = EntityKind.PROCESS, EntityKind.FILE, EntityKind.NETFLOW
    rng = b.rng
    nginx = b.entity(P, name="nginx")
    shell = b.entity(P, name="sh")
    attacker = b.entity(N, ip="81.49.200.166", port="80")
    payload = b.entity(F, path="/tmp/vUgefal")
    implant = b.entity(P, name="vUgefal")
    lateral = b.entity(N, ip="61.167.39.128", port="443")
    sshd = b.entity(P, name="sshd")
    dropped = b.entity(F, path="/var/log/devc")

    t = cfg.start_ts + int(cfg.duration_ns * 0.4)
    step = cfg.duration_ns // 400

    def at(k: int) -> int:
        return t + k * step + rng.randrange(step // 2)

    b.emit(at(0), "recv", nginx, attacker)
    b.emit(at(1), "send", nginx, attacker)
    b.emit(at(2), "fork", nginx, shell)
    b.emit(at(2) + 1, "recv", shell, attacker)
    b.emit(at(3), "write", shell, payload)
    b.emit(at(4), "execute", shell, implant)
    b.emit(at(5), "read", implant, payload)
    b.emit(at(6), "connect", implant, lateral)
    b.emit(at(7), "send", implant, lateral)
    b.emit(at(8), "recv", implant, lateral)
    b.emit(at(9), "change", implant, sshd)
    b.emit(at(10), "recv", sshd, lateral)
    b.emit(at(11), "write", sshd, dropped)
    b.emit(at(12), "execute", sshd, implant)
    if pools:
        # benign entities the compromised processes also touch
        b.emit(at(0) - step, "read", nginx, pools["web"][0])
        b.emit(at(2) + 1, "read", nginx, pools["config"][0])
        b.emit(at(10) + 1, "read", sshd, pools["config"][-1])
        b.emit(at(11) + 1, "write", sshd, pools["log"][0])
    return [nginx, shell, attacker, payload, implant, lateral, sshd, dropped]


def generate_cadets_scenario(cfg: ScenarioConfig = ScenarioConfig()) -> Scenario:
    """Benign background plus the CADETS nginx/vUgefal attack chain.

    ``n_benign=0`` produces the attack chain alone. Otherwise at least
    ``MIN_BENIGN`` benign entities are required so every template role exists.
    """
    if cfg.n_benign < 0 or (0 < cfg.n_benign < MIN_BENIGN):
        raise InvalidConfig(f"n_benign must be 0 or >= {MIN_BENIGN}, got {cfg.n_benign}")
    if cfg.event_rate <= 0 or cfg.duration_ns <= 0 or cfg.start_ts < 0:
        raise InvalidConfig("event_rate and duration_ns must be positive, start_ts non-negative")
    b = _Builder(random.Random(cfg.seed))
    pools = _benign_background(b, cfg) if cfg.n_benign else None
    attack = _attack_chain(b, cfg, pools)
    return Scenario(tuple(b.events()), frozenset(attack), cfg.seed)


def apply_mimicry(s: Scenario, n_false_events: int, seed: int = 0) -> Scenario:
    """Attach copies of benign neighborhoods to malicious entities.

    Each false event picks a malicious entity (round robin) and a benign
    entity of the same kind, then replays one of the benign entity's events
    with the malicious entity substituted. Edges that are new for the
    malicious entity are preferred. Events are only appended.
    """
    if n_false_events < 0:
        raise InvalidConfig("n_false_events must be >= 0")
    if not s.ground_truth:
        raise InvalidConfig("scenario has no malicious entities")
    if n_false_events == 0:
        return s
    rng = random.Random(seed)

    kinds: dict[str, EntityKind] = {}
    attrs: dict[str, dict[str, str]] = {}
    as_subject: dict[str, list[Event]] = {}
    as_object: dict[str, list[Event]] = {}
    neighbors: dict[str, set[tuple[str, str, str]]] = {}
    for ev in s.events:
        kinds[ev.subject_id] = ev.subject_kind
        kinds[ev.object_id] = ev.object_kind
        attrs.setdefault(ev.subject_id, ev.subject_attrs)
        attrs.setdefault(ev.object_id, ev.object_attrs)
        as_subject.setdefault(ev.subject_id, []).append(ev)
        as_object.setdefault(ev.object_id, []).append(ev)
        neighbors.setdefault(ev.subject_id, set()).add((ev.subject_id, ev.relation, ev.object_id))
        neighbors.setdefault(ev.object_id, set()).add((ev.subject_id, ev.relation, ev.object_id))

    malicious = sorted(k for k in s.ground_truth if k in kinds)
    if not malicious:
        raise InvalidConfig("no malicious entity appears in the events")
    benign_by_kind: dict[EntityKind, list[str]] = {}
    for key in sorted(kinds):
        if key not in s.ground_truth:
            benign_by_kind.setdefault(kinds[key], []).append(key)

    used_ids = {ev.event_id for ev in s.events}
    last_ts = max((ev.ts for ev in s.events), default=0)
    new_events: list[Event] = []
    for i in range(n_false_events):
        target = malicious[i % len(malicious)]
        kind = kinds[target]
        donors = benign_by_kind.get(kind)
        if not donors:
            donors = [k for kk in benign_by_kind.values() for k in kk]
            if not donors:
                raise InvalidConfig("scenario has no benign entities to mimic")
        candidates: list[tuple[str, str, str]] = []
        for _ in range(8):
            donor = rng.choice(donors)
            pool = [(target, e.relation, e.object_id) for e in as_subject.get(donor, ())
                    if kind is EntityKind.PROCESS and e.object_id != target]
            pool += [(e.subject_id, e.relation, target) for e in as_object.get(donor, ())
                     if kinds[donor] is kind and e.subject_id != target]
            fresh = [t for t in pool if t not in neighbors[target]]
            if fresh:
                candidates = fresh
                break
            candidates = candidates or pool
        if not candidates:
            raise InvalidConfig(f"no benign neighborhood to copy onto {target!r}")
        subj, rel, obj = rng.choice(candidates)
        neighbors[target].add((subj, rel, obj))
        event_id = f"mimic{i}"
        while event_id in used_ids:
            event_id = "_" + event_id
        used_ids.add(event_id)
        last_ts += 1_000
        new_events.append(Event(event_id, last_ts, rel, subj, obj, kinds[subj], kinds[obj],
                                dict(attrs[subj]), dict(attrs[obj])))
    return replace(s, events=s.events + tuple(new_events))
