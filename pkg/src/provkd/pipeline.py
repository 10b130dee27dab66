"""Pipeline orchestration: configs, run directories, manifests, sweeps.

A run is a pure function of its inputs and its :class:`PipelineConfig`. Its
artifacts live under ``<out_dir>/<config hash>/`` together with a
``manifest.json`` recording the hash, seed, stage timings and a digest of
every artifact.

Detection mode (:class:`Detector`) needs only the embedding model, the column
scaler, the student parameters and the labeled node list; teacher parameters
are never read.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .denoise import DenoiseConfig, denoise_signals
from .detect import DetectionReport, evaluate, mimicry_sweep, score_and_flag
from .embed import Scaler, SignalMatrix, SkipGramModel, build_sentences, train_embeddings
from .errors import InvalidConfig, ProvKDError
from .ingest import Scenario, ScenarioConfig, generate_cadets_scenario, read_scenario, write_scenario
from .provgraph import (ProvGraph, build_graph, edge_weights, export_edges, export_nodes, laplacian,
                        normalized_adjacency)
from .reconstruct import (Hop, Partition, classify_and_trace, detect_communities, flagged_dot, flow_weights,
                          write_community_table, write_paths)
from .student import DistillConfig, DistillResult, StudentParams, distill, student_forward
from .teacher import BENIGN, MALICIOUS, LabelSplit, TeacherConfig, TeacherParams, make_split, train_teacher

log = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class PipelineConfig:
    seed: int = 0
    # input; an empty ``events`` means "generate the synthetic scenario"
    events: str = ""
    labels: str = ""
    out_dir: str = "runs"
    n_benign: int = 200
    event_rate: float = 4.0
    # embedding
    embedding_dim: int = 32
    window: int = 2
    negatives: int = 5
    embed_epochs: int = 5
    standardize: bool = True
    # denoising
    denoise: bool = True
    gamma: float = 1.0
    cg_tol: float = 1e-6
    cg_max_iter: int = 1000
    # teacher
    teacher: str = "gcn"
    teacher_hidden: int = 64
    teacher_lr: float = 0.01
    teacher_dropout: float = 0.8
    teacher_weight_decay: float = 0.01
    teacher_epochs: int = 200
    train_ratio: float = 0.3
    labeled_nodes: int = 0  # 0: use train_ratio
    # student
    ft: bool = True
    prl: bool = True
    student_hidden: int = 16
    K: int = 5
    student_lr: float = 0.01
    student_weight_decay: float = 1e-3
    student_dropout: float = 0.2
    student_epochs: int = 500
    patience: int = 100
    # detection
    tau: float = 0.5
    eval_scope: str = "unlabeled"  # or "all"
    # reconstruction
    flow_boost: float = 10.0
    teleport: float = 0.15
    rho: float = 0.5
    max_paths: int = 100
    figures: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (self.ft or self.prl):
            raise InvalidConfig("at least one of ft and prl must be enabled")
        if self.teacher not in ("gcn", "sgc"):
            raise InvalidConfig(f"teacher must be gcn or sgc, got {self.teacher!r}")
        if self.eval_scope not in ("unlabeled", "all"):
            raise InvalidConfig(f"eval_scope must be unlabeled or all, got {self.eval_scope!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidConfig("tau must be in [0, 1]")
        if self.gamma < 0:
            raise InvalidConfig("gamma must be >= 0")
        for name in ("embedding_dim", "window", "negatives", "embed_epochs", "teacher_hidden",
                     "student_hidden", "K", "cg_max_iter"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        for name in ("teacher_epochs", "student_epochs", "patience", "labeled_nodes", "max_paths"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")

    # -- serialization -----------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_mapping(cls, values: dict[str, Any], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        types = {f.name: f.type for f in fields(cls)}
        current = dataclasses.asdict(base) if base is not None else {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise InvalidConfig(f"unknown config key {key!r}")
            current[key] = _coerce(key, types[key], raw)
        return cls(**current)

    @classmethod
    def loads(cls, text: str, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        return cls.from_mapping(parse_kv(text), base)

    @classmethod
    def load(cls, path: str | Path, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"), base)


def parse_kv(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment line."""
    out: dict[str, str] = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConfig(f"config line {no}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(key: str, typ: Any, raw: Any) -> Any:
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise InvalidConfig(f"config key {key!r}: cannot read {raw!r} as {typ}") from None
    return raw


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(cfg: PipelineConfig) -> str:
    """Digest of the result-relevant config plus the content of the inputs."""
    h = hashlib.sha256()
    for line in cfg.dumps().splitlines():
        key = line.split("=", 1)[0].strip()
        if key in ("out_dir", "figures", "events", "labels"):
            continue
        h.update(line.encode() + b"\n")
    for name in ("events", "labels"):
        p = getattr(cfg, name)
        if p:
            h.update(f"{name}:{_sha256(Path(p))}\n".encode())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# stage building blocks (pure, in memory)


def load_scenario(cfg: PipelineConfig) -> Scenario:
    if cfg.events:
        return read_scenario(cfg.events, cfg.seed, cfg.labels or None)
    return generate_cadets_scenario(ScenarioConfig(n_benign=cfg.n_benign, event_rate=cfg.event_rate,
                                                   seed=cfg.seed))


def embed_graph(cfg: PipelineConfig, g: ProvGraph) -> tuple[SkipGramModel, Scaler, np.ndarray]:
    raw, model = train_embeddings(build_sentences(g), dim=cfg.embedding_dim, window=cfg.window,
                                  negatives=cfg.negatives, epochs=cfg.embed_epochs, seed=cfg.seed)
    scaler = Scaler.fit(raw) if cfg.standardize else Scaler.identity(raw.shape[1])
    return model, scaler, scaler.transform(raw)


def denoise_graph(cfg: PipelineConfig, g: ProvGraph, x0: np.ndarray) -> np.ndarray:
    if not cfg.denoise:
        return x0.copy()
    L = laplacian(g, edge_weights(g, x0))
    return denoise_signals(L, x0, DenoiseConfig(cfg.gamma, cfg.cg_tol, cfg.cg_max_iter))


def truth_indices(g: ProvGraph, truth: frozenset[str] | set[str]) -> np.ndarray:
    return np.array([i for i, k in enumerate(g.node_key) if k in truth], dtype=np.int64)


def label_split(cfg: PipelineConfig, g: ProvGraph, truth: frozenset[str]) -> LabelSplit:
    labels = np.zeros(g.n, dtype=np.int64)
    labels[truth_indices(g, truth)] = MALICIOUS
    return make_split(labels, cfg.seed, cfg.train_ratio, cfg.labeled_nodes or None)


def teacher_config(cfg: PipelineConfig) -> TeacherConfig:
    return TeacherConfig(variant=cfg.teacher, hidden=cfg.teacher_hidden, lr=cfg.teacher_lr,
                         dropout=cfg.teacher_dropout, weight_decay=cfg.teacher_weight_decay,
                         epochs=cfg.teacher_epochs)


def distill_config(cfg: PipelineConfig) -> DistillConfig:
    return DistillConfig(hidden=cfg.student_hidden, K=cfg.K, lr=cfg.student_lr,
                         weight_decay=cfg.student_weight_decay, dropout=cfg.student_dropout,
                         epochs=cfg.student_epochs, patience=cfg.patience, use_ft=cfg.ft, use_prl=cfg.prl)


def evaluate_report(report: DetectionReport, g: ProvGraph, truth: frozenset[str],
                    labeled: np.ndarray, scope: str) -> None:
    """Attach metrics: the configured scope in ``metrics``, the other in ``extra``."""
    gt = truth_indices(g, truth)
    unlabeled = np.flatnonzero(~labeled)
    m_unl = evaluate(report.flagged, gt, g.n, unlabeled)
    m_all = evaluate(report.flagged, gt, g.n)
    if scope == "unlabeled":
        report.metrics, report.extra = m_unl, {"all": m_all}
    else:
        report.metrics, report.extra = m_all, {"unlabeled": m_unl}


@dataclass
class Reconstruction:
    partition: Partition
    communities: list[dict]
    bridges: list[int]
    paths: list[list[Hop]]


def reconstruct_graph(cfg: PipelineConfig, g: ProvGraph, flagged: Sequence[int]) -> Reconstruction:
    w = flow_weights(g, flagged, cfg.flow_boost)
    part = detect_communities(g, w, seed=cfg.seed, teleport=cfg.teleport)
    stats, bridges, paths = classify_and_trace(part, flagged, g, cfg.rho)
    return Reconstruction(part, stats, bridges, paths[:cfg.max_paths] if cfg.max_paths else paths)


# ---------------------------------------------------------------------------
# detection mode


@dataclass
class Detector:
    """Everything detection needs: no teacher, no optimizer state."""

    cfg: PipelineConfig
    embedder: SkipGramModel
    scaler: Scaler
    student: StudentParams
    node_keys: list[str]          # row order of the student's per-node parameters
    labeled: dict[str, int]       # labeled node key -> class

    def signals(self, g: ProvGraph) -> np.ndarray:
        x0 = self.scaler.transform(self.embedder.node_signals(build_sentences(g)))
        return denoise_graph(self.cfg, g, x0)

    def align(self, g: ProvGraph) -> tuple[StudentParams, LabelSplit]:
        """Student parameters and label split re-indexed to ``g``'s nodes.

        Nodes unseen during training get a zero balance logit (beta = 0.5).
        """
        if list(g.node_key) == list(self.node_keys):
            beta = self.student.beta_logits
        else:
            index = {k: i for i, k in enumerate(self.node_keys)}
            beta = np.array([self.student.beta_logits[index[k]] if k in index else 0.0
                             for k in g.node_key])
        labels = np.full(g.n, BENIGN, dtype=np.int64)
        train = np.zeros(g.n, dtype=bool)
        for i, k in enumerate(g.node_key):
            if k in self.labeled:
                train[i] = True
                labels[i] = self.labeled[k]
        return replace(self.student, beta_logits=beta), LabelSplit(labels, train, ~train)

    def infer(self, g: ProvGraph, x: np.ndarray) -> tuple[DetectionReport, LabelSplit]:
        params, split = self.align(g)
        f = student_forward(params, g, x, split)
        return score_and_flag(f, self.cfg.tau, list(g.node_key)), split

    def detect(self, scenario: Scenario, g: ProvGraph | None = None,
               x: np.ndarray | None = None) -> tuple[DetectionReport, ProvGraph]:
        g = g if g is not None else build_graph(scenario.events)
        x = x if x is not None else self.signals(g)
        report, split = self.infer(g, x)
        if scenario.ground_truth:
            evaluate_report(report, g, scenario.ground_truth, split.train_mask, self.cfg.eval_scope)
        return report, g

    def __call__(self, scenario: Scenario) -> dict[str, float]:
        report, g = self.detect(scenario)
        return dict(zip(g.node_key, report.scores.tolist()))

    @classmethod
    def from_run(cls, run_dir: str | Path) -> "Detector":
        run_dir = Path(run_dir)
        cfg = PipelineConfig.load(run_dir / ARTIFACTS["config"])
        keys = SignalMatrix.load(run_dir / ARTIFACTS["raw"]).node_keys
        return cls(cfg, SkipGramModel.load(run_dir / ARTIFACTS["model"]),
                   Scaler.load(run_dir / ARTIFACTS["scaler"]),
                   StudentParams.load(run_dir / ARTIFACTS["student"]),
                   list(keys), read_labeled(run_dir / ARTIFACTS["labeled"]))


@dataclass
class Fit:
    """In-memory result of training plus detection on the training scenario."""

    cfg: PipelineConfig
    scenario: Scenario
    graph: ProvGraph
    x0: np.ndarray
    x: np.ndarray
    split: LabelSplit
    teacher: TeacherParams
    soft: np.ndarray
    distilled: DistillResult
    detector: Detector
    report: DetectionReport
    timings: dict[str, float] = field(default_factory=dict)


@contextmanager
def _stage(name: str, timings: dict[str, float]) -> Iterator[None]:
    t0 = time.perf_counter()
    try:
        yield
    except ProvKDError as exc:
        raise exc.with_stage(name)
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def fit_pipeline(cfg: PipelineConfig, scenario: Scenario | None = None) -> Fit:
    """Train every stage in memory and run detection on the training scenario."""
    t: dict[str, float] = {}
    with _stage("ingest", t):
        s = scenario if scenario is not None else load_scenario(cfg)
    with _stage("build", t):
        g = build_graph(s.events)
    with _stage("embed", t):
        model, scaler, x0 = embed_graph(cfg, g)
    with _stage("denoise", t):
        x = denoise_graph(cfg, g, x0)
    with _stage("train-teacher", t):
        split = label_split(cfg, g, s.ground_truth)
        teacher, soft = train_teacher(normalized_adjacency(g), x, split, teacher_config(cfg), cfg.seed)
    with _stage("distill", t):
        res = distill(soft, g, x, split, distill_config(cfg), cfg.seed)
    det = Detector(cfg, model, scaler, res.params, list(g.node_key), labeled_map(g, split))
    with _stage("detect", t):
        report, _ = det.detect(s, g, x)
    return Fit(cfg, s, g, x0, x, split, teacher, soft, res, det, report, t)


def labeled_map(g: ProvGraph, split: LabelSplit) -> dict[str, int]:
    return {g.node_key[i]: int(split.labels[i]) for i in np.flatnonzero(split.train_mask)}


def read_labeled(path: str | Path) -> dict[str, int]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            key, label = line.split()
            out[key] = int(label)
    return out


def write_labeled(labeled: dict[str, int], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k in sorted(labeled):
            fh.write(f"{k} {labeled[k]}\n")


# ---------------------------------------------------------------------------
# persisted runs

ARTIFACTS = {
    "config": "config.txt",
    "events": "events.jsonl",
    "labels": "events.labels",
    "edges": "graph.edges",
    "nodes": "graph.nodes",
    "model": "embedding.model",
    "scaler": "scaler.sig",
    "raw": "signals.raw",
    "denoised": "signals.denoised",
    "labeled": "labeled.txt",
    "teacher": "teacher.params",
    "soft": "teacher_soft.txt",
    "student": "student.params",
    "report": "report.txt",
    "communities": "communities.txt",
    "paths": "paths.txt",
    "dot": "flagged.dot",
    "scores_png": "scores.png",
}

STAGES = ("ingest", "build", "embed", "denoise", "train-teacher", "distill", "detect", "reconstruct")


class Run:
    """A run directory whose stages load their inputs from disk when needed."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.dir = Path(cfg.out_dir) / self.hash
        self.dir.mkdir(parents=True, exist_ok=True)
        cfg.save(self.path("config"))
        self.manifest_path = self.dir / "manifest.json"
        self.timings: dict[str, float] = {}
        if self.manifest_path.exists():
            try:
                self.timings = dict(json.loads(self.manifest_path.read_text())["stage_seconds"])
            except (ValueError, KeyError):
                self.timings = {}
        self._mem: dict[str, Any] = {}

    def path(self, name: str) -> Path:
        return self.dir / ARTIFACTS[name]

    def has(self, *names: str) -> bool:
        return all(self.path(n).exists() for n in names)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        t: dict[str, float] = {}
        try:
            with _stage(name, t):
                yield
        finally:
            self.timings[name] = t[name]
            self.write_manifest()

    def write_manifest(self) -> None:
        digests = {}
        for name in sorted(ARTIFACTS):
            p = self.path(name)
            if p.exists():
                digests[p.name] = _sha256(p)
        manifest = {
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "config": {k: v for k, v in dataclasses.asdict(self.cfg).items()},
            "stage_seconds": {k: round(v, 6) for k, v in self.timings.items()},
            "artifacts": digests,
        }
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    # -- stages ------------------------------------------------------------

    def ingest(self) -> Scenario:
        with self.stage("ingest"):
            s = load_scenario(self.cfg)
            write_scenario(s, self.path("events"))
        self._mem["scenario"] = s
        return s

    def scenario(self) -> Scenario:
        if "scenario" not in self._mem:
            if self.has("events"):
                self._mem["scenario"] = read_scenario(self.path("events"), self.cfg.seed, self.path("labels"))
            else:
                self.ingest()
        return self._mem["scenario"]

    def build(self) -> ProvGraph:
        s = self.scenario()
        with self.stage("build"):
            g = build_graph(s.events)
            export_edges(g, self.path("edges"))
            export_nodes(g, self.path("nodes"))
        self._mem["graph"] = g
        return g

    def graph(self) -> ProvGraph:
        if "graph" not in self._mem:
            if self.has("edges", "nodes"):
                self._mem["graph"] = build_graph(self.scenario().events)
            else:
                self.build()
        return self._mem["graph"]

    def embed(self) -> np.ndarray:
        g = self.graph()
        with self.stage("embed"):
            model, scaler, x0 = embed_graph(self.cfg, g)
            model.save(self.path("model"))
            scaler.save(self.path("scaler"))
            SignalMatrix(x0, list(g.node_key), "raw").save(self.path("raw"))
        self._mem.update(model=model, scaler=scaler, x0=x0)
        return x0

    def x0(self) -> np.ndarray:
        if "x0" not in self._mem:
            if self.has("model", "scaler", "raw"):
                self._mem["x0"] = self._signals("raw")
            else:
                self.embed()
        return self._mem["x0"]

    def _signals(self, name: str) -> np.ndarray:
        sm = SignalMatrix.load(self.path(name))
        if list(sm.node_keys) != list(self.graph().node_key):
            raise InvalidConfig(f"{self.path(name).name} does not match the graph nodes")
        return sm.values

    def denoise(self) -> np.ndarray:
        g, x0 = self.graph(), self.x0()
        with self.stage("denoise"):
            x = denoise_graph(self.cfg, g, x0)
            SignalMatrix(x, list(g.node_key), "denoised").save(self.path("denoised"))
        self._mem["x"] = x
        return x

    def x(self) -> np.ndarray:
        if "x" not in self._mem:
            if self.has("denoised"):
                self._mem["x"] = self._signals("denoised")
            else:
                self.denoise()
        return self._mem["x"]

    def train_teacher(self) -> tuple[TeacherParams, np.ndarray]:
        g, x, s = self.graph(), self.x(), self.scenario()
        with self.stage("train-teacher"):
            split = label_split(self.cfg, g, s.ground_truth)
            params, soft = train_teacher(normalized_adjacency(g), x, split, teacher_config(self.cfg), self.cfg.seed)
            params.save(self.path("teacher"))
            np.savetxt(self.path("soft"), soft, fmt="%.17g")
            write_labeled(labeled_map(g, split), self.path("labeled"))
        self._mem.update(split=split, soft=soft)
        return params, soft

    def split(self) -> LabelSplit:
        if "split" not in self._mem:
            if self.has("labeled"):
                g = self.graph()
                labeled = read_labeled(self.path("labeled"))
                labels = np.zeros(g.n, dtype=np.int64)
                labels[truth_indices(g, self.scenario().ground_truth)] = MALICIOUS
                train = np.array([k in labeled for k in g.node_key])
                self._mem["split"] = LabelSplit(labels, train, ~train)
            else:
                self.train_teacher()
        return self._mem["split"]

    def soft(self) -> np.ndarray:
        if "soft" not in self._mem:
            if self.has("soft"):
                self._mem["soft"] = np.loadtxt(self.path("soft"), ndmin=2)
            else:
                self.train_teacher()
        return self._mem["soft"]

    def distill(self) -> DistillResult:
        g, x, split, soft = self.graph(), self.x(), self.split(), self.soft()
        with self.stage("distill"):
            res = distill(soft, g, x, split, distill_config(self.cfg), self.cfg.seed)
            res.params.save(self.path("student"))
        self._mem["student"] = res.params
        return res

    def detector(self) -> Detector:
        if not self.has("student"):
            self.distill()
        self.x0()  # makes sure the embedding artifacts exist
        return Detector.from_run(self.dir)

    def detect(self) -> DetectionReport:
        det = self.detector()
        g, x, s = self.graph(), self.x(), self.scenario()
        with self.stage("detect"):
            report, _ = det.detect(s, g, x)
            report.write(self.path("report"))
        if self.cfg.figures:
            from .plots import plot_scores
            plot_scores(report.scores, truth_indices(g, s.ground_truth), report.threshold, self.path("scores_png"))
            self.write_manifest()
        self._mem["report"] = report
        return report

    def report(self) -> DetectionReport:
        if "report" not in self._mem:
            self.detect()
        return self._mem["report"]

    def reconstruct(self) -> Reconstruction:
        g = self.graph()
        flagged = self.report().flagged
        with self.stage("reconstruct"):
            rec = reconstruct_graph(self.cfg, g, flagged)
            write_community_table(g, rec.partition, self.path("communities"))
            write_paths(rec.paths, self.path("paths"))
            self.path("dot").write_text(flagged_dot(g, flagged, rec.partition), encoding="utf-8")
        return rec

    def run_all(self) -> tuple[DetectionReport, Reconstruction]:
        self.ingest()
        self.build()
        self.embed()
        self.denoise()
        self.train_teacher()
        self.distill()
        report = self.detect()
        return report, self.reconstruct()


def run_pipeline(cfg: PipelineConfig) -> tuple[Run, DetectionReport, Reconstruction]:
    run = Run(cfg)
    report, rec = run.run_all()
    return run, report, rec


# ---------------------------------------------------------------------------
# experiments

SWEEP_AXES = {"embedding_dim": int, "labeled_nodes": int, "gamma": float, "tau": float}
METRICS = ("ACC", "PR", "RC", "F1")


def sweep(cfg: PipelineConfig, axis: str, values: Sequence[Any],
          seeds: Sequence[int] | None = None) -> list[dict[str, Any]]:
    """One pipeline run per (seed, value); one metrics row each."""
    if axis not in SWEEP_AXES:
        raise InvalidConfig(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    values = [SWEEP_AXES[axis](v) for v in values]
    if not values:
        raise InvalidConfig("sweep needs at least one value")
    rows = []
    for seed in (seeds if seeds else [cfg.seed]):
        base = replace(cfg, seed=int(seed))
        fit = fit_pipeline(base) if axis == "tau" else None
        for v in values:
            c = replace(base, **{axis: v})
            if fit is not None:
                # the threshold only affects the last step; reuse the trained student
                det = replace(fit.detector, cfg=c)
                report, _ = det.detect(fit.scenario, fit.graph, fit.x)
            else:
                report = fit_pipeline(c).report
            m = report.metrics or {}
            rows.append({axis: v, "seed": int(seed), **{k: float(m.get(k, float("nan"))) for k in METRICS}})
    return rows


def trend(rows: Sequence[dict[str, Any]], axis: str, metric: str = "ACC") -> float:
    """Least-squares slope of ``metric`` against the axis value over all rows."""
    x = np.array([r[axis] for r in rows], dtype=float)
    y = np.array([r[metric] for r in rows], dtype=float)
    if len(np.unique(x)) < 2:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])


def write_rows(rows: Sequence[dict[str, Any]], path: str | Path) -> None:
    import csv
    if not rows:
        raise InvalidConfig("no rows to write")
    cols = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([f"{r[c]:.6f}" if isinstance(r[c], float) else r[c] for c in cols])


def mimicry_curve(cfg: PipelineConfig, counts: Sequence[int],
                  scenario: Scenario | None = None) -> list[tuple[int, float]]:
    """Train on the clean scenario, then detect on increasingly mimicked copies."""
    fit = fit_pipeline(cfg, scenario)
    return mimicry_sweep(fit.detector, fit.scenario, counts, cfg.seed)
