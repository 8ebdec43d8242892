"""Configuration, seeded training runs, CSV logging and checkpoints.

The four variants are presets of one loop: ``region.p = 1`` turns partial
search off and ``ls.I = 0`` turns local search off.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional

from .env import Environment
from .errors import ParseError
from .local_search import IterationMetrics, LocalSearchConfig, RunState, training_round
from .metrics import BitSeqModes, ThresholdModes
from .objectives import ObjectiveConfig
from .planner import Planner
from .policy import OptimizerState, PolicyParams, init_params
from .region import RegionConfig
from .streams import SEED_MASK, substream
from .tasks import (
    DEFAULT_BASIS,
    BitSeqSpec,
    PamdpSpec,
    ToyTreeSpec,
    load_modes,
    load_reward_table,
    make_bitseq,
    make_pamdp,
    make_toytree,
    motif_reward,
    synth_modes,
)

CSV_HEADER = ["iter", "samples_total", "loss", "modes_total", "modes_new", "r_topk", "region_id", "switched"]
CHECKPOINT_VERSION = 1


@dataclass
class TaskConfig:
    kind: str
    # bitseq
    n: int = 16
    k: int = 4
    modes: Optional[list] = None
    modes_file: Optional[str] = None
    n_modes: int = 4
    basis: Optional[list] = None
    mode_distance: Optional[int] = None
    mode_seed: int = 0
    # pamdp
    length: int = 14
    alphabet: str = "ACGU"
    reward_table: Optional[str] = None
    default_reward: Optional[float] = None
    motif: Optional[str] = None
    temperature: float = 1.0
    # toytree
    branching: int = 2
    depth: int = 3
    reward_fn: str = "sum"
    labels: str = "shared"

    def __post_init__(self):
        if self.kind not in ("bitseq", "pamdp", "toytree"):
            raise ValueError(f"unknown task kind {self.kind!r}")


@dataclass
class LSSection:
    K: int = 2
    I: int = 0
    batch: int = 16
    accept: str = "strict_improve"


@dataclass
class PlannerSection:
    min_steps: int = 5
    avg_source: str = "diff"

    def __post_init__(self):
        if self.min_steps < 0:
            raise ValueError("min_steps must be >= 0")
        if self.avg_source not in ("diff", "his"):
            raise ValueError("avg_source must be 'diff' or 'his'")


@dataclass
class TrainSection:
    iterations: int = 100
    lr: float = 1e-3
    lr_log_z: float = 0.1
    seed: int = 0
    eps_uniform: float = 0.05
    hidden: list = field(default_factory=lambda: [128, 128])
    activation: str = "tanh"
    max_samples: Optional[int] = None
    stop_when_saturated: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 <= self.seed <= SEED_MASK:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not 0 <= self.eps_uniform <= 1:
            raise ValueError("eps_uniform must lie in [0, 1]")
        if self.lr <= 0 or self.lr_log_z <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class MetricsSection:
    topk: int = 100
    threshold: float = 0.95
    distance: Optional[int] = None
    separation: int = 1

    def __post_init__(self):
        if self.topk < 1:
            raise ValueError("topk must be >= 1")


@dataclass
class RunConfig:
    task: TaskConfig
    objective: ObjectiveConfig
    region: RegionConfig = field(default_factory=RegionConfig)
    ls: LSSection = field(default_factory=LSSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    train: TrainSection = field(default_factory=TrainSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def ls_config(self) -> LocalSearchConfig:
        return LocalSearchConfig(self.ls.K, self.ls.I, self.ls.batch, self.ls.accept)

    def to_dict(self) -> dict:
        return asdict(self)


SECTIONS: dict[str, type] = {
    "task": TaskConfig,
    "objective": ObjectiveConfig,
    "region": RegionConfig,
    "ls": LSSection,
    "planner": PlannerSection,
    "train": TrainSection,
    "metrics": MetricsSection,
}
REQUIRED = ("task", "objective")


def _section(name: str, cls: type, raw: Any):
    if not isinstance(raw, dict):
        raise ParseError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls) if f.init}
    for key in raw:
        if key not in known:
            raise ParseError(f"unknown key {name}.{key}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ParseError(f"invalid section {name!r}: {e}") from None


def parse_config(raw: Any) -> RunConfig:
    if not isinstance(raw, dict):
        raise ParseError("configuration must be a JSON object")
    for key in raw:
        if key not in SECTIONS:
            raise ParseError(f"unknown key {key}")
    for key in REQUIRED:
        if key not in raw:
            raise ParseError(f"missing required section {key!r}")
    cfg = RunConfig(**{k: _section(k, SECTIONS[k], v) for k, v in raw.items()})
    try:
        cfg.ls_config()
        if cfg.ls.K > _max_depth(cfg.task):
            raise ValueError(f"K={cfg.ls.K} exceeds the task depth")
    except ValueError as e:
        raise ParseError(f"invalid section 'ls': {e}") from None
    return cfg


def _max_depth(t: TaskConfig) -> int:
    if t.kind == "bitseq":
        return t.n // t.k if t.k else 0
    return t.length if t.kind == "pamdp" else t.depth


def load_config(path: str | Path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return parse_config(raw)


def build_env(t: TaskConfig) -> Environment:
    if t.kind == "bitseq":
        if t.modes is not None:
            modes = list(t.modes)
        elif t.modes_file is not None:
            modes = load_modes(t.modes_file)
        else:
            modes = synth_modes(t.basis or DEFAULT_BASIS, t.n_modes, t.n, substream(t.mode_seed, "modes"))
        return make_bitseq(BitSeqSpec(t.n, t.k, modes, t.mode_distance, t.basis))
    if t.kind == "pamdp":
        table = load_reward_table(t.reward_table) if t.reward_table else None
        fn = motif_reward(t.motif, t.temperature) if t.motif else None
        return make_pamdp(PamdpSpec(t.length, t.alphabet, table, t.default_reward, fn))
    return make_toytree(ToyTreeSpec(t.branching, t.depth, t.reward_fn, t.labels))


def build_tracker(cfg: RunConfig, env: Environment):
    if cfg.task.kind == "bitseq":
        d = cfg.metrics.distance if cfg.metrics.distance is not None else env.spec.mode_distance
        return BitSeqModes(env.spec.modes, d, cfg.metrics.topk)
    return ThresholdModes(cfg.metrics.threshold, cfg.metrics.separation, cfg.metrics.topk)


def init_state(cfg: RunConfig, env: Environment | None = None) -> RunState:
    env = env or build_env(cfg.task)
    tr = cfg.train
    params = init_params(env, substream(tr.seed, "init"), tuple(tr.hidden), tr.activation)
    opt = OptimizerState(lr=tr.lr, lr_overrides={"log_z": tr.lr_log_z})
    planner = Planner(env.n_astar, cfg.region, cfg.planner.min_steps, cfg.planner.avg_source)
    planner.choose(substream(tr.seed, "region", "init"))
    return RunState(
        env=env,
        params=params,
        opt=opt,
        planner=planner,
        objective=cfg.objective,
        ls=cfg.ls_config(),
        tracker=build_tracker(cfg, env),
        seed=tr.seed,
        eps=tr.eps_uniform,
    )


def _saturated(tracker) -> bool:
    # mode counts are cumulative and capped by |M|, so nothing can change once all are found
    cap = len(getattr(tracker, "found", ()))
    return cap > 0 and tracker.modes_total == cap


def csv_row(m: IterationMetrics, r_topk: float) -> list:
    return [m.iter, m.samples_total, repr(m.loss), m.modes_total, m.modes_new, repr(r_topk), m.region_id, int(m.switched)]


def checkpoint_dict(state: RunState) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "env_signature": state.env.signature(),
        "params": state.params.arrays(),
        "opt_state": state.opt.state_dict(),
        "log_z": float(state.params.log_z),
        "planner_state": state.planner.state_dict(),
        "meta": {"activation": state.params.activation, "iter": state.iter, "samples_total": state.samples_total},
    }


def save_checkpoint(state: RunState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(state), sort_keys=True))


def load_checkpoint(path: str | Path, state: RunState) -> RunState:
    """Restore params, optimizer and planner into ``state``; the environment must match."""
    d = json.loads(Path(path).read_text())
    if d.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {d.get('version')!r}")
    if d["env_signature"] != json.loads(json.dumps(state.env.signature())):
        raise ParseError("checkpoint was written for a different environment")
    meta = d.get("meta", {})
    state.params = PolicyParams.from_arrays(d["params"], d["log_z"], meta.get("activation", "tanh"))
    state.opt = OptimizerState.from_state_dict(d["opt_state"])
    state.planner.load_state_dict(d["planner_state"])
    state.iter = meta.get("iter", state.iter)
    state.samples_total = meta.get("samples_total", state.samples_total)
    return state


@dataclass
class RunResult:
    rows: list[list]
    state: RunState
    metrics: list[IterationMetrics]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(self.rows)
        return buf.getvalue()


def run(
    cfg: RunConfig,
    out: str | Path | None = None,
    on_round: Callable[[RunState, IterationMetrics], None] | None = None,
) -> RunResult:
    """Execute the configured rounds; with ``out`` set, write log.csv, planner.csv and checkpoint.json."""
    state = init_state(cfg)
    rows, all_metrics, planner_rows = [], [], []
    budget = cfg.train.max_samples
    for _ in range(cfg.train.iterations):
        if budget is not None and state.samples_total >= budget:
            break
        try:
            state, m = training_round(state)
        except ArithmeticError as e:
            raise type(e)(f"iteration {state.iter}: {e}") from e
        rows.append(csv_row(m, state.tracker.top.value()))
        all_metrics.append(m)
        planner_rows.append([m.iter, " ".join(map(str, state.planner.table.ranking()))])
        if on_round is not None:
            on_round(state, m)
        if cfg.train.stop_when_saturated and _saturated(state.tracker):
            break
    result = RunResult(rows, state, all_metrics)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "log.csv").write_text(result.csv_text())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "top_astar_by_score"])
        w.writerows(planner_rows)
        (out / "planner.csv").write_text(buf.getvalue())
        save_checkpoint(state, out / "checkpoint.json")
    return result


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise ParseError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)


def mode_summary(rows: list[dict]) -> dict:
    total = int(rows[-1]["modes_total"]) if rows else 0
    new = sum(int(r["modes_new"]) for r in rows)
    monotone = all(int(a["modes_total"]) <= int(b["modes_total"]) for a, b in zip(rows, rows[1:]))
    return {"modes_total": total, "sum_modes_new": new, "consistent": new == total and monotone}
