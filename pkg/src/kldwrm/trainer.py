"""Config-driven training runs and their per-epoch metrics."""
from __future__ import annotations

import dataclasses
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .curvature import EAState, compute_factors, kappa, should_refresh
from .data import Dataset, BatchPlan, batches, load_mnist, synth_classification, synth_regression
from .errors import ConfigError, KldwrmError, NumericalError
from .network import NetParams, Network
from .qe import QEConfig, QEProblem, SnapshotRing, kron_operator, qe_step
from .steps import (
    ClipPolicy,
    KronCurvature,
    StepState,
    build_hat_factors,
    clip_step,
    q_step,
    so_step,
    woqm_step,
)

SOLVERS = ("kfac", "so", "q", "qe")
DATASETS = ("idx", "synth_classification", "synth_regression")
CSV_COLUMNS = ("epoch", "train_loss", "test_loss", "test_acc", "wall_s", "step_norm")


@dataclass
class RunConfig:
    solver: str = "kfac"
    rho: float = 0.5
    lam: float = 100.0
    lam_decay: float = 0.0  # lam_k = lam / (1 + lam_decay * k)
    gamma: float = 0.01
    batch_size: int = 512
    update_period: int = 30
    weight_decay: float = 1e-3
    clip_mode: str = "auto"  # auto, global, per_group, none
    clip_param: float = 0.1
    clip_norm: str = "fisher"  # global mode: fisher or euclidean
    tau: float = 2.0
    epochs: int = 10
    seed: int = 0
    arch: str = "784-128-64-10"
    qe_n_is: int = 10
    qe_omega: float = 0.07
    qe_n_cap: int = 4
    qe_zeta_scale: float = 1.0 / 330.0
    dataset: str = "idx"
    data_dir: str = ""
    n_train: int = 2048
    n_test: int = 512
    data_seed: int = 1234
    max_steps_per_epoch: int = 0
    output: str = "run.csv"
    record_wall_time: bool = False
    zero_curvature_b: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("rho must lie in [0, 1)")
        if self.lam <= 0 or self.lam_decay < 0 or self.gamma < 0 or self.weight_decay < 0:
            raise ConfigError("lam must be positive; lam_decay, gamma and weight_decay non-negative")
        if self.batch_size <= 0 or self.update_period <= 0 or self.epochs < 0:
            raise ConfigError("batch_size and update_period must be positive, epochs non-negative")
        if self.clip_mode not in ("auto", "global", "per_group", "none"):
            raise ConfigError(f"unknown clip_mode {self.clip_mode!r}")
        if self.clip_norm not in ("fisher", "euclidean"):
            raise ConfigError(f"unknown clip_norm {self.clip_norm!r}")
        if self.clip_param <= 0 or self.tau <= 0:
            raise ConfigError("clip thresholds must be positive")
        if self.n_train <= 0 or self.n_test <= 0 or self.max_steps_per_epoch < 0:
            raise ConfigError("dataset sizes must be positive")
        if self.solver == "qe":
            self.qe_config()
        self.sizes()

    def sizes(self) -> list:
        try:
            sizes = [int(t) for t in self.arch.split("-")]
        except ValueError as exc:
            raise ConfigError(f"bad architecture {self.arch!r}") from exc
        if len(sizes) < 2 or min(sizes) <= 0:
            raise ConfigError(f"bad architecture {self.arch!r}")
        return sizes

    def qe_config(self) -> QEConfig:
        try:
            return QEConfig(self.qe_n_is, self.qe_omega, self.qe_n_cap, self.qe_zeta_scale)
        except KldwrmError as exc:
            raise ConfigError(str(exc)) from exc

    def clip_policy(self) -> ClipPolicy:
        mode = self.clip_mode
        if mode == "auto":
            mode = "global" if self.solver in ("kfac", "so") else "per_group"
        return ClipPolicy(mode, self.clip_param, self.tau, self.clip_norm)

    def lam_at(self, k: int) -> float:
        if self.lam_decay == 0.0:
            return self.lam
        return self.lam / (1.0 + self.lam_decay * k)

    # key=value text form

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format_value(getattr(self, f.name))}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, val = (t.strip() for t in line.split("=", 1))
            values[key] = val
        values.update(overrides)
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, val in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, val, type(known[key].default))
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), **overrides)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key, val, kind):
    if not isinstance(val, str):
        return kind(val) if kind is not bool else bool(val)
    try:
        if kind is bool:
            low = val.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(val)
        if kind is float and "/" in val:
            num, den = val.split("/", 1)
            return float(num) / float(den)
        return kind(val)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {val!r}") from exc


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)  # dicts keyed by CSV_COLUMNS
    diverged: str | None = None
    wall_times: list = field(default_factory=list)
    params: NetParams | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self, include_wall: bool) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            cells = []
            for c in CSV_COLUMNS:
                if c == "epoch":
                    cells.append(str(int(r[c])))
                elif c == "wall_s" and not include_wall:
                    cells.append("")
                else:
                    cells.append(repr(float(r[c])))
            lines.append(",".join(cells))
        if self.diverged:
            lines.append(f"# {self.diverged}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "RunMetrics":
        out = cls()
        lines = text.splitlines()
        if not lines or lines[0].strip() != ",".join(CSV_COLUMNS):
            raise ValueError("not a metrics CSV (header mismatch)")
        for line in lines[1:]:
            if not line.strip():
                continue
            if line.startswith("#"):
                out.diverged = line[1:].strip()
                continue
            cells = line.split(",")
            if len(cells) != len(CSV_COLUMNS):
                raise ValueError(f"bad metrics row {line!r}")
            row = {}
            for c, v in zip(CSV_COLUMNS, cells):
                row[c] = int(v) if c == "epoch" else (float(v) if v else math.nan)
            out.rows.append(row)
        return out

    @classmethod
    def read(cls, path) -> "RunMetrics":
        with open(path) as fh:
            return cls.from_csv(fh.read())


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    sizes = cfg.sizes()
    if cfg.dataset == "idx":
        return load_mnist(cfg.data_dir or None)
    n = cfg.n_train + cfg.n_test
    if cfg.dataset == "synth_classification":
        ds = synth_classification(n, sizes[0], sizes[-1], cfg.data_seed)
    else:
        ds = synth_regression(n, sizes[0], sizes[-1], cfg.data_seed)
    return ds.subset(np.arange(cfg.n_train)), ds.subset(np.arange(cfg.n_train, n))


def clip_groups(net: Network) -> list:
    """Index groups for per-group clipping: each layer's weights and its bias column."""
    groups = []
    for sl, l in zip(net.layer_slices(), net.layers):
        bias_start = sl.stop - l.out_dim  # last column in column-major order
        groups.append(np.arange(sl.start, bias_start))
        groups.append(np.arange(bias_start, sl.stop))
    return groups


def evaluate(net: Network, params: NetParams, ds: Dataset, chunk: int = 4096) -> tuple[float, float]:
    """Mean NLL and accuracy (nan for regression) over the whole dataset."""
    total, correct = 0.0, 0
    for i in range(0, len(ds), chunk):
        x = ds.inputs[i:i + chunk]
        y = ds.labels[i:i + chunk]
        out, _ = net.forward(params, x)
        total += float(np.sum(net.nll(out, y)))
        if ds.kind == "classification":
            correct += int(np.sum(np.argmax(out, axis=1) == y))
    acc = correct / len(ds) if ds.kind == "classification" else math.nan
    return total / len(ds), acc


class _Trainer:
    def __init__(self, cfg: RunConfig, train: Dataset, test: Dataset):
        self.cfg = cfg
        self.train = train
        self.test = test
        sizes = cfg.sizes()
        head = "categorical" if train.kind == "classification" else "gaussian"
        if sizes[0] != train.input_dim:
            raise ConfigError(f"architecture expects {sizes[0]} inputs, data has {train.input_dim}")
        n_out = train.n_classes if train.kind == "classification" else train.labels.shape[1]
        if sizes[-1] != n_out:
            raise ConfigError(f"architecture has {sizes[-1]} outputs, data needs {n_out}")
        self.net = Network.from_sizes(sizes, head)
        self.shapes = [(l.out_dim, l.in_dim + 1) for l in self.net.layers]
        # one stream: initialization first, then label sampling for the factors
        self.rng = np.random.default_rng(cfg.seed)
        self.params = self.net.init_params(self.rng)
        self.theta = self.params.flatten()
        self.ea = EAState(cfg.rho, cfg.gamma)
        self.state = StepState.initial(self.net.n_params, cfg.rho)
        self.clip = cfg.clip_policy()
        self.groups = clip_groups(self.net)
        self.qe_cfg = cfg.qe_config() if cfg.solver == "qe" else None
        self.ring = SnapshotRing(self.qe_cfg.n_cap) if self.qe_cfg else None
        self.plan = BatchPlan(cfg.batch_size, cfg.seed)
        self.k = 0
        self.refresh = -1
        self.fresh_b = None
        self.prev_ea = None
        self._hat_key = None
        self._hat_inv = None

    def _refresh_factors(self, x, cache):
        sampled = self.net.sample_labels(self.params, x, self.rng, outputs=cache.outputs)
        d_out = self.net.output_grad(cache.outputs, sampled)
        _, dzs = self.net.backward(self.params, cache, d_out)
        fresh = compute_factors(cache, dzs)
        # before the first update the previous average is taken to be the fresh factors
        self.prev_ea = self.ea.copy() if self.ea.count else EAState(self.cfg.rho, self.cfg.gamma).update(fresh)
        self.ea.update(fresh)
        self.fresh_b = fresh
        self.refresh += 1

    def _hat_inverses(self, lam: float, fresh_now: bool):
        """Inverses of the reweighted factors, rebuilt on refresh or when lam changes."""
        if self.cfg.zero_curvature_b:
            return None
        key = (self.refresh, fresh_now, lam)
        if key != self._hat_key:
            if fresh_now:
                hat = build_hat_factors(self.prev_ea, self.fresh_b, self.cfg.rho, lam)
            else:
                # between refreshes the newest factors are the frozen averages themselves
                hat = build_hat_factors(self.ea, self.ea.factors, self.cfg.rho, lam)
            self._hat_inv = hat.inverses(self.cfg.gamma, self.ea.eig_method)
            self._hat_key = key
        return self._hat_inv

    def step(self, idx):
        cfg = self.cfg
        x = self.train.inputs[idx]
        y = self.train.labels[idx]
        loss, grads, cache = self.net.loss_grad(self.params, x, y)
        g = grads.flatten()
        lam = cfg.lam_at(self.k)
        refreshed = should_refresh(self.k, cfg.update_period)
        if refreshed:
            self._refresh_factors(x, cache)
        if cfg.solver in ("kfac", "so"):
            curv = KronCurvature(self.ea, self.shapes)
            if cfg.solver == "kfac":
                s = woqm_step(curv, g, lam)
            else:
                s, self.state = so_step(curv, g, self.state, lam)
            s = clip_step(s, self.clip, self.groups, curv.ea_apply)
        else:
            curv = KronCurvature(self.ea, self.shapes, self._hat_inverses(lam, refreshed))
            if cfg.solver == "q":
                s, self.state = q_step(curv, g, self.state, lam)
                s = clip_step(s, self.clip, self.groups, curv.ea_apply)
            else:
                b_factors = self.fresh_b if refreshed else self.ea.factors
                if cfg.zero_curvature_b:
                    b_apply = lambda v: np.zeros_like(v)
                else:
                    b_apply = kron_operator(b_factors, self.shapes)
                problem = QEProblem.build(
                    self.net, self.params, x, g, b_apply, lam, self.ring, self.refresh,
                    cfg.rho, self.qe_cfg.zeta_scale, self.qe_cfg.zeta_scale * kappa(self.k, cfg.rho),
                )
                s, self.state = qe_step(curv, g, self.state, lam, problem, self.qe_cfg, self.clip, self.groups)
                if refreshed:
                    self.ring.push(self.params, self.refresh)
        if not np.all(np.isfinite(s)):
            raise NumericalError(f"non-finite step at step {self.k}", step=self.k)
        self.theta = self.theta + s - (cfg.weight_decay / lam) * self.theta
        self.params = NetParams.from_flat(self.net.layers, self.theta)
        self.k += 1
        return loss, float(np.linalg.norm(s))


def run(cfg: RunConfig, datasets=None, write: bool = True) -> RunMetrics:
    """Train one seeded run; optionally write the metrics CSV to ``cfg.output``."""
    train, test = datasets if datasets is not None else load_datasets(cfg)
    t0 = time.perf_counter()
    tr = _Trainer(cfg, train, test)
    metrics = RunMetrics()

    def record(epoch, norms):
        train_loss, _ = evaluate(tr.net, tr.params, train)
        test_loss, test_acc = evaluate(tr.net, tr.params, test)
        wall = time.perf_counter() - t0
        metrics.wall_times.append(wall)
        metrics.rows.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "test_loss": test_loss,
            "test_acc": test_acc,
            "wall_s": wall,
            "step_norm": float(np.mean(norms)) if norms else 0.0,
        })

    record(0, [])
    epoch = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            norms = []
            for n_step, idx in enumerate(batches(train, tr.plan, epoch)):
                if cfg.max_steps_per_epoch and n_step >= cfg.max_steps_per_epoch:
                    break
                _, norm = tr.step(idx)
                norms.append(norm)
            record(epoch, norms)
    except (NumericalError, FloatingPointError) as exc:
        metrics.diverged = f"diverged at epoch {epoch} step {tr.k}"
    if write:
        write_metrics(cfg, metrics)
    metrics.params = tr.params
    return metrics


def write_metrics(cfg: RunConfig, metrics: RunMetrics):
    out_dir = os.path.dirname(cfg.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    with open(cfg.output, "w", newline="") as fh:
        fh.write(metrics.to_csv(cfg.record_wall_time))
    # wall-clock times change between runs, so they live in a side file
    with open(cfg.output + ".timing", "w") as fh:
        fh.write("epoch,wall_s\n")
        for r in metrics.rows:
            fh.write(f"{r['epoch']},{r['wall_s']:.3f}\n")
