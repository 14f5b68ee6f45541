"""Experiment orchestration: sweeps, metrics, config files, CSV persistence.

Two experiments ship with the package:

* sweep_pilots: symbol error rate of a 16-QAM demodulator on unseen devices
  versus the number of pilots, for four training strategies (conventional
  from scratch, joint across devices, joint plus adaptation, meta-learned
  initialization plus adaptation);
* sweep_adaptation: block error rate of an end-to-end autoencoder on unseen
  3-tap fading channels versus the number of adaptation iterations, starting
  either from the meta-learned initialization or from a random one.

Determinism contract: everything a run produces is a pure function of the
config (including its seed list).  Per-purpose rng streams are derived from
(seed, scope, indices), never from execution order, so running with any
--workers value yields byte-identical CSV.
"""

from __future__ import annotations

import concurrent.futures
import functools
import json
from dataclasses import dataclass, fields, replace

import numpy as np

from .autodiff import eval_with_gradient
from .checks import run_gradcheck  # noqa: F401  (re-exported: part of this module's API)
from .errors import ConfigurationError
from .learners import (
    DEMOD_ARCH,
    TrainConfig,
    maml_adapt,
    meta_train,
    sgd_step,
    train_conventional,
    train_joint,
)
from .nn import (
    AutoencoderSpec,
    ParamVector,
    autoencoder_forward,
    init_autoencoder_params,
    init_params,
    make_autoencoder_lossfn,
    mlp_forward,
    split_autoencoder_params,
)
from .tasks import (
    SCOPE_ADAPT_PILOTS,
    SCOPE_ADAPT_STEPS,
    SCOPE_EVAL,
    SCOPE_TASK,
    SCOPE_TEST_TASK,
    TaskFamily,
    autoencoder_stream,
    autoencoder_task_pool,
    demod_task_pool,
    generate_autoencoder_batch,
    make_pilot_dataset,
    rng_for,
    subsample_stream,
)

PROFILES = ("demod", "autoencoder")
METHOD_LABELS = ("conventional", "joint", "joint+adapt", "maml", "maml-fo")
METRIC_LABELS = ("ser", "bler", "meta_loss")

# ---------------------------------------------------------------------------
# curve tables


@dataclass(frozen=True)
class CurveRow:
    sweep_value: float
    method: str
    metric: str
    mean: float
    std: float
    n_seeds: int

    def __post_init__(self):
        if self.method not in METHOD_LABELS:
            raise ConfigurationError(f"unknown method label '{self.method}'")
        if self.metric not in METRIC_LABELS:
            raise ConfigurationError(f"unknown metric label '{self.metric}'")
        if self.metric in ("ser", "bler") and not 0.0 <= self.mean <= 1.0:
            raise ConfigurationError(f"{self.metric} mean {self.mean} outside [0, 1]")
        if self.std < 0.0:
            raise ConfigurationError("std must be non-negative")
        if self.n_seeds < 1:
            raise ConfigurationError("n_seeds must be positive")


@dataclass(frozen=True)
class CurveTable:
    rows: tuple

    def __len__(self):
        return len(self.rows)

    def select(self, method=None, metric=None, sweep_value=None):
        out = self.rows
        if method is not None:
            out = [r for r in out if r.method == method]
        if metric is not None:
            out = [r for r in out if r.metric == metric]
        if sweep_value is not None:
            out = [r for r in out if r.sweep_value == sweep_value]
        return tuple(out)


@dataclass(frozen=True)
class SweepRecord:
    """One raw measurement before aggregation: (seed, test unit, x, method)."""

    seed: int
    unit: int
    sweep_value: float
    method: str
    metric: str
    value: float


@dataclass(frozen=True)
class SweepResult:
    records: tuple
    table: CurveTable


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs; see default_config() for per-profile values.

    Training fields mirror TrainConfig; `seed` seeds single runs
    (meta-train/eval subcommands) while `seeds` drives sweeps.
    """

    profile: str
    eta_inner: float
    eta_outer: float
    m: int
    K_meta_batch: int
    outer_iters: int
    baseline_iters: int
    first_order: bool
    seed: int
    snr_db: float
    pilot_counts: tuple
    adapt_iters_max: int
    n_meta_train_tasks: int
    n_meta_test_tasks: int
    n_eval_symbols_or_blocks: int
    meta_train_pilots: int
    meta_test_pilots: int
    n_train_blocks: int
    seeds: tuple
    output_path: str

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile '{self.profile}'")
        for name in (
            "baseline_iters",
            "adapt_iters_max",
            "n_meta_train_tasks",
            "n_meta_test_tasks",
            "n_eval_symbols_or_blocks",
            "meta_train_pilots",
            "meta_test_pilots",
            "n_train_blocks",
        ):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if not self.pilot_counts:
            raise ConfigurationError("pilot_counts must not be empty")
        if any(n < 1 for n in self.pilot_counts):
            raise ConfigurationError("pilot counts must be positive")
        if list(self.pilot_counts) != sorted(set(self.pilot_counts)):
            raise ConfigurationError("pilot_counts must be strictly ascending")
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        self.train_config(self.seed)  # delegate step-size/m validation

    def train_config(self, seed):
        return TrainConfig(
            eta_inner=self.eta_inner,
            eta_outer=self.eta_outer,
            m=self.m,
            K_meta_batch=self.K_meta_batch,
            outer_iters=self.outer_iters,
            first_order=self.first_order,
            seed=seed,
        )


def default_config(profile):
    """Calibrated defaults for each experiment profile."""
    if profile == "demod":
        return ExperimentConfig(
            profile="demod",
            eta_inner=0.1,
            eta_outer=0.3,
            m=1,
            K_meta_batch=10,
            outer_iters=2000,
            baseline_iters=300,
            first_order=False,
            seed=0,
            snr_db=15.0,
            pilot_counts=(1, 2, 4, 8, 16, 32),
            adapt_iters_max=40,
            n_meta_train_tasks=100,
            n_meta_test_tasks=20,
            n_eval_symbols_or_blocks=2000,
            meta_train_pilots=4,
            meta_test_pilots=64,
            n_train_blocks=128,
            seeds=(0, 1, 2, 3, 4),
            output_path="demod_ser.csv",
        )
    if profile == "autoencoder":
        return ExperimentConfig(
            profile="autoencoder",
            eta_inner=0.05,
            eta_outer=0.05,
            m=1,
            K_meta_batch=10,
            outer_iters=1000,
            baseline_iters=300,
            first_order=False,
            seed=0,
            snr_db=10.0,
            pilot_counts=(1, 2, 4, 8, 16, 32),
            adapt_iters_max=40,
            n_meta_train_tasks=50,
            n_meta_test_tasks=10,
            n_eval_symbols_or_blocks=2000,
            meta_train_pilots=16,
            meta_test_pilots=64,
            n_train_blocks=128,
            seeds=(0, 1, 2),
            output_path="autoencoder_bler.csv",
        )
    raise ConfigurationError(f"unknown profile '{profile}'")


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(text):
    try:
        return _BOOL_WORDS[text.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"expected a boolean, got '{text}'") from None


def _parse_int_tuple(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part.strip()) for part in text.split(","))


_FIELD_PARSERS = {
    "profile": str.strip,
    "eta_inner": float,
    "eta_outer": float,
    "m": int,
    "K_meta_batch": int,
    "outer_iters": int,
    "baseline_iters": int,
    "first_order": _parse_bool,
    "seed": int,
    "snr_db": float,
    "pilot_counts": _parse_int_tuple,
    "adapt_iters_max": int,
    "n_meta_train_tasks": int,
    "n_meta_test_tasks": int,
    "n_eval_symbols_or_blocks": int,
    "meta_train_pilots": int,
    "meta_test_pilots": int,
    "n_train_blocks": int,
    "seeds": _parse_int_tuple,
    "output_path": str.strip,
}

assert set(_FIELD_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def load_config(path):
    """Strict parse of a flat `key = value` file into an ExperimentConfig.

    Unknown keys, repeated keys, or malformed lines are rejected with the
    offending line number.  The `profile` key selects which defaults fill in
    anything unspecified.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ConfigurationError(f"cannot read config '{path}': {err}") from err

    pairs = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got '{line}'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELD_PARSERS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key '{key}'")
        if key in pairs:
            raise ConfigurationError(f"{path}:{lineno}: repeated key '{key}'")
        pairs[key] = (lineno, value.strip())

    if "profile" not in pairs:
        raise ConfigurationError(f"{path}: missing required key 'profile'")
    profile = pairs.pop("profile")[1]
    if profile not in PROFILES:
        raise ConfigurationError(f"{path}: unknown profile '{profile}'")

    config = default_config(profile)
    overrides = {}
    for key, (lineno, value) in pairs.items():
        try:
            overrides[key] = _FIELD_PARSERS[key](value)
        except (ValueError, ConfigurationError) as err:
            raise ConfigurationError(f"{path}:{lineno}: bad value for '{key}': {err}") from err
    try:
        return replace(config, **overrides)
    except ConfigurationError as err:
        raise ConfigurationError(f"{path}: {err}") from err


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_config(config, path):
    """Write a config as `key = value` lines; load_config() round-trips it."""
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}" for f in fields(config)]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise ConfigurationError(f"cannot write config '{path}': {err}") from err


# ---------------------------------------------------------------------------
# CSV persistence

CSV_HEADER = "sweep_value,method,metric,mean,std,n_seeds"


def write_curve(table, path):
    """CSV with 17-significant-digit reals and LF endings, deterministic."""
    lines = [CSV_HEADER]
    for r in table.rows:
        lines.append(
            f"{r.sweep_value:.17g},{r.method},{r.metric},{r.mean:.17g},{r.std:.17g},{r.n_seeds}"
        )
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise ConfigurationError(f"cannot write curve '{path}': {err}") from err


def read_curve(path):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
    except OSError as err:
        raise ConfigurationError(f"cannot read curve '{path}': {err}") from err
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigurationError(f"{path}: missing curve header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ConfigurationError(f"{path}:{lineno}: expected 6 fields")
        rows.append(
            CurveRow(float(parts[0]), parts[1], parts[2], float(parts[3]), float(parts[4]), int(parts[5]))
        )
    return CurveTable(tuple(rows))


# ---------------------------------------------------------------------------
# metrics


def evaluate_ser(p, task, n_symbols, rng):
    """Symbol error rate of demodulator p over fresh draws from the task.

    Ties in the argmax resolve to the lowest class index (numpy argmax).
    """
    if task.kind != "demod":
        raise ConfigurationError("evaluate_ser needs a demod task")
    indices = rng.integers(0, 16, size=n_symbols)
    from .channel import apply_channel_demod

    received, labels = apply_channel_demod(indices, task.realization, rng)
    logits = mlp_forward(p, np.stack([received.real, received.imag], axis=1))
    predicted = np.argmax(logits, axis=1)
    return float(np.mean(predicted != labels))


def evaluate_bler(enc, dec, task, n_blocks, rng):
    """Block error rate of an encoder/decoder pair on fresh channel uses."""
    if task.kind != "autoencoder":
        raise ConfigurationError("evaluate_bler needs an autoencoder task")
    n_messages = enc.arch[0][0]
    messages = rng.integers(0, n_messages, size=n_blocks)
    logits = autoencoder_forward(enc, dec, messages, task.realization, rng)
    predicted = np.argmax(logits, axis=1)
    return float(np.mean(predicted != messages))


# ---------------------------------------------------------------------------
# sweeps


def _maml_label(config):
    return "maml-fo" if config.first_order else "maml"


def _pilot_seed_records(config, seed):
    """All raw SER measurements for one seed of the pilot sweep."""
    family = TaskFamily(kind="demod", snr_db=config.snr_db)
    pool = demod_task_pool(
        family, config.n_meta_train_tasks, config.meta_train_pilots, config.meta_test_pilots, seed
    )
    tc = config.train_config(seed)
    # Meta-training runs outer_iters meta-updates; the per-device baseline and
    # the joint baseline get baseline_iters plain SGD steps (they see far more
    # gradients per iteration, so tying the two budgets together would either
    # starve meta-training or drag the sweep out for nothing).
    tc_base = replace(tc, outer_iters=config.baseline_iters)
    init = init_params(DEMOD_ARCH, seed)
    theta = meta_train(subsample_stream(pool, tc.K_meta_batch), tc, init=init).params
    joint = train_joint(pool, tc_base, init=init)

    label = _maml_label(config)
    records = []
    for device in range(config.n_meta_test_tasks):
        task = family.sample(rng_for(seed, SCOPE_TEST_TASK, device), task_id=device)
        for n in config.pilot_counts:
            pilots = make_pilot_dataset(task, n, rng_for(seed, SCOPE_ADAPT_PILOTS, device, n))
            candidates = (
                ("conventional", train_conventional(task, n, tc_base, dataset=pilots, init=init)),
                ("joint", joint),
                ("joint+adapt", maml_adapt(joint, pilots, tc.eta_inner, tc.m)),
                (label, maml_adapt(theta, pilots, tc.eta_inner, tc.m)),
            )
            for method, params in candidates:
                # Same eval stream for every method at a given (device, n):
                # paired comparisons cut the Monte-Carlo variance of orderings.
                ser = evaluate_ser(
                    params, task, config.n_eval_symbols_or_blocks, rng_for(seed, SCOPE_EVAL, device, n)
                )
                records.append(SweepRecord(seed, device, float(n), method, "ser", ser))
    return records


def _adaptation_seed_records(config, seed):
    """All raw BLER measurements for one seed of the adaptation sweep."""
    spec = AutoencoderSpec()
    family = TaskFamily(kind="autoencoder", snr_db=config.snr_db)
    pool = autoencoder_task_pool(family, config.n_meta_train_tasks, seed)
    tc = config.train_config(seed)
    stream = autoencoder_stream(pool, spec, tc.K_meta_batch, config.n_train_blocks)
    theta = meta_train(stream, tc, init=init_autoencoder_params(spec, seed)).params
    lossfn = make_autoencoder_lossfn(spec)

    label = _maml_label(config)
    records = []
    for unit in range(config.n_meta_test_tasks):
        task = family.sample(rng_for(seed, SCOPE_TEST_TASK, unit), task_id=unit)
        starts = (
            (label, theta),
            ("conventional", init_autoencoder_params(spec, rng_for(seed, SCOPE_TASK, unit))),
        )
        for method, start in starts:
            step_rng = rng_for(seed, SCOPE_ADAPT_STEPS, unit)
            p = start
            for t in range(config.adapt_iters_max + 1):
                if t > 0:
                    batch = generate_autoencoder_batch(task, config.n_train_blocks, step_rng, spec)
                    p = sgd_step(p, eval_with_gradient(lossfn, p, batch).gradient, tc.eta_inner)
                enc, dec = split_autoencoder_params(p, spec)
                bler = evaluate_bler(
                    enc, dec, task, config.n_eval_symbols_or_blocks, rng_for(seed, SCOPE_EVAL, unit, t)
                )
                records.append(SweepRecord(seed, unit, float(t), method, "bler", bler))
    return records


def _aggregate(records, n_seeds):
    keys = sorted({(r.sweep_value, r.method, r.metric) for r in records})
    rows = []
    for sweep_value, method, metric in keys:
        values = np.array(
            [r.value for r in records if (r.sweep_value, r.method, r.metric) == (sweep_value, method, metric)]
        )
        rows.append(
            CurveRow(sweep_value, method, metric, float(values.mean()), float(values.std()), n_seeds)
        )
    return CurveTable(tuple(rows))


def _map_seeds(worker, config, workers):
    if workers is None or workers <= 1:
        per_seed = [worker(config, s) for s in config.seeds]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(functools.partial(worker, config), config.seeds))
    records = []
    for chunk in per_seed:  # seeds order, not completion order
        records.extend(chunk)
    return tuple(records)


def run_pilot_sweep(config, workers=1):
    """Pilot sweep with raw records kept (per-seed medians need them)."""
    if config.profile != "demod":
        raise ConfigurationError("sweep_pilots needs profile = demod")
    records = _map_seeds(_pilot_seed_records, config, workers)
    return SweepResult(records, _aggregate(records, len(config.seeds)))


def sweep_pilots(config, workers=1):
    """SER vs number of pilots across training strategies; see module doc."""
    return run_pilot_sweep(config, workers).table


def run_adaptation_sweep(config, workers=1):
    if config.profile != "autoencoder":
        raise ConfigurationError("sweep_adaptation needs profile = autoencoder")
    records = _map_seeds(_adaptation_seed_records, config, workers)
    return SweepResult(records, _aggregate(records, len(config.seeds)))


def sweep_adaptation(config, workers=1):
    """BLER vs adaptation iterations from meta-learned and random inits."""
    return run_adaptation_sweep(config, workers).table


# ---------------------------------------------------------------------------
# single-run entry points used by the CLI


def run_meta_train(config, seed=None):
    """Meta-train one initialization per the config's profile."""
    seed = config.seed if seed is None else seed
    tc = config.train_config(seed)
    if config.profile == "demod":
        family = TaskFamily(kind="demod", snr_db=config.snr_db)
        pool = demod_task_pool(
            family, config.n_meta_train_tasks, config.meta_train_pilots, config.meta_test_pilots, seed
        )
        return meta_train(subsample_stream(pool, tc.K_meta_batch), tc, init=init_params(DEMOD_ARCH, seed))
    spec = AutoencoderSpec()
    family = TaskFamily(kind="autoencoder", snr_db=config.snr_db)
    pool = autoencoder_task_pool(family, config.n_meta_train_tasks, seed)
    stream = autoencoder_stream(pool, spec, tc.K_meta_batch, config.n_train_blocks)
    return meta_train(stream, tc, init=init_autoencoder_params(spec, seed))


def evaluate_params(config, params, seed=None):
    """Adapt saved parameters to fresh meta-test tasks and report the metric.

    demod: adapt on max(pilot_counts) pilots with m steps, mean SER over
    n_meta_test_tasks devices.  autoencoder: adapt for adapt_iters_max
    iterations, mean BLER over test channels.  Returns (metric_name, values).
    """
    seed = config.seed if seed is None else seed
    tc = config.train_config(seed)
    values = []
    if config.profile == "demod":
        family = TaskFamily(kind="demod", snr_db=config.snr_db)
        n = max(config.pilot_counts)
        for device in range(config.n_meta_test_tasks):
            task = family.sample(rng_for(seed, SCOPE_TEST_TASK, device), task_id=device)
            pilots = make_pilot_dataset(task, n, rng_for(seed, SCOPE_ADAPT_PILOTS, device, n))
            adapted = maml_adapt(params, pilots, tc.eta_inner, tc.m)
            values.append(
                evaluate_ser(adapted, task, config.n_eval_symbols_or_blocks, rng_for(seed, SCOPE_EVAL, device, n))
            )
        return "ser", values
    spec = AutoencoderSpec()
    family = TaskFamily(kind="autoencoder", snr_db=config.snr_db)
    lossfn = make_autoencoder_lossfn(spec)
    for unit in range(config.n_meta_test_tasks):
        task = family.sample(rng_for(seed, SCOPE_TEST_TASK, unit), task_id=unit)
        step_rng = rng_for(seed, SCOPE_ADAPT_STEPS, unit)
        p = params
        for _ in range(config.adapt_iters_max):
            batch = generate_autoencoder_batch(task, config.n_train_blocks, step_rng, spec)
            p = sgd_step(p, eval_with_gradient(lossfn, p, batch).gradient, tc.eta_inner)
        enc, dec = split_autoencoder_params(p, spec)
        values.append(
            evaluate_bler(enc, dec, task, config.n_eval_symbols_or_blocks, rng_for(seed, SCOPE_EVAL, unit, 0))
        )
    return "bler", values


def save_params(path, p):
    """Persist a ParamVector as .npz (flat values + architecture)."""
    arch_json = json.dumps([[fi, fo, act] for fi, fo, act in p.arch])
    try:
        np.savez(path, values=p.values, arch=np.array(arch_json))
    except OSError as err:
        raise ConfigurationError(f"cannot write parameters '{path}': {err}") from err


def load_params(path):
    try:
        with np.load(path, allow_pickle=False) as data:
            values = data["values"]
            arch = tuple((int(fi), int(fo), str(act)) for fi, fo, act in json.loads(str(data["arch"])))
    except (OSError, KeyError, ValueError) as err:
        raise ConfigurationError(f"cannot load parameters '{path}': {err}") from err
    return ParamVector(values, arch)
