"""``sewsnn`` command line: train, trace, verify oracles, generate data.

Exit codes: 0 success, 1 numeric failure (divergence or oracle tolerance
breach), 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from .analysis import (
    block_input_grads,
    firing_rate,
    grad_norm_regime,
    make_chain,
    oracle_grad_norm,
    oracle_grad_product_spiking,
    trace_firing_rates,
    trace_gradients,
)
from .data import SyntheticSpec, generate_synthetic, load_frames, save_frames, train_test_split
from .errors import ArchParseError, ConfigurationError, DatasetError, NumericError, ParameterError
from .network import build, output_shape, parse_arch, zero_init
from .neuron import NeuronSpec, SurrogateSpec
from .train import TrainConfig, evaluate, read_config, train

log = logging.getLogger("sewsnn")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

NEURON_KEYS = ("neuron", "v_threshold", "v_reset", "tau", "detach_reset", "surrogate", "alpha", "surrogate_a", "surrogate_scale")
DATA_KEYS = ("dataset", "test_dataset", "test_fraction", "generator", "samples", "num_classes", "size", "noise", "data_seed")
MODEL_KEYS = ("arch", "input_shape", "g", "decode")
TRACE_KEYS = ("block", "depth", "width", "batch", "input_rate", "loss", "downsample_every")
KNOWN_KEYS = frozenset(
    NEURON_KEYS + DATA_KEYS + MODEL_KEYS + TRACE_KEYS + tuple(f.name for f in fields(TrainConfig))
)


class OracleBreach(Exception):
    pass


# --- config helpers --------------------------------------------------------


class Config:
    """Typed access to a flat key-value mapping; errors name the key."""

    def __init__(self, mapping):
        unknown = sorted(set(mapping) - KNOWN_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown config key {unknown[0]!r}", key=unknown[0])
        self.raw = dict(mapping)

    def __contains__(self, key):
        return key in self.raw

    def get(self, key, typ=str, default=None):
        if key not in self.raw:
            return default
        value = self.raw[key]
        if not isinstance(value, str):
            return value
        try:
            if typ is bool:
                lowered = value.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return typ(value.strip())
        except ValueError:
            raise ConfigurationError(f"{key}: cannot read {value!r} as {typ.__name__}", key=key) from None

    def require(self, key, typ=str):
        if key not in self.raw:
            raise ConfigurationError(f"missing required config key {key!r}", key=key)
        return self.get(key, typ)


def load_config(args):
    mapping = read_config(args.config) if args.config else {}
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    if getattr(args, "arch", None):
        mapping["arch"] = args.arch
    return Config(mapping)


def _keyed(key, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except ParameterError as exc:
        raise ConfigurationError(str(exc), key=key) from exc


def neuron_from(cfg):
    surrogate = _keyed(
        "surrogate",
        SurrogateSpec,
        cfg.get("surrogate", str, "ArcTan"),
        cfg.get("alpha", float, 2.0),
        cfg.get("surrogate_a", float, 1.0),
        cfg.get("surrogate_scale", float, 1.0),
    )
    return _keyed(
        "neuron",
        NeuronSpec,
        cfg.get("neuron", str, "IF"),
        cfg.get("v_threshold", float, 1.0),
        cfg.get("v_reset", float, 0.0),
        cfg.get("tau", float, 2.0),
        cfg.get("detach_reset", bool, True),
        surrogate,
    )


def synthetic_from(cfg):
    try:
        return SyntheticSpec(
            cfg.get("generator", str, "moving-bar"),
            cfg.get("samples", int, 256),
            cfg.get("num_classes", int, 4),
            cfg.get("T", int, 4),
            cfg.get("size", int, 8),
            cfg.get("noise", float, 0.0),
            cfg.get("data_seed", int, 0),
        )
    except DatasetError as exc:
        key = {"kind": "generator"}.get(exc.field, exc.field)
        raise ConfigurationError(str(exc), key=key if key in KNOWN_KEYS else "generator") from exc


def datasets_from(cfg):
    """(train, test or None).  ``dataset = synthetic`` uses the generator keys."""
    source = cfg.require("dataset")
    if source == "synthetic":
        full = generate_synthetic(synthetic_from(cfg))
    else:
        full = load_frames(source)
    test = load_frames(cfg.get("test_dataset")) if "test_dataset" in cfg else None
    fraction = cfg.get("test_fraction", float, 0.0 if test is not None else 0.25)
    if not 0 <= fraction < 1:
        raise ConfigurationError("test_fraction must lie in [0, 1)", key="test_fraction")
    if test is None and fraction > 0:
        return train_test_split(full, fraction, seed=cfg.get("data_seed", int, 0))
    return full, test


def input_shape_from(cfg, dataset=None):
    if "input_shape" in cfg:
        text = cfg.get("input_shape")
        try:
            return tuple(int(n) for n in text.replace("x", ",").split(",") if n.strip())
        except ValueError:
            raise ConfigurationError(f"input_shape: cannot read {text!r}", key="input_shape") from None
    if dataset is not None:
        return tuple(dataset.frame_shape)
    raise ConfigurationError("missing required config key 'input_shape'", key="input_shape")


def train_config_from(cfg, dataset_T):
    mapping = {f.name: cfg.raw[f.name] for f in fields(TrainConfig) if f.name in cfg}
    mapping.setdefault("T", str(dataset_T))
    tc = TrainConfig.from_mapping(mapping)
    if tc.T != dataset_T:
        raise ConfigurationError(f"T = {tc.T} but the dataset has {dataset_T} time-steps", key="T")
    return tc


def spec_from(cfg, input_shape, T):
    return parse_arch(
        cfg.require("arch"), input_shape, T=T, neuron=neuron_from(cfg), g=cfg.get("g", str, "ADD")
    )


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _finite(x):
    return x if math.isfinite(x) else None


# --- verbs -----------------------------------------------------------------


def run_train(args):
    cfg = load_config(args)
    train_set, test_set = datasets_from(cfg)
    tc = train_config_from(cfg, train_set.T)
    spec = spec_from(cfg, input_shape_from(cfg, train_set), tc.T)
    model = build(spec, tc.seed, decode=cfg.get("decode", str, "logits"))
    metrics = os.path.join(args.out, "metrics.csv")
    if os.path.exists(metrics):
        os.remove(metrics)
    summary = {
        "arch": spec.arch,
        "config": asdict(tc),
        "deterministic": args.deterministic,
        "parameters": {"total": model.num_parameters(), "per_layer": model.parameter_counts()},
        "per_block": [b.num_parameters() for b in model.blocks],
    }
    try:
        history = train(model, train_set, tc, test_set, metrics_path=metrics)
    except Exception as exc:
        summary.update(status="diverged", error=str(exc), epochs_completed=len(getattr(exc, "history", [])))
        _write_json(os.path.join(args.out, "summary.json"), summary)
        raise
    final_train, final_loss = (history[-1].train_acc, history[-1].train_loss) if history else (None, None)
    test_acc = evaluate(model, test_set)[0] if test_set is not None and len(test_set) else None
    summary.update(
        status="ok",
        epochs_completed=len(history),
        final_train_loss=final_loss,
        final_train_acc=final_train,
        final_test_acc=test_acc,
    )
    _write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"train: {len(history)} epochs, train acc {final_train}, test acc {test_acc}; wrote {args.out}")
    return EXIT_OK


def run_gradtrace(args):
    cfg = load_config(args)
    neuron = neuron_from(cfg)
    kind = cfg.get("block", str, "SEW")
    if kind not in ("SEW", "Basic", "Plain"):
        raise ConfigurationError(f"block must be SEW, Basic or Plain, got {kind!r}", key="block")
    depth = cfg.get("depth", int, 32)
    width = cfg.get("width", int, 16)
    batch = cfg.get("batch", int, 8)
    T = cfg.get("T", int, 4)
    rate = cfg.get("input_rate", float, 0.5)
    seed = cfg.get("seed", int, 0)
    loss = cfg.get("loss", str, "isolated")
    identity = cfg.get("zero_init", bool, True)
    for key, value, ok in (
        ("depth", depth, depth >= 1),
        ("width", width, width >= 1),
        ("batch", batch, batch >= 1),
        ("T", T, T >= 1),
        ("input_rate", rate, 0 <= rate <= 1),
        ("loss", loss, loss in ("isolated", "sum")),
    ):
        if not ok:
            raise ConfigurationError(f"invalid {key}: {value!r}", key=key)
    g = cfg.get("g", str, "ADD") if kind == "SEW" else None
    model = make_chain(
        kind, depth, width, g, neuron, T, seed, identity, cfg.get("downsample_every", int, 0)
    )
    x = (np.random.default_rng(seed).random((T, batch, width)) < rate).astype(np.float64)
    trace = trace_gradients(model, x, isolate_time=loss == "isolated")
    trace.to_csv(os.path.join(args.out, "grad.csv"))
    rows = []
    phi = firing_rate(x)
    regime = "constant" if kind == "SEW" else grad_norm_regime(neuron.surrogate, neuron.v_threshold)
    for i, emp in zip(trace.block_index, trace.grad_norm):
        k = depth - i
        if kind == "SEW":
            pred = math.sqrt(x.size)
        else:
            pred = oracle_grad_norm(phi, k, neuron.surrogate, neuron.v_threshold, batch * width, T).value
        rows.append(
            {"block_index": i, "k": k, "empirical": emp, "oracle": pred, "rel_error": abs(emp - pred) / pred if pred else None}
        )
    report = {
        "block": kind,
        "g": g,
        "depth": depth,
        "zero_init": identity,
        "loss": loss,
        "input_firing_rate": phi,
        "surrogate": asdict(neuron.surrogate),
        "v_threshold": neuron.v_threshold,
        "oracle_regime": regime,
        "trend": trace.trend(),
        "spread": _finite(trace.spread()),
        "max_rel_error": max(r["rel_error"] or 0.0 for r in rows),
        "blocks": rows,
    }
    _write_json(os.path.join(args.out, "report.json"), report)
    print(f"gradtrace: {kind} depth {depth}: trend {report['trend']}, max oracle rel error {report['max_rel_error']:.3g}")
    return EXIT_OK


def run_firetrace(args):
    cfg = load_config(args)
    train_set, test_set = datasets_from(cfg)
    T = cfg.get("T", int, train_set.T)
    spec = spec_from(cfg, input_shape_from(cfg, train_set), T)
    seed = cfg.get("seed", int, 0)
    model = build(spec, seed)
    if cfg.get("epochs", int, 0) > 0:
        train(model, train_set, train_config_from(cfg, train_set.T), test_set)
    elif cfg.get("zero_init", bool, False):
        zero_init(model)
    source = test_set if test_set is not None and len(test_set) else train_set
    batch = min(cfg.get("batch", int, 32), len(source))
    if batch == 0:
        raise ConfigurationError("dataset has no samples to trace", key="dataset")
    x = np.ascontiguousarray(np.swapaxes(source.x[:batch].astype(np.float64), 0, 1))
    model.eval()
    trace = trace_firing_rates(model, x)
    trace.to_csv(os.path.join(args.out, "firing.csv"))
    _write_json(
        os.path.join(args.out, "report.json"),
        {"arch": spec.arch, "samples": batch, "blocks": [dict(zip(trace.HEADER, r)) for r in trace.rows()]},
    )
    print(f"firetrace: {len(trace.block_index)} blocks traced on {batch} samples")
    return EXIT_OK


def run_gen_data(args):
    cfg = load_config(args)
    spec = synthetic_from(cfg)
    data = generate_synthetic(spec)
    fraction = cfg.get("test_fraction", float, 0.0)
    if not 0 <= fraction < 1:
        raise ConfigurationError("test_fraction must lie in [0, 1)", key="test_fraction")
    written = []
    if fraction > 0:
        tr, te = train_test_split(data, fraction, seed=spec.seed)
        for name, part in (("train.sewf", tr), ("test.sewf", te)):
            save_frames(part, os.path.join(args.out, name))
            written.append(name)
    else:
        save_frames(data, os.path.join(args.out, "data.sewf"))
        written.append("data.sewf")
    print(f"gen-data: {spec.kind}, {len(data)} samples -> {', '.join(written)}")
    return EXIT_OK


def run_arch_check(args):
    cfg = load_config(args)
    if args.input_shape:
        cfg.raw["input_shape"] = args.input_shape
    spec = spec_from(cfg, input_shape_from(cfg), cfg.get("T", int, 4))
    model = build(spec, cfg.get("seed", int, 0))
    report = {
        "arch": spec.arch,
        "input_shape": list(spec.input_shape),
        "output_shape": list(output_shape(spec)),
        "blocks": len(spec.blocks),
        "parameters": model.num_parameters(),
        "per_layer": model.parameter_counts(),
    }
    if args.out:
        _write_json(os.path.join(args.out, "arch.json"), report)
    print(json.dumps(report, indent=2))
    return EXIT_OK


# --- oracle check ----------------------------------------------------------

ORACLE_TOL = {"spiking_product": 1e-10, "sew_product": 1e-10, "grad_norm": 1e-9}


def _rel(emp, pred):
    emp, pred = np.asarray(emp, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    err = np.abs(emp - pred)
    return np.where(pred != 0, err / np.where(pred != 0, np.abs(pred), 1.0), err)


def _random_neuron(rng):
    kind = rng.choice(["ArcTan", "Rectangular", "Constant1"])
    surrogate = SurrogateSpec(str(kind), alpha=float(rng.uniform(1.0, 3.0)), a=float(rng.uniform(0.5, 2.0)))
    return NeuronSpec("IF", v_threshold=float(rng.uniform(0.3, 1.0)), surrogate=surrogate)


def _perturb(model, delta):
    """Shift every block output threshold after identity configuration."""
    for block in model.blocks:
        spec = block.out_neuron.spec
        block.out_neuron.spec = replace(spec, v_threshold=spec.v_threshold + delta)


def oracle_instance(suite, rng, force_failure=False):
    """One random identity chain checked against its oracle; returns (max_rel_error, description)."""
    neuron = _random_neuron(rng)
    T, B, width = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 7))
    rate = float(rng.uniform(0.1, 0.9))
    x = (rng.random((T, B, width)) < rate).astype(np.float64)
    if suite == "sew_product":
        g = str(rng.choice(["ADD", "AND", "IAND"]))
        k = int(rng.integers(1, 17))
        model = make_chain("SEW", k, width, g, neuron, T, int(rng.integers(2**31)))
        desc = {"g": g, "k": k}
    else:
        k = int(rng.integers(1, 9))
        model = make_chain("Basic", k, width, None, neuron, T, int(rng.integers(2**31)))
        desc = {"k": k}
    desc.update(T=T, B=B, width=width, v_threshold=neuron.v_threshold, surrogate=asdict(neuron.surrogate))
    if force_failure:
        _perturb(model, 0.75)
    grads = block_input_grads(model, x, isolate_time=True)
    s = np.stack([rec.s_in.data for rec in model.records])
    worst = 0.0
    for l, g_l in enumerate(grads):
        if suite == "sew_product":
            err = _rel(g_l, np.ones_like(g_l)).max()
        elif suite == "spiking_product":
            pred = oracle_grad_product_spiking(neuron.surrogate, neuron.v_threshold, s[l:])
            err = _rel(g_l, pred).max()
        else:
            phi = firing_rate(s[l])
            pred = oracle_grad_norm(phi, k - l, neuron.surrogate, neuron.v_threshold, B * width, T).value
            err = float(_rel(np.linalg.norm(g_l), pred))
        worst = max(worst, float(err))
    return worst, desc


def run_oracle_check(args):
    cfg = load_config(args)
    rng = np.random.default_rng(cfg.get("seed", int, 0))
    n = args.instances
    if n < 1:
        raise ConfigurationError("--instances must be >= 1", key="instances")
    report = {"instances_per_suite": n, "force_failure": args.force_failure, "suites": {}}
    failed = False
    for suite, tol in ORACLE_TOL.items():
        errors, failures = [], []
        for i in range(n):
            err, desc = oracle_instance(suite, rng, args.force_failure)
            errors.append(err)
            if not err <= tol:
                failures.append({"instance": i, "rel_error": err, **desc})
        passed = not failures
        failed |= not passed
        report["suites"][suite] = {
            "tolerance": tol,
            "max_rel_error": max(errors),
            "passed": passed,
            "failures": failures[:20],
            "failure_count": len(failures),
        }
        print(f"oracle-check {suite}: max rel error {max(errors):.3g} (tol {tol:g}) {'PASS' if passed else 'FAIL'}")
    if args.out:
        _write_json(os.path.join(args.out, "oracle_report.json"), report)
    if failed:
        raise OracleBreach("oracle tolerance exceeded")
    return EXIT_OK


# --- entry point -----------------------------------------------------------

VERBS = {
    "train": run_train,
    "gradtrace": run_gradtrace,
    "firetrace": run_firetrace,
    "oracle-check": run_oracle_check,
    "gen-data": run_gen_data,
    "arch-check": run_arch_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="sewsnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--arch", help="architecture string (overrides the config's arch)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--out", default=None if verb in ("arch-check", "oracle-check") else ".", help="output directory")
        p.add_argument(
            "--deterministic", action="store_true", help="require bit-reproducible execution (always the case here)"
        )
        p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
        if verb == "oracle-check":
            p.add_argument("--instances", type=int, default=100, help="random instances per oracle suite")
            p.add_argument("--force-failure", action="store_true", help="perturb V_th after identity setup")
        if verb == "arch-check":
            p.add_argument("--input-shape", help="per-sample input shape, e.g. 2,128,128")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.out:
            os.makedirs(args.out, exist_ok=True)
        return VERBS[args.verb](args)
    except (ConfigurationError, ArchParseError, ParameterError) as exc:
        sys.stdout.flush()
        key = getattr(exc, "key", "arch" if isinstance(exc, ArchParseError) else None)
        print(f"configuration error{f' [{key}]' if key else ''}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetError) as exc:
        sys.stdout.flush()
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, ArithmeticError, OracleBreach) as exc:
        sys.stdout.flush()
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
