"""Acceptance suite.  Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py`` (about ten minutes, most
of it in criteria 8 and 10).
"""

import math

import numpy as np
import pytest
from scipy import stats

import sewsnn.autodiff as ad
from oracles import (
    arctan_prime,
    central_difference,
    ordered_subsets,
    relative_error,
    spiking_chain_norm,
    spiking_chain_product,
)
from sewsnn.analysis import block_input_grads, firing_rate, make_chain, trace_gradients
from sewsnn.blocks import BlockSpec, configure_identity, make_block
from sewsnn.data import SyntheticSpec, generate_synthetic
from sewsnn.experiments import (
    ABLATION,
    DEGRADATION,
    ablation_verdict,
    degradation_verdict,
    run_ablation,
    run_degradation,
)
from sewsnn.neuron import NeuronSpec, SurrogateSpec, fire, step_sequence
from sewsnn.train import TrainConfig, evaluate, random_temporal_delete, train

SURROGATES = [
    SurrogateSpec("ArcTan", alpha=2.0),
    SurrogateSpec("ArcTan", alpha=3.0),
    SurrogateSpec("Rectangular", a=1.0),
    SurrogateSpec("Constant1"),
]
SURROGATE_IDS = ["arctan2", "arctan3", "rect1", "const1"]


# --- 1: finite differences -------------------------------------------------


def _op_cases():
    """name -> (make inputs from rng, forward on tensors)."""
    lbl = np.array([0, 2, 1])

    def bn(x, g, b):
        return ad.batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True)

    return {
        "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: a + b),
        "sub": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))], lambda a, b: a - b),
        "mul": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))], lambda a, b: a * b),
        "div": (lambda r: [r.normal(size=(2, 3)), r.uniform(0.5, 2, size=(2, 3))], lambda a, b: a / b),
        "neg": (lambda r: [r.normal(size=(5,))], lambda a: -a),
        "exp": (lambda r: [r.normal(size=(2, 3))], ad.exp),
        "sigmoid": (lambda r: [r.normal(size=(2, 3)) * 3], ad.sigmoid),
        "matmul": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))], ad.matmul),
        "sum": (lambda r: [r.normal(size=(2, 3, 2))], lambda a: ad.sum(a, axis=1)),
        "mean": (lambda r: [r.normal(size=(2, 3, 2))], lambda a: ad.mean(a, axis=(0, 2))),
        "reshape": (lambda r: [r.normal(size=(2, 6))], lambda a: ad.reshape(a, (3, 4))),
        "transpose": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: ad.transpose(a, (2, 0, 1))),
        "getitem": (lambda r: [r.normal(size=(4, 3))], lambda a: a[np.array([0, 2, 2])]),
        "stack": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))], lambda a, b: ad.stack([a, b], 1)),
        "conv2d": (
            lambda r: [r.normal(size=(2, 2, 5, 5)), r.normal(size=(3, 2, 3, 3)), r.normal(size=(3,))],
            lambda x, w, b: ad.conv2d(x, w, b, stride=2, padding=1),
        ),
        "batch_norm": (lambda r: [r.normal(size=(4, 3, 2, 2)), r.normal(size=(3,)), r.normal(size=(3,))], bn),
        "max_pool2d": (lambda r: [r.normal(size=(1, 2, 4, 4))], lambda x: ad.max_pool2d(x, 2, 2)),
        "avg_pool2d": (lambda r: [r.normal(size=(1, 2, 4, 4))], lambda x: ad.avg_pool2d(x, 2, 2)),
        "cross_entropy": (lambda r: [r.normal(size=(3, 4)) * 2], lambda z: ad.cross_entropy(z, lbl)),
    }


OP_CASES = _op_cases()


def _fd_check(make, fn, rng, trials):
    """Worst norm-wise relative error between AD and central differences."""
    worst = 0.0
    for _ in range(trials):
        arrays = make(rng)
        probe = fn(*[ad.Tensor(a) for a in arrays]).data
        weights = rng.normal(size=np.shape(probe))

        def loss(*vals):
            return float(np.sum(fn(*[ad.Tensor(v) for v in vals]).data * weights))

        tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
        out = fn(*tensors)
        ad.sum(out * weights).backward()
        for i, a in enumerate(arrays):
            def partial(v, i=i):
                vals = list(arrays)
                vals[i] = v
                return loss(*vals)

            fd = central_difference(partial, a)
            worst = max(worst, relative_error(tensors[i].grad, fd))
    return worst


@pytest.mark.criterion(1, "surrogate AD matches finite differences (1e-4 relative)")
@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_c1_ops_match_finite_differences(name, record_property):
    make, fn = OP_CASES[name]
    err = _fd_check(make, fn, np.random.default_rng(sorted(OP_CASES).index(name)), 100)
    record_property("detail", f"{name}: max rel err {err:.2e} over 100 tensors")
    assert err < 1e-4


@pytest.mark.criterion(1, "surrogate AD matches finite differences (1e-4 relative)")
@pytest.mark.parametrize("surrogate", SURROGATES, ids=SURROGATE_IDS)
@pytest.mark.parametrize("kind", ["spike", "IF", "LIF", "PLIF"])
def test_c1_spiking_ops_match_finite_differences(kind, surrogate, record_property):
    """Smooth mode puts the surrogate primitive in the forward pass, so the
    surrogate derivative becomes the true derivative and FD applies."""
    rng = np.random.default_rng([["spike", "IF", "LIF", "PLIF"].index(kind), SURROGATES.index(surrogate)])
    if kind == "spike":
        make = lambda r: [r.normal(size=(3, 4))]
        fn = lambda h: fire(h, 0.7, surrogate, smooth=True)
    else:
        spec = NeuronSpec(kind, v_threshold=1.0, tau=2.0, detach_reset=False, surrogate=surrogate)
        if kind == "PLIF":
            make = lambda r: [r.normal(0.6, 0.8, size=(4, 2, 3)), np.array(r.normal(0, 0.5))]
            fn = lambda x, w: step_sequence(spec, x, ad.div(1.0, ad.sigmoid(ad.neg(w))), smooth=True)
        else:
            make = lambda r: [r.normal(0.6, 0.8, size=(4, 2, 3))]
            fn = lambda x: step_sequence(spec, x, smooth=True)
    err = _fd_check(make, fn, rng, 100)
    label = SURROGATE_IDS[SURROGATES.index(surrogate)]
    record_property("detail", f"{kind}/{label}: max rel err {err:.2e} over 100 tensors")
    assert err < 1e-4


# --- 2 & 3: chain products -------------------------------------------------


def _binary(rng, shape, rate=0.5):
    return (rng.random(shape) < rate).astype(np.float64)


@pytest.mark.criterion(2, "spiking-basic chain gradient equals prod sigma'(s - V_th) (1e-10)")
@pytest.mark.parametrize("k", [4, 8, 16, 32])
def test_c2_spiking_chain_product(k, record_property):
    neuron = NeuronSpec("IF", v_threshold=1.0, surrogate=SurrogateSpec("ArcTan", alpha=2.0))
    rng = np.random.default_rng(k)
    x = _binary(rng, (4, 3, 8))
    model = make_chain("Basic", k, 8, neuron=neuron, seed=k)
    grads = block_input_grads(model, x, isolate_time=True)
    worst = 0.0
    for l, g in enumerate(grads):
        expected = spiking_chain_product(x, 1.0, 2.0, k - l)
        worst = max(worst, float(np.max(np.abs(g - expected) / expected)))
    silent = x == 0
    zero_path = grads[0][silent]
    assert np.allclose(zero_path, (1 / (1 + math.pi**2)) ** k, rtol=1e-10, atol=0)
    assert abs(arctan_prime(-1.0, 2.0) - 0.092) < 5e-4
    record_property("detail", f"k={k}: max rel err {worst:.1e}, silent-path grad {zero_path[0]:.3e} ~ 0.092^{k}")
    assert worst < 1e-10


@pytest.mark.criterion(2, "spiking-basic chain gradient equals prod sigma'(s - V_th) (1e-10)")
def test_c2_silent_path_k3_spot_value(record_property):
    neuron = NeuronSpec("IF", v_threshold=1.0)
    model = make_chain("Basic", 3, 4, neuron=neuron)
    x = np.zeros((2, 1, 4))
    g = block_input_grads(model, x, isolate_time=True)[0]
    record_property("detail", f"k=3 all-silent gradient {g.flat[0]:.4e}")
    assert np.allclose(g, 7.79e-4, rtol=1e-3)


@pytest.mark.criterion(3, "SEW chain gradient is exactly 1 for every g (1e-10)")
@pytest.mark.parametrize("g", ["ADD", "AND", "IAND"])
@pytest.mark.parametrize("k", [1, 8, 32, 64])
def test_c3_sew_chain_product(g, k, record_property):
    rng = np.random.default_rng(k)
    x = _binary(rng, (3, 2, 6))
    model = make_chain("SEW", k, 6, g=g, seed=k)
    grads = block_input_grads(model, x, isolate_time=True)
    worst = max(float(np.max(np.abs(gr - 1.0))) for gr in grads)
    record_property("detail", f"{g} k={k}: max |grad - 1| = {worst:.1e}")
    assert worst < 1e-10


# --- 4: norm formula -------------------------------------------------------


@pytest.mark.criterion(4, "isolated gradient norm matches the NT-phi formula (5%)")
@pytest.mark.parametrize("v_th, alpha", [(1.0, 2.0), (0.5, 2.0), (1.0, 3.0), (0.8, 1.5)])
@pytest.mark.parametrize("rate", [0.1, 0.5, 0.9])
def test_c4_norm_formula(v_th, alpha, rate, record_property):
    neuron = NeuronSpec("IF", v_threshold=v_th, surrogate=SurrogateSpec("ArcTan", alpha=alpha))
    rng = np.random.default_rng(int(rate * 10))
    T, B, W, depth = 4, 4, 8, 16
    x = _binary(rng, (T, B, W), rate)
    model = make_chain("Basic", depth, W, neuron=neuron, seed=1)
    trace = trace_gradients(model, x, isolate_time=True)
    phi = firing_rate(x)
    worst = 0.0
    for l, emp in zip(trace.block_index, trace.grad_norm):
        pred = spiking_chain_norm(phi, depth - l, v_th, alpha, B * W, T)
        worst = max(worst, abs(emp - pred) / pred)
    record_property("detail", f"V_th={v_th} alpha={alpha} phi={phi:.2f}: max rel err {worst:.1e}")
    assert worst < 0.05


# --- 5: regimes at k = 32 --------------------------------------------------

REGIMES = {"a": (1.0, 2.0), "b": (0.5, 2.0), "c": (1.0, 3.0)}
REGIME_SEEDS = (0, 1, 2)


def _regime_trace(kind, v_th, alpha, seed, g=None, zero=False):
    neuron = NeuronSpec("IF", v_threshold=v_th, surrogate=SurrogateSpec("ArcTan", alpha=alpha))
    x = _binary(np.random.default_rng(100 + seed), (4, 32, 16))
    model = make_chain(kind, 32, 16, g=g, neuron=neuron, seed=seed, identity=zero)
    return trace_gradients(model, x)


def _decay(trace):
    """deep / shallow gradient ratio (> 1 means decay toward shallow blocks)."""
    return trace.grad_norm[-1] / trace.grad_norm[0]


@pytest.mark.criterion(5, "gradient regimes at k=32: decay / stronger decay / growth / flat SEW")
def test_c5a_spiking_basic_decays(record_property):
    traces = [_regime_trace("Basic", *REGIMES["a"], s) for s in REGIME_SEEDS]
    flags = [t.trend() for t in traces]
    record_property("detail", f"(a) alpha=2 V_th=1: trends {flags}, deep/shallow {[f'{_decay(t):.3g}' for t in traces]}")
    assert all(f == "vanishing" for f in flags)


@pytest.mark.criterion(5, "gradient regimes at k=32: decay / stronger decay / growth / flat SEW")
def test_c5b_lower_threshold_decays_more(record_property):
    a = [_regime_trace("Basic", *REGIMES["a"], s) for s in REGIME_SEEDS]
    b = [_regime_trace("Basic", *REGIMES["b"], s) for s in REGIME_SEEDS]
    flags = [t.trend() for t in b]
    record_property("detail", f"(b) alpha=2 V_th=0.5: trends {flags}, deep/shallow {[f'{_decay(t):.3g}' for t in b]}")
    assert all(f == "vanishing" for f in flags)
    assert all(_decay(tb) > _decay(ta) for ta, tb in zip(a, b))


@pytest.mark.criterion(5, "gradient regimes at k=32: decay / stronger decay / growth / flat SEW")
def test_c5c_steep_surrogate_grows(record_property):
    traces = [_regime_trace("Basic", *REGIMES["c"], s) for s in REGIME_SEEDS]
    flags = [t.trend() for t in traces]
    record_property("detail", f"(c) alpha=3 V_th=1: trends {flags}, deep/shallow {[f'{_decay(t):.3g}' for t in traces]}")
    assert all(f == "exploding" for f in flags)


@pytest.mark.criterion(5, "gradient regimes at k=32: decay / stronger decay / growth / flat SEW")
@pytest.mark.parametrize("g", ["ADD", "IAND"])
@pytest.mark.parametrize("regime", sorted(REGIMES))
def test_c5d_zero_init_sew_is_flat(g, regime, record_property):
    spreads = [_regime_trace("SEW", *REGIMES[regime], s, g=g, zero=True).spread() for s in REGIME_SEEDS]
    record_property("detail", f"(d) SEW-{g} zero-init under ({regime}): spread {max(spreads):.3g}")
    assert max(spreads) < 4


# --- 6: identity -----------------------------------------------------------


def _identity_cases():
    yield "Basic", None, False
    yield "Basic", None, True
    for g in ("ADD", "IAND", "AND"):
        yield "SEW", g, False
        yield "SEW", g, True


@pytest.mark.criterion(6, "zero_init blocks are bit-exact identities; LIF spiking-basic is not")
@pytest.mark.parametrize("kind, g, linear", list(_identity_cases()))
def test_c6_zero_init_identity(kind, g, linear, record_property):
    rng = np.random.default_rng(6)
    spec = BlockSpec(kind, 4, 4, g, linear=linear)
    block = make_block(spec, NeuronSpec("IF"), rng)
    configure_identity(block)
    if linear:
        s = _binary(rng, (8, 250, 4))
    else:
        s = _binary(rng, (8, 10, 4, 5, 5))
    trains = s[0].size
    with ad.no_grad():
        out = block(s).data
    record_property("detail", f"{kind} {g or ''} {'linear' if linear else 'conv'}: {trains} trains identical")
    assert trains >= 1000
    assert np.array_equal(out, s)


@pytest.mark.criterion(6, "zero_init blocks are bit-exact identities; LIF spiking-basic is not")
def test_c6_lif_spiking_basic_is_not_identity(record_property):
    block = make_block(BlockSpec("Basic", 4, 4, linear=True), NeuronSpec("LIF", tau=2.0))
    configure_identity(block)
    s = np.zeros((6, 1, 4))
    s[2] = 1.0
    with ad.no_grad():
        out = block(s).data
    record_property("detail", f"LIF isolated spike in -> {int(out.sum())} spikes out")
    assert not np.array_equal(out, s)


# --- 7: boundedness --------------------------------------------------------

from hypothesis import given, settings  # noqa: E402
from hypothesis import strategies as st  # noqa: E402


@pytest.mark.criterion(7, "SEW-ADD outputs <= k+1, downsample <= 2, AND/IAND binary and <= S")
@settings(max_examples=25)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(1, 6), rate=st.floats(0.05, 0.95))
def test_c7_add_chain_bounded(seed, k, rate):
    x = _binary(np.random.default_rng(seed), (3, 4, 6), rate)
    model = make_chain("SEW", k, 6, g="ADD", seed=seed, identity=False)
    with ad.no_grad():
        out = model(x).data
    assert out.max() <= k + 1
    assert out.min() >= 0


@pytest.mark.criterion(7, "SEW-ADD outputs <= k+1, downsample <= 2, AND/IAND binary and <= S")
@settings(max_examples=25)
@given(seed=st.integers(0, 2**31 - 1), counts=st.integers(1, 5))
def test_c7_downsample_add_at_most_two(seed, counts):
    rng = np.random.default_rng(seed)
    block = make_block(BlockSpec("SEW", 3, 5, "ADD", stride=2, downsample=True), NeuronSpec("IF"), rng)
    s = rng.integers(0, counts + 1, size=(3, 2, 3, 6, 6)).astype(np.float64)
    with ad.no_grad():
        out = block(s).data
    assert out.max() <= 2


@pytest.mark.criterion(7, "SEW-ADD outputs <= k+1, downsample <= 2, AND/IAND binary and <= S")
@settings(max_examples=25)
@given(seed=st.integers(0, 2**31 - 1), g=st.sampled_from(["AND", "IAND"]), rate=st.floats(0.05, 0.95))
def test_c7_and_iand_silence_inequality(seed, g, rate):
    rng = np.random.default_rng(seed)
    block = make_block(BlockSpec("SEW", 6, 6, g, linear=True), NeuronSpec("IF"), rng)
    s = _binary(rng, (4, 5, 6), rate)
    with ad.no_grad():
        out = block(s).data
    assert np.all((out == 0) | (out == 1))
    assert np.all(out <= s)


# --- 8: degradation --------------------------------------------------------


@pytest.mark.criterion(8, "desk-scale degradation: deeper SEW-ADD no worse, deeper spiking-basic worse")
def test_c8_degradation(record_property):
    losses = run_degradation(DEGRADATION)
    sew_ok, worse = degradation_verdict(losses, DEGRADATION)
    shallow, deep = DEGRADATION.depths
    for kind in ("SEW", "Basic"):
        pairs = [f"{losses[(kind, shallow, s)]:.3f}->{losses[(kind, deep, s)]:.3f}" for s in DEGRADATION.seeds]
        record_property("detail", f"{kind} depth {shallow}->{deep} final train loss: {', '.join(pairs)}")
    assert sew_ok
    assert worse >= 2


# --- 9: random temporal delete ---------------------------------------------


@pytest.mark.criterion(9, "random temporal delete: uniform subsequences, identity at T, full T at eval")
def test_c9_uniform_subsequences(record_property):
    rng = np.random.default_rng(9)
    frames = np.arange(4)
    subsets = ordered_subsets(4, 2)
    counts = dict.fromkeys(subsets, 0)
    for _ in range(10_000):
        counts[tuple(int(v) for v in random_temporal_delete(frames, 2, rng))] += 1
    result = stats.chisquare(list(counts.values()))
    record_property("detail", f"chi-square over 6 subsequences: p = {result.pvalue:.3f}")
    assert set(counts) == set(subsets)
    assert result.pvalue > 0.01


@pytest.mark.criterion(9, "random temporal delete: uniform subsequences, identity at T, full T at eval")
def test_c9_full_length_is_identity():
    x = np.random.default_rng(0).random((4, 2, 3))
    assert np.array_equal(random_temporal_delete(x, 4, np.random.default_rng(1)), x)


class _ShapeSpy:
    """Wraps a model and records the time length of every forward call."""

    def __init__(self, model):
        self.model, self.lengths = model, []

    def __getattr__(self, name):
        return getattr(self.model, name)

    def __call__(self, x):
        self.lengths.append((np.shape(x)[0], self.model.training))
        return self.model(x)


@pytest.mark.criterion(9, "random temporal delete: uniform subsequences, identity at T, full T at eval")
def test_c9_evaluation_uses_full_sequence(record_property):
    from sewsnn.network import build, parse_arch

    data = generate_synthetic(SyntheticSpec("moving-bar", samples=24, T=4, size=4))
    spy = _ShapeSpy(build(parse_arch("FC8-BN-IF-FC4", (2, 4, 4), T=4)))
    train(spy, data, TrainConfig(lr=0.01, epochs=1, batch_size=8, T=4, T_train=2), test_set=data)
    evaluate(spy, data)
    train_lengths = {n for n, training in spy.lengths if training}
    eval_lengths = {n for n, training in spy.lengths if not training}
    record_property("detail", f"train frames {sorted(train_lengths)}, eval frames {sorted(eval_lengths)}")
    assert train_lengths == {2}
    assert eval_lengths == {4}


# --- 10: element-wise ablation ---------------------------------------------


@pytest.mark.criterion(10, "element-wise ablation: test accuracy ADD >= IAND > AND")
def test_c10_elementwise_ablation(record_property):
    accs = run_ablation(ABLATION)
    ok, mean = ablation_verdict(accs)
    for g in ("ADD", "IAND", "AND"):
        record_property("detail", f"SEW-{g}: test acc {[round(a, 3) for a in accs[g]]}, mean {mean[g]:.3f}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
