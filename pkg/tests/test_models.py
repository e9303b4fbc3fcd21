import numpy as np
import pytest

from ettk import tensor as T
from ettk.checkpoint import (
    Checkpoint,
    decode_tensors,
    encode_tensors,
    load_checkpoint,
    load_frozen_asr,
    read_checkpoint,
    read_tensor_file,
    save_checkpoint,
    write_tensor_file,
)
from ettk.errors import CheckpointError, ContractError, DimensionError, SpecMismatchError
from ettk.layers import SequenceBatch
from ettk.models import (
    AsrNetSpec,
    ConvSpec,
    Inputs,
    SerBaselineSpec,
    TransferSpec,
    build_asr,
    build_baseline,
    build_transfer,
    count_trainable,
    expected_trainable_params,
)
from ettk.objectives import cross_entropy
from ettk.optim import AdamState, adam_step

TINY = AsrNetSpec(conv=(ConvSpec(2, (3, 5), (2, 2), (1, 2)), ConvSpec(2, (3, 5), (1, 2), (1, 2))), hidden=4)


def batch(rng, lengths, width):
    return SequenceBatch.from_arrays([rng.normal(size=(n, width)).astype(np.float32) for n in lengths])


@pytest.fixture
def asr():
    return build_asr(TINY, np.random.default_rng(0))


@pytest.fixture
def inputs():
    rng = np.random.default_rng(1)
    lengths = [12, 9, 15]
    return Inputs(ser=batch(rng, lengths, 27), asr=batch(rng, lengths, 161))


def test_asr_topology(asr):
    names = [n for n, _ in asr.named_parameters()]
    assert sum(n.startswith("conv") for n in names) == 4
    assert sum(n.endswith(".W") for n in names) == 10
    assert names[-2:] == ["output.weight", "output.bias"]
    assert count_trainable(asr) == expected_trainable_params(TINY)


def test_asr_forward_shapes_and_distribution(asr, inputs):
    lp, taps = asr.forward_with_taps(inputs.asr)
    T_out = TINY.frontend_size(15)[0]
    assert lp.features.shape == (3, T_out, TINY.vocab_size)
    np.testing.assert_array_equal(lp.lengths, [TINY.frontend_size(n)[0] for n in (12, 9, 15)])
    sums = np.exp(lp.features.data).sum(axis=-1)
    assert np.abs(sums - 1).max() < 1e-5
    assert len(taps) == 5 and all(t.width == TINY.tap_width for t in taps)


def test_asr_wrong_width(asr):
    with pytest.raises(DimensionError):
        asr(batch(np.random.default_rng(0), [10], 80))


def test_tap_prefix_and_purity(asr, inputs):
    first = asr.taps(inputs.asr, upto=1)[0].features.data
    full = asr.forward_with_taps(inputs.asr)[1][0].features.data
    assert np.array_equal(first, full)
    again = asr.forward_with_taps(inputs.asr)[0].features.data
    assert np.array_equal(asr(inputs.asr).features.data, again)


def test_baseline_shapes_and_count(inputs):
    spec = SerBaselineSpec(hidden=96)
    net = build_baseline(spec, np.random.default_rng(0))
    assert net.pooled(inputs).shape == (3, 192)
    probs = T.softmax(net.forward(inputs)).data
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)
    assert probs.shape == (3, 4)
    assert count_trainable(net) == expected_trainable_params(spec)
    with pytest.raises(ContractError):
        SerBaselineSpec(hidden=50)


@pytest.mark.parametrize("variant", ["ft_mp", "ft_rnn", "progressive"])
def test_transfer_counts_and_eval_determinism(variant, asr, inputs):
    spec = TransferSpec(variant, 2, TINY, hidden=64)
    net = build_transfer(spec, asr, np.random.default_rng(0))
    assert count_trainable(net) == expected_trainable_params(spec)
    assert all(not p.requires_grad for p in net.asr.parameters())
    a, b = net.forward(inputs).data, net.forward(inputs).data
    assert np.array_equal(a, b)


def test_ft_mp_classifier_only(asr):
    net = build_transfer(TransferSpec("ft_mp", 1, TINY), asr)
    assert count_trainable(net) == TINY.tap_width * 4 + 4


def test_ft_rnn_wiring(asr):
    net = build_transfer(TransferSpec("ft_rnn", 3, TINY), asr)
    assert net.rnn.input_size == TINY.tap_width


def test_progressive_width_and_zero_tap(asr, inputs):
    spec = TransferSpec("progressive", 2, TINY, hidden=64)
    net = build_transfer(spec, asr, np.random.default_rng(0))
    assert net.classifier.input_size == 2 * 64 + TINY.tap_width
    pooled = net.pooled(inputs).data.copy()
    pooled[:, 128:] = 0
    W, b = net.classifier.weight.data, net.classifier.bias.data
    ser_only = pooled[:, :128] @ W[:, :128].T + b
    np.testing.assert_allclose(pooled @ W.T + b, ser_only, atol=1e-6)
    with pytest.raises(ContractError):
        net.forward(Inputs(asr=inputs.asr))


def test_bad_tap_rejected():
    with pytest.raises(ContractError):
        TransferSpec("ft_mp", 6, TINY)
    with pytest.raises(ContractError):
        TransferSpec("ft_mp", 0, TINY)


@pytest.mark.parametrize("variant", ["ft_mp", "ft_rnn", "progressive"])
def test_gradients_reach_only_trainable_branch(variant, asr, inputs):
    net = build_transfer(TransferSpec(variant, 2, TINY, hidden=64), asr, np.random.default_rng(0))
    before = {n: p.data.tobytes() for n, p in net.asr.named_parameters()}
    with T.Tape() as tape:
        loss = cross_entropy(net.forward(inputs, True, np.random.default_rng(0)), [0, 1, 2])
    T.backward(tape, loss)
    assert all(p.grad is None for p in net.asr.parameters())
    for name, p in net.named_parameters():
        if not name.startswith("asr."):
            assert p.grad is not None and np.abs(p.grad).max() > 0, name
    adam_step(AdamState(lr=1e-2), net.trainable_parameters())
    assert before == {n: p.data.tobytes() for n, p in net.asr.named_parameters()}


def test_ft_mp_far_fewer_params_than_baseline():
    base = expected_trainable_params(SerBaselineSpec(hidden=96))
    for asr_spec in (AsrNetSpec(), AsrNetSpec(hidden=48)):
        assert base / expected_trainable_params(TransferSpec("ft_mp", 3, asr_spec)) >= 10


# --- checkpoints -----------------------------------------------------------------


def test_tensor_container_roundtrip(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array(1.5, dtype=np.float32)}
    blob = encode_tensors(tensors, {"kind": "features", "x": 1})
    out, meta = decode_tensors(blob)
    assert meta == {"kind": "features", "x": 1}
    assert all(np.array_equal(out[k], tensors[k]) and out[k].shape == tensors[k].shape for k in tensors)
    write_tensor_file(tmp_path / "f.ettk", tensors)
    assert read_tensor_file(tmp_path / "f.ettk")[0].keys() == tensors.keys()


def test_container_integrity_errors():
    blob = encode_tensors({"a": np.ones(3, dtype=np.float32)}, {})
    with pytest.raises(CheckpointError):
        decode_tensors(b"XXXX" + blob[4:])
    flipped = bytearray(blob)
    flipped[20] ^= 0xFF
    with pytest.raises(CheckpointError):
        decode_tensors(bytes(flipped))
    with pytest.raises(CheckpointError):
        decode_tensors(blob[:10])


def test_checkpoint_save_load_save_identical(tmp_path, asr):
    net = build_transfer(TransferSpec("progressive", 2, TINY, hidden=64), asr, np.random.default_rng(3))
    save_checkpoint(net, tmp_path / "a.ettk", {"seed": 3})
    loaded = load_checkpoint(tmp_path / "a.ettk")
    save_checkpoint(loaded, tmp_path / "b.ettk")
    assert (tmp_path / "a.ettk").read_bytes() == (tmp_path / "b.ettk").read_bytes()
    assert loaded.metadata == {"seed": 3}
    for (n1, p1), (n2, p2) in zip(net.named_parameters(), loaded.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()


def test_checkpoint_spec_mismatch(tmp_path, asr):
    net = build_transfer(TransferSpec("ft_mp", 2, TINY), asr)
    save_checkpoint(net, tmp_path / "mp.ettk")
    with pytest.raises(SpecMismatchError):
        read_checkpoint(tmp_path / "mp.ettk", TransferSpec("progressive", 2, TINY))
    with pytest.raises(SpecMismatchError):
        load_checkpoint(tmp_path / "mp.ettk", "progressive")
    bad = Checkpoint(TransferSpec("progressive", 2, TINY), net.state_dict())
    with pytest.raises(SpecMismatchError):
        bad.build()


def test_load_frozen_asr(tmp_path, asr):
    save_checkpoint(asr, tmp_path / "asr.ettk")
    net = load_frozen_asr(tmp_path / "asr.ettk")
    assert count_trainable(net) == 0
