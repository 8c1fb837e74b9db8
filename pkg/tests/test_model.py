import numpy as np
import pytest
import torch

from irgrid.errors import FormatError, InputError
from irgrid.model import (
    AttentionGate,
    AttUNet,
    AttUNetConfig,
    PreConv,
    load_checkpoint,
    save_checkpoint,
)

SMALL = AttUNetConfig(encoder_filters=(4, 8, 16, 32), bottleneck_filters=64,
                      input_size=32)


def small_model(seed=0):
    torch.manual_seed(seed)
    return AttUNet(SMALL)


def test_default_config_matches_reference_architecture():
    model = AttUNet()
    rows = {r["layer"]: r for r in model.layer_summary()}
    assert rows["PreConv"]["kernel"] == (2, 2)
    assert rows["PreConv"]["filters"] == 12
    for name, filters in (("C1", 32), ("C2", 64), ("C3", 128), ("C4", 256)):
        assert rows[name]["kernel"] == (3, 3)
        assert rows[name]["filters"] == filters
    assert rows["Bottleneck"]["kernel"] == (3, 3)
    assert rows["Bottleneck"]["filters"] == 512
    # depthwise preconv: one 2x2 filter per input channel
    assert model.preconv.conv.weight.shape == (12, 1, 2, 2)
    assert model.preconv.conv.groups == 12


def test_gate_intermediate_width_is_half_the_skip():
    model = AttUNet()
    assert model.gate4.theta_x.weight.shape[0] == 256 // 2
    assert model.gate1.theta_x.weight.shape[0] == 32 // 2
    assert model.gate4.theta_x.bias is None
    assert model.gate4.theta_g.bias is not None


def test_forward_shapes_and_range():
    model = small_model()
    model.eval()
    x = torch.rand(2, 12, 32, 32)
    with torch.no_grad():
        out, attention = model(x)
    assert out.shape == (2, 1, 32, 32)
    assert float(out.min()) >= 0.0  # clamped at zero
    assert set(attention) == {"gate1", "gate2", "gate3", "gate4"}
    assert attention["gate1"].shape == (2, 1, 32, 32)
    assert attention["gate4"].shape == (2, 1, 4, 4)


def test_attention_coefficients_bounded():
    model = small_model()
    model.eval()
    x = torch.rand(1, 12, 32, 32)
    with torch.no_grad():
        _, attention = model(x)
    for name, alpha in attention.items():
        assert float(alpha.min()) >= 0.0, name
        assert float(alpha.max()) <= 1.0, name


def test_gate_additive_equals_concat_form():
    torch.manual_seed(3)
    gate = AttentionGate(8, 16)
    x = torch.randn(2, 8, 16, 16)
    g = torch.randn(2, 16, 8, 8)
    with torch.no_grad():
        a = gate.coefficients(x, g)
        b = gate.coefficients_concat(x, g)
    assert float((a - b).abs().max()) <= 1e-6


def test_gate_zero_psi_passes_half():
    # with psi zeroed the sigmoid is exactly 0.5 everywhere
    gate = AttentionGate(4, 8)
    torch.nn.init.zeros_(gate.psi.weight)
    torch.nn.init.zeros_(gate.psi.bias)
    x = torch.randn(1, 4, 8, 8)
    g = torch.randn(1, 8, 4, 4)
    gated, alpha = gate(x, g)
    assert torch.equal(alpha, torch.full_like(alpha, 0.5))
    assert torch.allclose(gated, x * 0.5)


def test_preconv_preserves_dims_one_sided_pad():
    conv = PreConv(3, 2)
    x = torch.zeros(1, 3, 5, 5)
    x[0, :, 4, 4] = 1.0
    out = conv(x)
    assert out.shape == x.shape
    # bottom-right corner sees the padded zeros, so depends only on the
    # top-left tap of the kernel
    expect = torch.relu(conv.conv.weight[:, 0, 0, 0] + conv.conv.bias)
    assert torch.allclose(out[0, :, 4, 4], expect)


def test_input_validation():
    model = small_model()
    with pytest.raises(InputError):
        model(torch.rand(1, 11, 32, 32))
    with pytest.raises(InputError):
        model(torch.rand(1, 12, 30, 30))
    with pytest.raises(InputError):
        model(torch.rand(12, 32, 32))


def test_nonfinite_input_rejected():
    model = small_model()
    x = torch.rand(1, 12, 32, 32)
    x[0, 0, 0, 0] = float("nan")
    with pytest.raises(InputError) as info:
        model(x)
    assert "non-finite" in str(info.value)


def test_nonfinite_weights_reported_with_stage():
    model = small_model()
    model.eval()
    with torch.no_grad():
        model.bottleneck.conv1.weight[0, 0, 0, 0] = float("inf")
    with pytest.raises(InputError) as info:
        model(torch.rand(1, 12, 32, 32))
    assert "bottleneck" in str(info.value)


def test_config_validation():
    with pytest.raises(InputError):
        AttUNetConfig(encoder_filters=(8, 16, 32))
    with pytest.raises(InputError):
        AttUNetConfig(input_size=100)
    with pytest.raises(InputError):
        AttUNetConfig(input_size=0)


def test_dropout_schedule_grades_with_depth():
    model = small_model()
    model.set_dropout(0.3, 0.5)
    assert model.bottleneck.drop.p == pytest.approx(0.5)
    rates = [model.dec1.drop.p, model.dec2.drop.p,
             model.dec3.drop.p, model.dec4.drop.p]
    assert rates == pytest.approx([0.3, 0.35, 0.4, 0.45])
    model.set_dropout(0.1, 0.1)
    assert model.bottleneck.drop.p == pytest.approx(0.1)
    assert model.dec1.drop.p == pytest.approx(0.1)
    with pytest.raises(InputError):
        model.set_dropout(-0.1, 0.5)
    with pytest.raises(InputError):
        model.set_dropout(0.1, 1.0)


def test_eval_mode_deterministic_train_mode_stochastic():
    model = small_model()
    model.set_dropout(0.4, 0.5)
    x = torch.rand(1, 12, 32, 32)
    model.eval()
    with torch.no_grad():
        a, _ = model(x)
        b, _ = model(x)
    assert torch.equal(a, b)
    model.train()
    torch.manual_seed(11)
    c, _ = model(x)
    d, _ = model(x)
    assert not torch.equal(c, d)


def test_predict_keeps_training_flag():
    model = small_model()
    model.train()
    out = model.predict(torch.rand(1, 12, 32, 32))
    assert model.training
    assert out.shape == (1, 1, 32, 32)
    assert not out.requires_grad


def test_gradients_flow_to_input():
    model = small_model()
    model.eval()
    x = torch.rand(1, 12, 32, 32, requires_grad=True)
    out, _ = model(x)
    out.mean().backward()
    assert x.grad is not None
    assert float(x.grad.abs().sum()) > 0


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = small_model(seed=7)
    # make batchnorm stats nontrivial
    model.train()
    model(torch.rand(2, 12, 32, 32))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, phase="pretrain", epoch=3)
    back, header = load_checkpoint(path)
    assert header["phase"] == "pretrain"
    assert header["epoch"] == 3
    assert back.config == model.config
    state_a = model.state_dict()
    state_b = back.state_dict()
    assert list(state_a) == list(state_b)
    for name in state_a:
        assert state_a[name].dtype == state_b[name].dtype, name
        assert torch.equal(state_a[name], state_b[name]), name
    # restored model predicts identically
    x = torch.rand(1, 12, 32, 32)
    model.eval()
    with torch.no_grad():
        want, _ = model(x)
        got, _ = back(x)
    assert torch.equal(want, got)


def test_checkpoint_rejects_corruption(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, phase="pretrain", epoch=0)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        load_checkpoint(path)
    path.write_bytes(b"junk\n" + raw)
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_restores_integer_tensors(tmp_path):
    model = small_model()
    model.train()
    model(torch.rand(2, 12, 32, 32))
    tracked = model.enc1.bn1.num_batches_tracked
    assert tracked.item() == 1
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, phase="pretrain", epoch=0)
    back, _ = load_checkpoint(path)
    restored = back.enc1.bn1.num_batches_tracked
    assert restored.dtype == tracked.dtype
    assert restored.item() == 1


def test_bottleneck_spatial_extent():
    # four pooling stages: input 32 reaches the bottleneck at 2
    model = small_model()
    model.eval()
    captured = {}
    handle = model.bottleneck.register_forward_hook(
        lambda mod, args, out: captured.update(shape=tuple(out.shape)))
    model(torch.rand(1, 12, 32, 32))
    handle.remove()
    assert captured["shape"] == (1, 64, 2, 2)


def test_default_input_reaches_32_at_bottleneck():
    model = AttUNet()
    model.eval()
    captured = {}
    handle = model.bottleneck.register_forward_hook(
        lambda mod, args, out: captured.update(shape=tuple(out.shape)))
    with torch.no_grad():
        model(torch.rand(1, 12, 512, 512))
    handle.remove()
    assert captured["shape"] == (1, 512, 32, 32)


def test_forward_clamp_flag_exposes_raw_head():
    model = small_model(2)
    torch.nn.init.constant_(model.head.bias, -3.0)
    model.eval()
    x = torch.rand(1, 12, 32, 32, generator=torch.Generator().manual_seed(5))
    with torch.no_grad():
        clamped, _ = model(x)
        raw, _ = model(x, clamp=False)
    assert clamped.min().item() >= 0.0
    assert raw.min().item() < 0.0
    assert torch.equal(clamped, raw.clamp(min=0.0))
