import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from gcnenhance.graph import ChannelGraph
from gcnenhance.model import EncoderOutput, GraphUNet, ModelConfig, count_parameters, level_shape, pool_embeddings
from gcnenhance.signal import stack_reim, unstack_reim

from .oracles import gcn_layer_oracle, randomize_output_layer

TINY = ModelConfig(encoder_channels=(4, 8), scorer_hidden=8)
SMALL = ModelConfig(encoder_channels=(4, 8, 8), scorer_hidden=8)


def rand_input(b, m, t, f, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(b, m, 2, t, f, generator=g, dtype=dtype)


def shape_oracle(n, levels):
    """Repeated unpadded k=3, s=2 convolution output size."""
    for _ in range(levels):
        n = math.floor((n - 3) / 2) + 1
    return n


def test_min_input_size():
    assert ModelConfig().min_input_size == 127
    assert TINY.min_input_size == 7


def test_default_bottleneck_shape():
    torch.manual_seed(0)
    model = GraphUNet().eval()
    x = rand_input(1, 2, 128, 513)
    with torch.no_grad():
        enc = model.encode(x)
    assert enc.bottleneck.shape == (1, 2, 256, shape_oracle(128, 6), shape_oracle(513, 6))
    assert enc.bottleneck.shape[-2:] == (1, 7)
    assert [s.shape[1] for s in enc.skips] == [64, 128, 128, 256, 256, 256]
    assert enc.shape_trace[0] == (128, 513)


def test_too_small_input_names_minimum():
    model = GraphUNet()
    with pytest.raises(ValueError, match="127"):
        model.encode(rand_input(1, 2, 64, 513))


def test_level_shape_formula():
    for n in range(3, 200):
        assert level_shape(n) == shape_oracle(n, 1)


def test_decoder_channels_reverse_encoder():
    cfg = ModelConfig()
    model = GraphUNet(cfg)
    assert cfg.decoder_channels == (256, 256, 256, 128, 128, 64)
    stage_inputs = [st["conv"].in_channels // (1 if i == 0 else 2) for i, st in enumerate(model.decoder)]
    assert tuple(stage_inputs) == cfg.decoder_channels
    assert [st["conv"].out_channels for st in model.decoder] == [256, 256, 128, 128, 64, 2]


def test_default_parameter_count():
    widths = [2, 64, 128, 128, 256, 256, 256]
    enc = sum(widths[i] * widths[i + 1] * 9 + 3 * widths[i + 1] for i in range(6))
    stage = [(256, 256), (512, 256), (512, 128), (256, 128), (256, 64), (128, 2)]
    dec = sum(i * o * 9 + o + (2 * o if o != 2 else 0) for i, o in stage)
    scorer = 512 * 128 + 128 + 128 + 1
    gcn = 2 * 256 * 256
    attention = 3
    expected = enc + dec + scorer + gcn + attention
    assert expected == 4_703_494
    assert count_parameters(GraphUNet()) == expected


def test_weight_sharing_identical_channels():
    torch.manual_seed(0)
    model = GraphUNet(SMALL).eval()
    one = rand_input(2, 1, 20, 24)
    x = one.expand(2, 3, 2, 20, 24).contiguous()
    with torch.no_grad():
        enc = model.encode(x)
        dec = model.decode(model.graph_bottleneck(enc))
    assert torch.allclose(enc.bottleneck[:, 0], enc.bottleneck[:, 2])
    assert torch.allclose(dec[:, 0], dec[:, 1], atol=1e-6)


def test_pool_embeddings():
    ones = EncoderOutput(torch.ones(1, 2, 256, 3, 5), [], [(1, 1)])
    assert torch.equal(pool_embeddings(ones), torch.ones(1, 2, 256))
    b = torch.randn(1, 2, 6, 3, 5, dtype=torch.float64)
    b[:, 0] = 2 * b[:, 1]
    f = pool_embeddings(EncoderOutput(b, [], [(1, 1)]))
    assert torch.allclose(f[0, 0], 2 * f[0, 1])
    oracle = np.array([[b[0, m, c].numpy().sum() / 15 for c in range(6)] for m in range(2)])
    np.testing.assert_allclose(f[0].numpy(), oracle, atol=1e-6)


def _bottleneck_model(channels=8):
    torch.manual_seed(1)
    return GraphUNet(ModelConfig(encoder_channels=(4, channels), scorer_hidden=8)).double()


def test_graph_bottleneck_single_channel():
    model = _bottleneck_model()
    h = torch.randn(1, 1, 8, 2, 3, dtype=torch.float64)
    out = model.graph_bottleneck(EncoderOutput(h, [h.reshape(1, 8, 2, 3)], [(7, 7), (3, 3), (2, 3)]))
    assert torch.equal(out.graph.adjacency, torch.ones(1, 1, 1, dtype=torch.float64))
    w1, w2 = model.graph.weights
    expect = F.selu(F.selu(h.permute(0, 3, 4, 1, 2) @ w1) @ w2).permute(0, 3, 4, 1, 2)
    assert torch.allclose(out.bottleneck, expect)


def test_graph_bottleneck_identical_channels_identity():
    model = _bottleneck_model()
    with torch.no_grad():
        for w in model.graph.weights:
            w.copy_(torch.eye(8))
    model.graph.activation = lambda x: x
    h = torch.randn(1, 1, 8, 2, 3, dtype=torch.float64).expand(1, 3, 8, 2, 3)
    out = model.graph_bottleneck(EncoderOutput(h, [h.reshape(3, 8, 2, 3)], [(0, 0)]))
    assert torch.allclose(out.bottleneck, h)


def test_graph_bottleneck_matches_positionwise_oracle():
    model = _bottleneck_model()
    h = torch.randn(2, 3, 8, 2, 3, dtype=torch.float64)
    with torch.no_grad():
        out = model.graph_bottleneck(EncoderOutput(h, [h.reshape(6, 8, 2, 3)], [(0, 0)]))
    w = [x.detach().numpy() for x in model.graph.weights]
    selu = lambda a: F.selu(torch.as_tensor(a)).numpy()
    for b in range(2):
        a = out.graph.adjacency[b].numpy()
        for t in range(2):
            for f in range(3):
                node = h[b, :, :, t, f].numpy()
                ref = gcn_layer_oracle(gcn_layer_oracle(node, a, w[0], selu), a, w[1], selu)
                np.testing.assert_allclose(out.bottleneck[b, :, :, t, f].numpy(), ref, atol=1e-5)
    # skips other than the bottleneck untouched, bottleneck skip replaced
    assert torch.equal(out.skips[-1], out.bottleneck.reshape(6, 8, 2, 3))


@pytest.mark.parametrize("t,f", [(7, 7), (8, 9), (15, 16), (23, 40)])
def test_decode_restores_input_shape(t, f):
    torch.manual_seed(0)
    model = GraphUNet(TINY).eval()
    x = rand_input(2, 3, t, f)
    with torch.no_grad():
        dec = model.decode(model.graph_bottleneck(model.encode(x)))
    assert dec.shape == x.shape


def test_decode_requires_shape_trace():
    model = GraphUNet(TINY)
    with pytest.raises(ValueError, match="shape trace"):
        model.decode(EncoderOutput(torch.zeros(1, 1, 8, 1, 1), [torch.zeros(1, 8, 1, 1)], []))


def test_fuse_single_channel_and_uniform():
    model = GraphUNet(TINY)
    dec = torch.randn(2, 1, 2, 5, 6)
    assert torch.allclose(model.fuse(dec), dec[:, 0])
    with torch.no_grad():
        model.attention.weight.zero_()
    dec2 = torch.randn(2, 2, 2, 5, 6)
    assert torch.allclose(model.fuse(dec2), (dec2[:, 0] + dec2[:, 1]) / 2)


def test_fuse_hand_set_logits():
    model = GraphUNet(TINY).double()
    with torch.no_grad():
        model.attention.weight.copy_(torch.tensor([[1.0, 0.0]]))
        model.attention.bias.zero_()
    dec = torch.zeros(1, 2, 2, 4, 4, dtype=torch.float64)
    dec[0, 0, 0] = math.log(1)
    dec[0, 1, 0] = math.log(3)
    alpha = model.fusion_weights(dec)
    np.testing.assert_allclose(alpha.detach().numpy(), [[0.25, 0.75]], atol=1e-12)
    assert abs(alpha.sum().item() - 1) < 1e-6


def test_forward_smoke_and_determinism():
    torch.manual_seed(0)
    model = randomize_output_layer(GraphUNet(SMALL).eval())
    x = rand_input(2, 4, 20, 33)
    with torch.no_grad():
        out1, mask1 = model(x)
        out2, mask2 = model(x)
    assert out1.shape == (2, 20, 33) and out1.is_complex()
    assert mask1.shape == (2, 2, 20, 33)
    assert torch.isfinite(torch.view_as_real(out1)).all()
    assert torch.equal(out1, out2) and torch.equal(mask1, mask2)


def test_forward_uses_reference_channel():
    torch.manual_seed(0)
    model = GraphUNet(SMALL).eval()
    x = rand_input(1, 3, 16, 16)
    with torch.no_grad():
        out, mask = model(x)
        ref = unstack_reim(x[:, 0])
        out2, _ = model(x, ref)
    assert torch.equal(out, out2)


def test_non_reference_permutation_leaves_mask_unchanged():
    torch.manual_seed(0)
    model = randomize_output_layer(GraphUNet(SMALL).double().eval())
    x = rand_input(1, 4, 20, 20, dtype=torch.float64)
    perm = [0, 3, 1, 2]
    with torch.no_grad():
        _, mask = model(x)
        _, mask_p = model(x[:, perm])
        enc = model.encode(x)
        enc_p = model.encode(x[:, perm])
    assert torch.allclose(enc_p.bottleneck, enc.bottleneck[:, perm])
    assert torch.allclose(mask, mask_p, atol=1e-5)


def test_fresh_model_passes_reference_through():
    torch.manual_seed(0)
    model = GraphUNet(SMALL).eval()
    x = rand_input(2, 3, 16, 20)
    with torch.no_grad():
        out, mask = model(x)
    assert torch.equal(mask[:, 0], torch.ones(2, 16, 20)) and torch.equal(mask[:, 1], torch.zeros(2, 16, 20))
    assert torch.allclose(out, unstack_reim(x[:, 0]))


def test_every_parameter_gets_gradient():
    torch.manual_seed(0)
    model = randomize_output_layer(GraphUNet(TINY).double())
    x = rand_input(2, 2, 16, 16, dtype=torch.float64)
    out, _ = model(x)
    out.abs().sum().backward()
    for name, p in model.named_parameters():
        assert p.grad is not None and p.grad.abs().sum() > 0, name


def test_gcn_disabled_has_no_graph_parameters():
    names_on = {n for n, _ in GraphUNet(TINY).named_parameters()}
    names_off = {n for n, _ in GraphUNet(ModelConfig(encoder_channels=(4, 8), gcn_enabled=False)).named_parameters()}
    diff = names_on - names_off
    assert names_off <= names_on
    assert diff and all(n.startswith("graph.") for n in diff)
