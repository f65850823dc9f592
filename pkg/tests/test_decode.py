import pytest
import torch
import torch.nn as nn

from somgen.decode import Decoder, DecoderConfig, UpStage, default_channels, tokens_to_grid
from somgen.errors import ConfigError, ShapeMismatchError

from conftest import fd_relative_error


def test_grid_from_129_tokens():
    tokens = torch.randn(2, 129, 768)
    assert tokens_to_grid(tokens, 64, 64).shape == (2, 768, 8, 8)


def test_grid_cell_definition():
    e = 5
    tokens = torch.randn(1, 9, e)
    ln = nn.LayerNorm(e)
    grid = tokens_to_grid(tokens, 4, 4, ln)
    r, d, f = tokens[0, :4], tokens[0, 4:8], tokens[0, 8]
    for u in range(2):
        for v in range(2):
            torch.testing.assert_close(grid[0, :, u, v], ln(r[u * 2 + v] + d[u * 2 + v] + f))


def test_zero_depth_and_frequency_leaves_normalized_rgb():
    e = 6
    tokens = torch.zeros(1, 9, e)
    tokens[0, :4] = torch.randn(4, e)
    ln = nn.LayerNorm(e)
    grid = tokens_to_grid(tokens, 4, 4, ln)
    expected = ln(tokens[0, :4]).T.reshape(e, 2, 2)
    assert torch.equal(grid[0], expected)


def test_frequency_token_touches_every_cell():
    tokens = torch.randn(1, 129, 8)
    other = tokens.clone()
    other[0, -1] += torch.randn(8)
    ln = nn.LayerNorm(8)
    changed = (tokens_to_grid(tokens, 64, 64, ln) != tokens_to_grid(other, 64, 64, ln)).any(dim=1)
    assert changed.all()


def test_single_stream_grid():
    tokens = torch.randn(1, 17, 4)
    assert tokens_to_grid(tokens, 0, 16).shape == (1, 4, 4, 4)


@pytest.mark.parametrize("n_r,n_d,length", [(4, 9, 14), (3, 3, 7), (4, 4, 8), (0, 0, 1)])
def test_bad_stream_lengths(n_r, n_d, length):
    with pytest.raises(ShapeMismatchError):
        tokens_to_grid(torch.randn(1, length, 4), n_r, n_d)


@pytest.mark.parametrize("n_stages,patch,side", [(3, 8, 64), (1, 8, 16), (2, 2, 8), (4, 1, 16)])
def test_resolution_law(n_stages, patch, side):
    cfg = DecoderConfig(n_stages=n_stages, embed_dim=32, patch_side=patch)
    dec = Decoder(cfg)
    out = dec.decode_grid(torch.randn(2, 32, patch, patch))
    assert cfg.output_side == side and out.shape == (2, side, side)
    assert torch.all(out > 0) and torch.all(out < 1)


def test_stage_structure():
    dec = Decoder(DecoderConfig(n_stages=3, embed_dim=32, patch_side=8))
    assert len(dec.stages) == 3
    for stage in dec.stages:
        assert isinstance(stage, UpStage)
        conv, bn, act = list(stage)
        assert isinstance(conv, nn.ConvTranspose2d) and isinstance(bn, nn.BatchNorm2d) and isinstance(act, nn.LeakyReLU)
        assert conv.kernel_size == (4, 4) and conv.stride == (2, 2) and conv.padding == (1, 1)
        assert act.negative_slope == 0.2
    assert dec.head.kernel_size == (1, 1) and dec.head.out_channels == 1


def test_channel_plans():
    assert default_channels(768, 3) == [768, 256, 64, 16]
    assert default_channels(128, 3) == [128, 64, 32, 16]
    DecoderConfig(embed_dim=768).validate()
    DecoderConfig(embed_dim=128).validate()
    with pytest.raises(ConfigError):
        DecoderConfig(embed_dim=128, channels=[128, 256, 64, 16]).validate()
    with pytest.raises(ConfigError):
        DecoderConfig(n_stages=2, embed_dim=32, channels=[32, 16, 8, 4]).validate()
    with pytest.raises(ConfigError):
        DecoderConfig(n_stages=0, embed_dim=32).validate()


def test_grid_shape_mismatch():
    dec = Decoder(DecoderConfig(n_stages=1, embed_dim=8, patch_side=4))
    with pytest.raises(ShapeMismatchError):
        dec.decode_grid(torch.randn(1, 8, 5, 5))


def test_decoder_gradients_match_finite_differences():
    torch.manual_seed(0)
    dec = Decoder(DecoderConfig(n_stages=2, embed_dim=4, patch_side=2, channels=[4, 3, 2]))
    tokens = torch.randn(2, 9, 4, dtype=torch.float64)
    w = torch.randn(2, 8, 8, dtype=torch.float64)

    def loss(m, dtype):
        return (m(tokens.to(dtype), 4, 4) * w.to(dtype)).sum()

    err, n = fd_relative_error(dec, loss)
    assert n == sum(p.numel() for p in dec.parameters())
    assert err <= 1e-3
