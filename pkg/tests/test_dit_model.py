import numpy as np
import pytest

from dit_cache.common.autodiff import Tensor, no_grad
from dit_cache.common.errors import CacheError, DimensionError, FormatError
from dit_cache.tools.DiT_Model.Checkpoint import (
    ChunkType, Chunks, checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint,
)
from dit_cache.tools.DiT_Model.Core import (
    Condition, DiTConfig, DiTModel, forward_cached, forward_plain, timestep_embedding,
)
from dit_cache.tools.DiT_Model.Flops import block_flops
from dit_cache.tools.Feature_Cache.Core import Cache, CacheMode


def test_block_count_and_kinds(toy_model):
    assert toy_model.n_blocks == 2 * toy_model.config.depth == 8
    assert "blocks.0.qkv.w" in toy_model.params
    assert "blocks.1.fc1.w" in toy_model.params


def test_config_violations_are_all_reported():
    problems = DiTConfig(image_size=7, patch_size=2, d_model=10, n_heads=4).violations()
    assert len(problems) == 2
    with pytest.raises(ValueError):
        DiTModel.initialize(DiTConfig(d_model=10, n_heads=4))


def test_patchify_round_trip(toy_model, rng):
    x = Tensor(rng.normal(size=(3,) + toy_model.config.image_shape))
    tokens = toy_model.patchify(x)
    assert tokens.shape == (3, 16, 4)
    np.testing.assert_array_equal(toy_model.unpatchify(tokens).data, x.data)


def test_forward_shape_and_zero_initialised_head(rng):
    model = DiTModel.initialize(DiTConfig())
    x = rng.normal(size=(2, 1, 8, 8))
    with no_grad():
        eps = forward_plain(model, Tensor(x), Condition(500, 1))
    assert eps.shape == x.shape
    np.testing.assert_array_equal(eps.data, 0.0)


def test_wrong_input_shape(toy_model):
    with pytest.raises(DimensionError):
        forward_plain(toy_model, Tensor(np.zeros((1, 1, 6, 6))), Condition(10, 0))


def test_per_element_conditions_match_individual_calls(toy_model, rng):
    x = rng.normal(size=(2, 1, 8, 8))
    with no_grad():
        joint = forward_plain(toy_model, Tensor(x), Condition((100, 900), (0, 3))).data
        first = forward_plain(toy_model, Tensor(x[:1]), Condition(100, 0)).data
        second = forward_plain(toy_model, Tensor(x[1:]), Condition(900, 3)).data
    np.testing.assert_allclose(joint, np.concatenate([first, second]), atol=1e-12)


def test_timestep_embedding_vectorises():
    single = timestep_embedding(37, 16)
    batch = timestep_embedding(np.array([37, 5]), 16)
    assert single.shape == (16,)
    np.testing.assert_array_equal(batch[0], single)


def test_cached_forward_with_all_gates_computed_matches_plain(toy_model, rng):
    x = Tensor(rng.normal(size=(2, 1, 8, 8)))
    cond = Condition(300, 2)
    cache = Cache(toy_model.n_blocks)
    with no_grad():
        plain = forward_plain(toy_model, x, cond)
        cached = forward_cached(toy_model, x, cond, [1.0] * 8, 0.1, cache)
    np.testing.assert_array_equal(plain.data, cached.data)
    assert cache.is_full and cache.computed == 8 and cache.reused == 0


def test_hard_mode_reuses_cached_outputs(toy_model, rng):
    x1, x2 = Tensor(rng.normal(size=(1, 1, 8, 8))), Tensor(rng.normal(size=(1, 1, 8, 8)))
    cache = Cache(8)
    with no_grad():
        forward_cached(toy_model, x1, Condition(600, 0), [1.0] * 8, 0.1, cache)
        stored = cache.read(3)
        forward_cached(toy_model, x2, Condition(500, 0), [0.9] * 3 + [0.05] + [0.9] * 4, 0.1, cache)
    assert cache.read(3) is stored
    assert cache.computed == 15 and cache.reused == 1


def test_soft_mode_blends_fresh_and_cached(tiny_model, rng):
    x1, x2 = Tensor(rng.normal(size=(1, 1, 4, 4))), Tensor(rng.normal(size=(1, 1, 4, 4)))
    cond = Condition(250, 1)
    cache = Cache(2)
    with no_grad():
        forward_cached(tiny_model, x1, cond, [1.0, 1.0], 0.1, cache)
        cached0 = cache.read(0).data
        h, cs = tiny_model.embed(x2, cond)
        fresh0 = tiny_model.block(0, h, cs).data
        h1 = h.data + 0.3 * fresh0 + 0.7 * cached0
        fresh1 = tiny_model.block(1, Tensor(h1), cs).data
        expected = tiny_model.head(Tensor(h1 + fresh1)).data
        out = forward_cached(tiny_model, x2, cond, [0.3, 1.0], 0.1, cache, CacheMode.SOFT)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)
    np.testing.assert_allclose(cache.read(0).data, fresh0, atol=1e-12)
    assert cache.reused == 1


def test_empty_cache_read_raises(tiny_model):
    with pytest.raises(CacheError):
        forward_cached(tiny_model, Tensor(np.zeros((1, 1, 4, 4))), Condition(10, 0), [0.05, 1.0], 0.1, Cache(2))


def test_router_row_length_must_match(tiny_model):
    with pytest.raises(DimensionError):
        forward_cached(tiny_model, Tensor(np.zeros((1, 1, 4, 4))), Condition(10, 0), [1.0] * 3, 0.1, Cache(2))


def test_block_flops_layout():
    config = DiTConfig()
    flops = block_flops(config)
    assert len(flops) == config.n_blocks
    assert flops[0] == flops[2] and flops[1] == flops[3]
    assert all(f > 0 for f in flops)
    n, d = config.n_tokens, config.d_model
    assert flops[1] >= 2 * n * d * 4 * d * 2


def test_requires_grad_and_copy(tiny_model):
    twin = tiny_model.copy()
    twin.requires_grad_(True)
    assert all(p.requires_grad for p in twin.parameters())
    assert not any(p.requires_grad for p in tiny_model.parameters())
    twin.params["final.b"].data[0] += 1.0
    assert tiny_model.params["final.b"].data[0] != twin.params["final.b"].data[0]


def test_checkpoint_round_trip_is_bit_exact(tiny_model, tmp_path):
    path = save_checkpoint(tiny_model, tmp_path / "teacher.ditc", {"steps": 3})
    loaded, metadata = load_checkpoint(path)
    assert metadata == {"steps": 3}
    assert loaded.config.to_dict() == tiny_model.config.to_dict()
    for name, p in tiny_model.params.items():
        assert loaded.params[name].data.tobytes() == p.data.tobytes()
    assert checkpoint_bytes(loaded, {"steps": 3}) == path.read_bytes()


def test_checkpoint_rejects_bad_version_and_truncation(tiny_model):
    data = bytearray(checkpoint_bytes(tiny_model))
    with pytest.raises(FormatError):
        model_from_bytes(bytes(data[:-20]))
    data[8:12] = (99).to_bytes(4, "little")
    with pytest.raises(FormatError):
        model_from_bytes(bytes(data))


def test_checkpoint_rejects_missing_parameter(tiny_model):
    data = checkpoint_bytes(tiny_model)
    chunk_type, payload, offset = Chunks.read_chunk(data, 0)
    _, _, after_first_param = Chunks.read_chunk(data, offset)
    with pytest.raises(FormatError):
        model_from_bytes(data[:offset] + data[after_first_param:])


def test_param_chunk_layout():
    payload = Chunks.pack_param("w", np.arange(6.0).reshape(2, 3))
    assert payload[:2] == (1).to_bytes(2, "little") and payload[2:3] == b"w"
    name, values = Chunks.unpack_param(payload)
    assert name == "w" and values.shape == (2, 3)
    assert Chunks.write_chunk(b"", ChunkType.END)[:4] == (3).to_bytes(4, "little")
