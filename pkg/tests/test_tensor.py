from math import comb

import numpy as np
import pytest

from kikuchi.combinat import unrank_subset
from kikuchi.errors import FormatError, InvalidArgumentError
from kikuchi.tensor import (
    MAGIC,
    Distribution,
    Spike,
    SymmetricTensor,
    add_spike,
    load,
    noise_block,
    sample_tensor,
    save,
)


def test_rademacher_support():
    t = sample_tensor(6, 4, "rademacher", 11)
    assert t.entries.shape == (15,)
    assert set(np.unique(t.entries)) <= {-1.0, 1.0}


def test_gaussian_sample_mean():
    t = sample_tensor(8, 3, "gaussian", 5)
    assert t.entries.size == 56
    assert abs(t.entries.mean()) < 4 / np.sqrt(56)


def test_gaussian_moments_large_sample():
    x = noise_block("gaussian", 3, 0, 200_000)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1) < 0.01


def test_sampling_is_deterministic():
    a = sample_tensor(9, 4, "gaussian", 42)
    b = sample_tensor(9, 4, "gaussian", 42)
    assert np.array_equal(a.entries, b.entries)
    assert not np.array_equal(a.entries, sample_tensor(9, 4, "gaussian", 43).entries)


def test_noise_block_is_keyed_by_rank():
    full = noise_block("gaussian", 7, 0, 100)
    for start in (0, 1, 3, 4, 17, 50):
        assert np.array_equal(noise_block("gaussian", 7, start, 100 - start), full[start:])


def test_sample_rejects_small_n():
    with pytest.raises(InvalidArgumentError):
        sample_tensor(3, 4)


def test_zero_spike_is_identity():
    g = sample_tensor(7, 3, "gaussian", 1)
    t = add_spike(g, Spike(np.ones(7), 0.0))
    assert np.array_equal(t.entries, g.entries)


def test_all_ones_spike_shifts_every_entry():
    g = sample_tensor(7, 4, "gaussian", 1)
    t = add_spike(g, Spike(np.ones(7), 2.0))
    assert np.allclose(t.entries, g.entries + 2.0)
    assert t.distribution is Distribution.PLANTED_GAUSSIAN


def test_alternating_spike_sign_product():
    g = sample_tensor(6, 4, "gaussian", 2)
    v = np.array([1, -1, 1, -1, 1, -1], dtype=float)
    t = add_spike(g, Spike(v, 1.5))
    s = (0, 1, 2, 3)
    assert t.entry(s) == pytest.approx(g.entry(s) + 1.5)
    assert t.entry((0, 1, 2, 4)) == pytest.approx(g.entry((0, 1, 2, 4)) - 1.5)


def test_add_spike_leaves_input_untouched():
    g = sample_tensor(6, 3, "gaussian", 2)
    before = g.entries.copy()
    add_spike(g, Spike(np.ones(6), 3.0))
    assert np.array_equal(g.entries, before)


def test_spike_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        add_spike(sample_tensor(6, 3), Spike(np.ones(5), 1.0))


def test_spike_linearity(rng):
    g = sample_tensor(8, 4, "gaussian", 3)
    v = rng.choice([-1.0, 1.0], size=8)
    once = add_spike(g, Spike(v, 0.7 + 1.9))
    twice = add_spike(add_spike(g, Spike(v, 0.7)), Spike(v, 1.9))
    assert np.max(np.abs(once.entries - twice.entries)) <= 1e-12


@pytest.mark.parametrize("r", [3, 4])
def test_spike_sign_symmetry(rng, r):
    g = sample_tensor(8, r, "gaussian", 3)
    v = rng.choice([-1.0, 1.0], size=8)
    a = add_spike(g, Spike(v, 1.0)).entries
    b = add_spike(g, Spike(-v, 1.0)).entries
    if r % 2 == 0:
        assert np.array_equal(a, b)
    else:
        assert np.allclose(a - g.entries, -(b - g.entries))


def test_entry_set_semantics():
    g = sample_tensor(7, 3, "gaussian", 4)
    t = g.with_entry((5, 1, 3), 3.5)
    assert t.entry((1, 3, 5)) == 3.5
    assert t.entry([3, 5, 1]) == 3.5


def test_entry_colex_max_is_last():
    g = sample_tensor(7, 3, "gaussian", 4)
    last = unrank_subset(comb(7, 3) - 1, 3, 7)
    assert last == (4, 5, 6)
    assert g.entry(last) == g.entries[-1]


def test_entry_wrong_size():
    with pytest.raises(InvalidArgumentError):
        sample_tensor(7, 3).entry((1, 2))


@pytest.mark.parametrize("dist", ["gaussian", "rademacher"])
def test_save_load_round_trip(tmp_path, dist):
    g = sample_tensor(9, 4, dist, 77)
    path = tmp_path / "t.kik"
    save(g, path)
    h = load(path)
    assert h == g
    assert h.entries.tobytes() == g.entries.tobytes()
    data = path.read_bytes()
    assert data[:16] == MAGIC
    assert len(data) == 48 + 8 * comb(9, 4)


def test_save_load_planted(tmp_path):
    g = add_spike(sample_tensor(7, 3, "rademacher", 1), Spike(np.ones(7), 0.5))
    save(g, tmp_path / "p.kik")
    assert load(tmp_path / "p.kik") == g


def test_truncated_file(tmp_path):
    path = tmp_path / "t.kik"
    save(sample_tensor(7, 3, "gaussian", 1), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError) as err:
        load(path)
    assert err.value.offset > 0


def test_bad_magic(tmp_path):
    path = tmp_path / "t.kik"
    save(sample_tensor(7, 3, "gaussian", 1), path)
    data = bytearray(path.read_bytes())
    data[0:8] = b"NOTKIKUC"
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError) as err:
        load(path)
    assert err.value.offset == 0


def test_header_r_greater_than_n(tmp_path):
    path = tmp_path / "t.kik"
    save(sample_tensor(7, 3, "gaussian", 1), path)
    data = bytearray(path.read_bytes())
    data[24:28] = (9).to_bytes(4, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="order"):
        load(path)


def test_length_mismatch_in_header(tmp_path):
    path = tmp_path / "t.kik"
    save(sample_tensor(7, 3, "gaussian", 1), path)
    data = bytearray(path.read_bytes())
    data[40:48] = (34).to_bytes(8, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError) as err:
        load(path)
    assert err.value.offset == 40


def test_tensor_is_immutable():
    g = sample_tensor(6, 3)
    with pytest.raises(ValueError):
        g.entries[0] = 1.0
    assert isinstance(g, SymmetricTensor)
