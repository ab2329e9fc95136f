import numpy as np
import pytest

from fedbalance.seeding import derive_rng, derive_seed, seed_sequence


def test_same_key_same_stream():
    a = derive_rng(42, "global", 3, 1, 0).random(8)
    b = derive_rng(42, "global", 3, 1, 0).random(8)
    assert np.array_equal(a, b)


@pytest.mark.parametrize(
    "other",
    [
        (42, ("global", 3, 1, 1)),   # different client
        (42, ("global", 3, 2, 0)),   # different round
        (42, ("global", 4, 1, 0)),   # different fold
        (42, ("resample", 3, 1, 0)),  # different purpose
        (43, ("global", 3, 1, 0)),   # different master seed
    ],
)
def test_any_key_change_changes_stream(other):
    base = derive_rng(42, "global", 3, 1, 0).random(8)
    seed, parts = other
    assert not np.array_equal(base, derive_rng(seed, *parts).random(8))


def test_string_and_int_parts_mix():
    s1 = seed_sequence(0, "fold", 2).spawn_key
    s2 = seed_sequence(0, "fold", 3).spawn_key
    assert s1 != s2 and len(s1) == 2


def test_derive_seed_is_stable_and_64bit():
    s = derive_seed(7, "partition")
    assert s == derive_seed(7, "partition")
    assert 0 <= s < 2**64
    assert s != derive_seed(7, "folds")


def test_negative_part_rejected():
    with pytest.raises(ValueError):
        derive_rng(0, -1)


def test_unsupported_part_type_rejected():
    with pytest.raises(TypeError):
        derive_rng(0, 1.5)
