import numpy as np
import pytest

from spinlab.seeding import as_rng, chunk_sizes, derive_rng, map_chunks, stack_results


def _draw(size, rng):
    return rng.standard_normal(size)


def test_derived_streams_are_reproducible_and_distinct():
    a = derive_rng(7, 1, 2).standard_normal(5)
    assert np.array_equal(a, derive_rng(7, 1, 2).standard_normal(5))
    assert not np.array_equal(a, derive_rng(7, 1, 3).standard_normal(5))
    assert not np.array_equal(a, derive_rng(8, 1, 2).standard_normal(5))


def test_no_ambient_entropy():
    with pytest.raises(ValueError):
        as_rng(None)
    assert isinstance(as_rng(3), np.random.Generator)


def test_chunk_sizes():
    assert chunk_sizes(10, 4) == [4, 4, 2]
    assert chunk_sizes(8, 4) == [4, 4]
    assert chunk_sizes(0, 4) == []


def test_map_chunks_independent_of_workers():
    serial = stack_results(map_chunks(_draw, 1000, 128, seed=5, key=1, workers=1))
    parallel = stack_results(map_chunks(_draw, 1000, 128, seed=5, key=1, workers=3))
    assert serial.shape == (1000,)
    assert np.array_equal(serial, parallel)
