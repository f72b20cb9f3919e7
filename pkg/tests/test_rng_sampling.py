import numpy as np
import pytest
from numpy.testing import assert_array_equal

from app.services.rng import Purpose, Streams, block_sizes, run_blocks, stream
from app.services.sampling import categorical, categorical_rows, cdf_table, multinomial_indices


def test_streams_are_keyed_by_purpose_and_step():
    a = stream(5, 0, 1, Purpose.SURVIVAL).random(4)
    assert_array_equal(a, stream(5, 0, 1, Purpose.SURVIVAL).random(4))
    assert not np.array_equal(a, stream(5, 0, 1, Purpose.SPAWN).random(4))
    assert not np.array_equal(a, stream(5, 0, 2, Purpose.SURVIVAL).random(4))
    assert not np.array_equal(a, stream(5, 1, 1, Purpose.SURVIVAL).random(4))
    assert not np.array_equal(a, stream(6, 0, 1, Purpose.SURVIVAL).random(4))


def test_negative_seed_is_rejected():
    with pytest.raises(ValueError):
        stream(-1, 0, 0, Purpose.INITIAL)


@pytest.mark.parametrize(
    "total,size,expected",
    [(0, 10, []), (10, 10, [10]), (25, 10, [10, 10, 5]), (3, 250, [3])],
)
def test_block_sizes(total, size, expected):
    assert block_sizes(total, size) == expected


def test_block_sizes_need_a_positive_block():
    with pytest.raises(ValueError):
        block_sizes(10, 0)


def test_run_blocks_is_thread_count_independent():
    def draw(streams: Streams, size: int):
        return streams(0, Purpose.MOVE).random(size)

    one = np.concatenate(run_blocks(draw, 3, 1000, 64, workers=1))
    many = np.concatenate(run_blocks(draw, 3, 1000, 64, workers=4))
    assert_array_equal(one, many)


def test_cdf_table_ends_at_one():
    cdf = cdf_table(np.array([[0.1, 0.2, 0.7], [2.0, 1.0, 1.0]]))
    assert_array_equal(cdf[:, -1], [1.0, 1.0])
    assert cdf[1, 0] == pytest.approx(0.5)


def test_categorical_frequencies():
    rng = np.random.default_rng(0)
    draws = categorical(np.array([0.2, 0.5, 0.3]), 20000, rng)
    freq = np.bincount(draws, minlength=3) / draws.size
    assert np.all(np.abs(freq - [0.2, 0.5, 0.3]) < 0.02)


def test_categorical_rows_never_pick_zero_weight():
    cdf = cdf_table(np.array([[1.0, 0.0], [0.0, 1.0]]))
    u = np.random.default_rng(1).random(100)
    rows = np.arange(100) % 2
    assert_array_equal(categorical_rows(cdf, rows, u), rows)


def test_multinomial_indices_are_sorted_and_respect_weights():
    rng = np.random.default_rng(2)
    weights = np.array([[0.0, 1.0, 0.0, 1.0], [1.0, 1.0, 1.0, 1.0]])
    out = multinomial_indices(weights, rng)
    assert out.shape == (2, 4)
    assert set(out[0]) <= {1, 3}
    assert np.all(np.diff(out, axis=1) >= 0)
