"""Unit tests for keyed random streams"""
import numpy as np
import pytest

from src.streams import RandomStream


class TestRandomStream:
    """Philox streams keyed by (seed, index)"""

    def test_same_key_replays(self):
        first = RandomStream(7).generator(3).random(5)
        second = RandomStream(7).generator(3).random(5)
        assert np.array_equal(first, second)

    def test_blocks_differ(self):
        assert not np.array_equal(RandomStream(7).generator(0).random(5), RandomStream(7).generator(1).random(5))

    def test_seeds_differ(self):
        assert not np.array_equal(RandomStream(7).generator(0).random(5), RandomStream(8).generator(0).random(5))

    def test_child_is_deterministic(self):
        assert RandomStream(7).child(2) == RandomStream(7).child(2)
        assert RandomStream(7).child(2) != RandomStream(7).child(3)

    @pytest.mark.parametrize("seed", [-1, 2 ** 64])
    def test_seed_range(self, seed):
        with pytest.raises(ValueError):
            RandomStream(seed)
