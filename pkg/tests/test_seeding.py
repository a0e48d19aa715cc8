"""Determinism and separation properties of derived seeds."""

import numpy as np

from cmkt import derive_seed, rng_for


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(42, "masking", 0) == derive_seed(42, "masking", 0)

    def test_order_sensitive(self):
        assert derive_seed("a", "b") != derive_seed("b", "a")

    def test_part_boundaries_matter(self):
        """Length prefixes keep ("ab", "c") and ("a", "bc") distinct."""
        assert derive_seed("ab", "c") != derive_seed("a", "bc")

    def test_int_and_string_forms_agree(self):
        """Parts are hashed by their decimal text, so 7 and "7" are one
        purpose, not two."""
        assert derive_seed(7, "x") == derive_seed("7", "x")

    def test_nonnegative_and_in_64_bit_range(self):
        for parts in [(0,), ("long", "chain", 999), (2**63,)]:
            s = derive_seed(*parts)
            assert 0 <= s < 2**63

    def test_purposes_do_not_collide_in_practice(self):
        seeds = {derive_seed(42, p, e) for p in ("mask", "drop", "order") for e in range(50)}
        assert len(seeds) == 150

    def test_rng_for_reproduces_streams(self):
        a = rng_for(42, "shuffle", 3).integers(0, 1000, size=10)
        b = rng_for(42, "shuffle", 3).integers(0, 1000, size=10)
        np.testing.assert_array_equal(a, b)

    def test_rng_for_separates_streams(self):
        a = rng_for(42, "shuffle", 3).integers(0, 1000, size=10)
        b = rng_for(42, "shuffle", 4).integers(0, 1000, size=10)
        assert not np.array_equal(a, b)
