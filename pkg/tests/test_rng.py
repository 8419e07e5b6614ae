"""Portable PRNG: reference behavior, determinism, substream independence."""

from __future__ import annotations

import numpy as np

from sparkpde import rng


def test_splitmix64_reference_vector():
    # First outputs of splitmix64 from state 0, per the published algorithm.
    state = 0
    outputs = []
    for _ in range(4):
        state, value = rng.splitmix64(state)
        outputs.append(value)
    assert outputs == [
        0xE220A8397B1DCDAF,
        0x6E789E6AA1B965F4,
        0x06C45D188009454F,
        0xF88BB8A8724C81EC,
    ]


def test_xoshiro_deterministic_and_seed_sensitive():
    a = rng.Xoshiro256StarStar(42)
    b = rng.Xoshiro256StarStar(42)
    c = rng.Xoshiro256StarStar(43)
    seq_a = [a.next_u64() for _ in range(8)]
    seq_b = [b.next_u64() for _ in range(8)]
    seq_c = [c.next_u64() for _ in range(8)]
    assert seq_a == seq_b
    assert seq_a != seq_c


def test_xoshiro_frozen_first_outputs():
    # Golden values frozen from this implementation; guards stream stability.
    gen = rng.Xoshiro256StarStar(0)
    got = [gen.next_u64() for _ in range(3)]
    assert got == [
        11091344671253066420,
        13793997310169335082,
        1900383378846508768,
    ]


def test_uniform_range_and_moments():
    gen = rng.Xoshiro256StarStar(123)
    u = gen.uniform(20000)
    assert np.all(u >= 0.0) and np.all(u < 1.0)
    assert abs(u.mean() - 0.5) < 0.01
    assert abs(u.var() - 1.0 / 12.0) < 0.005


def test_normal_moments():
    gen = rng.Xoshiro256StarStar(7)
    z = gen.normal(40000)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_substreams_are_independent_and_reproducible():
    s1 = rng.substream(99, "datagen/episode/0")
    s2 = rng.substream(99, "datagen/episode/1")
    s1_again = rng.substream(99, "datagen/episode/0")
    a = [s1.next_u64() for _ in range(4)]
    b = [s2.next_u64() for _ in range(4)]
    c = [s1_again.next_u64() for _ in range(4)]
    assert a == c
    assert a != b


def test_shuffle_and_integer_bounds():
    gen = rng.substream(5, "shuffle")
    items = list(range(50))
    gen.shuffle(items)
    assert sorted(items) == list(range(50))
    gen2 = rng.substream(5, "ints")
    draws = [gen2.integer(7) for _ in range(200)]
    assert min(draws) >= 0 and max(draws) < 7
