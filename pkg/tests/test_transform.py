from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from hybridflow.transform import (
    ROCKAVARIA_2015,
    ROCKAVARIA_2015_DAYS,
    OccupancyPMF,
    ParkingBuffer,
    expected_occupancy,
    flush,
    occupancy_pmf,
    preset,
    sample_occupancy,
    transform_step,
)

TABLE = {1: 452, 2: 979, 3: 273, 4: 185, 5: 62, ">5": 9}
ONE = np.array([1.0])


def buffer(C=1, seed=0, stored=None):
    return ParkingBuffer("P", C, np.random.default_rng(seed), stored)


def degenerate(k):
    return occupancy_pmf({k: 1})


def test_table_daily_rows_add_up():
    for value in (1, 2, 3, 4, 5, ">5"):
        assert sum(day[value] for day in ROCKAVARIA_2015_DAYS.values()) == ROCKAVARIA_2015[value]
    assert sum(ROCKAVARIA_2015.values()) == 1960
    assert [sum(d.values()) for d in ROCKAVARIA_2015_DAYS.values()] == [435, 495, 1030]


def test_table_probabilities_exact():
    pmf = occupancy_pmf(TABLE)
    assert pmf.values == (1, 2, 3, 4, 5, 6)
    expected = [Fraction(n, 1960) for n in (452, 979, 273, 185, 62, 9)]
    assert list(pmf.exact_probabilities()) == expected
    rounded = [round(p, 4) for p in pmf.probabilities]
    assert rounded == [0.2306, 0.4995, 0.1393, 0.0944, 0.0316, 0.0046]
    assert sum(pmf.exact_probabilities()) == 1


def test_preset_matches_table():
    assert preset("rockavaria2015") == occupancy_pmf(TABLE)
    with pytest.raises(KeyError):
        preset("nope")


def test_mean_exact():
    pmf = occupancy_pmf(TABLE, overflow_value=6)
    assert pmf.exact_mean() == Fraction(4333, 1960)
    assert expected_occupancy(pmf) == pytest.approx(2.2107, abs=5e-5)
    assert round(expected_occupancy(pmf), 2) == 2.21


def test_overflow_value_shifts_mean():
    assert occupancy_pmf(TABLE, overflow_value=8).exact_mean() == Fraction(4333 + 18, 1960)


def test_small_pmfs():
    assert occupancy_pmf({2: 10}).probability(2) == 1.0
    assert expected_occupancy(degenerate(3)) == 3
    assert expected_occupancy(occupancy_pmf({1: 5, 2: 5})) == 1.5
    with pytest.raises(ValueError):
        occupancy_pmf({1: 0, 2: 0})
    with pytest.raises(ValueError):
        occupancy_pmf({1: -1, 2: 3})
    with pytest.raises(ValueError):
        OccupancyPMF((2, 1), (1, 1))


@settings(max_examples=50)
@given(st.dictionaries(st.integers(1, 12), st.integers(0, 1000), min_size=1).filter(lambda d: sum(d.values()) > 0))
def test_pmf_invariants(counts):
    pmf = occupancy_pmf(counts)
    assert sum(pmf.probabilities) == pytest.approx(1.0, abs=1e-12)
    assert all(p >= 0 for p in pmf.probabilities)
    assert list(pmf.values) == sorted(set(pmf.values))


def test_sampling_golden_sequence():
    rng = np.random.default_rng(12345)
    pmf = preset("rockavaria2015")
    assert [sample_occupancy(pmf, rng) for _ in range(20)] == [
        1, 2, 3, 2, 2, 2, 2, 1, 2, 4, 2, 4, 2, 1, 2, 4, 2, 2, 3, 1]


def test_vectorized_draws_follow_the_same_stream():
    pmf = preset("rockavaria2015")
    rng = np.random.default_rng(12345)
    scalar = [sample_occupancy(pmf, rng) for _ in range(50)]
    assert sample_occupancy(pmf, np.random.default_rng(12345), 50).tolist() == scalar


def test_degenerate_sampling():
    rng = np.random.default_rng(1)
    assert {sample_occupancy(degenerate(4), rng) for _ in range(100)} == {4}


def test_monte_carlo_mean_and_chi_square():
    pmf = preset("rockavaria2015")
    rng = np.random.default_rng(0)
    draws = [sample_occupancy(pmf, rng) for _ in range(100_000)]
    assert abs(np.mean(draws) - 4333 / 1960) < 0.02
    freq = Counter(draws)
    observed = [freq[v] for v in pmf.values]
    expected = [p * len(draws) for p in pmf.probabilities]
    assert chisquare(observed, expected).pvalue > 1e-3


def test_whole_vehicle_releases_passengers():
    b = buffer()
    ped, car, b = transform_step(b, [[1.0]], [[0.0]], degenerate(3), ONE, ONE)
    assert ped.sum() == 3.0 and car.sum() == 0.0
    assert b.cars[0] == 0.0


def test_partial_vehicle_is_buffered():
    b = buffer()
    ped, car, b = transform_step(b, [[0.4]], [[0.0]], degenerate(3), ONE, ONE)
    assert ped.sum() == 0.0
    assert b.cars[0] == pytest.approx(0.4)


def test_round_trip_one_car():
    pmf = degenerate(2)
    b = buffer()
    ped, _, b = transform_step(b, [[1.0]], [[0.0]], pmf, ONE, ONE)
    assert ped.sum() == 2.0
    _, car, b = transform_step(b, [[0.0]], ped, pmf, ONE, ONE)
    assert car.sum() == 1.0
    assert b.is_empty()


def test_outputs_spread_over_destination_classes():
    veh_w = np.array([0.5, 0.5])
    ped_w = np.full(4, 0.25)
    b = buffer(C=2)
    ped, car, _ = transform_step(b, np.array([[1.0, 0.0], [1.0, 0.5]]), np.zeros((4, 2)), degenerate(3), veh_w, ped_w)
    assert ped.shape == (4, 2) and car.shape == (2, 2)
    np.testing.assert_allclose(ped[:, 0], 6.0 * ped_w)
    assert ped[:, 1].sum() == 0.0  # commodity 1 holds half a car


def test_negative_input_rejected():
    with pytest.raises(ValueError):
        transform_step(buffer(), [[-0.1]], [[0.0]], degenerate(1), ONE, ONE)


def _drive(seed, steps, pmf, deterministic, rng_inputs):
    b = buffer(C=2, seed=seed)
    out = []
    for _ in range(steps):
        car_in = rng_inputs.random((1, 2)) * 0.7
        ped_in = rng_inputs.random((1, 2)) * 2.0
        ped, car, b = transform_step(b, car_in, ped_in, pmf, ONE, ONE, deterministic)
        out.append((ped.copy(), car.copy(), car_in, ped_in))
    return b, out


@pytest.mark.parametrize("k", [1, 2, 5])
def test_person_conservation_degenerate(k):
    pmf = degenerate(k)
    b, out = _drive(3, 500, pmf, False, np.random.default_rng(9))
    cars_in = sum(o[2].sum() for o in out)
    persons_from_cars = sum(o[0].sum() for o in out)
    peds_in = sum(o[3].sum() for o in out)
    cars_out = sum(o[1].sum() for o in out)
    # car -> ped: every consumed car released exactly k persons
    assert persons_from_cars == pytest.approx(k * (cars_in - b.cars.sum()), rel=1e-12)
    # ped -> car: persons consumed in groups of k
    assert cars_out * k + b.persons.sum() == pytest.approx(peds_in, rel=1e-12)
    assert b.persons_created == pytest.approx(sum(b.sampled), rel=1e-12)
    assert np.all(b.cars < 1.0) and np.all(b.persons < k)


def test_person_conservation_sampled_ledger():
    pmf = preset("rockavaria2015")
    b, out = _drive(5, 2000, pmf, False, np.random.default_rng(4))
    assert b.persons_created == sum(b.sampled)
    assert len(b.sampled) == round(b.vehicles_consumed)
    persons_from_cars = sum(o[0].sum() for o in out)
    assert persons_from_cars == b.persons_created
    peds_in = sum(o[3].sum() for o in out)
    assert b.persons_consumed + b.persons.sum() == pytest.approx(peds_in, rel=1e-12)


def test_long_run_mean_occupancy():
    pmf = preset("rockavaria2015")
    b = buffer(seed=11)
    persons = 0.0
    for _ in range(10_000):
        ped, _, b = transform_step(b, [[1.0]], [[0.0]], pmf, ONE, ONE)
        persons += ped.sum()
    assert persons / 10_000 == pytest.approx(pmf.mean, rel=0.01)


def test_deterministic_mode_uses_mean():
    pmf = preset("rockavaria2015")
    b = buffer()
    ped, _, b = transform_step(b, [[3.0]], [[0.0]], pmf, ONE, ONE, deterministic=True)
    assert ped.sum() == pytest.approx(3 * 4333 / 1960, rel=1e-15)


def test_same_seed_same_outputs():
    pmf = preset("rockavaria2015")
    _, a = _drive(21, 300, pmf, False, np.random.default_rng(2))
    _, b = _drive(21, 300, pmf, False, np.random.default_rng(2))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x[0], y[0])
        np.testing.assert_array_equal(x[1], y[1])


def test_no_spontaneous_mass():
    pmf = preset("rockavaria2015")
    b = buffer()
    b.cars[0], b.persons[0] = 0.5, 1.0
    transform_step(b, [[0.0]], [[0.0]], pmf, ONE, ONE)  # may fix a pending group size
    state = (b.cars.copy(), b.persons.copy(), list(b.group_size))
    for _ in range(100):
        ped, car, b = transform_step(b, [[0.0]], [[0.0]], pmf, ONE, ONE)
        assert ped.sum() == 0.0 and car.sum() == 0.0
    assert (b.cars.tolist(), b.persons.tolist(), b.group_size) == (state[0].tolist(), state[1].tolist(), state[2])


def test_parking_capacity_blocks_departures():
    b = buffer(stored=0.0)
    _, car, b = transform_step(b, [[0.0]], [[4.0]], degenerate(2), ONE, ONE)
    assert car.sum() == 0.0
    _, car, b = transform_step(b, [[1.0]], [[0.0]], degenerate(2), ONE, ONE)
    assert car.sum() == 1.0  # the arriving car frees a space for one waiting group


def test_flush_releases_partials():
    pmf = degenerate(2)
    b = buffer()
    transform_step(b, [[0.25]], [[1.0]], pmf, ONE, ONE)
    ped, car, b = flush(b, pmf, ONE, ONE)
    assert ped.sum() == pytest.approx(0.5)
    assert car.sum() == pytest.approx(0.5)
    assert b.is_empty()
    assert b.vehicles_flushed == pytest.approx(0.25) and b.persons_flushed == pytest.approx(1.0)
