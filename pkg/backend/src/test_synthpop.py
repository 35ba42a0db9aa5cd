from fractions import Fraction
from unittest.mock import patch

import numpy as np
import pytest

from conftest import SMALL_POPULATION, write_yaml
from domain import Status, Tech, classify_financial_status
from exceptions import ConfigurationError, EmptyCategory, InfeasibleShares, ValidationError
from synthpop import (
    ShapeLibrary,
    annual_energy,
    apportion_categories,
    block_normals,
    block_uniforms,
    calibrate_to_shares,
    generate_population,
    generate_profiles,
    iter_profile_blocks,
    largest_remainder,
    load_population_spec,
)


@pytest.fixture
def spec(population_file):
    return load_population_spec(population_file)


class TestLargestRemainder:
    def test_ties_go_to_earlier_entry(self):
        third = Fraction(1, 3)
        assert largest_remainder(10, [third, third, third]) == [4, 3, 3]

    def test_exact_quotas(self):
        assert largest_remainder(7, [Fraction(1), Fraction(2), Fraction(4)]) == [1, 2, 4]

    def test_zero_total(self):
        assert largest_remainder(0, [Fraction(1, 2)] * 2) == [0, 0]

    def test_total_is_kept(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            shares = [Fraction(int(x)) for x in rng.integers(0, 50, size=6)]
            total = int(rng.integers(1, 1000))
            if sum(shares):
                assert sum(largest_remainder(total, shares)) == total


class TestApportionment:
    def test_status_counts_first(self, spec):
        counts = apportion_categories(spec)
        assert sum(counts) == 240
        per_status = {}
        for category, n in zip(spec.categories, counts):
            per_status[category.group.status] = per_status.get(category.group.status, 0) + n
        assert per_status == {Status.LOW: 43, Status.MEDIUM: 149, Status.HIGH: 48}
        assert counts[:2] == [36, 7]

    def test_default_population_status_shares(self):
        spec = load_population_spec(households=100_000)
        counts = apportion_categories(spec)
        low = sum(n for c, n in zip(spec.categories, counts) if c.group.status is Status.LOW)
        assert abs(low - 17_960) <= 1
        assert sum(counts) == 100_000

    def test_infeasible_shares_strict(self, population_file):
        spec = load_population_spec(population_file, households=5, strict=True)
        with pytest.raises(InfeasibleShares, match="'low_hp'"):
            apportion_categories(spec)

    def test_infeasible_shares_warns(self, population_file):
        spec = load_population_spec(population_file, households=5)
        with patch("synthpop.logger") as mock_logger:
            counts = apportion_categories(spec)
        assert sum(counts) == 5
        assert mock_logger.warning.called


class TestRandomStreams:
    def test_draws_do_not_depend_on_batching(self):
        whole = block_uniforms(3, 1, 0, 10_000)
        parts = np.concatenate([block_uniforms(3, 1, 0, 4_100), block_uniforms(3, 1, 4_100, 10_000)])
        assert np.array_equal(whole, parts)
        assert np.array_equal(block_normals(3, 2, 50, 60), block_normals(3, 2, 0, 100)[50:60])

    def test_streams_differ(self):
        assert not np.array_equal(block_uniforms(3, 1, 0, 10), block_uniforms(3, 2, 0, 10))

    def test_empty_range(self):
        assert len(block_uniforms(1, 1, 5, 5)) == 0


class TestGeneratePopulation:
    def test_exact_size_and_groups(self, spec, rules):
        population = generate_population(spec, rules)
        assert len(population) == 240
        assert population.counts() == apportion_categories(spec)
        for household_id, category in zip(population.household_ids, population.categories):
            group = classify_financial_status(population.attributes[household_id], rules)
            assert group == spec.categories[category].group

    def test_predicates_respected(self, spec, rules):
        population = generate_population(spec, rules)
        for household_id, category in zip(population.household_ids, population.categories):
            if spec.categories[category].name == "medium_notech":
                assert population.attributes[household_id].income_band.value == "E2"

    def test_deterministic(self, spec, rules):
        first = generate_population(spec, rules)
        second = generate_population(spec, rules)
        assert first.attributes == second.attributes
        assert first.household_ids[0] == "hh000"

    def test_category_without_admitted_key(self, tmp_path, rules):
        data = dict(SMALL_POPULATION)
        data["categories"] = SMALL_POPULATION["categories"] + [
            {"name": "low_ev", "status": "Low", "tech": "EV", "population": 1, "consumption": 1},
        ]
        spec = load_population_spec(write_yaml(tmp_path / "pop.yaml", data))
        with pytest.raises(ConfigurationError, match="matches no admitted key"):
            generate_population(spec, rules)


class TestCalibrateToShares:
    def test_scales_to_targets(self):
        scaled, factors = calibrate_to_shares(np.array([0, 0, 1]), np.array([2, 6, 4]),
                                              [Fraction(3, 4), Fraction(1, 4)])
        assert factors == [Fraction(9, 8), Fraction(3, 4)]
        assert scaled.tolist() == [2, 7, 3]

    def test_empty_category(self):
        with pytest.raises(EmptyCategory):
            calibrate_to_shares(np.array([0, 0]), np.array([5, 5]), [Fraction(1, 2), Fraction(1, 2)])

    def test_zero_target_ignored(self):
        _, factors = calibrate_to_shares(np.array([0, 0]), np.array([5, 5]), [Fraction(1), Fraction(0)])
        assert factors == [Fraction(1), Fraction(0)]

    def test_annual_energy_meets_consumption_shares(self, spec, rules):
        population = generate_population(spec, rules)
        energy = annual_energy(population)
        total = float(energy.sum())
        for index, category in enumerate(spec.categories):
            share = float(energy[population.categories == index].sum()) / total
            assert share == pytest.approx(float(category.consumption_share), abs=1e-6)


class TestProfiles:
    def test_default_shapes(self):
        shapes = ShapeLibrary.default(hours=48)
        for shape in (shapes.base, shapes.heat_pump, shapes.electric_vehicle):
            assert shape.sum() == pytest.approx(1.0)
            assert shape.min() >= 0
        assert shapes.electric_vehicle[:18].sum() == 0
        assert shapes.electric_vehicle[18] > 0

    def test_mismatched_shape_lengths(self):
        with pytest.raises(ValidationError, match="one year length"):
            ShapeLibrary(np.full(4, 0.25), np.full(4, 0.25), np.full(2, 0.5))

    def test_profiles_sum_to_annual_energy(self, spec, rules):
        population = generate_population(spec, rules)
        energy = annual_energy(population)
        block = generate_profiles(population, ShapeLibrary.default(spec.hours), energy)
        assert block.energy.shape == (240, 8760)
        assert block.energy.min() >= 0
        assert np.array_equal(block.energy.sum(axis=1), energy)

    def test_heat_pump_households_draw_more_in_winter(self, spec, rules):
        population = generate_population(spec, rules)
        block = generate_profiles(population, ShapeLibrary.default(spec.hours), annual_energy(population))
        day = np.arange(spec.hours) // 24
        winter = np.cos(2.0 * np.pi * day / 365) > 0
        heat_pump = np.array([spec.categories[c].group.tech is Tech.HP for c in population.categories])
        assert heat_pump.any()
        energy = block.energy[heat_pump]
        assert (energy[:, winter].sum(axis=1) > energy[:, ~winter].sum(axis=1)).all()

    def test_blocks_match_single_pass(self, spec, rules):
        population = generate_population(spec, rules)
        energy = annual_energy(population)
        shapes = ShapeLibrary.default(spec.hours)
        whole = generate_profiles(population, shapes, energy)
        pieces = list(iter_profile_blocks(population, shapes, energy, 70))
        assert [len(p) for p in pieces] == [70, 70, 70, 30]
        assert np.array_equal(np.vstack([p.energy for p in pieces]), whole.energy)

    def test_shape_hours_must_match(self, spec, rules):
        population = generate_population(spec, rules)
        with pytest.raises(ValidationError, match="population expects 8760"):
            generate_profiles(population, ShapeLibrary.default(24), annual_energy(population))
