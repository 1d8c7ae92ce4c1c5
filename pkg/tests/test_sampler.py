import sys
import pytest  # type: ignore
import random
from collections import Counter
from math import exp
from pathlib import Path
import logging

import numpy as np

logger = logging.getLogger()
error = logger.error
message = logger.warning
verbose = logger.info
debug = logger.debug

sys.path.insert(0, str(Path(__file__).parent.parent.resolve() / "src"))

from trajsem import (
    EmptyGroup,
    FunctionGroup,
    GroupedWeights,
    RegionSample,
    SamplerConfig,
    SamplingStrategy,
    sample_group,
    sample_region,
    softmax_group,
)
from trajsem.profile import GroupEntry
from trajsem.sampler import stream_rng, trajectory_key


########################################################
#
# Test Plan
#
########################################################

# 1) Softmax over group weights
# 2) Categorical draws: size, support, frequencies
# 3) Streams keyed by seed, trajectory, region and group
# 4) Region samples: grouped and ungrouped strategies, empty groups
# 5) Config validation
# 6) Every group non-empty: N x K samples per region

########################################################
#
# Fixtures
#
########################################################

TRAJECTORY_ID: str = "u001:2024-03-04"


@pytest.fixture
def grouped() -> GroupedWeights:
    """Region 7: two home categories, one work category, a leisure category
    without POIs and nothing in the other groups"""
    return GroupedWeights(
        region_id=7,
        per_group={
            FunctionGroup.home: [
                GroupEntry(category_id=0, weight=0.4, count=4),
                GroupEntry(category_id=1, weight=0.1, count=1),
            ],
            FunctionGroup.work: [
                GroupEntry(category_id=2, weight=0.3, count=2),
                GroupEntry(category_id=3, weight=0.0, count=0),
            ],
            FunctionGroup.school: [],
            FunctionGroup.leisure: [GroupEntry(category_id=6, weight=0.0, count=0)],
            FunctionGroup.other: [],
        },
    )


@pytest.fixture
def uniform() -> GroupedWeights:
    """Region 8: five equally weighted leisure categories"""
    return GroupedWeights(
        region_id=8,
        per_group={
            FunctionGroup.leisure: [
                GroupEntry(category_id=cid, weight=0.2, count=1) for cid in range(5)
            ],
        },
    )


########################################################
#
# Tests
#
########################################################


def test_1_softmax() -> None:
    assert softmax_group([0, 0]).tolist() == pytest.approx([0.5, 0.5])
    p = softmax_group([2, 0])
    assert p[0] == pytest.approx(exp(2) / (exp(2) + 1))
    assert p.sum() == pytest.approx(1)
    # no overflow with large weights
    p = softmax_group([1000, 999, 0])
    assert np.all(np.isfinite(p))
    assert p.sum() == pytest.approx(1)
    # adding a constant to every weight changes nothing
    w: list[float] = [0.12, 0.5, 0.0, 0.33]
    for shift in [-3.0, 0.25, 40.0]:
        assert softmax_group([x + shift for x in w]).tolist() == pytest.approx(
            softmax_group(w).tolist(), rel=1e-12
        )
    assert softmax_group([0.7]).tolist() == [1.0]
    with pytest.raises(EmptyGroup):
        softmax_group([])


def test_2_sample_group() -> None:
    rng = np.random.Generator(np.random.PCG64(1))
    draws: list[int] = sample_group([0.5, 0.5], [10, 20], 6, rng)
    assert len(draws) == 6, "K draws expected"
    assert set(draws) <= {10, 20}
    assert sample_group([1.0], [42], 3, rng) == [42, 42, 42]

    with pytest.raises(ValueError):
        sample_group([0.5, 0.5], [10, 20], 0, rng)
    with pytest.raises(ValueError):
        sample_group([0.5, 0.5], [10], 2, rng)
    with pytest.raises(ValueError):
        sample_group([0.5, 0.4], [10, 20], 2, rng)


def test_3_sample_frequencies() -> None:
    rng = np.random.Generator(np.random.PCG64(7))
    probs = softmax_group([1, 2, 0])
    n: int = 50_000
    counts = Counter(sample_group(probs, [0, 1, 2], n, rng))
    for cid, p in enumerate(probs):
        assert counts[cid] / n == pytest.approx(
            p, abs=0.01
        ), f"category {cid}: {counts[cid] / n} vs {p}"


def test_4_streams() -> None:
    a = stream_rng(42, TRAJECTORY_ID, 7, 0).random(4)
    b = stream_rng(42, TRAJECTORY_ID, 7, 0).random(4)
    assert a.tolist() == b.tolist(), "same key must give the same stream"
    for other in [
        stream_rng(43, TRAJECTORY_ID, 7, 0),
        stream_rng(42, "u002:2024-03-04", 7, 0),
        stream_rng(42, TRAJECTORY_ID, 8, 0),
        stream_rng(42, TRAJECTORY_ID, 7, 1),
    ]:
        assert other.random(4).tolist() != a.tolist(), "streams must be independent"
    assert trajectory_key(TRAJECTORY_ID) == trajectory_key(TRAJECTORY_ID)
    assert 0 <= trajectory_key(TRAJECTORY_ID) < 2**64


def test_5_sample_region(grouped: GroupedWeights) -> None:
    config = SamplerConfig(K=4, seed=42)
    sample: RegionSample = sample_region(grouped, config, (TRAJECTORY_ID, 7))
    assert sample.region_id == 7
    assert list(sample.per_group.keys()) == FunctionGroup.ordered()
    assert len(sample.group(FunctionGroup.home)) == 4
    assert set(sample.group(FunctionGroup.home)) <= {0, 1}
    assert sample.group(FunctionGroup.work) == [2, 2, 2, 2], "absent categories are never drawn"
    for group in [FunctionGroup.school, FunctionGroup.leisure, FunctionGroup.other]:
        assert sample.group(group) == []
        assert sample.is_empty(group), f"{group} should be flagged empty"
    assert sample.flat == sample.group(FunctionGroup.home) + [2, 2, 2, 2]
    assert sample.dominant == {FunctionGroup.home: 0, FunctionGroup.work: 2}

    again: RegionSample = sample_region(grouped, config, (TRAJECTORY_ID, 7))
    assert again == sample, "sampling must be reproducible"

    with pytest.raises(ValueError):
        sample_region(grouped, config, (TRAJECTORY_ID, 8))


def test_6_seed_dependence(uniform: GroupedWeights) -> None:
    samples: list[list[int]] = [
        sample_region(uniform, SamplerConfig(K=12, seed=seed), (TRAJECTORY_ID, 8)).flat
        for seed in [1, 2, 3]
    ]
    assert len({tuple(s) for s in samples}) > 1, "seed does not affect sampling"
    other_trajectory = sample_region(
        uniform, SamplerConfig(K=12, seed=1), ("u009:2024-03-04", 8)
    ).flat
    assert other_trajectory != samples[0]


def test_7_ungrouped(grouped: GroupedWeights) -> None:
    config = SamplerConfig(K=3, seed=42, strategy=SamplingStrategy.ungrouped)
    sample = sample_region(grouped, config, (TRAJECTORY_ID, 7))
    assert len(sample.flat) == config.N * config.K
    assert set(sample.flat) <= {0, 1, 2}
    for group, ids in sample.per_group.items():
        for cid in ids:
            assert cid in [e.category_id for e in grouped.present(group)]
    assert sample == sample_region(grouped, config, (TRAJECTORY_ID, 7))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"K": 0},
        {"seed": -1},
        {"seed": 2**64},
        {"group_order": [FunctionGroup.home, FunctionGroup.home]},
        {"strategy": "random"},
    ],
)
def test_8_config_invalid(kwargs: dict) -> None:
    with pytest.raises(ValueError):
        SamplerConfig(**kwargs)


def test_9_flat_length() -> None:
    rnd = random.Random(11)
    config = SamplerConfig(K=3, seed=42)
    for region_id in range(40):
        grouped = GroupedWeights(
            region_id=region_id,
            per_group={
                g: [
                    GroupEntry(
                        category_id=2 * g.index + j,
                        weight=rnd.random(),
                        count=rnd.randint(1, 9),
                    )
                    for j in range(rnd.randint(1, 2))
                ]
                for g in FunctionGroup
            },
        )
        for user in range(3):
            sample = sample_region(grouped, config, (f"u{user:03d}:2024-03-04", region_id))
            assert len(sample.flat) == config.N * config.K == 15
            assert sample.empty_groups == []
            for g in FunctionGroup:
                assert len(sample.group(g)) == 3, f"region {region_id}, {g}"
