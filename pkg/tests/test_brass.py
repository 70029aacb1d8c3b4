import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saemort.brass import (
    NAMED_REGIONS,
    BrassParams,
    brass_logit,
    brass_rates,
    build_true_world,
    inverse_brass_logit,
    poisson_min_total,
    region_index,
    reweight_exposure,
    simulate_grouped,
    simulate_single_year,
    write_dataset_csv,
)
from saemort.cli import read_dataset_csv
from saemort.lifetable import partial_e0, rates_to_survivorship

REF = 0.0005 * np.exp(0.09 * np.arange(100)) + 0.0003


def test_identity_transform_returns_reference():
    np.testing.assert_allclose(brass_rates(REF, 0.0, 1.0), REF, rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-0.75, 0.75), b=st.floats(0.7, 1.3))
def test_brass_relation_holds_on_logit_scale(a, b):
    m = brass_rates(REF, a, b)
    assert np.all(m > 0)
    Y = brass_logit(rates_to_survivorship(REF))
    Yi = brass_logit(rates_to_survivorship(m))
    np.testing.assert_allclose(Yi, a + b * Y, atol=1e-9)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=30).map(sorted))
def test_logit_inverse_roundtrip(Y):
    # non-decreasing Y gives non-increasing survivorship
    l = inverse_brass_logit(Y)
    np.testing.assert_allclose(brass_logit(l), Y, atol=1e-9)


def test_higher_a_means_higher_mortality():
    e0 = [partial_e0(brass_rates(REF, a, 1.0)) for a in (-0.5, 0.0, 0.5)]
    assert e0[0] > e0[1] > e0[2]


def test_default_table_and_named_regions():
    p = BrassParams.default()
    assert len(p) == 20
    assert (p.a[8], p.b[8]) == (0.018, 1.035)
    assert region_index("medium") == NAMED_REGIONS["medium"] - 1 == 8
    assert region_index(3) == 2
    with pytest.raises(KeyError):
        region_index("tiny")
    d = BrassParams.draw(1)
    assert np.all((d.a >= -0.75) & (d.a <= 0.75)) and np.all((d.b >= 0.7) & (d.b <= 1.3))


@given(total=st.floats(1.0, 1e7))
def test_reweight_exposure_sums_to_total(total):
    ref = np.linspace(1, 2, 100)
    n = reweight_exposure(total, ref)
    assert n.sum() == pytest.approx(total, rel=1e-12)
    np.testing.assert_allclose(n / n.sum(), ref / ref.sum())


def test_reweight_rejects_bad_input():
    with pytest.raises(ValueError):
        reweight_exposure(0.0, np.ones(3))
    with pytest.raises(ValueError):
        reweight_exposure(1.0, np.zeros(3))


def test_poisson_min_total_redraws():
    rng = np.random.default_rng(0)
    draw, attempts = poisson_min_total(rng, np.full(5, 0.1))
    assert draw.sum() >= 2 and attempts >= 1
    with pytest.raises(RuntimeError):
        poisson_min_total(rng, np.zeros(3), max_attempts=5)


def test_world_shapes(world):
    assert world.log_rates.shape == (20, 11, 100)
    assert world.grouped_log_rates().shape == (20, 11, 21)
    assert world.exposures(1000).sum(axis=1) == pytest.approx(np.full(11, 1000.0))
    with pytest.raises(KeyError):
        world.year_index(1990)
    with pytest.raises(ValueError):
        build_true_world(np.zeros((3, 100)), np.ones((3, 100)))


def test_simulation_is_reproducible_and_seed_sensitive(world):
    a = simulate_single_year(world, 1000, seed=5, replicate=2)
    b = simulate_single_year(world, 1000, seed=5, replicate=2)
    c = simulate_single_year(world, 1000, seed=5, replicate=3)
    np.testing.assert_array_equal(a.deaths, b.deaths)
    assert not np.array_equal(a.deaths, c.deaths)
    assert np.all(a.deaths.sum(axis=2) >= 2)


def test_simulation_mean_matches_expected_deaths(world):
    sims = np.stack([simulate_single_year(world, 1e5, 1, r).deaths for r in range(40)])
    expected = world.expected_deaths(1e5)
    rel = sims.mean(axis=0).sum(axis=2) / expected.sum(axis=2)
    assert np.all(np.abs(rel - 1) < 0.1)


def test_grouped_truths_are_aggregated_rates(world):
    ds = simulate_grouped(world, 1e4, 2)
    assert ds.deaths.shape == (20, 11, 21)
    np.testing.assert_allclose(ds.true_log_rates, world.grouped_log_rates(1e4))
    with pytest.raises(ValueError):
        ds.aggregated()


def test_dataset_csv_roundtrip(world):
    ds = simulate_single_year(world, 1000, 3)
    buf = io.StringIO()
    write_dataset_csv(ds, buf)
    path_text = buf.getvalue()
    import tempfile, os

    with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as fh:
        fh.write(path_text)
    try:
        D, N, truth, years, labels = read_dataset_csv(fh.name)
    finally:
        os.unlink(fh.name)
    np.testing.assert_array_equal(D, ds.deaths)
    np.testing.assert_array_equal(N, ds.exposure)
    np.testing.assert_array_equal(truth, ds.true_log_rates)
    np.testing.assert_array_equal(years, ds.years)
