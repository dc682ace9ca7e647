import csv

import numpy as np
import pytest

from survtraction.cohort import MODALITIES, load_cohort
from survtraction.metrics import c_index
from survtraction.synth import (DEFAULT_SIGNAL, SynthSpec, censoring_rate_for, generate_cohort,
                                signal_directions, write_synthetic)


def oracle_c(spec):
    cohort, z = generate_cohort(spec)
    return c_index(z, cohort.times, cohort.censorship), cohort


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_default_signal_oracle_reaches_080(seed):
    c, _ = oracle_c(SynthSpec(n=1000, d=4, seed=seed))
    assert c >= 0.80


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_zero_signal_is_chance(seed):
    c, _ = oracle_c(SynthSpec(n=1000, d=4, signal_strength=0.0, seed=seed))
    assert 0.45 <= c <= 0.55


def test_unit_signal_falls_short():
    # Why the default is calibrated above 1.0 (see the decisions ledger).
    c, _ = oracle_c(SynthSpec(n=1000, d=4, signal_strength=1.0))
    assert 0.70 < c < 0.80
    assert DEFAULT_SIGNAL == 2.0


@pytest.mark.parametrize("rate,signal", [(0.3, 2.0), (0.1, 1.0), (0.5, 0.0), (0.3, 0.5)])
def test_censor_fraction(rate, signal):
    _, cohort = oracle_c(SynthSpec(n=2000, d=2, censor_rate=rate, signal_strength=signal))
    assert abs(cohort.censorship.mean() - rate) < 0.05


def test_no_censoring():
    _, cohort = oracle_c(SynthSpec(n=200, d=2, censor_rate=0.0))
    assert cohort.censorship.sum() == 0


def test_censoring_rate_solves_expectation():
    x, w = np.polynomial.hermite_e.hermegauss(101)
    w = w / w.sum()
    mu = censoring_rate_for(2.0, 0.3)
    assert (w * mu / (mu + np.exp(2.0 * x))).sum() == pytest.approx(0.3, abs=1e-9)


def test_uninformative_modality_independent_of_z():
    spec = SynthSpec(n=1000, d=16, modality_informativeness=(1.0, 0.0, 0.6, 0.6))
    cohort, z = generate_cohort(spec)
    dirs = signal_directions(spec)
    for mod, expect_signal in (("meth", False), ("gene", True)):
        proj = np.array([s.chains[mod].mean(axis=0) @ dirs[mod] for s in cohort])
        r = np.corrcoef(proj, z)[0, 1]
        if expect_signal:
            assert r > 0.5
        else:
            assert abs(r) < 0.1


def test_shapes_and_determinism():
    spec = SynthSpec(n=20, d=8, seed=5)
    a, za = generate_cohort(spec)
    b, zb = generate_cohort(spec)
    assert np.array_equal(za, zb)
    for s, t in zip(a, b):
        assert s.label == t.label
        for m in MODALITIES:
            assert np.array_equal(s.chains[m], t.chains[m])
    s = a.samples[0]
    assert [s.chains[m].shape[0] for m in MODALITIES] == [6, 8, 16, 1]
    assert s.chains["gene"].shape[1] == 8
    assert a.ids[:2] == ["S0000", "S0001"]


def test_seed_changes_cohort():
    a, _ = generate_cohort(SynthSpec(n=20, d=4, seed=0))
    b, _ = generate_cohort(SynthSpec(n=20, d=4, seed=1))
    assert not np.array_equal(a.times, b.times)


def test_written_cohort_round_trips(tmp_path):
    spec = SynthSpec(n=15, d=4)
    manifest, cohort, z = write_synthetic(spec, tmp_path)
    back = load_cohort(manifest)
    np.testing.assert_array_equal(back.times, cohort.times)
    for s, t in zip(cohort, back):
        for m in MODALITIES:
            assert np.array_equal(s.chains[m], t.chains[m])
    with open(tmp_path / "oracle.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["z"]) for r in rows] == z.tolist()
    assert "z" not in manifest.read_text().splitlines()[0].split(",")


@pytest.mark.parametrize("bad", [
    dict(n=5), dict(censor_rate=1.0), dict(signal_strength=-1.0),
    dict(modality_informativeness=(1.0, 1.0, 1.0)), dict(d=0),
])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        generate_cohort(SynthSpec(**bad))
