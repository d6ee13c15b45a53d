"""Core types, validation and the interchange format."""
from __future__ import annotations

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netchoice.model import (
    Alternative,
    ChoiceSequence,
    ChoiceSituation,
    Dataset,
    Family,
    FitResult,
    MixingSpec,
    ThetaVector,
    dataset_to_string,
    read_dataset,
    validate_dataset,
    write_dataset,
)
from netchoice.mnl import fit_mnl
from netchoice.rc import RCOptions, fit_rc

from conftest import random_dataset, situation


def three_sequences() -> Dataset:
    return Dataset((
        ChoiceSequence("p", (situation([[1.0], [2.0], [3.0]], 0, "qrs"), situation([[1.0], [2.0], [3.0]], 1, "qrs"))),
        ChoiceSequence("q", (situation([[0.0], [1.0], [2.0]], 2, "prs"),)),
        ChoiceSequence("r", (situation([[0.0], [1.0], [2.0]], 2, "pqs"),)),
    ), ("in_degree",))


class TestValidateDataset:
    def test_well_formed_dataset_has_no_problems(self):
        assert validate_dataset(three_sequences()) == []

    def test_chosen_index_out_of_range(self):
        bad = ChoiceSituation((Alternative("a", (1.0,)), Alternative("b", (2.0,))), 2)
        d = Dataset((ChoiceSequence("q", (bad,)),), ("x",))
        assert validate_dataset(d) == ["chosen_index out of range @ seq q, t=0"]

    def test_empty_sequence(self):
        d = Dataset((ChoiceSequence("r", ()),), ("x",))
        assert validate_dataset(d) == ["empty sequence @ seq r"]

    def test_duplicate_ids_and_bad_covariates(self):
        sit = ChoiceSituation((Alternative("a", (1.0,)), Alternative("a", (float("nan"),)),
                               Alternative("c", (1.0, 2.0))), 0)
        problems = validate_dataset(Dataset((ChoiceSequence("s", (sit,)),), ("x",)))
        assert any("duplicate alternative ids" in p for p in problems)
        assert any("non-finite covariate" in p for p in problems)
        assert any("covariate length 2 != 1" in p for p in problems)

    def test_empty_alternative_set(self):
        d = Dataset((ChoiceSequence("s", (ChoiceSituation((), 0),)),), ("x",))
        assert validate_dataset(d) == ["empty alternative set @ seq s, t=0"]


class TestArrays:
    def test_flat_layout(self):
        a = three_sequences().arrays
        assert a.n_sequences == 3 and a.n_situations == 4 and a.n_characteristics == 1
        np.testing.assert_array_equal(a.sit_ptr, [0, 3, 6, 9, 12])
        np.testing.assert_array_equal(a.seq_ptr, [0, 2, 3, 4])
        np.testing.assert_array_equal(a.chosen, [0, 4, 8, 11])

    def test_subset_rebases(self):
        a = three_sequences().arrays
        s = a.subset(1, 3)
        np.testing.assert_array_equal(s.seq_ptr, [0, 1, 2])
        np.testing.assert_array_equal(s.sit_ptr, [0, 3, 6])
        np.testing.assert_array_equal(s.chosen, [2, 5])


class TestInterchange:
    def test_round_trip_is_identity(self, rng, tmp_path):
        d = random_dataset(rng, n_sequences=8, k=3)
        path = tmp_path / "d.csv"
        write_dataset(d, path)
        assert read_dataset(path) == d

    def test_header_and_line_endings(self):
        text = dataset_to_string(three_sequences())
        assert text.splitlines()[0] == "chooser_id,situation_index,alternative_id,is_chosen,in_degree"
        assert "\r" not in text
        assert len(text.splitlines()) == 1 + 12

    def test_rejects_bad_header(self):
        with pytest.raises(ValueError, match="bad interchange header"):
            read_dataset(io.StringIO("a,b,c,d,x\n"))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=2),
                             min_size=1, max_size=4), min_size=1, max_size=3),
           st.data())
    def test_round_trip_property(self, sits, data):
        situations = tuple(
            situation(rows, data.draw(st.integers(0, len(rows) - 1))) for rows in sits
        )
        d = Dataset((ChoiceSequence("c", situations),), ("x", "y"))
        assert read_dataset(io.StringIO(dataset_to_string(d))) == d


class TestMixingSpec:
    def test_parameter_layout(self):
        spec = MixingSpec(("lognormal", "fixed", "normal", "uniform"), correlated=True)
        assert spec.random_index == (0, 2, 3)
        assert spec.correlated_index == (0, 2)
        assert spec.n_params == 4 + 3 + 1
        assert spec.param_names() == ["m1", "m2", "m3", "m4", "s1", "s3", "s4", "chol31"]

    def test_json_round_trip(self):
        spec = MixingSpec((Family.NORMAL, Family.LOGNORMAL), True, ("a", "b"))
        assert MixingSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            MixingSpec(())
        with pytest.raises(ValueError, match="unknown mixing family"):
            MixingSpec(("gamma",))
        with pytest.raises(ValueError):
            MixingSpec(("normal",), names=("a", "b"))


class TestThetaVector:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from(list(Family)), min_size=1, max_size=5), st.booleans(), st.data())
    def test_pack_unpack_bijection(self, fams, corr, data):
        spec = MixingSpec(tuple(fams), correlated=corr)
        vec = np.array(data.draw(st.lists(st.floats(-1e3, 1e3), min_size=spec.n_params,
                                          max_size=spec.n_params)))
        theta = ThetaVector.unpack(spec, vec)
        np.testing.assert_array_equal(theta.pack(), vec)
        assert ThetaVector.from_json(theta.to_json()) == theta

    def test_dimension_mismatch(self):
        spec = MixingSpec(("normal", "normal"))
        with pytest.raises(ValueError, match="expected 4 parameters"):
            ThetaVector.unpack(spec, [1.0, 2.0])
        with pytest.raises(ValueError, match="do not match spec"):
            ThetaVector((1.0, 2.0), (1.0,)).check(spec)

    def test_factor(self):
        spec = MixingSpec(("normal", "fixed", "lognormal"), correlated=True)
        L = ThetaVector((0, 0, 0), (2.0, 3.0), (0.5,)).factor(spec)
        np.testing.assert_array_equal(L, [[2, 0, 0], [0, 0, 0], [0.5, 0, 3]])


class TestFitResult:
    def test_mnl_round_trip(self, rng):
        fit = fit_mnl(random_dataset(rng, n_sequences=30))
        back = FitResult.from_dict(json.loads(json.dumps(fit.to_dict())))
        np.testing.assert_array_equal(back.params, fit.params)
        np.testing.assert_array_equal(back.covariance, fit.covariance)
        assert back.log_likelihood == fit.log_likelihood
        assert back.to_dict() == fit.to_dict()

    def test_rc_round_trip(self, rng):
        d = random_dataset(rng, n_sequences=30)
        fit = fit_rc(d, MixingSpec(("normal", "fixed")), opts=RCOptions(n_draws=20, seed=3))
        back = FitResult.from_dict(json.loads(json.dumps(fit.to_dict())))
        assert back.theta_hat == fit.theta_hat
        assert back.spec == fit.spec
        assert back.to_dict() == fit.to_dict()

    def test_errors_and_p_values_well_formed(self, rng):
        fit = fit_mnl(random_dataset(rng, n_sequences=30))
        np.testing.assert_allclose(fit.std_errors, np.sqrt(np.diag(fit.covariance)))
        assert np.all(fit.std_errors >= 0)
        assert np.all((fit.p_values >= 0) & (fit.p_values <= 1))
