import numpy as np
import pytest

from cmmix.data import (
    DesignConfig,
    DummyOf,
    InteractionOf,
    Intercept,
    LinearOf,
    MixedDataset,
    VariableSpec,
    build_design_vector,
    default_design,
    design_matrix,
    load_csv,
    load_schema,
)
from cmmix.errors import (
    ConfigError,
    MissingFixedValue,
    NonNumericContinuous,
    OutOfRangeLevel,
    UnknownColumn,
    UnresolvedMissing,
)

from conftest import make_mixed_dataset


def write_csv(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


SCHEMA_ORD = [VariableSpec("a", "random", "ordinal", 3)]


class TestLoadCsv:
    def test_fully_observed_ordinal(self, tmp_path):
        p = write_csv(tmp_path, "a\n1\n2\n3\n")
        data = load_csv(p, SCHEMA_ORD)
        assert data.n == 3
        assert not data.mask["a"].any()
        np.testing.assert_array_equal(data.columns["a"], [1, 2, 3])

    def test_out_of_range_level(self, tmp_path):
        p = write_csv(tmp_path, "a\n1\n5\n")
        with pytest.raises(OutOfRangeLevel):
            load_csv(p, SCHEMA_ORD)

    def test_continuous_standardized(self, tmp_path):
        # sample mean 2, sd 1 with divisor n-1
        p = write_csv(tmp_path, "c\n1\n2\n3\n")
        schema = [VariableSpec("c", "random", "continuous")]
        data = load_csv(p, schema)
        np.testing.assert_allclose(data.columns["c"], [-1.0, 0.0, 1.0], atol=1e-12)
        assert data.standardization["c"] == (2.0, 1.0)

    def test_missing_tokens(self, tmp_path):
        p = write_csv(tmp_path, 'a\n1\nNA\n""\n')
        data = load_csv(p, SCHEMA_ORD)
        np.testing.assert_array_equal(data.mask["a"], [False, True, True])

    def test_unexpected_token_is_error(self, tmp_path):
        p = write_csv(tmp_path, "a\n1\nnull\n")
        with pytest.raises(OutOfRangeLevel):
            load_csv(p, SCHEMA_ORD)

    def test_missing_fixed_value(self, tmp_path):
        p = write_csv(tmp_path, "f\n1\nNA\n")
        with pytest.raises(MissingFixedValue):
            load_csv(p, [VariableSpec("f", "fixed", "ordinal", 3)])

    def test_unknown_column(self, tmp_path):
        p = write_csv(tmp_path, "b\n1\n")
        with pytest.raises(UnknownColumn):
            load_csv(p, SCHEMA_ORD)

    def test_non_numeric_continuous(self, tmp_path):
        p = write_csv(tmp_path, "c\nfoo\n")
        with pytest.raises(NonNumericContinuous):
            load_csv(p, [VariableSpec("c", "random", "continuous")])

    def test_rfc4180_quoting(self, tmp_path):
        p = write_csv(tmp_path, '"a"\n"1"\n"2"\n')
        data = load_csv(p, SCHEMA_ORD)
        assert data.n == 2


def test_standardize_destandardize_identity():
    rng = np.random.default_rng(3)
    orig = rng.normal(1.0, 2.0, 50)
    schema = [VariableSpec("z1", "random", "continuous")]
    data = MixedDataset.from_arrays(schema, {"z1": orig.copy()})
    back = data.destandardize("z1", data.columns["z1"])
    np.testing.assert_allclose(back, orig, atol=1e-9)
    mean, sd = data.standardization["z1"]
    np.testing.assert_allclose((back - mean) / sd, data.columns["z1"], atol=1e-9)


def test_roundtrip_write_load(tmp_path):
    data = make_mixed_dataset(n=25, seed=5)
    path = tmp_path / "round.csv"
    data.write_csv(path)
    back = load_csv(path, data.schema)
    for name in data.columns:
        np.testing.assert_allclose(back.columns[name], data.columns[name],
                                   atol=1e-12, equal_nan=True)
        np.testing.assert_array_equal(back.mask[name], data.mask[name])


def test_load_schema_json(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"columns": [{"name": "a", "role": "random", "kind": "ordinal", "levels": 3}]}')
    schema = load_schema(p)
    assert schema[0] == VariableSpec("a", "random", "ordinal", 3)


def test_load_schema_toml(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('[[columns]]\nname = "a"\nrole = "fixed"\nkind = "continuous"\n')
    schema = load_schema(p)
    assert schema[0].kind == "continuous"


class TestDesignVector:
    def test_intercept_only(self):
        cfg = DesignConfig([Intercept()])
        np.testing.assert_array_equal(build_design_vector({"u": 9}, cfg), [1.0])

    def test_dummy_coding(self):
        cfg = DesignConfig([Intercept(), DummyOf("x1", 2), DummyOf("x1", 3)])
        np.testing.assert_array_equal(build_design_vector({"x1": 2}, cfg), [1, 1, 0])

    def test_interaction(self):
        cfg = DesignConfig([
            Intercept(), LinearOf("zf"),
            InteractionOf(DummyOf("x1", 2), LinearOf("zf")),
        ])
        vec = build_design_vector({"x1": 2, "zf": 0.5}, cfg)
        np.testing.assert_allclose(vec, [1.0, 0.5, 0.5])

    def test_unresolved_missing(self):
        cfg = DesignConfig([Intercept(), DummyOf("x1", 2)])
        with pytest.raises(UnresolvedMissing):
            build_design_vector({"x1": np.nan}, cfg)
        with pytest.raises(UnresolvedMissing):
            build_design_vector({}, cfg)

    def test_first_term_must_be_intercept(self):
        with pytest.raises(ConfigError):
            DesignConfig([DummyOf("x1", 2)])

    def test_pure_function(self):
        cfg = DesignConfig([Intercept(), DummyOf("x1", 2), LinearOf("zf")])
        row = {"x1": 1, "zf": -0.7}
        np.testing.assert_array_equal(build_design_vector(row, cfg),
                                      build_design_vector(dict(row), cfg))


def test_default_design_all_dummy_binary_entries():
    # with no continuous fixed variables, every entry is 0/1 and leads with 1
    data = make_mixed_dataset(n=30, seed=2, missing=False)
    cfg = default_design(data.schema)
    cols = {name: data.columns[name] for name in data.columns}
    D = design_matrix(cols, cfg, data.n)
    assert np.all((D == 0) | (D == 1))
    assert np.all(D[:, 0] == 1)


def test_default_design_rejects_response_variables():
    data = make_mixed_dataset(n=10, missing=False)
    cfg = DesignConfig([Intercept(), LinearOf("z1")])
    with pytest.raises(ConfigError):
        cfg.validate(data.schema)


def test_design_matrix_matches_rowwise():
    data = make_mixed_dataset(n=20, seed=9, missing=False)
    cfg = default_design(data.schema)
    cols = {name: data.columns[name] for name in data.columns}
    D = design_matrix(cols, cfg, data.n)
    for i in range(data.n):
        row = {name: cols[name][i] for name in cols}
        np.testing.assert_array_equal(D[i], build_design_vector(row, cfg))


def test_ordinal_fixed_linear_switch():
    data = make_mixed_dataset(n=10, missing=False)
    cfg = default_design(data.schema, ordinal_fixed_linear=True)
    assert LinearOf("f1") in cfg.terms
    assert not any(isinstance(t, DummyOf) and t.var == "f1" for t in cfg.terms)
