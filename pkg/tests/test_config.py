import pytest
import yaml
from hypothesis import given, settings, strategies as st

from padetopo import config as C


@pytest.mark.parametrize("kind", C.KINDS)
def test_defaults_validate(kind):
    cfg = C.default_config(kind).validate()
    assert cfg.scenario == kind
    assert cfg.schema_version == C.SCHEMA_VERSION


def test_dt_validate_defaults_have_31_points():
    assert len(C.default_config("dt-validate").points) == 31


def test_unknown_kind():
    with pytest.raises(C.ConfigError):
        C.default_config("bogus")


def _write(tmp_path, data):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return p


def test_load_merges_defaults(tmp_path):
    cfg = C.load(_write(tmp_path, {"schema_version": 1, "scenario": "sweep-compare", "delta": 0.02,
                                    "geometry": {"n_elem": 50}}))
    assert cfg.delta == 0.02
    assert cfg.geometry.n_elem == 50
    assert cfg.geometry.kind == "four_scatterers"
    assert cfg.sweep_compare.omega0 == 3.0


def test_dump_load_roundtrip(tmp_path):
    cfg = C.default_config("optimise-shield")
    C.dump(cfg, tmp_path / "a.yaml")
    again = C.load(tmp_path / "a.yaml")
    assert again.to_dict() == cfg.to_dict()
    C.dump(again, tmp_path / "b.yaml")
    assert (tmp_path / "a.yaml").read_bytes() == (tmp_path / "b.yaml").read_bytes()


@pytest.mark.parametrize("data", [
    {"schema_version": 1, "bnad": [1, 2]},
    {"schema_version": 1, "geometry": {"radius": 1.0, "radious": 2.0}},
    {"schema_version": 1, "optimiser": {"steps": 3}},
])
def test_unknown_keys_are_errors(tmp_path, data):
    with pytest.raises(C.ConfigError, match="unknown"):
        C.load(_write(tmp_path, data))


@pytest.mark.parametrize("data", [
    {"band": [1.0, 2.0]},                                   # no schema_version
    {"schema_version": 2},
    {"schema_version": 1, "band": [3.0, 2.0]},
    {"schema_version": 1, "band": [0.0, 2.0]},
    {"schema_version": 1, "degrees": [0, 4]},
    {"schema_version": 1, "delta": -1.0},
    {"schema_version": 1, "delta": "small"},
    {"schema_version": 1, "degrees": 4},
    {"schema_version": 1, "obs": []},
    {"schema_version": 1, "obs": [[0.0, 0.0, 1.0]]},
    {"schema_version": 1, "incident": {"c": 0.0}},
    {"schema_version": 1, "optimiser": {"maximise": "yes"}},
    {"schema_version": 1, "optimiser": {"max_steps": 2.5}},
    {"schema_version": 1, "geometry": {"kind": "mesh_csv"}},
    {"schema_version": 1, "geometry": {"kind": "torus"}},
    {"schema_version": 1, "scenario": "bogus"},
])
def test_invalid_values(tmp_path, data):
    with pytest.raises(C.ConfigError):
        C.load(_write(tmp_path, data))


def test_unreadable_files(tmp_path):
    with pytest.raises(C.ConfigError):
        C.load(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(C.ConfigError):
        C.load(bad)
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(C.ConfigError):
        C.load(bad)


def test_integers_accepted_for_floats(tmp_path):
    cfg = C.load(_write(tmp_path, {"schema_version": 1, "delta": 1, "band": [2, 3]}))
    assert isinstance(cfg.delta, float) and cfg.delta == 1.0


@settings(max_examples=40, deadline=None)
@given(w1=st.floats(0.1, 10.0), width=st.floats(1e-3, 5.0), m=st.integers(1, 8), n=st.integers(1, 8),
       delta=st.floats(1e-6, 1.0))
def test_roundtrip_property(tmp_path_factory, w1, width, m, n, delta):
    d = tmp_path_factory.mktemp("cfg")
    cfg = C.default_config("custom")
    cfg.band = [w1, w1 + width]
    cfg.degrees = [m, n]
    cfg.delta = delta
    C.dump(cfg.validate(), d / "c.yaml")
    assert C.load(d / "c.yaml").to_dict() == cfg.to_dict()
