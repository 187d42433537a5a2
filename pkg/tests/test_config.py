import json

import pytest
from hypothesis import given, settings, strategies as st

from meanfield.config import PRESETS, RunConfig, preset
from meanfield.errors import ConfigError

pos = st.floats(1e-3, 0.4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1.5)), min_size=1, max_size=3),
       st.lists(pos, max_size=4), st.floats(0.05, 0.95), st.integers(16, 512),
       st.sampled_from(["json", "yaml"]), st.one_of(st.none(), st.floats(1, 40), st.sampled_from(["window+", "window-"])))
def test_round_trip(points, deltas, sigma, grid, fmt, lam):
    cfg = RunConfig(surface={"kind": "torus", "periods": [[1.0, 0.0], [0.0, 1.5]]},
                    points=[list(p) for p in points], deltas=deltas, sigma=sigma, grid=grid, lam=lam)
    back = RunConfig.loads(cfg.dumps(fmt), fmt)
    assert back == cfg


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_build(name):
    cfg = preset(name)
    data = cfg.data()
    assert cfg.configuration().m == cfg.m == 1
    assert data.surface == cfg.make_surface()


@pytest.mark.parametrize("patch, key", [
    ({"colour": 1}, "colour"),
    ({"sigma": 1.5}, "sigma"),
    ({"h": -1}, "h"),
    ({"grid": 4}, "grid"),
    ({"points": [[0.1, 0.2, 0.3]]}, "points[0]"),
    ({"deltas": [0.1, -0.1]}, "deltas[1]"),
    ({"lam": "window"}, "lam"),
    ({"surface": {"kind": "klein"}}, "surface.kind"),
    ({"surface": {"kind": "torus", "periods": [[1, 0], [2, 0]]}}, "surface.periods"),
    ({"sources": [{"point": [0, 0]}]}, "sources[0]"),
])
def test_bad_values_name_the_key(patch, key):
    d = dict(PRESETS["rect-torus-n2"], **patch)
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_dict(d)
    assert str(exc.value).startswith(key)


def test_load_from_file(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(PRESETS["unit-square-k1"]))
    assert RunConfig.load(p).points == [[0.5, 0.5]]
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        preset("no-such-preset")
