import json

import numpy as np
import pytest

from bundlediff import harness as H
from bundlediff.errors import ConfigError


def test_runconfig_json_round_trip(tmp_path):
    cfg = H.RunConfig(model="flat", seed=3, lambdas=(0, 2))
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert H.RunConfig.from_json(p) == cfg


@pytest.mark.parametrize("bad", [{"modle": "hopf"}, {"n_paths": "many"}, {"seed": 1.5},
                                 {"lambdas": [0.5]}, {"t_span": -1.0}, {"derivatives": "x"}])
def test_runconfig_rejects_bad_input(bad):
    with pytest.raises(ConfigError):
        H.RunConfig.from_dict(bad)


def test_runconfig_unreadable(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        H.RunConfig.from_json(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        H.RunConfig.from_json(p)


def test_dumps_full_precision_and_stable():
    obj = {"b": np.float64(0.1), "a": [1 / 3, np.array([2.5e-17])], "c": 1 + 2j}
    text = H.dumps(obj)
    assert "0.10000000000000001" in text and "0.33333333333333331" in text
    assert json.loads(text)["a"][0] == 1 / 3
    assert text == H.dumps(obj)
    assert text.index('"a"') < text.index('"b"')


def test_report_overall_status():
    cfg = H.RunConfig()
    vs = [H.Verdict("x", H.PASS), H.Verdict("y", H.INCONCLUSIVE)]
    assert H.report(vs, cfg, "t")["overall"] == H.INCONCLUSIVE
    vs.append(H.Verdict("z", H.FAIL))
    assert H.report(vs, cfg, "t")["overall"] == H.FAIL
    assert H.report(vs[:1], cfg, "t")["overall"] == H.PASS


def test_geometry_suite_small():
    cfg = H.RunConfig(model="warped", n_points=50)
    vs = H.run_suite("geometry", cfg)
    assert [v.status for v in vs] == [H.PASS] * 3
    with pytest.raises(ConfigError):
        H.run_suite("everything", cfg)


def test_mehler_weight_limits():
    assert H.mehler_weight([0.0, 0.0], 1e-12, 1.0, 1.0, 1.0) == pytest.approx(1.0)
    # small-time expansion: exp(-c/(D m) |x|^2 t)
    assert H.mehler_weight([1.0, 0.0], 0.5, 1.0, 1.0, 1e-4) == pytest.approx(np.exp(-0.5e-4), rel=1e-8)


def test_default_sections_are_equivariant():
    from bundlediff import geometry, models
    for name in ("hopf", "warped"):
        m = models.make_model(name)
        for lam in (0, 1, -1):
            f = lambda z, lam=lam, m=m: H._embedding_function(m, lam)(np.asarray(z))[..., 0]
            assert geometry.equivariance_check(m, m.group.irrep(lam), f, 30) < 1e-12
