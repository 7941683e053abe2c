import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dynstack.cli import main, month_of, seasonal_designs
from dynstack.config import apply_overrides, parse_config_text
from dynstack.dlm import build_spatiotemporal_system, default_prior, filter_step
from dynstack.errors import ConfigError
from dynstack.io import ingest_panel
from dynstack.spatial import exp_correlation, pairwise_distances

CONFIG = """
[data]
panel = out/panel.csv
[model]
alphas = 0.7, 0.9   # two nugget levels
phis = 2, 6
[sampling]
draws = 40
seed = 11
[forecast]
horizon = 2
designs = out/designs.csv
[interpolate]
time = 3
locations = new_sites.csv
[output]
dir = out
[simulate]
n = 8
q = 2
t = 5
p = 2
sigma = 1, 0.3, 0.3, 1
horizon = 2
"""


def read_rows(path):
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "run.ini").write_text(CONFIG)
    (tmp_path / "new_sites.csv").write_text("location_id,lon,lat,x_1,x_2\nu1,0.5,0.5,0.2,0.3\n")
    return tmp_path


def run(workdir, *args, threads=1):
    cmd, rest = args[0], list(args[1:])
    return main([cmd, "-c", str(workdir / "run.ini"), "--threads", str(threads), *rest])


def test_full_pipeline(workdir):
    out = workdir / "out"
    assert run(workdir, "simulate") == 0
    assert {"panel.csv", "designs.csv", "future.csv", "truth_theta.csv", "truth_sigma.csv"} <= \
        {p.name for p in out.iterdir()}
    assert run(workdir, "fit") == 0
    for name in ("fit.npz", "weights.csv", "model_states.csv", "smoothed.csv"):
        assert (out / name).is_file()
    assert run(workdir, "forecast", "--horizon", "1") == 0
    fc = read_rows(out / "forecast.csv")
    assert len(fc) == 8 * 2  # n x q rows for k = 1
    for r in fc:
        assert float(r["q025"]) <= float(r["q50"]) <= float(r["q975"])
    assert run(workdir, "interpolate") == 0
    ip = read_rows(out / "interpolation.csv")
    assert {r["quantity"] for r in ip} == {"Y", "Omega"} and len(ip) == 4
    assert run(workdir, "weights") == 0
    w = read_rows(out / "weights.csv")
    sums = {}
    for r in w:
        key = (r["time"], r["scope"], r["location_id"])
        sums[key] = sums.get(key, 0.0) + float(r["weight"])
    assert len(sums) == 6 * (8 + 2)
    assert all(abs(v - 1.0) < 1e-8 for v in sums.values())
    head = (out / "weights.csv").read_text().splitlines()[0]
    assert "seed=11" in head and "config=" in head


def test_outputs_do_not_depend_on_thread_count(workdir):
    out = workdir / "out"
    assert run(workdir, "simulate") == 0
    snaps = []
    for threads in (1, 8):
        for cmd in ("fit", "forecast", "interpolate", "weights"):
            assert run(workdir, cmd, threads=threads) == 0
        snaps.append({p.name: p.read_bytes() for p in out.iterdir() if p.suffix == ".csv"})
    assert snaps[0] == snaps[1]


def test_single_model_fit_matches_plain_filter(workdir):
    text = CONFIG.replace("alphas = 0.7, 0.9   # two nugget levels", "alphas = 0.8").replace(
        "phis = 2, 6", "phis = 4")
    (workdir / "run.ini").write_text(text)
    assert run(workdir, "simulate") == 0
    assert run(workdir, "fit") == 0
    data = ingest_panel(workdir / "out" / "panel.csv")
    prior = default_prior(data.locations, data.p, data.q)
    corr = exp_correlation(pairwise_distances(data.locations, data.locations), 4.0)
    st = prior.initial_state()
    for k in range(data.T):
        st = filter_step(st, data.Y[k], build_spatiotemporal_system(data.X[k], corr, 0.8))
    rows = read_rows(workdir / "out" / "model_states.csv")
    got = np.array([float(r["mean"]) for r in rows]).reshape(st.m.shape)
    np.testing.assert_allclose(got, st.m, atol=1e-10, rtol=1e-11)
    w = read_rows(workdir / "out" / "weights.csv")
    assert all(float(r["weight"]) == 1.0 for r in w)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(workdir, capsys):
    # config error: seed missing
    (workdir / "bad.ini").write_text(CONFIG.replace("seed = 11", ""))
    assert main(["simulate", "-c", str(workdir / "bad.ini")]) == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("dynstack-error: ")
    assert json.loads(err.split(": ", 1)[1])["code"] == 2
    # forecast before fit
    assert run(workdir, "simulate") == 0
    assert run(workdir, "forecast") == 2
    assert "run `dynstack fit` first" in capsys.readouterr().err
    # data error: broken panel
    panel = workdir / "out" / "panel.csv"
    lines = panel.read_text().splitlines()
    panel.write_text("\n".join(lines[:-1]) + "\n")
    assert run(workdir, "fit") == 3
    # numeric failure: an overflowing outcome breaks the Psi factorization
    assert run(workdir, "simulate") == 0
    lines = panel.read_text().splitlines()
    f = lines[10].split(",")
    f[4] = "1e200"
    lines[10] = ",".join(f)
    panel.write_text("\n".join(lines) + "\n")
    assert run(workdir, "fit") == 4


def test_console_entry_point(workdir):
    env = dict(os.environ, DYNSTACK_THREADS="2")
    res = subprocess.run([sys.executable, "-m", "dynstack", "simulate", "-c", str(workdir / "run.ini")],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    assert (workdir / "out" / "panel.csv").is_file()


def test_config_parsing(tmp_path):
    cfg = parse_config_text(CONFIG, tmp_path)
    assert cfg.alphas == [0.7, 0.9] and cfg.phis == [2.0, 6.0]
    assert cfg.panel == tmp_path / "out/panel.csv"
    assert cfg.simulate.T == 5 and cfg.sigma_matrix().shape == (2, 2)
    with pytest.raises(ConfigError):
        parse_config_text("[model]\ncolour = red\n")
    with pytest.raises(ConfigError):
        parse_config_text("[nonsense]\n")
    with pytest.raises(ConfigError):
        parse_config_text("[sampling]\nseed = abc\n")
    with pytest.raises(ConfigError):
        parse_config_text("[sampling]\nfreeze_model = maybe\n")
    with pytest.raises(ConfigError):
        parse_config_text("[model]\nalphas = 0.5\n").validate("fit")
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"bogus": 1})
    a, b = parse_config_text(CONFIG, tmp_path), parse_config_text(CONFIG, tmp_path)
    apply_overrides(b, {"threads": 8})
    assert a.digest() == b.digest()
    apply_overrides(b, {"seed": 12})
    assert a.digest() != b.digest()


def test_month_of_and_seasonal_designs():
    assert [month_of(t, 11) for t in range(1, 5)] == [11, 12, 1, 2]
    x = np.zeros((3, 4, 1))
    s = seasonal_designs(x, 12, start=1)
    assert s.shape == (3, 4, 12)
    assert s[0, :, 1:].sum() == 0            # December baseline
    assert np.all(s[1, :, 1] == 1)           # January dummy


def test_seasonal_fit_and_forecast(workdir):
    (workdir / "run.ini").write_text(CONFIG + "[seasonal]\nenabled = true\nfirst_month = 6\n")
    assert run(workdir, "simulate") == 0
    assert run(workdir, "fit") == 0
    assert run(workdir, "forecast") == 0
    rows = read_rows(workdir / "out" / "model_states.csv")
    assert len({r["row_id"] for r in rows if r["block"] == "B"}) == 2 + 11


def test_documented_config_parses():
    import re
    from pathlib import Path
    text = (Path(__file__).parents[1] / "docs" / "config.md").read_text()
    block = re.search(r"```ini\n(.*?)```", text, re.S).group(1)
    cfg = parse_config_text(block)
    assert cfg.alphas == [0.7, 0.8, 0.9] and cfg.seed == 20240611
    assert cfg.sigma_matrix().shape == (3, 3)
