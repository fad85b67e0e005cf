import csv
import json

import numpy as np
import pytest
import yaml

from hybridppc.config import ChannelParams, SystemConfig
from hybridppc.experiments import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentSpec,
    load_config,
    parse_config,
    run_experiment,
    run_trial,
    trial_seed,
)

SMALL_SYSTEM = dict(n_tx=8, n_rx=4, l_tx=2, l_rx=2, n_streams=2, n_subcarriers=16)
SMALL_CHANNEL = dict(n_clusters=2, rays_per_cluster=2, n_taps=4)


def small_spec(experiment="se_vs_snr", **kw):
    base = dict(experiment=experiment, system=SystemConfig(**SMALL_SYSTEM),
                channel=ChannelParams(**SMALL_CHANNEL), sweep=(-10.0, 0.0), trials=2)
    base.update(kw)
    return ExperimentSpec(**base)


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- parsing

def test_parse_presets_and_defaults(tmp_path):
    one = parse_config(write(tmp_path, "experiment: se_vs_snr\nsystem: {preset: System I}\n"))
    assert (one.system.n_tx, one.system.n_rx, one.system.l_tx, one.system.l_rx) == (64, 32, 4, 4)
    assert one.system.q_bits_tx == one.system.q_bits_rx == 4
    assert one.trials == 100 and one.designs == ("tpc", "ppc_digital", "ppc_hybrid")
    two = parse_config(write(tmp_path, "experiment: ccdf\nsystem: {preset: system_ii}\n"))
    assert (two.system.n_tx, two.system.n_rx, two.system.l_tx, two.system.l_rx) == (64, 16, 4, 2)
    assert two.trials == 1000


def test_parse_explicit_fields_override_preset(tmp_path):
    spec = parse_config(write(tmp_path, """
experiment: se_vs_snr
system:
  preset: system_i
  n_subcarriers: 64
  q_bits_tx: 2
channel:
  rician_factor_db: inf
sweep: [0, 5]
"""))
    assert spec.system.n_subcarriers == 64 and spec.system.q_bits_tx == 2
    assert spec.channel.rician_factor_db == float("inf")
    assert spec.sweep == (0.0, 5.0)


def test_parse_unknown_key_names_field_and_line(tmp_path):
    path = write(tmp_path, "experiment: ccdf\nsystem:\n  preset: system_i\n  n_antennas: 3\n")
    with pytest.raises(ConfigError, match=r"cfg.yaml:4: system.n_antennas: unknown key"):
        parse_config(path)
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(write(tmp_path, "experiment: ccdf\nbogus: 1\n"))


def test_parse_malformed_yaml_has_line_context(tmp_path):
    path = write(tmp_path, "experiment: ccdf\nsystem: [1, 2\n")
    with pytest.raises(ConfigError, match=r"cfg.yaml:\d+:\d+"):
        parse_config(path)


@pytest.mark.parametrize("text, field", [
    ("experiment: nope\n", "experiment"),
    ("experiment: ccdf\ntrials: 0\n", "trials"),
    ("experiment: ccdf\nsweep: []\n", "sweep"),
    ("experiment: ccdf\ndesigns: [tpc, magic]\n", "designs"),
    ("experiment: gamma_vs_d\nsystem: {preset: system_ii}\nsweep: [0, 3]\n", "sweep"),
    ("experiment: ccdf\nsystem: {preset: system_i, n_subcarriers: 32}\n", "n_subcarriers"),
    ("experiment: ccdf\nsystem: {preset: system_i, n_subcarriers: 100}\n", "system"),
    ("experiment: ccdf\nmaster_seed: abc\n", "master_seed"),
    ("experiment: ccdf\nsystem: {n_tx: 8, n_rx: 4}\n", "missing l_tx, l_rx"),
])
def test_parse_validation_errors_name_field(tmp_path, text, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(write(tmp_path, text))


def test_parse_missing_file():
    with pytest.raises(OSError):
        parse_config("/nonexistent/file.yaml")


def test_load_config_requires_mapping():
    with pytest.raises(ConfigError):
        load_config([1, 2])


# ---------------------------------------------------------------- trials

def test_trial_seed_is_stable_and_distinct():
    assert trial_seed(0, 1) == trial_seed(0, 1)
    seeds = {trial_seed(s, t) for s in (0, 1, -1) for t in range(50)}
    assert len(seeds) == 150


def test_run_trial_row_contract():
    spec = small_spec()
    rows, powers = run_trial(spec, 0)
    assert len(rows) == 2 * 3
    assert {r["design"] for r in rows} == set(spec.designs)
    assert len(powers) == 6
    # The same trial gives the same numbers.
    again, _ = run_trial(spec, 0)
    assert [r["rate_bits"] for r in rows] == [r["rate_bits"] for r in again]
    for r in rows:
        if r["design"] != "tpc":
            assert r["max_antenna_power"] <= spec.system.budget_vector.max() + 1e-8


def test_run_trial_gamma_experiments():
    spec = small_spec("gamma_vs_d", sweep=(1, 2, 3, 4))
    rows, _ = run_trial(spec, 3)
    gam = [r["gamma"] for r in rows]
    assert all(r["design"] == "channel" for r in rows)
    assert all(b >= a for a, b in zip(gam, gam[1:])) and 0 <= gam[0] <= gam[-1] <= 1
    bw = small_spec("gamma_vs_bandwidth", sweep=(1e8, 3e9))
    rows, _ = run_trial(bw, 0)
    assert len(rows) == 2 and rows[0]["gamma"] != rows[1]["gamma"]


# ---------------------------------------------------------------- outputs

def test_run_experiment_outputs(tmp_path):
    spec = small_spec(designs=("tpc", "ppc_digital"))
    paths = run_experiment(spec, workers=1, output_dir=tmp_path / "out")
    rows = read_rows(paths["records"])
    assert len(rows) == 2 * 2 * 2
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    combos = {(r["design"], r["sweep_value"], r["trial"]) for r in rows}
    assert len(combos) == 8
    summary = json.loads(paths["summary"].read_text())
    point = summary["points"][0]["designs"]["ppc_digital"]
    assert set(point["rate_bits"]) == {"mean", "median", "std"}
    assert point["constraint_violations"] == 0
    resolved = yaml.safe_load(paths["config"].read_text())
    assert resolved["system"]["n_tx"] == 8 and resolved["trials"] == 2


def test_ccdf_summary_has_arrays(tmp_path):
    spec = small_spec("ccdf", sweep=(0.0,), trials=3)
    paths = run_experiment(spec, workers=1, output_dir=tmp_path)
    summary = json.loads(paths["summary"].read_text())
    grid = np.array(summary["ccdf_grid"])
    for name in spec.designs:
        ccdf = np.array(summary["points"][0]["designs"][name]["ccdf"])
        assert ccdf.shape == grid.shape
        assert np.all(np.diff(ccdf) <= 0) and ccdf[0] <= 1


def test_rerun_is_byte_identical_except_runtime(tmp_path):
    spec = small_spec(trials=3)
    a = read_rows(run_experiment(spec, workers=1, output_dir=tmp_path / "a")["records"])
    b = read_rows(run_experiment(spec, workers=2, output_dir=tmp_path / "b")["records"])
    strip = lambda rows: [{k: v for k, v in r.items() if k != "runtime_ms"} for r in rows]
    assert strip(a) == strip(b)


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_experiment(small_spec(trials=1), workers=1, output_dir=blocker / "sub")
