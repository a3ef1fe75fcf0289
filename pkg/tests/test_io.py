import csv
import os

import numpy as np
import pytest

from knotstrength import (
    HmcConfig,
    Knot,
    ModelParams,
    PosteriorDraws,
    RunConfig,
    SimConfig,
    Specimen,
    generate_dataset,
    load_config,
    read_dataset,
    read_draws_csv,
    write_draws_csv,
)
from knotstrength.evaluation import PpcReport, PpcStat, PredictiveSummary
from knotstrength.io import (
    load_column_map,
    write_cv_csv,
    write_knots_csv,
    write_ppc_csv,
    write_ppc_histograms,
    write_predictions_csv,
    write_quantiles_csv,
    write_specimens_csv,
    write_subgroup_csv,
    write_truth_csv,
)


AWKWARD = [0.1, 1.0 / 3.0, 5.5 / 7.0, 2.0 ** -40, 1.2345678901234567e2]


def sample_specimens():
    return [
        Specimen(id="a", moe=AWKWARD[0], uts=AWKWARD[1], failure_cell=3,
                 knots=(Knot(x=AWKWARD[2], y=1.25, volume=AWKWARD[3], edge=True),
                        Knot(x=12.0, y=0.0, volume=7.0, edge=False))),
        Specimen(id="b", moe=2.0, uts=AWKWARD[4], failure_cell=24),
        Specimen(id="c", moe=1.5),
    ]


def write_pair(tmp_path, specimens):
    spec_path = tmp_path / "specimens.csv"
    knot_path = tmp_path / "knots.csv"
    write_specimens_csv(spec_path, specimens)
    write_knots_csv(knot_path, specimens)
    return spec_path, knot_path


# ----------------------------------------------------------------------
# specimen tables
# ----------------------------------------------------------------------

def test_dataset_round_trip_is_exact(tmp_path):
    specimens = sample_specimens()
    spec_path, knot_path = write_pair(tmp_path, specimens)
    back = read_dataset(spec_path, knot_path)
    assert back == specimens
    assert back[2].uts is None and back[2].failure_cell is None


def test_read_dataset_without_knots_file(tmp_path):
    specimens = [Specimen(id="a", moe=1.9, uts=4.0, failure_cell=1)]
    spec_path, knot_path = write_pair(tmp_path, specimens)
    assert read_dataset(spec_path) == specimens
    # a knots file with only its header behaves the same
    assert read_dataset(spec_path, knot_path) == specimens


def test_read_dataset_reports_file_and_line(tmp_path):
    spec_path = tmp_path / "specimens.csv"
    spec_path.write_text(
        "id,moe_psi_e6,uts_psi_e3,failure_cell\n"
        "a,1.9,4.0,3\n"
        "b,oops,4.0,3\n"
    )
    with pytest.raises(ValueError, match=r"line 3: moe_psi_e6"):
        read_dataset(spec_path)

    spec_path.write_text(
        "id,moe_psi_e6,uts_psi_e3,failure_cell\n"
        "a,1.9,4.0,first\n"
    )
    with pytest.raises(ValueError, match=r"line 2: failure_cell"):
        read_dataset(spec_path)

    spec_path.write_text(
        "id,moe_psi_e6,uts_psi_e3,failure_cell\n"
        "a,1.9,-4.0,3\n"
    )
    with pytest.raises(ValueError, match=r"line 2: .*uts must be > 0"):
        read_dataset(spec_path)

    spec_path.write_text(
        "id,moe_psi_e6,uts_psi_e3,failure_cell\n"
        "a,1.9,4.0,\n"
    )
    with pytest.raises(ValueError, match="jointly"):
        read_dataset(spec_path)


def test_read_dataset_missing_column(tmp_path):
    spec_path = tmp_path / "specimens.csv"
    spec_path.write_text("id,moe_psi_e6,uts_psi_e3\na,1.9,4.0\n")
    with pytest.raises(ValueError, match="missing columns.*failure_cell"):
        read_dataset(spec_path)


def test_read_dataset_rejects_bad_edge_flag(tmp_path):
    specimens = [Specimen(id="a", moe=1.9, uts=4.0, failure_cell=1)]
    spec_path, knot_path = write_pair(tmp_path, specimens)
    knot_path.write_text(
        "specimen_id,lx_in,ly_in,volume_in3,edge\n"
        "a,10.0,1.0,3.0,yes\n"
    )
    with pytest.raises(ValueError, match="edge must be 0 or 1"):
        read_dataset(spec_path, knot_path)


def test_read_dataset_rejects_orphan_knots(tmp_path):
    specimens = [Specimen(id="a", moe=1.9, uts=4.0, failure_cell=1)]
    spec_path, knot_path = write_pair(tmp_path, specimens)
    knot_path.write_text(
        "specimen_id,lx_in,ly_in,volume_in3,edge\n"
        "ghost,10.0,1.0,3.0,1\n"
    )
    with pytest.raises(ValueError, match=r"unknown specimen ids: \['ghost'\]"):
        read_dataset(spec_path, knot_path)


def test_column_map_translates_external_headers(tmp_path):
    spec_path = tmp_path / "external.csv"
    spec_path.write_text(
        "board,stiffness,strength,cell\n"
        "x1,1.9,4.25,7\n"
    )
    knot_path = tmp_path / "external_knots.csv"
    knot_path.write_text(
        "board,pos,offset,size,on_edge\n"
        "x1,10.5,2.0,3.5,1\n"
    )
    mapping = {
        "id": "board", "moe_psi_e6": "stiffness", "uts_psi_e3": "strength",
        "failure_cell": "cell", "specimen_id": "board", "lx_in": "pos",
        "ly_in": "offset", "volume_in3": "size", "edge": "on_edge",
    }
    back = read_dataset(spec_path, knot_path, column_map=mapping)
    assert back == [Specimen(id="x1", moe=1.9, uts=4.25, failure_cell=7,
                             knots=(Knot(x=10.5, y=2.0, volume=3.5, edge=True),))]


def test_load_column_map(tmp_path):
    path = tmp_path / "map.json"
    path.write_text('{"id": "board"}')
    assert load_column_map(path) == {"id": "board"}

    path.write_text('{"mystery": "board"}')
    with pytest.raises(ValueError, match="unknown canonical names"):
        load_column_map(path)

    path.write_text('{"id": 3}')
    with pytest.raises(ValueError, match="must name a column"):
        load_column_map(path)

    path.write_text('["id"]')
    with pytest.raises(ValueError, match="JSON object"):
        load_column_map(path)


def test_truth_sidecar_layout(tmp_path, tiny_dataset):
    path = tmp_path / "truth.csv"
    write_truth_csv(path, tiny_dataset)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == (["id"] + [f"x{j}" for j in range(1, 7)]
                       + [f"y{j}" for j in range(1, 7)])
    assert len(rows) == 1 + 5
    got = np.array([float(v) for v in rows[1][1:7]])
    np.testing.assert_array_equal(got, tiny_dataset.clear_strength[0])


# ----------------------------------------------------------------------
# draw tables
# ----------------------------------------------------------------------

def make_draws(n_chains=2, n_kept=4, seed=0):
    rng = np.random.default_rng(seed)
    params = np.abs(rng.standard_normal((n_chains, n_kept, 7))) / 3.0 + 0.1
    params[:, :, 2] = rng.uniform(0.2, 0.9, size=(n_chains, n_kept))
    return PosteriorDraws(
        params=params,
        param_names=ModelParams.PARAM_NAMES,
        log_posterior=rng.standard_normal((n_chains, n_kept)) * 100,
        accept_rate=rng.uniform(0.7, 0.95, size=n_chains),
        divergences=np.zeros(n_chains, dtype=int),
        step_size=rng.uniform(0.01, 0.2, size=n_chains),
        inv_mass=np.ones((n_chains, 9)),
    )


def test_draws_round_trip(tmp_path):
    draws = make_draws()
    path = tmp_path / "draws.csv"
    write_draws_csv(path, draws)
    back = read_draws_csv(path)
    np.testing.assert_array_equal(back.params, draws.params)
    np.testing.assert_array_equal(back.log_posterior, draws.log_posterior)
    assert back.param_names == ModelParams.PARAM_NAMES
    # sampler byproducts do not survive; placeholders signal that
    assert np.all(np.isnan(back.accept_rate))
    assert np.all(back.divergences == 0)
    assert back.inv_mass.shape == (2, 0)


def test_read_draws_errors(tmp_path):
    path = tmp_path / "draws.csv"
    header = ("chain,iteration,eta0,eta1,rho,sigma,beta,gamma0,gamma1,"
              "log_posterior\n")
    path.write_text(header)
    with pytest.raises(ValueError, match="no draws found"):
        read_draws_csv(path)

    path.write_text(header + "1,1,3,1.5,.7,.8,.5,.25,.15,-12\n"
                    + "1,2,3,1.5,.7,.8,.5,.25,.15,-12\n"
                    + "2,1,3,1.5,.7,.8,.5,.25,.15,-12\n")
    with pytest.raises(ValueError, match="unequal lengths"):
        read_draws_csv(path)

    path.write_text(header + "1,1,3,bad,.7,.8,.5,.25,.15,-12\n")
    with pytest.raises(ValueError, match="line 2: malformed"):
        read_draws_csv(path)

    path.write_text("chain,iteration\n1,1\n")
    with pytest.raises(ValueError, match="missing columns"):
        read_draws_csv(path)


# ----------------------------------------------------------------------
# summary tables
# ----------------------------------------------------------------------

def test_quantiles_table(tmp_path):
    path = tmp_path / "q.csv"
    quantiles = np.array([[1.0, 2.0], [0.5, 1.5], [1.5, 2.5]])
    write_quantiles_csv(path, ("eta0", "eta1"), quantiles)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["parameter", "q50", "q2.5", "q97.5"]
    assert rows[1] == ["eta0", "1", "0.5", "1.5"]

    with pytest.raises(ValueError, match="shaped"):
        write_quantiles_csv(path, ("eta0",), quantiles)


def make_ppc_report(rng):
    stats = {}
    for name in ("mean", "sd"):
        rep = rng.standard_normal(200)
        stats[name] = PpcStat(observed=0.1, p_value=0.5,
                              lower=float(np.quantile(rep, 0.025)),
                              upper=float(np.quantile(rep, 0.975)),
                              replicated=rep)
    return PpcReport(statistics=stats, n_draws=200)


def test_ppc_tables(tmp_path, rng):
    report = make_ppc_report(rng)
    path = tmp_path / "ppc_report.csv"
    write_ppc_csv(path, report)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["quantity", "observed", "lower95", "upper95", "p_value"]
    assert {r[0] for r in rows[1:]} == {"mean", "sd"}

    paths = write_ppc_histograms(tmp_path, report)
    assert sorted(os.path.basename(p) for p in paths) == [
        "ppc_hist_mean.csv", "ppc_hist_sd.csv"]
    with open(paths[0], newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["bin_left", "bin_right", "count"]
    assert sum(int(r[2]) for r in rows[1:]) == 200
    edges = [float(r[0]) for r in rows[1:]] + [float(rows[-1][1])]
    assert edges == sorted(edges)


def test_predictions_table(tmp_path):
    summary = PredictiveSummary(
        specimen_ids=("a", "b"), mean=np.array([4.0, 5.0]),
        lower=np.array([3.0, 4.2]), upper=np.array([5.5, 6.1]),
        level=0.95, samples=np.zeros((10, 2)),
    )
    path = tmp_path / "predictions.csv"
    write_predictions_csv(path, summary)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "prediction", "lower", "upper"]
    assert rows[1] == ["a", "4", "3", "5.5"]


def test_subgroup_table(tmp_path):
    path = tmp_path / "subgroup.csv"
    write_subgroup_csv(path, {"moe": (2.5, 0.25, 17)})
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows == [["model", "mspe", "mspe_se", "n_specimens"],
                    ["moe", "2.5", "0.25", "17"]]


def test_failed_write_leaves_nothing_behind(tmp_path):
    class BrokenReport:
        model_names = ("moe",)
        metrics = {}

    path = tmp_path / "cv_report.csv"
    with pytest.raises(KeyError):
        write_cv_csv(path, BrokenReport())
    assert not path.exists()
    assert [p for p in os.listdir(tmp_path) if p.startswith(".partial-")] == []


# ----------------------------------------------------------------------
# run configuration
# ----------------------------------------------------------------------

def test_load_config_defaults():
    assert load_config() == RunConfig()


def test_load_config_reads_and_coerces(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"n_cells": 6.0, "span_length": 24, "seed": 3,'
                    ' "kernel": "gaussian", "adapt_mass": false}')
    config = load_config(path)
    assert config.n_cells == 6 and isinstance(config.n_cells, int)
    assert config.span_length == 24.0
    assert config.kernel == "gaussian"
    assert config.adapt_mass is False
    assert config.grid().n_cells == 6
    assert config.hmc_config() == HmcConfig(seed=3, adapt_mass=False)
    assert config.sim_config().grid.span_length == 24.0
    assert config.truth().eta0 == 3.0


def test_load_config_overrides_win(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"seed": 3, "n_chains": 2}')
    config = load_config(path, overrides={"seed": 9})
    assert config.seed == 9
    assert config.n_chains == 2


def test_load_config_rejects_bad_input(tmp_path):
    path = tmp_path / "config.json"

    path.write_text('{"n_cellz": 6}')
    with pytest.raises(ValueError, match=r"unknown config keys: \['n_cellz'\]"):
        load_config(path)

    path.write_text('{"n_cells": 6.5}')
    with pytest.raises(ValueError, match="must be an integer"):
        load_config(path)

    path.write_text('{"kernel": 3}')
    with pytest.raises(ValueError, match="must be a string"):
        load_config(path)

    path.write_text('{"adapt_mass": "yes"}')
    with pytest.raises(ValueError, match="must be true or false"):
        load_config(path)

    path.write_text('{"moe_sd": "big"}')
    with pytest.raises(ValueError, match="must be a number"):
        load_config(path)

    path.write_text('{"seed": true}')
    with pytest.raises(ValueError, match="must be a number"):
        load_config(path)

    path.write_text('[1, 2]')
    with pytest.raises(ValueError, match="JSON object"):
        load_config(path)


def test_run_config_sim_round_trip(tmp_path):
    """A config's simulation settings regenerate the same dataset that the
    equivalent hand-built SimConfig produces."""
    config = load_config(overrides={"n_specimens": 4, "seed": 77})
    via_config = generate_dataset(config.sim_config())
    direct = generate_dataset(SimConfig(n_specimens=4, seed=77))
    assert via_config.specimens == direct.specimens
