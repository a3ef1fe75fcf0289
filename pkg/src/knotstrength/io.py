"""File formats: specimen/knot CSV tables, draw and summary tables, and
the flat JSON run configuration.

All floats are written with 17 significant digits so a round trip through
CSV reproduces the double exactly.  Writers go through a temp file in the
target directory followed by an atomic rename, so readers never observe a
half-written table.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from .data import CellGrid, Knot, ModelParams, Specimen
from .hmc import HmcConfig, PosteriorDraws
from .model import DecayKernel
from .simulate import SimConfig

SPECIMEN_COLUMNS = ("id", "moe_psi_e6", "uts_psi_e3", "failure_cell")
KNOT_COLUMNS = ("specimen_id", "lx_in", "ly_in", "volume_in3", "edge")
DRAW_COLUMNS = ("chain", "iteration") + ModelParams.PARAM_NAMES + ("log_posterior",)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _atomic_writer(path):
    """Context manager for atomic text file creation."""
    return _AtomicFile(path)


class _AtomicFile:
    def __init__(self, path):
        self.path = os.path.abspath(path)

    def __enter__(self):
        directory = os.path.dirname(self.path)
        fd, self._tmp = tempfile.mkstemp(dir=directory, prefix=".partial-")
        self._fh = os.fdopen(fd, "w", newline="")
        return self._fh

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None:
            os.replace(self._tmp, self.path)
        else:
            os.unlink(self._tmp)
        return False


# ----------------------------------------------------------------------
# specimen and knot tables
# ----------------------------------------------------------------------

def write_specimens_csv(path, specimens) -> None:
    """id, moe_psi_e6, uts_psi_e3, failure_cell; outcome cells are empty
    for untested specimens."""
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(SPECIMEN_COLUMNS)
        for s in specimens:
            writer.writerow([
                s.id,
                _fmt(s.moe),
                _fmt(s.uts) if s.uts is not None else "",
                str(s.failure_cell) if s.failure_cell is not None else "",
            ])


def write_knots_csv(path, specimens) -> None:
    """specimen_id, lx_in, ly_in, volume_in3, edge (0/1); one row per knot."""
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(KNOT_COLUMNS)
        for s in specimens:
            for k in s.knots:
                writer.writerow([
                    s.id, _fmt(k.x), _fmt(k.y), _fmt(k.volume), str(int(k.edge)),
                ])


def load_column_map(path) -> dict:
    """JSON object mapping canonical column names to the names actually
    used in an external file; only canonical names may appear as keys."""
    with open(path) as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict):
        raise ValueError("column map must be a JSON object")
    allowed = set(SPECIMEN_COLUMNS) | set(KNOT_COLUMNS)
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ValueError(f"column map has unknown canonical names: {unknown}")
    for key, value in mapping.items():
        if not isinstance(value, str):
            raise ValueError(f"column map entry {key!r} must name a column")
    return mapping


def _read_rows(path, required, column_map):
    column_map = column_map or {}
    actual = {name: column_map.get(name, name) for name in required}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [actual[name] for name in required if actual[name] not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = []
        for line, row in enumerate(reader, start=2):
            rows.append((line, {name: row[actual[name]] for name in required}))
    return rows


def _parse_float(text, path, line, column):
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{path} line {line}: {column} is not a number: {text!r}") from None


def read_dataset(specimens_path, knots_path=None, column_map=None):
    """Load specimens, attaching knot rows by specimen id.

    column_map translates canonical column names to whatever the files
    use, allowing ingestion of externally formatted tables; unmapped extra
    columns are ignored.  Returns specimens in file order.
    """
    knots_by_id: dict = {}
    if knots_path is not None:
        for line, row in _read_rows(knots_path, KNOT_COLUMNS, column_map):
            edge_text = row["edge"].strip()
            if edge_text not in ("0", "1"):
                raise ValueError(
                    f"{knots_path} line {line}: edge must be 0 or 1, got {edge_text!r}"
                )
            knot = Knot(
                x=_parse_float(row["lx_in"], knots_path, line, "lx_in"),
                y=_parse_float(row["ly_in"], knots_path, line, "ly_in"),
                volume=_parse_float(row["volume_in3"], knots_path, line, "volume_in3"),
                edge=edge_text == "1",
            )
            knots_by_id.setdefault(row["specimen_id"], []).append(knot)

    specimens = []
    seen = set()
    for line, row in _read_rows(specimens_path, SPECIMEN_COLUMNS, column_map):
        sid = row["id"]
        seen.add(sid)
        uts_text = row["uts_psi_e3"].strip()
        cell_text = row["failure_cell"].strip()
        uts = _parse_float(uts_text, specimens_path, line, "uts_psi_e3") if uts_text else None
        failure_cell = None
        if cell_text:
            try:
                failure_cell = int(cell_text)
            except ValueError:
                raise ValueError(
                    f"{specimens_path} line {line}: failure_cell is not an "
                    f"integer: {cell_text!r}"
                ) from None
        try:
            specimens.append(Specimen(
                id=sid,
                moe=_parse_float(row["moe_psi_e6"], specimens_path, line, "moe_psi_e6"),
                knots=tuple(knots_by_id.get(sid, ())),
                uts=uts,
                failure_cell=failure_cell,
            ))
        except ValueError as exc:
            raise ValueError(f"{specimens_path} line {line}: {exc}") from None

    orphans = sorted(set(knots_by_id) - seen)
    if orphans:
        raise ValueError(f"knot rows reference unknown specimen ids: {orphans}")
    return specimens


def write_truth_csv(path, dataset) -> None:
    """Simulation sidecar: per specimen, the clear strengths x1..xJ then
    the knot-adjusted strengths y1..yJ."""
    n_cells = dataset.clear_strength.shape[1]
    header = (["id"] + [f"x{j}" for j in range(1, n_cells + 1)]
              + [f"y{j}" for j in range(1, n_cells + 1)])
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, s in enumerate(dataset.specimens):
            writer.writerow(
                [s.id]
                + [_fmt(v) for v in dataset.clear_strength[i]]
                + [_fmt(v) for v in dataset.adjusted_strength[i]]
            )


# ----------------------------------------------------------------------
# draw and summary tables
# ----------------------------------------------------------------------

def write_draws_csv(path, draws: PosteriorDraws) -> None:
    """One row per kept draw: chain and iteration (both 1-based), the
    seven parameters, and the log posterior density."""
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(DRAW_COLUMNS)
        for c in range(draws.n_chains):
            for it in range(draws.n_kept):
                writer.writerow(
                    [str(c + 1), str(it + 1)]
                    + [_fmt(v) for v in draws.params[c, it]]
                    + [_fmt(draws.log_posterior[c, it])]
                )


def read_draws_csv(path) -> PosteriorDraws:
    """Rebuild draws from a table written by write_draws_csv.

    Only the draws themselves survive the round trip; sampler byproducts
    (acceptance rates, step sizes, mass matrix) come back as placeholders.
    """
    chains: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in DRAW_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for line, row in enumerate(reader, start=2):
            try:
                chain = int(row["chain"])
                values = [float(row[name]) for name in ModelParams.PARAM_NAMES]
                logp = float(row["log_posterior"])
            except ValueError:
                raise ValueError(f"{path} line {line}: malformed draw row") from None
            chains.setdefault(chain, []).append((values, logp))
    if not chains:
        raise ValueError(f"{path}: no draws found")
    lengths = {len(rows) for rows in chains.values()}
    if len(lengths) != 1:
        raise ValueError(f"{path}: chains have unequal lengths {sorted(lengths)}")
    order = sorted(chains)
    params = np.array([[v for v, _ in chains[c]] for c in order])
    logp = np.array([[lp for _, lp in chains[c]] for c in order])
    n_chains = len(order)
    return PosteriorDraws(
        params=params,
        param_names=ModelParams.PARAM_NAMES,
        log_posterior=logp,
        accept_rate=np.full(n_chains, np.nan),
        divergences=np.zeros(n_chains, dtype=int),
        step_size=np.full(n_chains, np.nan),
        inv_mass=np.zeros((n_chains, 0)),
    )


def write_quantiles_csv(path, param_names, quantiles) -> None:
    """parameter, q50, q2.5, q97.5 rows; quantiles arrives as a (3, P)
    array ordered (median, lower, upper)."""
    quantiles = np.asarray(quantiles, dtype=float)
    if quantiles.shape != (3, len(param_names)):
        raise ValueError(
            f"expected quantiles shaped (3, {len(param_names)}), got {quantiles.shape}"
        )
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "q50", "q2.5", "q97.5"])
        for j, name in enumerate(param_names):
            writer.writerow([name] + [_fmt(quantiles[i, j]) for i in range(3)])


def write_ppc_csv(path, report) -> None:
    """quantity, observed, lower95, upper95, p_value per test quantity."""
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "observed", "lower95", "upper95", "p_value"])
        for name, stat in report.statistics.items():
            writer.writerow([name, _fmt(stat.observed), _fmt(stat.lower),
                             _fmt(stat.upper), _fmt(stat.p_value)])


def write_ppc_histograms(out_dir, report, bins: int = 30) -> list:
    """One histogram table per test quantity: bin_left, bin_right, count.
    Returns the written paths."""
    paths = []
    for name, stat in report.statistics.items():
        counts, edges = np.histogram(stat.replicated, bins=bins)
        path = os.path.join(out_dir, f"ppc_hist_{name}.csv")
        with _atomic_writer(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            for i, count in enumerate(counts):
                writer.writerow([_fmt(edges[i]), _fmt(edges[i + 1]), str(int(count))])
        paths.append(path)
    return paths


def write_cv_csv(path, report) -> None:
    columns = ["model", "mspe", "mspe_se", "mape", "mape_se",
               "interval_length", "interval_length_se", "coverage",
               "mean_prediction"]
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for name in report.model_names:
            m = report.metrics[name]
            writer.writerow([name] + [_fmt(getattr(m, c)) for c in columns[1:]])


def write_subgroup_csv(path, subgroup) -> None:
    """model, mspe, mspe_se, n_specimens for one subgroup analysis."""
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "mspe", "mspe_se", "n_specimens"])
        for name, (mspe, se, count) in subgroup.items():
            writer.writerow([name, _fmt(mspe), _fmt(se), str(count)])


def write_predictions_csv(path, summary) -> None:
    """id, prediction, lower, upper for a PredictiveSummary."""
    with _atomic_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "prediction", "lower", "upper"])
        for i, sid in enumerate(summary.specimen_ids):
            writer.writerow([
                sid, _fmt(summary.mean[i]), _fmt(summary.lower[i]),
                _fmt(summary.upper[i]),
            ])


# ----------------------------------------------------------------------
# run configuration
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; the JSON file may set any subset of these
    keys and nothing else.  Defaults reproduce the standard setup: a 24
    cell 8-foot span, exponential decay, four chains of 10000 iterations
    with the first 5000 as warmup.
    """

    n_cells: int = 24
    span_length: float = 96.0
    width: float = 5.5
    cutoff: float = 96.0
    kernel: str = "exponential"
    n_chains: int = 4
    iterations: int = 10000
    warmup: int = 5000
    target_accept: float = 0.8
    max_leapfrog_steps: int = 1024
    trajectory_time: float = 1.5
    seed: int = 0
    adapt_mass: bool = True
    n_predict_draws: int = 2000
    level: float = 0.95
    cv_folds: int = 5
    n_specimens: int = 120
    true_eta0: float = 3.0
    true_eta1: float = 1.5
    true_rho: float = 0.7
    true_sigma: float = 0.8
    true_beta: float = 0.5
    true_gamma0: float = 0.25
    true_gamma1: float = 0.15
    moe_mean: float = 1.9
    moe_sd: float = 0.25
    knot_rate: float = 0.01
    edge_prob: float = 0.6
    volume_shape: float = 2.0
    volume_scale: float = 6.0

    def grid(self) -> CellGrid:
        return CellGrid(n_cells=self.n_cells, span_length=self.span_length,
                        width=self.width, cutoff=self.cutoff)

    def decay_kernel(self) -> DecayKernel:
        return DecayKernel(self.kernel)

    def hmc_config(self) -> HmcConfig:
        return HmcConfig(
            n_chains=self.n_chains, iterations=self.iterations,
            warmup=self.warmup, target_accept=self.target_accept,
            max_leapfrog_steps=self.max_leapfrog_steps,
            trajectory_time=self.trajectory_time, seed=self.seed,
            adapt_mass=self.adapt_mass,
        )

    def truth(self) -> ModelParams:
        return ModelParams(
            eta0=self.true_eta0, eta1=self.true_eta1, rho=self.true_rho,
            sigma=self.true_sigma, beta=self.true_beta,
            gamma0=self.true_gamma0, gamma1=self.true_gamma1,
        )

    def sim_config(self) -> SimConfig:
        return SimConfig(
            n_specimens=self.n_specimens, params=self.truth(),
            grid=self.grid(), kernel=self.decay_kernel(),
            moe_mean=self.moe_mean, moe_sd=self.moe_sd,
            knot_rate=self.knot_rate, edge_prob=self.edge_prob,
            volume_shape=self.volume_shape, volume_scale=self.volume_scale,
            seed=self.seed,
        )


def load_config(path=None, overrides=None) -> RunConfig:
    """Read a JSON run configuration.

    Unknown keys are a hard error rather than a silent ignore, so typos in
    option names cannot pass unnoticed.  overrides (a dict) wins over the
    file; path None means all defaults.
    """
    settings = {}
    if path is not None:
        with open(path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        settings.update(loaded)
    if overrides:
        settings.update(overrides)

    int_keys = {"n_cells", "n_chains", "iterations", "warmup",
                "max_leapfrog_steps", "seed", "n_predict_draws", "cv_folds",
                "n_specimens"}
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(settings) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}")
    for key, value in settings.items():
        if key == "kernel":
            if not isinstance(value, str):
                raise ValueError(f"config key {key!r} must be a string")
        elif key == "adapt_mass":
            if not isinstance(value, bool):
                raise ValueError(f"config key {key!r} must be true or false")
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"config key {key!r} must be a number")
        elif key in int_keys:
            if value != int(value):
                raise ValueError(f"config key {key!r} must be an integer")
            settings[key] = int(value)
    return RunConfig(**settings)
