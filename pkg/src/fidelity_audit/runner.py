"""Config-driven audits: dataset x blackbox x explainer x seed."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .blackbox import LOGISTIC_GRID, MLP_GRID, eval_blackbox, grid_search
from .data import encode, load_dataset, load_schema, oversample, split
from .errors import AuditError, ConfigInvalid, NonConvergence
from .local import JttConfig, LimeConfig, explain_lime_jtt_multi, explain_points, point_rng
from .metrics import ALL_METRICS, FidelityPairs, Metric, gap_report, preservation_check
from .probe import group_probe, mi_filter
from .stats import wilcoxon_one_sided
from .surrogates import (
    DEFAULT_BINS,
    DEFAULT_MIN_LEAF,
    TREE_DEPTHS,
    fit_additive_surrogate,
    fit_tree_surrogate,
    tune_tree_surrogate,
)
from . import synthetic

log = logging.getLogger(__name__)

LOCAL_METHODS = ("lime", "lime_jtt", "kernel_shap")
GLOBAL_METHODS = ("tree", "gam")
SWEEP_PARAMS = ("k", "sigma", "max_depth")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_LAMBDA_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
SHAP_BACKGROUND = 50


@dataclass
class ExplainerSpec:
    name: str
    method: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExplainerSpec":
        d = dict(d)
        method = d.pop("method", d.get("name"))
        name = d.pop("name", method)
        if method not in LOCAL_METHODS + GLOBAL_METHODS:
            raise ConfigInvalid(f"explainer {name!r}: unknown method {method!r}")
        return cls(name, method, d)


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict                       # {"path", "schema"} or {"synthetic", "params"}
    blackbox: dict
    explainers: list
    metrics: list = field(default_factory=lambda: [m.value for m in ALL_METRICS])
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    max_points: int | None = None       # cap on test points explained locally
    mi_threshold: float | None = None
    probe: bool = False
    sweep: dict | None = None
    output: str | None = None
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**{**d, "base_dir": str(base_dir)})
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}
        d.pop("base_dir")
        return d

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def explainer_specs(self) -> list[ExplainerSpec]:
        return [ExplainerSpec.from_dict(e) for e in self.explainers]

    def validate(self) -> None:
        ds = self.dataset
        if "synthetic" in ds:
            if ds["synthetic"] not in synthetic.GENERATORS:
                raise ConfigInvalid(f"unknown synthetic generator {ds['synthetic']!r}")
        else:
            for key in ("path", "schema"):
                if key not in ds:
                    raise ConfigInvalid(f"dataset.{key} is required")
                if not self.resolve(ds[key]).is_file():
                    raise ConfigInvalid(f"dataset.{key} not found: {ds[key]}")
        if self.blackbox.get("family") not in ("logistic", "mlp"):
            raise ConfigInvalid("blackbox.family must be 'logistic' or 'mlp'")
        if not self.explainers:
            raise ConfigInvalid("at least one explainer is required")
        names = [s.name for s in self.explainer_specs()]
        if len(set(names)) != len(names):
            raise ConfigInvalid("explainer names must be unique")
        for m in self.metrics:
            try:
                Metric(m)
            except ValueError:
                raise ConfigInvalid(f"unknown metric {m!r}") from None
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigInvalid("seeds must be a nonempty list of distinct integers")
        if self.sweep is not None and self.sweep.get("param") not in SWEEP_PARAMS:
            raise ConfigInvalid(f"sweep.param must be one of {SWEEP_PARAMS}")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            raw = yaml.safe_load(text)
        else:
            raw = json.loads(text)
    except Exception as exc:
        raise ConfigInvalid(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping")
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


# -- report bundle -------------------------------------------------------------

@dataclass
class ReportBundle:
    config: dict
    provenance: dict
    cells: list             # one per (seed, explainer)
    blackbox: list          # one per seed
    probes: list = field(default_factory=list)
    summary: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ReportBundle":
        return cls(**d)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path) -> "ReportBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def without_timestamps(self) -> dict:
        d = copy.deepcopy(self.to_dict())
        d["provenance"].pop("created", None)
        for cell in d["cells"]:
            cell.pop("seconds", None)
        for bb in d["blackbox"]:
            bb.pop("seconds", None)
        return d

    def cell(self, explainer: str, seed: int) -> dict:
        for c in self.cells:
            if c["explainer"] == explainer and c["seed"] == seed:
                return c
        raise KeyError((explainer, seed))

    def values(self, explainer: str, metric: str, stat: str) -> list:
        """Per-seed values of one statistic (``overall``/``delta``/``delta_group``)."""
        out = []
        for c in self.cells:
            if c["explainer"] == explainer and c.get("status") == "ok":
                out.append(c["gaps"][metric][stat])
        return out


def _load_data(cfg: ExperimentConfig):
    ds = cfg.dataset
    if "synthetic" in ds:
        return synthetic.GENERATORS[ds["synthetic"]](**ds.get("params", {}))
    return load_dataset(cfg.resolve(ds["path"]), load_schema(cfg.resolve(ds["schema"])))


def _train_blackbox(cfg, enc_train, seed):
    bb = cfg.blackbox
    family = bb["family"]
    data = enc_train
    if bb.get("oversample_class"):
        data = oversample(data, "class", seed)
    grid = bb.get("grid") or (LOGISTIC_GRID if family == "logistic" else MLP_GRID)
    if not bb.get("tune", True):
        grid = grid[:1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergence)
        res = grid_search(family, data.X, data.y, grid, bb.get("folds", 5), seed)
    return res


def _lime_config(params, seed):
    keys = ("n_perturbations", "sigma", "k", "ridge_lambda", "kernel_width", "clip_outputs")
    return LimeConfig(seed=seed, **{k: params[k] for k in keys if k in params})


def _cap(X, g, limit):
    if limit is None or len(X) <= limit:
        return X, g
    return X[:limit], g[:limit]


def _select_lambda(model, X, g, lime_cfg, grid, seed):
    """Upweighting factor with the smallest validation AUROC gap (ties: smaller)."""
    b = model.predict_proba(X)
    vals = {lam: [] for lam in grid}
    for i, x in enumerate(X):
        expl = explain_lime_jtt_multi(model, x, lime_cfg, grid, rng=point_rng(seed, i))
        for lam in grid:
            vals[lam].append(expl[lam].value)
    scores = {}
    for lam in grid:
        rep = gap_report(b, np.array(vals[lam]), g, Metric.AUROC)
        scores[lam] = rep.delta_group if rep.delta_group is not None else np.inf
    best = min(sorted(grid), key=lambda lam: scores[lam])
    return best, scores


def _explain(spec: ExplainerSpec, model, enc, sp, cfg, seed):
    """Explanation outputs on the (capped) test split plus bookkeeping info."""
    p = spec.params
    info = {}
    train = enc.take(sp.explainer_train)
    valid = enc.take(sp.explainer_valid)
    if p.get("balanced"):
        train = oversample(train, "group", seed)
    X_test, g_test = enc.X[sp.test], enc.g[sp.test]
    if spec.method in LOCAL_METHODS:
        X_test, g_test = _cap(X_test, g_test, cfg.max_points)
    if spec.method == "lime":
        expl = explain_points("lime", model, X_test, lime=_lime_config(p, seed), seed=seed)
        e = np.array([x.value for x in expl])
    elif spec.method == "lime_jtt":
        lime_cfg = _lime_config(p, seed)
        if "lambda_up" in p:
            lam = float(p["lambda_up"])
        else:
            grid = [float(v) for v in p.get("lambda_grid", DEFAULT_LAMBDA_GRID)]
            Xv, gv = _cap(valid.X, valid.g, cfg.max_points)
            lam, scores = _select_lambda(model, Xv, gv, lime_cfg, grid, seed)
            info["lambda_scores"] = {str(k): v for k, v in scores.items()}
        info["lambda_up"] = lam
        expl = explain_points("lime_jtt", model, X_test, lime=lime_cfg,
                              jtt=JttConfig(lambda_up=lam), seed=seed)
        e = np.array([x.value for x in expl])
    elif spec.method == "kernel_shap":
        rng = np.random.default_rng([seed, 7])
        n_bg = min(p.get("background", SHAP_BACKGROUND), train.n)
        background = train.X[rng.choice(train.n, size=n_bg, replace=False)]
        expl = explain_points("kernel_shap", model, X_test, background=background,
                              n_coalitions=p.get("n_coalitions"), k=p.get("k"), seed=seed)
        e = np.array([x.value for x in expl])
    elif spec.method == "tree":
        min_leaf = p.get("min_leaf", DEFAULT_MIN_LEAF)
        if "max_depth" in p:  # an explicit null means no depth cap
            tree = fit_tree_surrogate(model, train, p["max_depth"], min_leaf)
        else:
            tree, scores = tune_tree_surrogate(model, train, valid,
                                               p.get("depths", TREE_DEPTHS), min_leaf)
            info["depth_scores"] = {str(k): v for k, v in scores.items()}
        info["max_depth"] = tree.max_depth
        e = tree.predict_proba(X_test)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergence)
            gam = fit_additive_surrogate(model, train, p.get("bins", DEFAULT_BINS),
                                         soft_targets=p.get("soft_targets", False))
        info["converged"] = gam.converged
        e = gam.predict_proba(X_test)
    return model.predict_proba(X_test), e, g_test, info


def _json_keys(obj):
    """Stringify dict keys so a bundle survives a JSON round trip unchanged."""
    if isinstance(obj, dict):
        return {str(k): _json_keys(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_keys(v) for v in obj]
    return obj


def _run_seed(cfg: ExperimentConfig, dataset, seed: int):
    t0 = time.perf_counter()
    sp = split(dataset, seed)
    enc = encode(dataset, sp.blackbox_train)
    filt = None
    if cfg.mi_threshold is not None:
        filt = mi_filter(enc.take(sp.blackbox_train), threshold=cfg.mi_threshold)
        keep = [enc.columns.index(c) for c in filt.kept]
        enc = enc.select_features(keep)
    res = _train_blackbox(cfg, enc.take(sp.blackbox_train), seed)
    model = res.predictor
    perf = eval_blackbox(model, enc.X[sp.test], enc.y[sp.test], enc.g[sp.test])
    bb_record = {
        "seed": seed,
        "family": model.family,
        "config": model.config,
        "grid_index": res.best_index,
        "cv_auroc": [None if np.isnan(v) else float(v) for v in res.scores],
        "converged": model.converged,
        "performance": _json_keys(perf.to_dict()),
        "split_sizes": list(sp.sizes()),
        "seconds": time.perf_counter() - t0,
    }
    if filt is not None:
        bb_record["mi_filter"] = {"kept": filt.kept, "dropped": filt.dropped, "mi": filt.mi}
    probe_record = None
    if cfg.probe:
        probe_record = {"seed": seed,
                        "auroc": {str(k): v for k, v in
                                  group_probe(enc.X[sp.explainer_train],
                                              enc.g[sp.explainer_train], seed=seed).items()}}
    cells = []
    for spec in cfg.explainer_specs():
        t1 = time.perf_counter()
        cell = {"seed": seed, "explainer": spec.name, "method": spec.method}
        try:
            b, e, g, info = _explain(spec, model, enc, sp, cfg, seed)
            cell["gaps"] = {m: gap_report(b, e, g, m).to_dict() for m in cfg.metrics}
            try:
                chk = preservation_check(FidelityPairs(b, e, g))
                cell["preservation"] = {"lhs": chk.lhs, "rhs": chk.rhs,
                                        "abs_diff": chk.abs_diff,
                                        "dp_blackbox": chk.dp_b, "dp_explainer": chk.dp_e}
            except AuditError as exc:
                cell["preservation"] = {"error": type(exc).__name__}
            cell["info"] = info
            cell["n_points"] = int(len(b))
            cell["status"] = "ok"
        except (AuditError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("seed %s explainer %s failed: %s", seed, spec.name, exc)
            cell["status"] = "error"
            cell["error"] = {"type": type(exc).__name__, "message": str(exc)}
        cell["seconds"] = time.perf_counter() - t1
        cells.append(cell)
    return bb_record, probe_record, cells


def summarize(cells, metrics) -> list:
    """Mean, std and one-sided Wilcoxon p-value across seeds per statistic."""
    out = []
    names = list(dict.fromkeys(c["explainer"] for c in cells))
    for name in names:
        ok = [c for c in cells if c["explainer"] == name and c.get("status") == "ok"]
        for m in metrics:
            for stat in ("overall", "delta", "delta_group"):
                vals = [c["gaps"][m][stat] for c in ok if c["gaps"][m][stat] is not None]
                row = {"explainer": name, "metric": m, "stat": stat, "n": len(vals),
                       "mean": None, "std": None, "p_value": None}
                if vals:
                    row["mean"] = float(np.mean(vals))
                    row["std"] = float(np.std(vals))
                    if stat != "overall":
                        row["p_value"] = wilcoxon_one_sided(vals)
                out.append(row)
    return out


def run_audit(cfg: ExperimentConfig, threads: int = 1) -> ReportBundle:
    cfg.validate()
    dataset = _load_data(cfg)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda s: _run_seed(cfg, dataset, s), cfg.seeds))
    else:
        results = [_run_seed(cfg, dataset, s) for s in cfg.seeds]
    bbs, probes, cells = [], [], []
    for bb, pr, cs in results:  # already in seed order
        bbs.append(bb)
        if pr is not None:
            probes.append(pr)
        cells.extend(cs)
    provenance = {
        "config_hash": cfg.digest(),
        "seeds": list(cfg.seeds),
        "version": __version__,
        "dataset": cfg.dataset.get("path", cfg.dataset.get("synthetic")),
        "n_rows": dataset.n,
        "group_levels": list(dataset.group_levels),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    return ReportBundle(cfg.to_dict(), provenance, cells, bbs, probes,
                        summarize(cells, cfg.metrics))


def sweep_config(cfg: ExperimentConfig, param: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with the sweep parameter set on every applicable explainer."""
    if param not in SWEEP_PARAMS:
        raise ConfigInvalid(f"unknown sweep parameter {param!r}")
    targets = {"k": ("lime", "lime_jtt", "kernel_shap"), "sigma": ("lime", "lime_jtt"),
               "max_depth": ("tree",)}[param]
    d = cfg.to_dict()
    for e in d["explainers"]:
        if e.get("method", e.get("name")) in targets:
            e[param] = None if value is None else (int(value) if param != "sigma" else float(value))
    d["sweep"] = None
    return ExperimentConfig.from_dict(d, base_dir=cfg.base_dir)


def run_sweep(cfg: ExperimentConfig, param: str, values, threads: int = 1) -> list:
    """Long-format records: value, explainer, metric, group, seed, fidelity."""
    if not values:
        raise ConfigInvalid("sweep values must be nonempty")
    records = []
    for value in values:
        bundle = run_audit(sweep_config(cfg, param, value), threads)
        for c in bundle.cells:
            if c.get("status") != "ok":
                continue
            for m, rep in c["gaps"].items():
                for grp, fid in rep["per_group"].items():
                    records.append({"param": param, "value": value, "explainer": c["explainer"],
                                    "metric": m, "group": int(grp), "seed": c["seed"],
                                    "fidelity": fid})
    return records


# -- plot data -------------------------------------------------------------------

FIDELITY_FIELDS = ("dataset", "blackbox", "explainer", "metric", "group", "seed", "value")
GAP_FIELDS = ("dataset", "blackbox", "explainer", "metric", "seed", "overall", "delta",
              "argmax_group", "delta_group")


def _cell_str(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def emit_plot_data(bundle: ReportBundle, out_dir) -> dict:
    """Write long-format CSVs; missing values become empty cells."""
    if not bundle.cells:
        raise ValueError("bundle has no cells")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = bundle.provenance.get("dataset") or ""
    family = bundle.config["blackbox"]["family"]
    fid_path, gap_path = out_dir / "fidelity.csv", out_dir / "gaps.csv"
    groups = range(len(bundle.provenance.get("group_levels", [])))
    with fid_path.open("w", newline="") as fh, gap_path.open("w", newline="") as gh:
        fw, gw = csv.writer(fh), csv.writer(gh)
        fw.writerow(FIDELITY_FIELDS)
        gw.writerow(GAP_FIELDS)
        for c in bundle.cells:
            if c.get("status") != "ok":
                continue
            for m, rep in c["gaps"].items():
                for grp in groups:
                    val = rep["per_group"].get(str(grp))
                    fw.writerow([dataset, family, c["explainer"], m, grp, c["seed"],
                                 _cell_str(val)])
                gw.writerow([dataset, family, c["explainer"], m, c["seed"]]
                            + [_cell_str(rep[k]) for k in GAP_FIELDS[5:]])
    return {"fidelity": fid_path, "gaps": gap_path}


def read_plot_data(path) -> list[dict]:
    """Parse a CSV written by :func:`emit_plot_data`; empty cells become None."""
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                if v == "":
                    parsed[k] = None
                elif k in ("group", "seed", "argmax_group"):
                    parsed[k] = int(v)
                elif k in ("value", "overall", "delta", "delta_group"):
                    parsed[k] = float(v)
                else:
                    parsed[k] = v
            rows.append(parsed)
    return rows


def write_records(records: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not records:
        path.write_text("")
        return path
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(records[0]))
        w.writeheader()
        for r in records:
            w.writerow({k: _cell_str(v) for k, v in r.items()})
    return path
