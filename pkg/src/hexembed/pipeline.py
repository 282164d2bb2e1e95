"""Config-driven pipeline stages with run manifests.

Each stage writes into a scratch directory and moves its files into place
only when it succeeds, so a failed stage leaves no partial outputs. Every
output gets a ``<file>.meta.json`` sidecar carrying the config digest; the
stage manifest lists outputs with their hashes and timings.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ._version import __version__
from ._io import write_json
from .analysis import (
    arithmetic_query,
    cut,
    interpolation_path,
    nearest_to_region,
    read_assignment,
    ward_cluster,
    write_assignment,
    write_dendrogram,
    write_query,
)
from .exceptions import ConfigError, DataError, EmptyMatrixError, RegionLookupError
from .export import assignment_geojson, path_geojson, query_geojson, write_geojson
from .featurize import (
    TagVocabulary,
    build_vocabulary,
    concat_matrices,
    count_tags,
    coverage_stats,
    drop_empty_regions,
    read_feature_matrix,
    write_coverage,
    write_feature_matrix,
)
from .grid import make_grid
from .ingest import TagFilter, build_city_dataset, load_boundary, read_elements
from .model import (
    EncoderConfig,
    TrainConfig,
    embed_all,
    read_embeddings,
    save_weights,
    train,
    write_embeddings,
    write_loss_history,
)
from .sampling import SamplerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

DEFAULTS = {
    "input": {
        "grid": "h3",
        "resolution": 9,
        "cities": [],
        "tag_filter": None,
        "vocabulary": None,
        "strict": False,
    },
    "encoder": {
        "embedding_dim": 50,
        "hidden_dims": [256],
        "activation": "relu",
        "input_transform": "raw",
        "init_seed": 0,
    },
    "training": {
        "epochs": 25,
        "batch_size": 256,
        "learning_rate": 1e-3,
        "optimizer": "adam",
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "rng_seed": 0,
    },
    "sampler": {
        "negatives_per_pair": 1,
        "exclusion_radius": 2,
        "same_city": True,
        "rng_seed": 1,
    },
    "analysis": {
        "k": 10,
        "cities": None,
        "metric": "cosine",
        "top_n": 5,
        "steps": 5,
    },
    "output": {"dir": "out"},
}


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {where}{key} must be a table")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class PipelineConfig:
    data: dict
    base_dir: str = "."
    source: str | None = None

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            if str(path).endswith(".json"):
                doc = json.loads(raw)
            else:
                doc = tomllib.loads(raw.decode("utf-8"))
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)), str(path))

    @classmethod
    def from_dict(cls, doc, base_dir=".", source=None):
        return cls(_merge(DEFAULTS, doc), base_dir, source)

    def __getitem__(self, section):
        return self.data[section]

    def resolve(self, path):
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def out_dir(self):
        return self.resolve(self.data["output"]["dir"])

    def override(self, out=None, seed=None, city=None, resolution=None):
        """Copy of this config with command-line overrides applied."""
        d = copy.deepcopy(self.data)
        if out is not None:
            d["output"]["dir"] = os.path.abspath(out)
        if seed is not None:
            d["encoder"]["init_seed"] = int(seed)
            d["training"]["rng_seed"] = int(seed)
            d["sampler"]["rng_seed"] = int(seed) + 1
        if city:
            d["analysis"]["cities"] = list(city)
            known = [c for c in d["input"]["cities"] if c.get("name") in city]
            if d["input"]["cities"] and not known:
                raise ConfigError(f"--city {city}: no such city in the config")
            d["input"]["cities"] = known
        if resolution is not None:
            d["input"]["resolution"] = int(resolution)
        return PipelineConfig(d, self.base_dir, self.source)

    def digest(self) -> str:
        """Hash of everything that determines outputs (the output dir does not)."""
        d = copy.deepcopy(self.data)
        d.pop("output", None)
        for c in d["input"]["cities"]:
            for key in ("elements", "boundary"):
                if key in c:
                    c[key] = self.resolve(c[key])
        for key in ("tag_filter", "vocabulary"):
            d["input"][key] = self.resolve(d["input"][key])
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate_inputs(self):
        cities = self["input"]["cities"]
        if not cities:
            raise ConfigError("config lists no input cities ([[input.cities]])")
        for c in cities:
            for key in ("elements", "boundary"):
                if key not in c:
                    raise ConfigError(f"city entry {c} lacks '{key}'")
                if not os.path.exists(self.resolve(c[key])):
                    raise ConfigError(f"input file not found: {self.resolve(c[key])}")
        for key in ("tag_filter", "vocabulary"):
            p = self["input"][key]
            if p is not None and not os.path.exists(self.resolve(p)):
                raise ConfigError(f"input file not found: {self.resolve(p)}")

    def grid(self):
        return make_grid(self["input"]["grid"], self["input"]["resolution"])

    def encoder_config(self, input_dim):
        e = self["encoder"]
        return EncoderConfig(input_dim, tuple(e["hidden_dims"]), e["embedding_dim"], e["activation"],
                             e["input_transform"], e["init_seed"])

    def train_config(self):
        return TrainConfig(**self["training"])

    def sampler_config(self):
        s = self["sampler"]
        return SamplerConfig(s["negatives_per_pair"], s["exclusion_radius"], s["rng_seed"], s["same_city"])

    def tag_filter(self):
        p = self.resolve(self["input"]["tag_filter"])
        if p is None:
            return TagFilter()
        with open(p, encoding="utf-8") as fh:
            doc = json.load(fh)
        return TagFilter(tuple(doc.get("allowed_keys", TagFilter().allowed_keys)),
                         frozenset(tuple(x) for x in doc.get("discarded_pairs", TagFilter().discarded_pairs)))

    def seeds(self):
        return {"init_seed": self["encoder"]["init_seed"], "train_seed": self["training"]["rng_seed"],
                "sampler_seed": self["sampler"]["rng_seed"]}


@dataclass
class RunManifest:
    stage: str
    config_digest: str
    version: str = __version__
    outputs: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def to_dict(self):
        return {"stage": self.stage, "config_digest": self.config_digest, "toolkit_version": self.version,
                "seeds": self.seeds, "counts": self.counts, "outputs": self.outputs,
                "wall_clock_s": self.wall_clock}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class StageRun:
    """Collects a stage's outputs in scratch space; publishes them on success."""

    def __init__(self, cfg: PipelineConfig, stage: str):
        self.cfg = cfg
        self.stage = stage
        self.out_dir = cfg.out_dir
        self.scratch = os.path.join(self.out_dir, f".tmp-{stage}")
        self.manifest = RunManifest(stage, cfg.digest(), seeds=cfg.seeds())
        self._files = []

    def path(self, name):
        self._files.append(name)
        return os.path.join(self.scratch, name)

    def final(self, name):
        return os.path.join(self.out_dir, name)

    def _publish(self):
        meta = {"config_digest": self.manifest.config_digest, "stage": self.stage,
                "manifest": f"manifest_{self.stage}.json", "toolkit_version": __version__}
        for name in self._files:
            src = os.path.join(self.scratch, name)
            write_json(src + ".meta.json", dict(meta, file=name))
            self.manifest.outputs.append({"file": name, "sha256": _sha256(src)})
        for name in self._files:
            for suffix in ("", ".meta.json"):
                os.replace(os.path.join(self.scratch, name + suffix), self.final(name + suffix))
        write_json(self.final(f"manifest_{self.stage}.json"), self.manifest.to_dict())
        shutil.rmtree(self.scratch, ignore_errors=True)

    @contextmanager
    def run(self):
        os.makedirs(self.out_dir, exist_ok=True)
        shutil.rmtree(self.scratch, ignore_errors=True)
        os.makedirs(self.scratch)
        start = time.perf_counter()
        try:
            yield self
        except BaseException:
            shutil.rmtree(self.scratch, ignore_errors=True)
            raise
        self.manifest.wall_clock[self.stage] = time.perf_counter() - start
        self._publish()


# -- stages ------------------------------------------------------------------

def featurize(cfg: PipelineConfig, echo=print):
    cfg.validate_inputs()
    grid = cfg.grid()
    tag_filter = cfg.tag_filter()
    stage = StageRun(cfg, "featurize")
    with stage.run():
        datasets = []
        for entry in cfg["input"]["cities"]:
            name, boundary = load_boundary(cfg.resolve(entry["boundary"]))
            name = entry.get("name", name)
            parsed = read_elements(cfg.resolve(entry["elements"]), strict=cfg["input"]["strict"])
            if parsed.errors:
                log.warning("%s: %d malformed records skipped", name, len(parsed.errors))
            datasets.append(build_city_dataset(name, boundary, parsed.elements, tag_filter))
            log.info("%s: %d elements after filtering and clipping", name, len(datasets[-1].elements))
        if not any(ds.elements for ds in datasets):
            raise EmptyMatrixError("no tagged elements survived parsing, filtering and clipping")

        explicit = None
        if cfg["input"]["vocabulary"]:
            explicit = TagVocabulary.load(cfg.resolve(cfg["input"]["vocabulary"])).features
        vocab = build_vocabulary(datasets, tag_filter, explicit)
        parts = [count_tags(ds, grid, vocab) for ds in datasets]
        parts = [m for m in parts if m.shape[0]]
        if not parts:
            raise EmptyMatrixError("no region received any element")
        matrix = drop_empty_regions(concat_matrices(parts))
        stats = coverage_stats(matrix)

        write_feature_matrix(matrix, stage.path("features.csv"))
        vocab.save(stage.path("vocabulary.txt"))
        write_coverage(stats, stage.path("coverage_percent.csv"), stage.path("coverage_normalized.csv"))
        per_city = {c: matrix.cities.count(c) for c in dict.fromkeys(matrix.cities)}
        with open(stage.path("region_counts.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("city,regions\n")
            for c, n in per_city.items():
                fh.write(f"{c},{n}\n")
        stage.manifest.counts = {"regions": matrix.shape[0], "features": matrix.shape[1],
                                 "regions_per_city": per_city}
    echo(f"feature matrix: {matrix.shape[0]} regions x {matrix.shape[1]} features")
    for c, n in per_city.items():
        echo(f"  {c}: {n} regions")
    return matrix


def _load_features(cfg):
    path = os.path.join(cfg.out_dir, "features.csv")
    if not os.path.exists(path):
        raise DataError(f"{path} not found; run 'featurize' first")
    return read_feature_matrix(path)


def train_stage(cfg: PipelineConfig, echo=print):
    matrix = _load_features(cfg)
    grid = cfg.grid()
    enc = cfg.encoder_config(matrix.shape[1])
    tcfg, scfg = cfg.train_config(), cfg.sampler_config()
    stage = StageRun(cfg, "train")
    with stage.run():
        params, history = train(matrix, grid, enc, tcfg, scfg)
        emb = embed_all(params, enc, matrix, run_id=stage.manifest.config_digest[:16])
        save_weights(stage.path("weights.json"), params, enc, cfg.seeds())
        write_embeddings(stage.path("embeddings.csv"), emb)
        write_loss_history(stage.path("loss_history.csv"), history)
        stage.manifest.counts = {"regions": emb.vectors.shape[0], "embedding_dim": emb.dim,
                                 "epochs": len(history)}
    echo(f"trained {len(history)} epochs; final mean loss {history[-1].mean_loss:.6f}")
    return params, history, emb


def _load_embeddings(cfg):
    path = os.path.join(cfg.out_dir, "embeddings.csv")
    if not os.path.exists(path):
        raise DataError(f"{path} not found; run 'train' first")
    return read_embeddings(path)


def _check_region(emb, region):
    if region not in emb.row_index():
        raise RegionLookupError(region)


def analyze(cfg: PipelineConfig, sub: str, args: dict, echo=print):
    emb = _load_embeddings(cfg)
    a = cfg["analysis"]
    cities = a["cities"]
    grid = cfg.grid()
    stage = StageRun(cfg, f"analyze-{sub}")
    with stage.run():
        if sub == "cluster":
            sel = emb.select_cities(cities) if cities else emb
            k = int(args.get("k") or a["k"])
            dendro = ward_cluster(sel)
            assignment = cut(dendro, k)
            write_dendrogram(stage.path("dendrogram.csv"), dendro)
            write_assignment(stage.path("assignment.csv"), assignment, sel.cities)
            write_geojson(stage.path("assignment.geojson"),
                          assignment_geojson(sel.regions, sel.cities, assignment.labels, grid))
            report = {"k": k, "regions": len(sel.regions),
                      "cluster_sizes": np.bincount(assignment.labels, minlength=k).tolist()}
            if args.get("truth"):
                from sklearn.metrics import adjusted_rand_score

                t_regions, _, t_labels = read_assignment(args["truth"])
                truth = dict(zip(t_regions, t_labels))
                missing = [r for r in sel.regions if r not in truth]
                if missing:
                    raise RegionLookupError(missing[0])
                report["ari"] = float(adjusted_rand_score([truth[r] for r in sel.regions], assignment.labels))
                echo(f"ARI vs truth: {report['ari']:.4f}")
            write_json(stage.path("cluster_report.json"), report)
            echo(f"clustered {len(sel.regions)} regions into {k} clusters")
            result = report
        elif sub == "nearest":
            region = args["region"]
            _check_region(emb, region)
            result = nearest_to_region(region, emb, args.get("metric") or a["metric"],
                                       int(args.get("top") or a["top_n"]),
                                       exclude_self=not args.get("include_self", False), cities=cities)
            write_query(stage.path("nearest.json"), result)
            write_geojson(stage.path("nearest.geojson"), query_geojson(result, grid))
            _echo_hits(result, echo)
        elif sub in ("add", "sub"):
            for r in (args["a"], args["b"]):
                _check_region(emb, r)
            result = arithmetic_query(sub, args["a"], args["b"], emb,
                                      exclude_inputs=not args.get("keep_inputs", False),
                                      top_n=int(args.get("top") or a["top_n"]), cities=cities)
            write_query(stage.path(f"{sub}.json"), result)
            write_geojson(stage.path(f"{sub}.geojson"), query_geojson(result, grid))
            _echo_hits(result, echo)
        elif sub == "interpolate":
            for r in (args["from"], args["to"]):
                _check_region(emb, r)
            steps = int(args.get("steps") or a["steps"])
            path = interpolation_path(args["from"], args["to"], emb, steps,
                                      args.get("metric") or a["metric"], cities)
            result = {"query": {"type": "interpolate", "from": args["from"], "to": args["to"], "steps": steps},
                      "path": path}
            write_json(stage.path("interpolate.json"), result)
            write_geojson(stage.path("interpolate.geojson"), path_geojson(path, grid))
            for p in path:
                echo(f"  t={p['t']:.3f}  {p['region_id']}  ({p['city']})")
        else:
            raise ConfigError(f"unknown analysis {sub!r}")
    return result


def _echo_hits(result, echo):
    for h in result.hits:
        echo(f"  {h['rank']:>3}  {h['region_id']}  {h['city']}  distance={h['distance']:.6f}")


def export_geojson(cfg: PipelineConfig, input_path, output_path, echo=print):
    grid = cfg.grid()
    if input_path.endswith(".csv"):
        regions, cities, labels = read_assignment(input_path)
        doc = assignment_geojson(regions, cities, labels, grid)
    else:
        with open(input_path, encoding="utf-8") as fh:
            q = json.load(fh)
        if "path" in q:
            doc = path_geojson(q["path"], grid)
        else:
            from .analysis import QueryResult

            doc = query_geojson(QueryResult(q["query"], q["hits"], q.get("metric", "cosine")), grid)
    write_geojson(output_path, doc)
    echo(f"wrote {len(doc['features'])} features to {output_path}")
    return doc


def stats(cfg: PipelineConfig, echo=print):
    matrix = _load_features(cfg)
    cov = coverage_stats(matrix)
    echo(f"{matrix.shape[0]} regions x {matrix.shape[1]} features")
    width = max(len(c) for c in cov.cities)
    echo(" " * width + "  " + " ".join(f"{k[:8]:>8}" for k in cov.keys))
    for i, c in enumerate(cov.cities):
        echo(f"{c:<{width}}  " + " ".join(f"{v:8.1f}" for v in cov.percent[i]))
    return cov


__all__ = ["PipelineConfig", "RunManifest", "StageRun", "analyze", "export_geojson",
           "featurize", "stats", "train_stage"]
