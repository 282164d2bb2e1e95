"""Hexagonal region embeddings from OpenStreetMap tag counts."""

from ._version import __version__
from .analysis import (
    ClusterAssignment,
    Dendrogram,
    QueryResult,
    WardClustering,
    arithmetic_query,
    cosine_distance,
    cut,
    euclidean_distance,
    interpolate,
    interpolation_path,
    nearest,
    nearest_to_region,
    ward_cluster,
)
from .exceptions import HexEmbedError
from .featurize import FeatureMatrix, TagCountVectorizer, TagVocabulary, build_vocabulary, count_tags
from .grid import GridProvider, H3Grid, SyntheticGrid, make_grid
from .ingest import CityDataset, OsmElement, TagFilter, parse_elements
from .model import EmbeddingMatrix, EncoderConfig, Hex2Vec, TrainConfig, embed_all, train
from .pipeline import PipelineConfig
from .sampling import SamplerConfig, epoch_stream

__all__ = [
    "__version__",
    "CityDataset", "ClusterAssignment", "Dendrogram", "EmbeddingMatrix", "EncoderConfig", "FeatureMatrix",
    "GridProvider", "H3Grid", "Hex2Vec", "HexEmbedError", "OsmElement", "PipelineConfig", "QueryResult",
    "SamplerConfig", "SyntheticGrid", "TagCountVectorizer", "TagFilter", "TagVocabulary", "TrainConfig",
    "WardClustering", "arithmetic_query", "build_vocabulary", "cosine_distance", "count_tags", "cut",
    "embed_all", "epoch_stream", "euclidean_distance", "interpolate", "interpolation_path", "make_grid",
    "nearest", "nearest_to_region", "parse_elements", "train", "ward_cluster",
]
