"""
Model bundle: versioned JSON serialization of a trained surrogate

GP blocks are stored as raw training data plus hyperparameters and their
Cholesky factors are rebuilt on load. Floats are written with their
shortest round-trip representation and keys are sorted, so a loaded
bundle saves back to the same bytes.
"""

import json
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from loguru import logger
from pydantic import ValidationError

from .pipeline import ClusterGroup, ClusterModel, PipelineConfig, SurrogateModel
from ..geometry.manifold import GrassmannPoint
from ..learning.clustering import ClusterDiagnostics
from ..learning.gp import GpModel
from ..utils.exceptions import DatasetError

BUNDLE_FORMAT = "grassgp-model"
BUNDLE_VERSION = 1


def _group_to_state(group: ClusterGroup) -> Dict[str, Any]:
    return {
        "member_ids": group.member_ids.tolist(),
        "gp_gamma_u": group.gp_gamma_u.to_state(),
        "gp_gamma_v": group.gp_gamma_v.to_state(),
        "gp_core": group.gp_core.to_state(),
    }


def _cluster_to_state(cluster: ClusterModel) -> Dict[str, Any]:
    return {
        "cluster_id": cluster.cluster_id,
        "member_ids": cluster.member_ids.tolist(),
        "rank": cluster.rank,
        "karcher_mean_u": cluster.karcher_mean_u.basis.tolist(),
        "karcher_mean_v": cluster.karcher_mean_v.basis.tolist(),
        "groups": [_group_to_state(group) for group in cluster.groups],
        "sublabels": None if cluster.sublabels is None else cluster.sublabels.tolist(),
        "projection_error": cluster.projection_error,
    }


def _cluster_from_state(state: Dict[str, Any]) -> ClusterModel:
    groups = [
        ClusterGroup(
            member_ids=np.asarray(group["member_ids"], dtype=int),
            gp_gamma_u=GpModel.from_state(group["gp_gamma_u"]),
            gp_gamma_v=GpModel.from_state(group["gp_gamma_v"]),
            gp_core=GpModel.from_state(group["gp_core"]),
        )
        for group in state["groups"]
    ]
    sublabels = state["sublabels"]
    return ClusterModel(
        cluster_id=int(state["cluster_id"]),
        member_ids=np.asarray(state["member_ids"], dtype=int),
        rank=int(state["rank"]),
        karcher_mean_u=GrassmannPoint(np.asarray(state["karcher_mean_u"], dtype=float)),
        karcher_mean_v=GrassmannPoint(np.asarray(state["karcher_mean_v"], dtype=float)),
        groups=groups,
        sublabels=None if sublabels is None else np.asarray(sublabels, dtype=int),
        projection_error=float(state["projection_error"]),
    )


def model_to_state(model: SurrogateModel) -> Dict[str, Any]:
    return {
        "config": model.config.model_dump(mode="json"),
        "shape": list(model.shape),
        "train_params": model.train_params.tolist(),
        "sample_ids": list(model.sample_ids),
        "labels": model.labels.tolist(),
        "sublabels": model.sublabels.tolist(),
        "clusters": [_cluster_to_state(cluster) for cluster in model.clusters],
        "diagnostics": model.diagnostics.to_state(),
    }


def model_from_state(state: Dict[str, Any]) -> SurrogateModel:
    train_params = np.asarray(state["train_params"], dtype=float)
    if len(state["sample_ids"]) != len(state["labels"]):
        raise ValueError("Sample id and label counts differ")
    return SurrogateModel(
        clusters=[_cluster_from_state(cluster) for cluster in state["clusters"]],
        train_params=train_params.reshape(len(state["labels"]), -1),
        labels=np.asarray(state["labels"], dtype=int),
        sublabels=np.asarray(state["sublabels"], dtype=int),
        config=PipelineConfig.model_validate(state["config"]),
        shape=(int(state["shape"][0]), int(state["shape"][1])),
        diagnostics=ClusterDiagnostics.from_state(state["diagnostics"]),
        sample_ids=[str(sample_id) for sample_id in state["sample_ids"]],
    )


def dumps_bundle(model: SurrogateModel) -> str:
    envelope = {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "model": model_to_state(model)}
    return json.dumps(envelope, sort_keys=True, indent=1) + "\n"


def save_bundle(model: SurrogateModel, path: Union[str, Path]) -> Path:
    """Write the model bundle, creating parent directories as needed"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_bundle(model), encoding="utf-8")
    logger.info(f"💾 Model bundle saved: {path}")
    return path


def load_bundle(path: Union[str, Path]) -> SurrogateModel:
    """
    Read a model bundle

    Raises:
        DatasetError: the file is missing, is not a bundle of a supported
            version, or its contents do not form a valid model
    """
    path = Path(path)
    try:
        envelope = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetError("Cannot read model bundle", file=str(path), reason=str(e))
    except json.JSONDecodeError as e:
        raise DatasetError("Model bundle is not valid JSON", file=str(path), line=e.lineno)

    if not isinstance(envelope, dict) or envelope.get("format") != BUNDLE_FORMAT:
        raise DatasetError("File is not a model bundle", file=str(path))
    if envelope.get("version") != BUNDLE_VERSION:
        raise DatasetError("Unsupported model bundle version", file=str(path), version=envelope.get("version"))

    try:
        model = model_from_state(envelope["model"])
    except (KeyError, TypeError, IndexError, ValueError, ValidationError) as e:
        raise DatasetError("Model bundle is corrupt", file=str(path), reason=f"{type(e).__name__}: {e}")
    logger.debug(f"Loaded model bundle {path} with {len(model.clusters)} cluster(s)")
    return model
