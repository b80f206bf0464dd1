"""
Monolithic GP reference model

Regresses every component of the flattened solution on the parameters
directly, with no manifold projection or clustering. It exists to compare
training cost and accuracy against the clustered surrogate.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .pipeline import GpSettings, ParameterPoint, SolutionSnapshot, as_param_matrix, flatten
from ..learning.gp import GpModel, gp_predict_many
from ..utils.exceptions import DatasetError, DimensionMismatch, ShapeError


@dataclass(frozen=True, eq=False)
class GlobalGpBaseline:
    """GP blocks over column ranges of the flattened solution"""

    models: List[GpModel]
    shape: Tuple[int, int]
    param_dim: int

    def predict(self, x_star: Union[ParameterPoint, Sequence[float]]) -> np.ndarray:
        values = x_star.values if isinstance(x_star, ParameterPoint) else ParameterPoint(x_star).values
        if values.size != self.param_dim:
            raise DimensionMismatch(
                "Query point dimension differs from the training parameters",
                expected=self.param_dim,
                got=values.size,
            )
        parts = [gp_predict_many(model, values[None, :])[0][0] for model in self.models]
        return np.concatenate(parts).reshape(self.shape, order="F")


def fit_global_baseline(
    params: Sequence[Union[ParameterPoint, Sequence[float]]],
    snapshots: Sequence[SolutionSnapshot],
    share_length_scale: bool = False,
    settings: GpSettings = GpSettings(),
) -> GlobalGpBaseline:
    """
    Fit one GP per solution component on all training points

    Args:
        params: Training parameter points
        snapshots: Training snapshots of one shape
        share_length_scale: Pool all components into a single block with one
            length-scale instead of fitting each component separately
        settings: GP hyperparameters

    Returns:
        GlobalGpBaseline
    """
    inputs = as_param_matrix(params)
    if inputs.shape[0] != len(snapshots) or not snapshots:
        raise DatasetError("Parameter and snapshot counts differ", n_params=inputs.shape[0],
                           n_snapshots=len(snapshots))
    shapes = {snapshot.shape for snapshot in snapshots}
    if len(shapes) != 1:
        raise ShapeError("Snapshots differ in shape", shapes=sorted(shapes))
    shape = shapes.pop()

    outputs = np.stack([flatten(snapshot) for snapshot in snapshots])
    if share_length_scale:
        models = [settings.fit(inputs, outputs)]
    else:
        logger.info(f"🐢 Fitting {outputs.shape[1]} component-wise GPs on {inputs.shape[0]} points")
        models = [settings.fit(inputs, outputs[:, column]) for column in range(outputs.shape[1])]
    return GlobalGpBaseline(models=models, shape=shape, param_dim=inputs.shape[1])
