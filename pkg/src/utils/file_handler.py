"""
Dataset and table file handling for GrassGP

A dataset directory holds ``manifest.json``, ``params.csv`` (header
``sample_id,xi_1,...,xi_nd``) and one ``snap_NNNN.csv`` per sample. Snapshot
files store one matrix row per line with 17 significant digits, which is
lossless for binary64 and makes write -> read -> write byte-identical.
"""

import json
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .exceptions import DatasetError, ShapeError

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.csv"
LAYOUT = "column-major"
FLOAT_FORMAT = "%.16e"

_ROW_PATTERN = re.compile(r"row (\d+)")


class DatasetManifest(BaseModel):
    """Index of a dataset or prediction directory"""

    model_config = ConfigDict(extra="forbid")

    version: int = MANIFEST_VERSION
    n_samples: int = Field(ge=0)
    param_dim: int = Field(ge=0)
    shape: Tuple[int, int]
    layout: str = LAYOUT
    generator: Dict[str, Any] = Field(default_factory=dict)
    params_file: str = PARAMS_NAME
    files: List[str] = Field(default_factory=list)
    rows: List[Dict[str, Any]] = Field(default_factory=list)


def snapshot_name(index: int) -> str:
    return f"snap_{index:04d}.csv"


class FileHandler:
    """Reads and writes dataset directories and result tables"""

    def __init__(self, base_path: Union[str, Path] = "."):
        self.base_path = Path(base_path)

    def _resolve(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_path / path

    # Snapshots

    def save_snapshot(self, matrix: np.ndarray, file_path: Union[str, Path]) -> Path:
        file_path = self._resolve(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(file_path, np.atleast_2d(matrix), fmt=FLOAT_FORMAT, delimiter=",")
        return file_path

    def load_snapshot(self, file_path: Union[str, Path]) -> np.ndarray:
        """
        Read one snapshot matrix

        Raises:
            DatasetError: missing file, or a value that does not parse
                (with the offending line when it can be located)
        """
        file_path = self._resolve(file_path)
        if not file_path.is_file():
            raise DatasetError("Snapshot file not found", file=str(file_path))
        try:
            matrix = np.loadtxt(file_path, delimiter=",", ndmin=2)
        except ValueError as e:
            error = DatasetError("Cannot parse snapshot file", file=str(file_path), reason=str(e))
            match = _ROW_PATTERN.search(str(e))
            if match:
                error.with_context(line=int(match.group(1)) + 1)
            raise error
        if not np.all(np.isfinite(matrix)):
            raise DatasetError("Snapshot file has non-finite values", file=str(file_path))
        return matrix

    # Parameter tables

    def save_params(self, params: np.ndarray, file_path: Union[str, Path],
                    sample_ids: Optional[Sequence[str]] = None) -> Path:
        params = np.asarray(params, dtype=float)
        params = params.reshape(params.shape[0], -1) if params.size else params.reshape(0, 0)
        if sample_ids is None:
            sample_ids = [f"{i:04d}" for i in range(params.shape[0])]
        frame = pd.DataFrame(params, columns=[f"xi_{j + 1}" for j in range(params.shape[1])])
        frame.insert(0, "sample_id", list(sample_ids))

        file_path = self._resolve(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(file_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return file_path

    def load_params(self, file_path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
        """
        Read a parameter table

        The ``sample_id`` column is optional; rows without it are numbered.
        An empty file gives no rows.

        Returns:
            (sample ids, N x n_d array)

        Raises:
            DatasetError: missing file, no ``xi_*`` columns, or a row with a
                missing or non-numeric value (reported with its line number)
        """
        file_path = self._resolve(file_path)
        if not file_path.is_file():
            raise DatasetError("Parameter file not found", file=str(file_path))
        try:
            frame = pd.read_csv(file_path, dtype=str, keep_default_na=False)
        except pd.errors.EmptyDataError:
            return [], np.zeros((0, 0))
        except pd.errors.ParserError as e:
            raise DatasetError("Cannot parse parameter file", file=str(file_path), reason=str(e))

        columns = [column for column in frame.columns if column.startswith("xi_")]
        if not columns:
            raise DatasetError("Parameter file has no xi_* columns", file=str(file_path),
                               columns=list(frame.columns))
        if "sample_id" in frame.columns:
            sample_ids = [str(value) for value in frame["sample_id"]]
        else:
            sample_ids = [f"{i:04d}" for i in range(len(frame))]

        values = frame[columns].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
        if bad.size:
            row = int(bad[0])
            raise DatasetError(
                "Parameter row has a missing or non-numeric value",
                file=str(file_path),
                line=row + 2,
                sample_id=sample_ids[row],
            )
        return sample_ids, values.reshape(len(frame), len(columns))

    # Manifests

    def save_manifest(self, manifest: DatasetManifest, directory: Union[str, Path]) -> Path:
        return self.save_json(manifest.model_dump(mode="json"), self._resolve(directory) / MANIFEST_NAME)

    def load_manifest(self, directory: Union[str, Path]) -> DatasetManifest:
        file_path = self._resolve(directory) / MANIFEST_NAME
        try:
            return DatasetManifest.model_validate(self.load_json(file_path))
        except ValidationError as e:
            raise DatasetError("Invalid dataset manifest", file=str(file_path), reason=str(e))

    def save_dataset(
        self,
        directory: Union[str, Path],
        params: np.ndarray,
        matrices: Sequence[np.ndarray],
        shape: Tuple[int, int],
        generator: Optional[Dict[str, Any]] = None,
        sample_ids: Optional[Sequence[str]] = None,
    ) -> DatasetManifest:
        """Write snapshots, the parameter table and the manifest into ``directory``"""
        directory = self._resolve(directory)
        directory.mkdir(parents=True, exist_ok=True)
        params = np.asarray(params, dtype=float)

        files = []
        for index, matrix in enumerate(matrices):
            name = snapshot_name(index)
            self.save_snapshot(matrix, directory / name)
            files.append(name)
        self.save_params(params, directory / PARAMS_NAME, sample_ids)

        manifest = DatasetManifest(
            n_samples=len(files),
            param_dim=params.shape[1] if params.ndim == 2 else 0,
            shape=shape,
            generator=generator or {},
            files=files,
        )
        self.save_manifest(manifest, directory)
        logger.info(f"💾 Dataset with {len(files)} snapshot(s) written to {directory}")
        return manifest

    def load_dataset(self, directory: Union[str, Path]) -> Tuple[DatasetManifest, List[str], np.ndarray,
                                                                 List[np.ndarray]]:
        """
        Read and cross-check a dataset directory

        Returns:
            (manifest, sample ids, N x n_d parameters, snapshot matrices)

        Raises:
            DatasetError: missing files or inconsistent counts
            ShapeError: a snapshot whose shape differs from the manifest
        """
        directory = self._resolve(directory)
        manifest = self.load_manifest(directory)
        if manifest.layout != LAYOUT:
            raise DatasetError("Unsupported snapshot layout", file=str(directory / MANIFEST_NAME),
                               layout=manifest.layout)
        if len(manifest.files) != manifest.n_samples:
            raise DatasetError(
                "Manifest file list does not match its sample count",
                file=str(directory / MANIFEST_NAME),
                n_samples=manifest.n_samples,
                n_files=len(manifest.files),
            )

        sample_ids, params = self.load_params(directory / manifest.params_file)
        if len(sample_ids) != manifest.n_samples:
            raise DatasetError(
                "Parameter file row count does not match the manifest",
                file=str(directory / manifest.params_file),
                expected=manifest.n_samples,
                got=len(sample_ids),
            )
        if params.size and params.shape[1] != manifest.param_dim:
            raise DatasetError(
                "Parameter dimension does not match the manifest",
                file=str(directory / manifest.params_file),
                expected=manifest.param_dim,
                got=params.shape[1],
            )

        matrices = []
        for name in manifest.files:
            matrix = self.load_snapshot(directory / name)
            if matrix.shape != tuple(manifest.shape):
                raise ShapeError(
                    "Snapshot shape differs from the manifest",
                    file=str(directory / name),
                    expected=tuple(manifest.shape),
                    got=matrix.shape,
                )
            matrices.append(matrix)
        logger.info(f"📖 Loaded {len(matrices)} snapshot(s) of shape {manifest.shape} from {directory}")
        return manifest, sample_ids, params, matrices

    # Generic

    def save_json(self, data: Any, file_path: Union[str, Path], indent: int = 2) -> Path:
        file_path = self._resolve(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=indent, sort_keys=True)
            f.write("\n")
        logger.debug(f"💾 Saved JSON: {file_path}")
        return file_path

    def load_json(self, file_path: Union[str, Path]) -> Any:
        file_path = self._resolve(file_path)
        if not file_path.is_file():
            raise DatasetError("JSON file not found", file=str(file_path))
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetError("Invalid JSON", file=str(file_path), line=e.lineno)

    def save_table(self, frame: pd.DataFrame, file_path: Union[str, Path]) -> Path:
        """Result table as CSV with full-precision floats"""
        file_path = self._resolve(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(file_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.debug(f"💾 Saved table: {file_path}")
        return file_path
