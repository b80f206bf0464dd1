"""
GrassGP - Grassmannian Gaussian-process surrogates for full-field solutions
Main entry point for the application
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

# Add src directory to Python path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from src.core.bundle import load_bundle, save_bundle
from src.core.ko_bench import KoConfig, sample_ko_dataset
from src.core.pipeline import (
    PipelineConfig,
    SolutionSnapshot,
    SurrogateModel,
    ensemble_moments,
    evaluate,
    predict_solution,
    predict_with_diagnostics,
    square_shape,
    train_surrogate,
)
from src.utils.config import Config
from src.utils.exceptions import BudgetExhausted, GrassGPError, ShapeError
from src.utils.file_handler import DatasetManifest, FileHandler, snapshot_name

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_BUDGET_EXHAUSTED = 2

# CLI flag -> clustering setting
CLUSTER_FLAGS = {
    "n_start": "n_start",
    "n_max": "n_max_clusters",
    "n_min_points": "n_min_points",
    "threshold": "error_threshold",
    "pass_fraction": "pass_fraction",
    "subcluster": "subcluster",
}


def parse_shape(text: str) -> Tuple[int, int]:
    """Parse an ``NFxMF`` shape such as ``100x100``"""
    parts = text.lower().split("x")
    try:
        n_f, m_f = (int(part) for part in parts)
    except ValueError:
        raise ShapeError("Shape must look like NFxMF, e.g. 100x100", shape=text)
    if n_f < 1 or m_f < 1:
        raise ShapeError("Shape dimensions must be positive", shape=text)
    return n_f, m_f


def sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.name}.{suffix}")


class GrassGPApp:
    """Command-line application wrapping dataset generation, training and prediction"""

    def __init__(self, config_path: str = "config.yaml"):
        self.config = Config(config_path)
        self.setup_logging()
        self.files = FileHandler()

    def setup_logging(self):
        """Configure logging based on config settings"""
        log_config = self.config.get_logging_config()

        # Remove default logger
        logger.remove()

        if log_config.get("console_colors", True):
            logger.add(
                sys.stderr,
                level=log_config.get("level", "INFO"),
                format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
                colorize=True,
            )
        else:
            logger.add(sys.stderr, level=log_config.get("level", "INFO"))

        if log_file := log_config.get("file"):
            logger.add(
                log_file,
                level=log_config.get("level", "INFO"),
                rotation=f"{log_config.get('max_size_mb', 50)} MB",
                retention=log_config.get("backup_count", 5),
                format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            )

    # Settings

    def ko_config(self, args: argparse.Namespace) -> KoConfig:
        """KoConfig from the ko section with flag overrides"""
        data: Dict[str, Any] = self.config.get_ko_config().model_dump()
        for flag in ("n_samples", "seed", "t_final", "dt"):
            if getattr(args, flag, None) is not None:
                data[flag] = getattr(args, flag)

        if args.shape is not None:
            data["shape"] = parse_shape(args.shape)
        else:
            steps = int(round(data["t_final"] / data["dt"]))
            if data["shape"][0] * data["shape"][1] != steps:
                data["shape"] = square_shape(steps)
        return KoConfig.model_validate(data)

    def pipeline_config(self, args: argparse.Namespace) -> PipelineConfig:
        """PipelineConfig from the config file with training flag overrides"""
        data = self.config.get_pipeline_config().model_dump()
        for flag, setting in CLUSTER_FLAGS.items():
            if getattr(args, flag, None) is not None:
                data["clustering"][setting] = getattr(args, flag)
        if getattr(args, "seed", None) is not None:
            data["seed"] = args.seed
        return PipelineConfig.model_validate(data)

    # Commands

    def generate_ko(self, args: argparse.Namespace) -> int:
        config = self.ko_config(args)
        params, snapshots = sample_ko_dataset(config.n_samples, config.seed, config)
        self.files.save_dataset(
            args.out,
            params,
            [snapshot.matrix for snapshot in snapshots],
            config.shape,
            generator={**config.metadata(), "n_steps": config.n_steps},
        )
        logger.success(f"🎉 Generated {config.n_samples} Kraichnan-Orszag samples in {args.out}")
        return EXIT_OK

    def train(self, args: argparse.Namespace) -> int:
        config = self.pipeline_config(args)
        _, sample_ids, params, matrices = self.files.load_dataset(args.data)
        snapshots = [SolutionSnapshot(matrix, sample_id) for matrix, sample_id in zip(matrices, sample_ids)]

        exit_code = EXIT_OK
        try:
            model = train_surrogate(params, snapshots, config)
        except BudgetExhausted as e:
            if e.model is None:
                raise
            model = e.model
            exit_code = EXIT_BUDGET_EXHAUSTED
            logger.warning(
                f"⚠️ Cluster search exhausted its budget; saving the best partition "
                f"(n_c = {model.diagnostics.chosen_n_c}, flagged clusters {model.diagnostics.flagged_clusters})"
            )

        out = Path(args.out)
        save_bundle(model, out)
        diagnostics = model.diagnostics.to_frame()
        diagnostics["n_sublabels"] = [cluster.n_sublabels for cluster in model.clusters]
        self.files.save_table(diagnostics, sidecar(out, "diagnostics.csv"))
        self.files.save_table(model.diagnostics.history_frame(), sidecar(out, "history.csv"))
        logger.info(
            f"📊 Chosen n_c = {model.diagnostics.chosen_n_c}, "
            f"pass fraction {model.diagnostics.pass_fraction_achieved:.3f}"
        )
        return exit_code

    def predict(self, args: argparse.Namespace) -> int:
        model = load_bundle(args.model)
        sample_ids, params = self.files.load_params(args.params)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)

        files, rows = [], []
        for index, (sample_id, values) in enumerate(zip(sample_ids, params)):
            try:
                result = predict_with_diagnostics(model, values)
            except GrassGPError as e:
                raise e.with_context(file=str(args.params), line=index + 2, sample_id=sample_id)
            name = snapshot_name(index)
            self.files.save_snapshot(result.matrix, out / name)
            files.append(name)
            rows.append(
                {
                    "sample_id": sample_id,
                    "file": name,
                    "cluster_id": result.cluster_id,
                    "sublabel": result.sublabel,
                    "sigma_order_violations": result.sigma_order_violations,
                }
            )
            if result.sigma_order_violations:
                logger.warning(
                    f"⚠️ Sample {sample_id}: predicted singular values out of order "
                    f"({result.sigma_order_violations} pair(s))"
                )

        self.files.save_params(params.reshape(len(sample_ids), model.param_dim), out / "params.csv", sample_ids)
        manifest = DatasetManifest(
            n_samples=len(files),
            param_dim=model.param_dim,
            shape=model.shape,
            generator={"source": "grassgp-predict", "model": str(args.model)},
            files=files,
            rows=rows,
        )
        self.files.save_manifest(manifest, out)
        logger.success(f"🎉 Wrote {len(files)} prediction(s) to {out}")
        return EXIT_OK

    def evaluate(self, args: argparse.Namespace) -> int:
        model = load_bundle(args.model)
        _, sample_ids, params, matrices = self.files.load_dataset(args.data)
        snapshots = [SolutionSnapshot(matrix, sample_id) for matrix, sample_id in zip(matrices, sample_ids)]
        mean_error, errors = evaluate(model, params, snapshots)

        report = pd.DataFrame({"sample_id": sample_ids, "frobenius_error": errors}, columns=["sample_id",
                                                                                               "frobenius_error"])
        if errors:
            summary = pd.DataFrame(
                {"sample_id": ["mean", "min", "max"], "frobenius_error": [mean_error, min(errors), max(errors)]}
            )
            report = pd.concat([report, summary], ignore_index=True)
        self.files.save_table(report, args.out)
        logger.info(f"📊 Mean Frobenius error {mean_error:.6e} over {len(errors)} sample(s)")

        if args.moments_out:
            self.write_moments(model, params, snapshots, args.moments_out)
        return EXIT_OK

    def write_moments(self, model: SurrogateModel, params: np.ndarray, snapshots: List[SolutionSnapshot],
                      path: str):
        if not snapshots:
            raise ValueError("Ensemble moments need at least one test sample")
        predicted = [predict_solution(model, values) for values in params]
        true_mean, true_std = ensemble_moments(snapshots)
        pred_mean, pred_std = ensemble_moments(predicted)
        frame = pd.DataFrame(
            {
                "index": np.arange(true_mean.size),
                "true_mean": true_mean,
                "predicted_mean": pred_mean,
                "true_std": true_std,
                "predicted_std": pred_std,
            }
        )
        self.files.save_table(frame, path)

    def inspect_clusters(self, args: argparse.Namespace) -> int:
        model = load_bundle(args.model)
        frame = pd.DataFrame(
            model.train_params, columns=[f"xi_{j + 1}" for j in range(model.param_dim)]
        )
        frame.insert(0, "sample_id", model.sample_ids)
        frame["cluster_id"] = model.labels
        frame["sublabel"] = model.sublabels
        frame["eps_h"] = model.diagnostics.per_cluster_mean_error[model.labels]
        self.files.save_table(frame, args.out)
        logger.info(f"📊 Cluster table for {len(frame)} training point(s) written to {args.out}")
        return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 1); exit 2 is reserved for exhausted budgets"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="GrassGP - Grassmannian GP surrogates for full-field solutions")
    parser.add_argument("--config", default="config.yaml", help="Configuration file path")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate-ko", help="Generate a Kraichnan-Orszag dataset")
    generate.add_argument("--n-samples", type=int, help="Number of Monte Carlo samples")
    generate.add_argument("--seed", type=int, help="Random seed")
    generate.add_argument("--out", required=True, help="Output dataset directory")
    generate.add_argument("--shape", help="Matrix shape NFxMF of each snapshot")
    generate.add_argument("--t-final", type=float, help="Integration horizon")
    generate.add_argument("--dt", type=float, help="Time step")

    train = commands.add_parser("train", help="Train a surrogate on a dataset")
    train.add_argument("--data", required=True, help="Training dataset directory")
    train.add_argument("--out", required=True, help="Model bundle path")
    train.add_argument("--n-start", type=int, help="Smallest number of clusters tried")
    train.add_argument("--n-max", type=int, help="Largest number of clusters tried")
    train.add_argument("--n-min-points", type=int, help="Minimum points per cluster")
    train.add_argument("--threshold", type=float, help="Projection error threshold")
    train.add_argument("--pass-fraction", type=float, help="Fraction of clusters that must pass")
    train.add_argument("--seed", type=int, help="Random seed for k-means")
    train.add_argument("--subcluster", choices=["auto", "on", "off"], help="DBSCAN sub-clustering policy")

    predict = commands.add_parser("predict", help="Predict snapshots at new parameter points")
    predict.add_argument("--model", required=True, help="Model bundle path")
    predict.add_argument("--params", required=True, help="Parameter CSV file")
    predict.add_argument("--out", required=True, help="Prediction directory")

    evaluate_cmd = commands.add_parser("evaluate", help="Report surrogate errors on a test dataset")
    evaluate_cmd.add_argument("--model", required=True, help="Model bundle path")
    evaluate_cmd.add_argument("--data", required=True, help="Test dataset directory")
    evaluate_cmd.add_argument("--out", required=True, help="Report CSV path")
    evaluate_cmd.add_argument("--moments-out", help="Optional CSV of true vs predicted ensemble moments")

    inspect = commands.add_parser("inspect-clusters", help="Export the cluster assignment table")
    inspect.add_argument("--model", required=True, help="Model bundle path")
    inspect.add_argument("--out", required=True, help="Cluster table CSV path")
    return parser


COMMANDS = {
    "generate-ko": GrassGPApp.generate_ko,
    "train": GrassGPApp.train,
    "predict": GrassGPApp.predict,
    "evaluate": GrassGPApp.evaluate,
    "inspect-clusters": GrassGPApp.inspect_clusters,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main function for CLI usage; returns the process exit code"""
    args = build_parser().parse_args(argv)
    app = GrassGPApp(args.config)
    try:
        return COMMANDS[args.command](app, args)
    except (GrassGPError, ValueError, OSError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
