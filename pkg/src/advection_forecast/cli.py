"""Command-line entry point: ``advection-forecast <command> [options]``.

Commands:
    synth       write a synthetic oracle dataset (FGRD files + manifest)
    train       train the motion network and/or generator on a manifest
    predict     roll out a forecast from an FGRD file of input frames
    eval        score a forecaster on a dataset split
    mask        energy field and conflict mask of a stored flow
    check-grad  finite-difference check of the hand-written gradients
    experiment  desk-scale trend experiments (jump, beta, ablation)

Exit status is 0 on success, 1 on errors and 2 when ``--gate`` is given and
the command's acceptance criterion fails.
"""

import argparse
import logging
import sys

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml

from .bench.evaluate import (
    Forecaster,
    NormalizedForecaster,
    PersistenceForecaster,
    PipelineForecaster,
    evaluate,
    save_heatmap,
)
from .bench.experiments import EXPERIMENTS
from .bench.synth import Blob, DatasetSpec, SynthSpec, rotating_flow, write_dataset
from .config import ForecastConfig, cleanup_config, get_config, initialize_config
from .core.dataset import SequenceDataset, denormalize, load_stats, normalize
from .core.fgrd import load_field, save_field
from .core.fields import ScalarField, Sequence, VectorField
from .exceptions import DivergenceError, EstimatorError, FormatError
from .metrics import write_metrics
from .models.estimators import NetEstimator, VariationalEstimator
from .models.nets import check_net_gradients
from .models.refiners import GeneratorRefiner, IdentityRefiner, InpaintRefiner
from .models.training import ForecastModel, build_model, train
from .objective import check_total_loss_gradients
from .physics.evolution import ConvEvolveParams, MotionEstimator, Refiner
from .physics.mask import (
    ConflictMask,
    MaskThresholds,
    SplatMode,
    conflict_mask,
    splat_energy,
)


logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_GATE_FAILED = 2

# argparse dest -> environment variable the flag overrides
FLAG_VARIABLES = {
    "log_level": ForecastConfig.ENV_LOG_LEVEL,
    "metrics_file": ForecastConfig.ENV_METRICS_FILE,
    "kappa": ForecastConfig.ENV_KAPPA,
    "alpha": ForecastConfig.ENV_ALPHA,
    "lambda_div": ForecastConfig.ENV_LAMBDA_DIV,
    "lambda_smooth": ForecastConfig.ENV_LAMBDA_SMOOTH,
    "beta": ForecastConfig.ENV_BETA,
    "mode": ForecastConfig.ENV_ROLLOUT_MODE,
    "epochs": ForecastConfig.ENV_EPOCHS,
    "lr": ForecastConfig.ENV_LEARNING_RATE,
    "seed": ForecastConfig.ENV_SEED,
    "input_frames": ForecastConfig.ENV_INPUT_FRAMES,
    "horizon": ForecastConfig.ENV_HORIZON,
    "splat": ForecastConfig.ENV_SPLAT_MODE,
}

HANDLED_ERRORS = (
    ValueError,
    OSError,
    FormatError,
    DivergenceError,
    EstimatorError,
    yaml.YAMLError,
)


def setup_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def _mask_image(mask: ConflictMask) -> ScalarField:
    return ScalarField(mask.mask)


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides = {}
    for dest, variable in FLAG_VARIABLES.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[variable] = value
    return overrides


def _load_model(path: Optional[str], config: ForecastConfig) -> Optional[ForecastModel]:
    if path is None:
        return None
    model = ForecastModel.load(
        path,
        kernel=config.kernel_config(),
        thresholds=config.mask_thresholds(),
        pad=config.padding_rule(),
    )
    logger.info("Loaded checkpoint %s", path)
    return model


def _components(
    args: argparse.Namespace, config: ForecastConfig, model: Optional[ForecastModel]
) -> Tuple[MotionEstimator, Refiner, Optional[ConvEvolveParams]]:
    """Estimator, refiner and conv-evolution parameters selected by the flags.

    Without an explicit choice the checkpoint's networks are used when present,
    otherwise the variational estimator and the inpainting refiner.
    """
    estimator_name = args.estimator
    if estimator_name is None:
        estimator_name = "net" if model and model.motion else "variational"
    refiner_name = args.refiner
    if refiner_name is None:
        refiner_name = "net" if model and model.generator else "inpaint"

    if estimator_name == "net":
        if model is None or model.motion is None:
            raise ValueError("--estimator net needs a checkpoint with a motion network")
        estimator: MotionEstimator = NetEstimator(model.motion)
    else:
        estimator = VariationalEstimator(
            config.variational_config(), config.kernel_config(), config.padding_rule()
        )

    if refiner_name == "net":
        if model is None or model.generator is None:
            raise ValueError("--refiner net needs a checkpoint with a generator")
        refiner: Refiner = GeneratorRefiner(model.generator)
    elif refiner_name == "inpaint":
        refiner = InpaintRefiner()
    else:
        refiner = IdentityRefiner()

    params = model.evolve if model is not None else None
    logger.info("Pipeline: estimator=%s refiner=%s", estimator_name, refiner_name)
    return estimator, refiner, params


def _pipeline(
    args: argparse.Namespace, config: ForecastConfig, model: Optional[ForecastModel]
) -> PipelineForecaster:
    estimator, refiner, params = _components(args, config, model)
    return PipelineForecaster(
        estimator,
        refiner,
        config.evolution_config(),
        config.kernel_config(),
        config.mask_thresholds(),
        config.padding_rule(),
        params,
    )


def cmd_synth(args: argparse.Namespace, config: ForecastConfig) -> int:
    base = SynthSpec(
        height=args.size,
        width=args.size,
        blobs=(Blob(0.0, 0.0, args.amplitude, args.sigma),),
        flows=rotating_flow(args.speed, 0.0, args.turn, args.frames - 1),
        kappa=config.kappa,
        frames=args.frames,
        noise=args.noise,
    )
    dspec = DatasetSpec(base, args.sequences)
    manifest_path = write_dataset(args.out, dspec, config.seed)
    print(manifest_path)
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: ForecastConfig) -> int:
    train_motion = args.estimator == "net"
    train_generator = args.refiner == "net"
    if not (train_motion or train_generator):
        raise ValueError("nothing to train: use --estimator net and/or --refiner net")
    kcfg, pad = config.kernel_config(), config.padding_rule()
    estimator = None
    if not train_motion:
        estimator = VariationalEstimator(config.variational_config(), kcfg, pad)

    model = build_model(
        config.input_frames,
        train_motion=train_motion,
        train_generator=train_generator,
        estimator=estimator,
        kernel=kcfg,
        thresholds=config.mask_thresholds(),
        pad=pad,
        **config.net_config(),
    )
    data = SequenceDataset.from_manifest_file(args.data)
    result = train(
        model,
        data,
        config.train_config(),
        config.evolution_config(),
        checkpoint_path=args.out,
    )
    model.save(args.out)
    logger.info("Wrote checkpoint %s", args.out)

    for epoch, loss in enumerate(result.history, start=1):
        print(f"epoch={epoch} loss={loss!r}")
    if args.gate:
        history = result.history
        passed = bool(history) and history[-1] < 0.1 * history[0]
        print(f"passed={str(passed).lower()}")
        if not passed:
            logger.error("Training loss did not fall below 10% of its initial value")
            return EXIT_GATE_FAILED
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, config: ForecastConfig) -> int:
    inputs = load_field(args.inputs)
    stats = load_stats(args.stats) if args.stats else None
    if stats is not None:
        inputs = normalize(inputs, stats)
    forecaster = _pipeline(args, config, _load_model(args.checkpoint, config))
    trace = forecaster.trace(inputs, config.horizon)

    predictions = trace.predictions
    if stats is not None:
        predictions = denormalize(predictions, stats)
    save_field(predictions, args.out)
    logger.info("Wrote %d predicted frames to %s", len(predictions), args.out)

    if args.dump_flow:
        for k, flow in enumerate(trace.composed_flows, start=1):
            path = Path(args.dump_flow) / f"flow_step{k:02d}.fgrd"
            save_field(Sequence.of((flow.u, flow.v), inputs.step_hours), path)
        logger.info("Wrote composed flows to %s", args.dump_flow)
    if args.dump_masks:
        for k, mask in enumerate(trace.masks, start=1):
            path = Path(args.dump_masks) / f"mask_step{k:02d}.png"
            save_heatmap(_mask_image(mask), path, 0.0, 1.0)
        logger.info("Wrote conflict masks to %s", args.dump_masks)
    return EXIT_OK


def _write_heatmaps(
    directory: str, pipeline: PipelineForecaster, seq: Sequence, n: int, k: int
) -> None:
    trace = pipeline.trace(seq[:n], k)
    lo = min(float(f.values.min()) for f in seq)
    hi = max(float(f.values.max()) for f in seq)
    base = Path(directory)
    for step, item in enumerate(trace.steps, start=1):
        save_heatmap(item.prediction, base / f"pred_step{step:02d}.png", lo, hi)
        save_heatmap(seq[n + step - 1], base / f"truth_step{step:02d}.png", lo, hi)
        mask = _mask_image(item.mask)
        save_heatmap(mask, base / f"mask_step{step:02d}.png", 0.0, 1.0)
    logger.info("Wrote heatmaps of %d steps to %s", len(trace.steps), directory)


def cmd_eval(args: argparse.Namespace, config: ForecastConfig) -> int:
    data = SequenceDataset.from_manifest_file(args.data)
    stats = data.manifest.stats
    if stats is None:
        stats = data.compute_stats()
        logger.warning("Manifest has no stats sidecar; using training split stats")
    sequences: List[Sequence] = list(data.sequences(args.split))
    n, k = config.input_frames, config.horizon

    def wrap(forecaster: Forecaster) -> Forecaster:
        return NormalizedForecaster(forecaster, stats)

    pipeline = None
    if args.persistence:
        forecaster: Forecaster = PersistenceForecaster()
    else:
        pipeline = _pipeline(args, config, _load_model(args.checkpoint, config))
        forecaster = wrap(pipeline)
    report = evaluate(forecaster, sequences, n, k, stats.value_range)

    print(report.to_text(), end="")
    if args.report:
        Path(args.report).write_text(report.to_key_values(), encoding="utf-8")
        logger.info("Wrote report %s", args.report)
    else:
        print(report.to_key_values(), end="")

    if args.heatmaps and sequences:
        if pipeline is None:
            logger.warning("Heatmaps need a pipeline forecaster; skipped")
        else:
            seq = normalize(sequences[0], stats)
            _write_heatmaps(args.heatmaps, pipeline, seq, n, k)

    if args.gate and not args.persistence:
        baseline = evaluate(PersistenceForecaster(), sequences, n, k, stats.value_range)
        passed = report.averaged["mse"] < baseline.averaged["mse"]
        print(f"persistence_mse={baseline.averaged['mse']!r}")
        print(f"passed={str(passed).lower()}")
        if not passed:
            logger.error("Forecast does not beat persistence on averaged MSE")
            return EXIT_GATE_FAILED
    return EXIT_OK


def cmd_mask(args: argparse.Namespace, config: ForecastConfig) -> int:
    stored = load_field(args.flow)
    if len(stored) != 2:
        raise ValueError(f"{args.flow}: a flow file holds 2 frames (u, v)")
    flow = VectorField(stored[0].values, stored[1].values)
    thresholds = MaskThresholds.literal() if args.literal else config.mask_thresholds()
    energy = splat_energy(flow, thresholds.splat_mode)
    mask = conflict_mask(energy, thresholds)

    print(f"energy_total={energy.total!r}")
    print(f"trusted_fraction={mask.trusted_fraction!r}")
    if args.out:
        save_field(Sequence.of((energy.energy, mask.mask), stored.step_hours), args.out)
        logger.info("Wrote energy and mask to %s", args.out)
    if args.png:
        save_heatmap(_mask_image(mask), args.png, 0.0, 1.0)
    return EXIT_OK


def cmd_check_grad(args: argparse.Namespace, config: ForecastConfig) -> int:
    seeds = range(args.seeds)
    results = []
    if args.target in ("loss", "all"):
        results.append(("total_loss", check_total_loss_gradients(seeds)))
    if args.target in ("nets", "all"):
        results.append(("nets", check_net_gradients(seeds)))

    passed = True
    for name, result in results:
        print(
            f"{name} worst_error={result.worst:.3e} tolerance={result.tolerance:g} "
            f"passed={str(result.passed).lower()}"
        )
        passed = passed and result.passed
    if args.gate and not passed:
        logger.error("Gradient check failed")
        return EXIT_GATE_FAILED
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace, config: ForecastConfig) -> int:
    report = EXPERIMENTS[args.name]()
    print(report.to_text(), end="")
    if args.gate and not report.passed:
        logger.error("Experiment %s failed: %s", report.name, report.criterion)
        return EXIT_GATE_FAILED
    return EXIT_OK


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", help="Trained model checkpoint")
    p.add_argument("--estimator", choices=("variational", "net"))
    p.add_argument("--refiner", choices=("inpaint", "net", "none"))
    p.add_argument("--beta", type=float, help="Momentum coefficient in [0, 1)")
    p.add_argument("--kappa", type=float, help="Diffusion scale per step")
    p.add_argument("--mode", choices=("jump", "chained"), help="Rollout mode")
    p.add_argument("--input-frames", type=int, help="Observed frames N")
    p.add_argument("--horizon", type=int, help="Predicted frames K")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advection-forecast",
        description="Physics-informed advection-diffusion forecasting of 2D fields.",
    )
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument(
        "--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
    )
    parser.add_argument("--metrics-file", help="Write run telemetry to this file")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("synth", help="Write a synthetic oracle dataset")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--sequences", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--sigma", type=float, default=3.0, help="Initial blob sigma")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--speed", type=float, default=0.5, help="Pixels per step")
    p.add_argument("--turn", type=float, default=0.0, help="Radians per step")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--kappa", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_synth)

    p = subparsers.add_parser("train", help="Train the networks on a manifest")
    p.add_argument("--data", required=True, help="Dataset manifest")
    p.add_argument("--out", required=True, help="Checkpoint to write")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda-div", type=float)
    p.add_argument("--lambda-smooth", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--input-frames", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--estimator", choices=("variational", "net"), default="net")
    p.add_argument("--refiner", choices=("inpaint", "net"), default="net")
    p.add_argument(
        "--gate", action="store_true", help="Fail unless the loss drops below 10%%"
    )
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser("predict", help="Forecast from an FGRD file")
    p.add_argument("--inputs", required=True, help="FGRD file of observed frames")
    p.add_argument("--out", required=True, help="FGRD file of predicted frames")
    p.add_argument("--stats", help="Stats file to normalize with")
    p.add_argument("--dump-flow", help="Directory for per-step composed flows")
    p.add_argument("--dump-masks", help="Directory for per-step mask images")
    _add_pipeline_args(p)
    p.set_defaults(handler=cmd_predict)

    p = subparsers.add_parser("eval", help="Score a forecaster on a dataset split")
    p.add_argument("--data", required=True, help="Dataset manifest")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--persistence", action="store_true", help="Repeat T_N")
    p.add_argument("--report", help="Write the key=value report here")
    p.add_argument("--heatmaps", help="Directory for prediction and mask images")
    p.add_argument(
        "--gate", action="store_true", help="Fail unless persistence is beaten"
    )
    _add_pipeline_args(p)
    p.set_defaults(handler=cmd_eval)

    p = subparsers.add_parser("mask", help="Conflict mask of a stored flow")
    p.add_argument("--flow", required=True, help="FGRD file with frames u, v")
    p.add_argument("--splat", choices=[m.value for m in SplatMode])
    p.add_argument(
        "--literal", action="store_true", help="Nearest splat, thresholds 0 and 2"
    )
    p.add_argument("--out", help="FGRD file with frames energy, mask")
    p.add_argument("--png", help="Mask image")
    p.set_defaults(handler=cmd_mask)

    p = subparsers.add_parser("check-grad", help="Finite-difference gradient check")
    p.add_argument("--target", choices=("loss", "nets", "all"), default="all")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--gate", action="store_true")
    p.set_defaults(handler=cmd_check_grad)

    p = subparsers.add_parser("experiment", help="Run a trend experiment")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    p.add_argument("--gate", action="store_true")
    p.set_defaults(handler=cmd_experiment)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or "INFO")

    try:
        initialize_config(config_file=args.config, **_overrides(args))
        config = get_config()
        setup_logging(config.log_level)
        config.print_config()
        try:
            return args.handler(args, config)
        finally:
            if config.metrics_file:
                write_metrics(config.metrics_file)
    except HANDLED_ERRORS as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_ERROR
    finally:
        cleanup_config()


if __name__ == "__main__":
    sys.exit(main())
