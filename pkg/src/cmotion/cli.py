"""Command-line interface.

Subcommands:
  simulate   generate a synthetic pose dataset (optionally a stereo
             observation stream and camera file alongside)
  fit        fit the ridge DCT predictor on a dataset, write the model JSON
  calibrate  turn score files into a calibration JSON (conformal quantile
             table plus optional OOD thresholds)
  evaluate   MPJPE of a predictor over a dataset; can dump the
             non-conformity scores needed by `calibrate`
  run        stream a stereo observation JSONL through the pipeline
  table2     conformal vs worst-case prediction-set comparison
  table3     full pipeline across N_req values on an OOD-injected stream
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .conformal import calibrate as conformal_calibrate
from .conformal import load_calibration, nonconformity_scores, save_calibration
from .geometry import Detection2D, StereoObservation, load_cameras, save_cameras
from .ood import OodThreshold, calibrate_threshold
from .pipeline import Pipeline, PipelineCalibrations, PipelineModels, load_config
from .predict import (
    PredictorConfig,
    PredictorKind,
    RidgeDctPredictor,
    fit_ridge_dct,
    make_predictor,
)


def _add_predictor_args(parser):
    parser.add_argument(
        "--predictor",
        default="constant_velocity",
        choices=[k.value for k in PredictorKind] + ["oracle"],
    )
    parser.add_argument("--model", help="ridge model JSON (for --predictor ridge_dct)")
    parser.add_argument("--k-i", type=int, default=50)
    parser.add_argument("--k-p", type=int, default=10)


def _build_predictor(args, n_joints):
    if args.predictor == "oracle":
        return None
    cfg = PredictorConfig(K_I=args.k_i, K_P=args.k_p, J=n_joints)
    if args.predictor == PredictorKind.RIDGE_DCT.value:
        if not args.model:
            raise SystemExit("--predictor ridge_dct requires --model")
        return RidgeDctPredictor.load(args.model, expected=cfg)
    return make_predictor(args.predictor, cfg)


def _cmd_simulate(args):
    params = harness.SyntheticParams(
        J=args.joints,
        n_frames=args.frames,
        n_sequences=args.sequences,
        frame_rate=args.frame_rate,
        noise_sigma=args.noise_sigma,
        amplitude=args.amplitude,
        frequency_hz=args.frequency,
        velocity=tuple(args.velocity),
        ood_p=args.ood_p,
    )
    dataset = harness.generate_synthetic(args.kind, params, args.seed)
    dataset.split = args.split
    harness.export_jsonl(dataset, args.output, with_covs=args.with_covs)
    if args.stereo_output:
        cam1, cam2 = harness.default_stereo_rig()
        rng = np.random.default_rng(args.seed + 1)
        with open(args.stereo_output, "w") as fh:
            for seq in dataset.sequences:
                observations = harness.observations_from_poses(
                    seq, cam1, cam2, dataset.frame_rate, args.pixel_sigma, rng
                )
                flags = seq.ood if seq.ood is not None else np.zeros(len(seq), dtype=bool)
                for i, obs in enumerate(observations):
                    fh.write(json.dumps(_observation_to_dict(obs, float(flags[i]))))
                    fh.write("\n")
        if args.cameras_output:
            save_cameras(args.cameras_output, [cam1, cam2])
    print(f"wrote {sum(len(s) for s in dataset.sequences)} frames to {args.output}")


def _observation_to_dict(obs: StereoObservation, s_2d: float | None = None) -> dict:
    doc = {
        "t": obs.timestamp,
        "cam1": {
            "uv": [d.mean.tolist() for d in obs.detections_cam1],
            "cov": [d.cov.tolist() for d in obs.detections_cam1],
        },
        "cam2": {
            "uv": [d.mean.tolist() for d in obs.detections_cam2],
            "cov": [d.cov.tolist() for d in obs.detections_cam2],
        },
    }
    if obs.cross_cov is not None:
        doc["cross_cov"] = obs.cross_cov.tolist()
    if obs.missing:
        doc["missing"] = True
    if s_2d is not None:
        doc["s_2d"] = s_2d
    return doc


def _observation_from_dict(doc: dict) -> tuple[StereoObservation, float | None, float | None]:
    def detections(block):
        uv = block["uv"]
        cov = block["cov"]
        return [Detection2D(uv[j], cov[j], j) for j in range(len(uv))]

    obs = StereoObservation(
        detections_cam1=detections(doc["cam1"]),
        detections_cam2=detections(doc["cam2"]),
        timestamp=float(doc["t"]),
        cross_cov=np.asarray(doc["cross_cov"]) if "cross_cov" in doc else None,
        missing=bool(doc.get("missing", False)),
    )
    s_2d = doc.get("s_2d")
    s_mot = doc.get("s_mot")
    return obs, s_2d, s_mot


def _cmd_fit(args):
    dataset = harness.ingest_jsonl(args.train, split="train")
    cfg = PredictorConfig(
        K_I=args.k_i, K_P=args.k_p, J=dataset.n_joints, dct_cutoff=args.dct_cutoff
    )
    model = fit_ridge_dct(harness.training_windows(dataset, cfg, args.stride), cfg, mu=args.mu)
    model.save(args.output)
    print(f"fitted ridge model on {dataset.n_joints} joints -> {args.output}")


def _cmd_calibrate(args):
    with open(args.scores) as fh:
        doc = json.load(fh)
    calibration = conformal_calibrate(
        np.asarray(doc["scores"], dtype=np.float64), args.epsilon
    )
    thresholds = {}
    for name, values in doc.get("ood", {}).items():
        thresholds[name] = calibrate_threshold(values, args.epsilon_ood)
    save_calibration(args.output, calibration, thresholds)
    print(
        f"calibrated alpha table {calibration.alpha.shape} at epsilon={args.epsilon} "
        f"-> {args.output}"
    )


def _cmd_evaluate(args):
    dataset = harness.ingest_jsonl(args.input)
    predictor = _build_predictor(args, dataset.n_joints)
    if predictor is None:
        raise SystemExit("evaluate needs a concrete predictor, not oracle")
    preds, truths = [], []
    means, covs, truth_arr = [], [], []
    for seq in dataset.sequences:
        for i in harness.iter_windows(seq, predictor.cfg.K_I, predictor.cfg.K_P, args.stride):
            hist = harness.window_history(seq, i, predictor.cfg.K_I, dataset.frame_rate)
            pred = predictor.predict(hist)
            fut = seq.poses[i + predictor.cfg.K_I : i + predictor.cfg.K_I + predictor.cfg.K_P]
            preds.append(pred)
            truths.append(fut)
            means.append(pred.pose_array())
            covs.append(pred.cov_array())
            truth_arr.append(fut)
    report = harness.MetricReport(
        mpjpe_per_horizon=harness.mpjpe(preds, truths, dataset.frame_rate)
    )
    reports = {args.predictor: report}
    harness.write_report_json(args.output + ".json", reports)
    harness.write_report_csv(args.output + ".csv", reports)
    if args.dump_scores:
        scores = nonconformity_scores(
            np.stack(truth_arr) - np.stack(means), np.stack(covs)
        )
        with open(args.dump_scores, "w") as fh:
            json.dump({"scores": scores.transpose(1, 2, 0).tolist()}, fh)
            fh.write("\n")
    for metric, value in report.rows():
        print(f"{args.predictor} {metric} = {value:.6g}")


def _cmd_run(args):
    cfg = load_config(args.config)
    cameras = load_cameras(args.cameras)
    if len(cameras) != 2:
        raise SystemExit(f"need exactly 2 cameras, got {len(cameras)}")
    calibration, thresholds = load_calibration(args.calibration)
    tau_2d = thresholds.get("pose_2d", OodThreshold(np.inf, cfg.epsilon_ood, 0))
    tau_mot = thresholds.get("motion", OodThreshold(np.inf, cfg.epsilon_ood, 0))
    predictor = _build_predictor(args, calibration.n_joints)
    if predictor is None:
        raise SystemExit("run needs a concrete predictor, not oracle")
    pipe = Pipeline(
        cfg,
        PipelineModels(cameras[0], cameras[1], predictor),
        PipelineCalibrations(calibration, tau_2d, tau_mot),
    )
    n = 0
    with open(args.input) as fin, open(args.output, "w") as fout:
        for line in fin:
            if not line.strip():
                continue
            obs, s_2d, s_mot = _observation_from_dict(json.loads(line))
            out = pipe.step(obs, s_2d=s_2d, s_mot=s_mot)
            doc = out.to_dict()
            doc["step"] = n
            doc["t"] = obs.timestamp
            fout.write(json.dumps(doc))
            fout.write("\n")
            n += 1
    print(f"processed {n} observations -> {args.output}")


def _cmd_table2(args):
    cal = harness.ingest_jsonl(args.cal, split="cal")
    test = harness.ingest_jsonl(args.test, split="test")
    predictor = _build_predictor(args, test.n_joints)
    report = harness.run_table2_experiment(
        cal,
        test,
        args.epsilon,
        predictor,
        k_i=args.k_i,
        k_p=args.k_p,
        stride=args.stride,
        mode=args.mode,
    )
    reports = {"conformal": report.conformal, "iso": report.iso}
    harness.write_report_json(args.output + ".json", reports)
    harness.write_report_csv(args.output + ".csv", reports)
    for name, rep in reports.items():
        print(f"{name}: coverage={rep.coverage:.4f} mean_volume={rep.mean_volume:.6g} m^3")


def _cmd_table3(args):
    dataset = harness.ingest_jsonl(args.input)
    if args.ood_p > 0:
        rng = np.random.default_rng(args.seed)
        for seq in dataset.sequences:
            seq.ood = rng.random(len(seq)) < args.ood_p
    predictor = _build_predictor(args, dataset.n_joints)
    cfg = load_config(args.config) if args.config else None
    reports = harness.run_table3_experiment(
        dataset,
        args.n_req,
        base_cfg=cfg,
        predictor=predictor,
        pixel_sigma=args.pixel_sigma,
        seed=args.seed,
    )
    named = {f"n_req={k}": v for k, v in reports.items()}
    harness.write_report_json(args.output + ".json", named)
    harness.write_report_csv(args.output + ".csv", named)
    for name, rep in named.items():
        print(
            f"{name}: invalid_H={rep.invalid_H_rate:.4f} "
            f"motion_valid={rep.motion_valid_rate:.4f}"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmotion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic motion data")
    p.add_argument("--kind", default="sinusoidal", choices=harness.SYNTHETIC_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--sequences", type=int, default=4)
    p.add_argument("--joints", type=int, default=13)
    p.add_argument("--frame-rate", type=float, default=25.0)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--amplitude", type=float, default=0.3)
    p.add_argument("--frequency", type=float, default=0.5)
    p.add_argument("--velocity", type=float, nargs=3, default=[1.0, 0.0, 0.0])
    p.add_argument("--ood-p", type=float, default=0.0)
    p.add_argument("--split", default="test")
    p.add_argument("--with-covs", action="store_true")
    p.add_argument("--output", required=True)
    p.add_argument("--stereo-output", help="also write a stereo observation JSONL")
    p.add_argument("--cameras-output", help="write the synthetic rig as a camera JSON")
    p.add_argument("--pixel-sigma", type=float, default=0.5)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit the ridge DCT predictor")
    p.add_argument("--train", required=True)
    p.add_argument("--k-i", type=int, default=50)
    p.add_argument("--k-p", type=int, default=10)
    p.add_argument("--dct-cutoff", type=int, default=10)
    p.add_argument("--mu", type=float, default=1e-3)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("calibrate", help="build the calibration JSON from score files")
    p.add_argument("--scores", required=True, help='JSON {"scores": [[[...]]], "ood": {...}}')
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--epsilon-ood", type=float, default=0.05)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("evaluate", help="MPJPE of a predictor over a dataset")
    p.add_argument("--input", required=True)
    _add_predictor_args(p)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--dump-scores", help="write non-conformity scores for `calibrate`")
    p.add_argument("--output", required=True, help="report path prefix (.json/.csv)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("run", help="stream stereo observations through the pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--calibration", required=True)
    _add_predictor_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("table2", help="conformal vs worst-case prediction sets")
    p.add_argument("--cal", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--epsilon", type=float, default=0.01)
    _add_predictor_args(p)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--mode", default="per_joint", choices=["per_joint", "per_pose"])
    p.add_argument("--output", required=True, help="report path prefix (.json/.csv)")
    p.set_defaults(func=_cmd_table2)

    p = sub.add_parser("table3", help="full pipeline across N_req values")
    p.add_argument("--input", required=True)
    p.add_argument("--n-req", type=int, nargs="+", default=[3, 10, 50])
    p.add_argument("--ood-p", type=float, default=0.05)
    p.add_argument("--pixel-sigma", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    _add_predictor_args(p)
    p.add_argument("--output", required=True, help="report path prefix (.json/.csv)")
    p.set_defaults(func=_cmd_table3)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
