"""Command-line pipeline: synth -> preprocess -> features/autoencoder ->
mvm/mi -> split/calib -> report.

Every subcommand reads files earlier stages wrote and writes a
machine-readable JSON report (schema version 1) plus a short human summary
on stdout, so stages can run standalone.  Exit codes: 0 success, 1 usage
error, 2 data/validation error.  Report JSON is byte-identical across runs
with the same argv and seed; wall-clock metadata goes to a ``.meta.json``
sidecar instead.
"""

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

SCHEMA_VERSION = 1
_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; this toolkit reserves 2 for
    # data errors, so remap to exit code 1.
    def error(self, message):
        raise _UsageError(message)


def _check_overwrite(path, force):
    path = Path(path)
    if path.exists() and not force:
        from .util import PulseAuditError
        raise PulseAuditError(f"refusing to overwrite {path} without --force")
    return path


def _write_report(path, payload, quiet=False):
    payload = {"schema": SCHEMA_VERSION, **payload}
    text = json.dumps(payload, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")
    meta = {"written_at": datetime.now(timezone.utc).isoformat()}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta) + "\n")
    if not quiet:
        print(f"wrote {path}")
    return payload


def _say(args, message):
    if not args.quiet:
        print(message)


def _load_windows_npz(path):
    import numpy as np
    with np.load(path, allow_pickle=False) as z:
        data = {k: z[k] for k in z.files}
    return data


def _windows_from_arrays(data):
    """Rebuild Window objects from the arrays stored in a windows file."""
    from .signals import Channel, Waveform, Window
    windows = []
    rate = float(data["rate"])
    label_names = [str(s) for s in data.get("label_names", [])]
    for i in range(len(data["signals"])):
        win = Window(str(data["patient_ids"][i]), str(data["record_ids"][i]),
                     int(data["start_indices"][i]),
                     Waveform(data["signals"][i], rate, Channel.PPG))
        for j, name in enumerate(label_names):
            value = data["labels"][j, i]
            if not _isnan(value):
                win.labels[name] = float(value)
        windows.append(win)
    return windows


def _isnan(x):
    return x != x


def _load_labeled_dataset(data_dir):
    """Load a dataset directory and a labeler for its windows."""
    from . import synth
    from .signals import Channel, attach_sbp_labels, load_dataset
    data_dir = Path(data_dir)
    ds = load_dataset(data_dir / "manifest.json")
    spec = synth.load_synth_spec(data_dir)

    def label(rec, windows):
        if spec is not None:
            synth.label_windows(spec, windows)
        if Channel.ABP in rec.waveforms:
            attach_sbp_labels(rec, windows)
        return windows

    return ds, label


def _segment_all(ds, labeler, length_s, stride_s):
    from .signals import WindowSpec, segment
    spec = WindowSpec(length_s, stride_s)
    out = []
    for rec in ds.records:
        out.extend(labeler(rec, segment(rec, spec)))
    return out


# ---------------------------------------------------------------- synth

def _cmd_synth(args):
    from .synth import SynthSpec, SynthTask, write_synth_dataset
    out = Path(args.out)
    if (out / "manifest.json").exists() and not args.force:
        from .util import PulseAuditError
        raise PulseAuditError(f"refusing to overwrite {out / 'manifest.json'} without --force")
    spec = SynthSpec(n_patients=args.patients, records_per_patient=args.records,
                     duration_s=args.duration, rate_hz=args.rate,
                     hr_range=(args.hr_lo, args.hr_hi), noise_std=args.noise,
                     task=SynthTask(args.task), seed=args.seed)
    manifest = write_synth_dataset(spec, out)
    _say(args, f"wrote {spec.n_patients * spec.records_per_patient} records to {manifest.parent}")
    return 0


# ----------------------------------------------------------- preprocess

def _cmd_preprocess(args):
    import numpy as np
    from .signals import Channel, autocorr_quality, bandpass
    ds, labeler = _load_labeled_dataset(args.data)
    kept, signals_rows, label_rows = [], [], []
    total = 0
    for rec in ds.records:
        filtered = {}
        for chan, wf in rec.waveforms.items():
            filtered[chan] = bandpass(wf, args.low, args.high) if chan is Channel.PPG else wf
        from .signals import Record, WindowSpec, segment
        frec = Record(rec.record_id, rec.patient_id, filtered, rec.start_time)
        wins = labeler(rec, segment(frec, WindowSpec(args.length, args.stride)))
        for w in wins:
            total += 1
            if autocorr_quality(w.signal) >= args.quality_threshold:
                kept.append(w)
    retained = len(kept) / total if total else 0.0
    label_names = sorted({n for w in kept for n in w.labels})
    labels = np.full((len(label_names), len(kept)), np.nan)
    for i, w in enumerate(kept):
        for j, name in enumerate(label_names):
            if name in w.labels:
                labels[j, i] = w.labels[name]
    out = _check_overwrite(args.out, args.force)
    np.savez(out,
             signals=np.stack([w.signal.samples for w in kept]) if kept else np.zeros((0, 0)),
             rate=np.float64(ds.records[0].rate_hz if ds.records else 0.0),
             patient_ids=np.array([w.patient_id for w in kept]),
             record_ids=np.array([w.record_id for w in kept]),
             start_indices=np.array([w.start_index for w in kept], dtype=np.int64),
             label_names=np.array(label_names),
             labels=labels)
    _say(args, f"kept {len(kept)}/{total} windows (retained fraction {retained:.3f}) -> {out}")
    return 0


# ------------------------------------------------------------- features

def _cmd_features(args):
    from .features import export_feature_matrix, extract_features
    data = _load_windows_npz(args.windows)
    windows = _windows_from_arrays(data)
    vectors = [extract_features(w.signal) for w in windows]
    label_names = [str(s) for s in data.get("label_names", [])]
    out = _check_overwrite(args.out, args.force)
    names = export_feature_matrix(out, windows, vectors, label_names)
    _say(args, f"wrote {len(windows)} rows x {len(names)} features -> {out}")
    return 0


# ---------------------------------------------------------- autoencoder

def _cmd_autoencoder_train(args):
    import numpy as np
    from .autoenc import MlpSpec, TrainConfig, save_model, train
    from .util import znormalize
    data = _load_windows_npz(args.infile)
    X = np.stack([znormalize(row) for row in data["signals"]])
    spec = MlpSpec(X.shape[1], args.hidden, args.bottleneck)
    cfg = TrainConfig(lr=args.lr, stop_loss=args.stop_loss,
                      max_epochs=args.epochs, batch_size=args.batch, seed=args.seed)
    model = train(X, spec, cfg)
    out = _check_overwrite(args.out, args.force)
    save_model(model, out)
    state = "converged" if model.converged else "UNCONVERGED"
    _say(args, f"{state} at loss {model.final_loss:.4f} "
               f"after {len(model.history)} epochs -> {out}")
    return 0


def _cmd_autoencoder_encode(args):
    import csv
    import numpy as np
    from .autoenc import encode, load_model
    from .util import znormalize
    model = load_model(args.model)
    data = _load_windows_npz(args.infile)
    X = np.stack([znormalize(row) for row in data["signals"]])
    codes = encode(model, X)
    label_names = [str(s) for s in data.get("label_names", [])]
    out = _check_overwrite(args.out, args.force)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        code_cols = [f"c{i}" for i in range(codes.shape[1])]
        writer.writerow(["patient_id", "record_id", "window_start"] + code_cols + label_names)
        for i in range(len(codes)):
            row = [str(data["patient_ids"][i]), str(data["record_ids"][i]),
                   int(data["start_indices"][i])]
            row += [repr(float(v)) for v in codes[i]]
            row += ["" if _isnan(data["labels"][j, i]) else repr(float(data["labels"][j, i]))
                    for j in range(len(label_names))]
            writer.writerow(row)
    _say(args, f"wrote {len(codes)} codes of width {codes.shape[1]} -> {out}")
    return 0


# ------------------------------------------------------------------ mvm

def _cmd_mvm(args):
    from .mvm import MvmConfig, Scope, calibrate_threshold, scan
    ds, labeler = _load_labeled_dataset(args.data)
    windows = _segment_all(ds, labeler, args.window, args.window)
    calibration = None
    if args.ti == "auto":
        calibration = calibrate_threshold(windows, percentile=args.percentile,
                                          max_lag_s=args.max_lag,
                                          normalization=args.normalization)
        t_i = calibration.threshold
    else:
        t_i = float(args.ti)
    cfg = MvmConfig(t_i=t_i, t_o=args.to, window_length_s=args.window,
                    max_lag_s=args.max_lag, scope=Scope(args.scope),
                    normalization=args.normalization)
    report, matches = scan(windows, args.label, cfg, max_examples=args.max_examples)
    payload = {
        "mvm": {
            "label": args.label,
            "config": {"t_i": cfg.t_i, "t_o": cfg.t_o,
                       "window_length_s": cfg.window_length_s,
                       "max_lag_s": cfg.max_lag_s, "scope": cfg.scope.value,
                       "normalization": cfg.normalization},
            "total_windows": report.total_windows,
            "matched_windows": report.matched_windows,
            "match_rate": report.match_rate,
            "match_pairs": report.match_pairs,
            "examples": [
                {"window_i": list(m.window_i), "window_j": list(m.window_j),
                 "input_distance": m.input_distance, "label_gap": m.label_gap,
                 "lag": m.lag}
                for m in matches[:args.max_examples]
            ],
            "threshold_calibration": None if calibration is None else {
                "percentile": calibration.percentile,
                "threshold": calibration.threshold,
                "histogram_counts": calibration.histogram_counts.tolist(),
                "histogram_edges": calibration.histogram_edges.tolist(),
            },
        }
    }
    out = _check_overwrite(args.out, args.force)
    _write_report(out, payload, args.quiet)
    _say(args, f"match_rate {report.match_rate:.4f} "
               f"({report.matched_windows}/{report.total_windows} windows, "
               f"{report.match_pairs} pairs)")
    return 0


# ------------------------------------------------------------------- mi

def _read_feature_csv(path, feature_names, target):
    import csv as _csv
    import numpy as np
    rows = []
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        missing = [c for c in feature_names + [target] if c not in reader.fieldnames]
        if missing:
            from .util import PulseAuditError
            raise PulseAuditError(f"feature file lacks columns {missing}")
        for rec in reader:
            cells = [rec[c] for c in feature_names + [target]]
            if any(c == "" for c in cells):
                continue
            rows.append([float(c) for c in cells])
    if not rows:
        from .util import PulseAuditError
        raise PulseAuditError("no complete rows for the requested columns")
    arr = np.asarray(rows)
    return arr[:, :-1], arr[:, -1]


def _cmd_mi(args):
    from .mi import (EntropyMode, SampleMatrix, bootstrap_mi, estimate,
                     per_feature_mi)
    feature_names = [f.strip() for f in args.features.split(",") if f.strip()]
    X, y = _read_feature_csv(args.infile, feature_names, args.target)
    m = SampleMatrix(X, y, tuple(feature_names), args.target)
    bin_width = None if args.bins == "fd" else float(args.bins)
    result = estimate(m, k=args.k, entropy_mode=EntropyMode(args.entropy_mode),
                      bin_width=bin_width)
    payload = {
        "mi": {
            "target": args.target,
            "k": args.k,
            "n": m.n,
            "entropy_mode": args.entropy_mode,
            "per_feature_mi_bits": per_feature_mi(m, args.k),
            "combined_mi_bits": result.mi_bits,
            "entropy_bits": result.entropy_bits,
            "info_fraction": result.info_fraction,
            "warnings": result.warnings,
            "bootstrap": None,
        }
    }
    if args.bootstrap:
        fractions = [float(f) for f in args.bootstrap.split(",") if f]
        curve = bootstrap_mi(m, fractions, runs=args.runs, seed=args.seed, k=args.k)
        payload["mi"]["bootstrap"] = {
            "runs": curve.runs,
            "seed": curve.seed,
            "points": [{"fraction": p.fraction, "mi_bits": p.mi_bits.tolist(),
                        "mean": p.mean, "std": p.std} for p in curve.points],
        }
    out = _check_overwrite(args.out, args.force)
    _write_report(out, payload, args.quiet)
    _say(args, f"combined MI {result.mi_bits:.3f} bits / entropy "
               f"{result.entropy_bits:.3f} bits = info fraction "
               f"{100 * result.info_fraction:.1f}%")
    return 0


# ---------------------------------------------------------------- split

def _cmd_split_make(args):
    from .signals import WindowSpec
    from .splits import SplitPlan, SplitScheme, make_split, write_split
    ds, _ = _load_labeled_dataset(args.data)
    plan = SplitPlan(SplitScheme(args.scheme), args.test_fraction, args.seed)
    assignment = make_split(ds, WindowSpec(args.length, args.stride), plan)
    out = _check_overwrite(args.out, args.force)
    write_split(assignment, out)
    n_test = len(assignment.subset("test"))
    _say(args, f"{len(assignment.entries)} windows "
               f"({n_test} test) -> {out}")
    return 0


def _cmd_split_audit(args):
    from .splits import audit_split, read_split
    assignment = read_split(args.split)
    if args.manifest:
        from .signals import load_dataset
        known = {r.record_id for r in load_dataset(args.manifest).records}
        unknown = {e.record_id for e in assignment.entries} - known
        if unknown:
            from .util import PulseAuditError
            raise PulseAuditError(f"split references unknown records {sorted(unknown)[:5]}")
    report = audit_split(assignment)
    payload = {
        "leakage": {
            "verdicts": report.verdicts,
            "domain_overlap_patients": sorted(report.domain_overlap_patients),
            "data_overlap_count": len(report.data_overlap_pairs),
            "data_overlap_pairs": [
                {"record_id": p.train.record_id,
                 "train_start": p.train.start_index, "test_start": p.test.start_index,
                 "shared_samples": p.shared_samples}
                for p in report.data_overlap_pairs[:args.max_examples]
            ],
        }
    }
    out = _check_overwrite(args.out, args.force)
    _write_report(out, payload, args.quiet)
    _say(args, f"data_overlap: {report.verdicts['data_overlap']} "
               f"({len(report.data_overlap_pairs)} pairs); domain_overlap: "
               f"{report.verdicts['domain_overlap']} "
               f"({len(report.domain_overlap_patients)} patients)")
    return 0


# ---------------------------------------------------------------- calib

def _cmd_calib(args):
    import numpy as np
    from .calibeval import (LinearOnFeatures, MeanOfTraining, aami_check,
                            bhs_grade, drift_curve, evaluate, naive_calibrate,
                            offset_calibrate)
    from .splits import read_split
    ds, labeler = _load_labeled_dataset(args.data)
    records = {r.record_id: r for r in ds.records}
    assignment = read_split(args.split)

    def build(entries):
        from .signals import Window
        by_record = {}
        for e in entries:
            by_record.setdefault(e.record_id, []).append(e)
        wins = []
        for rid, group in sorted(by_record.items()):
            rec = records.get(rid)
            if rec is None:
                from .util import PulseAuditError
                raise PulseAuditError(f"split references unknown record {rid!r}")
            from .signals import Channel
            ws = [Window(e.patient_id, e.record_id, e.start_index,
                         rec.waveforms[Channel.PPG].slice(e.start_index, e.length))
                  for e in sorted(group, key=lambda e: e.start_index)]
            wins.extend(labeler(rec, ws))
        return wins

    train_windows = build(assignment.subset("train"))
    test_windows = build(assignment.subset("test"))
    label = args.label

    if args.predictor == "mean":
        base = MeanOfTraining().fit(train_windows, label)
    else:
        base = LinearOnFeatures().fit(train_windows, label)

    by_record = {}
    for w in test_windows:
        by_record.setdefault(w.record_id, []).append(w)
    preds, truths, elapsed, drift_windows = [], [], [], []
    for rid, group in sorted(by_record.items()):
        group.sort(key=lambda w: w.start_index)
        group = [w for w in group if label in w.labels]
        if not group:
            continue
        if args.method == "naive":
            if len(group) <= args.calib_windows:
                continue
            predictor = naive_calibrate(group, label, args.calib_windows)
            eval_group = group[args.calib_windows:]
        elif args.method == "offset":
            if len(group) <= args.calib_windows:
                continue
            predictor = offset_calibrate(base, group, label, args.calib_windows)
            eval_group = group[args.calib_windows:]
        else:
            predictor = base
            eval_group = group
        start = records[rid].start_time or 0.0
        for w in eval_group:
            preds.append(predictor.predict(w))
            truths.append(w.labels[label])
            elapsed.append(start + w.start_s - (start + eval_group[0].start_s))
            drift_windows.append(w)
    if len(preds) < 2:
        from .util import PulseAuditError
        raise PulseAuditError("fewer than 2 evaluable test windows after calibration")
    result = evaluate(preds, truths)
    per_subject = {}
    for w in test_windows:
        if label in w.labels:
            per_subject.setdefault(w.patient_id, []).append(w.labels[label])
    cohort = [float(np.mean(v)) for _, v in sorted(per_subject.items())]
    aami = aami_check(result, cohort)
    bhs = bhs_grade(result.errors)

    class _Replay:
        def __init__(self):
            self.table = {id(w): p for w, p in zip(drift_windows, preds)}

        def predict(self, w):
            return self.table[id(w)]

    drift = drift_curve(_Replay(), drift_windows, args.bucket, label, elapsed)
    payload = {
        "calib": {
            "method": args.method,
            "predictor": args.predictor,
            "label": label,
            "eval": {"bias": result.bias, "sd": result.sd, "mae": result.mae,
                     "n": result.n},
            "aami": {"bias_ok": aami.bias_ok, "sd_ok": aami.sd_ok,
                     "cohort_ok": aami.cohort_ok, "compliant": aami.compliant,
                     "n_subjects": aami.n_subjects,
                     "high_fraction": aami.high_fraction,
                     "low_fraction": aami.low_fraction},
            "bhs": {"pct_5": bhs.pct_5, "pct_10": bhs.pct_10,
                    "pct_15": bhs.pct_15, "grade": bhs.grade},
            "drift": [{"bucket": p.bucket, "elapsed_start_s": p.elapsed_start_s,
                       "bias": p.result.bias, "sd": p.result.sd,
                       "mae": p.result.mae, "n": p.result.n} for p in drift],
        }
    }
    out = _check_overwrite(args.out, args.force)
    _write_report(out, payload, args.quiet)
    _say(args, f"bias {result.bias:+.2f}  sd {result.sd:.2f}  mae {result.mae:.2f} "
               f"(n={result.n})  AAMI {'PASS' if aami.compliant else 'fail'}  "
               f"BHS {bhs.grade}")
    return 0


# --------------------------------------------------------------- report

def _load_section(path, key):
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        from .util import PulseAuditError
        raise PulseAuditError(f"missing artifact {p}")
    payload = json.loads(p.read_text())
    if key not in payload:
        from .util import PulseAuditError
        raise PulseAuditError(f"artifact {p} has no {key!r} section")
    return payload[key]


def _cmd_report(args):
    sections = {
        "mvm": _load_section(args.mvm, "mvm"),
        "mi": _load_section(args.mi, "mi"),
        "leakage": _load_section(args.leakage, "leakage"),
        "calib": _load_section(args.calib, "calib"),
    }
    out = _check_overwrite(args.out, args.force)
    _write_report(out, sections, args.quiet)
    csv_dir = Path(args.csv_dir) if args.csv_dir else out.parent
    csv_dir.mkdir(parents=True, exist_ok=True)
    import csv as _csv
    mvm = sections["mvm"]
    if mvm and mvm.get("threshold_calibration"):
        cal = mvm["threshold_calibration"]
        with open(csv_dir / "threshold_histogram.csv", "w", newline="") as fh:
            w = _csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for i, count in enumerate(cal["histogram_counts"]):
                w.writerow([cal["histogram_edges"][i], cal["histogram_edges"][i + 1], count])
    mi = sections["mi"]
    if mi and mi.get("bootstrap"):
        with open(csv_dir / "bootstrap_mi.csv", "w", newline="") as fh:
            w = _csv.writer(fh, lineterminator="\n")
            w.writerow(["fraction", "run", "mi_bits"])
            for point in mi["bootstrap"]["points"]:
                for run, value in enumerate(point["mi_bits"]):
                    w.writerow([point["fraction"], run, value])
    calib = sections["calib"]
    if calib and calib.get("drift"):
        with open(csv_dir / "drift_curve.csv", "w", newline="") as fh:
            w = _csv.writer(fh, lineterminator="\n")
            w.writerow(["bucket", "elapsed_start_s", "bias", "sd", "mae", "n"])
            for p in calib["drift"]:
                w.writerow([p["bucket"], p["elapsed_start_s"], p["bias"],
                            p["sd"], p["mae"], p["n"]])
    return 0


# ----------------------------------------------------------------- main

def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--quiet", action="store_true")


def build_parser():
    parser = _Parser(prog="pulseaudit",
                     description="Audit how well a signal predicts a target label.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--task", choices=["hr", "random", "drift", "subspace"], default="hr")
    p.add_argument("--patients", type=int, default=20)
    p.add_argument("--records", type=int, default=3)
    p.add_argument("--duration", type=float, default=360.0)
    p.add_argument("--rate", type=float, default=125.0)
    p.add_argument("--hr-lo", type=float, default=50.0)
    p.add_argument("--hr-hi", type=float, default=110.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("preprocess", help="band-pass, window, quality-filter")
    p.add_argument("--data", required=True)
    p.add_argument("--low", type=float, default=0.5)
    p.add_argument("--high", type=float, default=16.0)
    p.add_argument("--length", type=float, default=10.0)
    p.add_argument("--stride", type=float, default=5.0)
    p.add_argument("--quality-threshold", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("features", help="handcrafted feature matrix CSV")
    p.add_argument("--windows", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("autoencoder", help="train or apply the window autoencoder")
    asub = p.add_subparsers(dest="subcommand", required=True)
    pt = asub.add_parser("train")
    pt.add_argument("--in", dest="infile", required=True)
    pt.add_argument("--bottleneck", type=int, default=20)
    pt.add_argument("--hidden", type=int, default=128)
    pt.add_argument("--lr", type=float, default=1e-3)
    pt.add_argument("--stop-loss", type=float, default=0.1)
    pt.add_argument("--epochs", type=int, default=500)
    pt.add_argument("--batch", type=int, default=64)
    pt.add_argument("--out", required=True)
    _add_common(pt)
    pt.set_defaults(func=_cmd_autoencoder_train)
    pe = asub.add_parser("encode")
    pe.add_argument("--model", required=True)
    pe.add_argument("--in", dest="infile", required=True)
    pe.add_argument("--out", required=True)
    _add_common(pe)
    pe.set_defaults(func=_cmd_autoencoder_encode)

    p = sub.add_parser("mvm", help="multi-valued mapping scan")
    p.add_argument("--data", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--ti", default="auto", help="input threshold, or 'auto' to calibrate")
    p.add_argument("--to", type=float, required=True, help="label-space threshold")
    p.add_argument("--percentile", type=float, default=90.0)
    p.add_argument("--window", type=float, default=2.0)
    p.add_argument("--max-lag", type=float, default=0.25)
    p.add_argument("--scope", choices=["intra", "inter"], default="intra")
    p.add_argument("--normalization", choices=["none", "per-sample", "mean-square"],
                   default="none")
    p.add_argument("--max-examples", type=int, default=20)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_mvm)

    p = sub.add_parser("mi", help="mutual information / Info-Fraction")
    p.add_argument("--in", dest="infile", required=True, help="feature matrix CSV")
    p.add_argument("--features", required=True, help="comma-separated column names")
    p.add_argument("--target", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--entropy-mode", choices=["hist", "knn"], default="hist")
    p.add_argument("--bins", default="fd", help="'fd' or a numeric bin width")
    p.add_argument("--bootstrap", default=None, help="comma-separated fractions")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_mi)

    p = sub.add_parser("split", help="make or audit train/test splits")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    pm = ssub.add_parser("make")
    pm.add_argument("--data", required=True)
    pm.add_argument("--scheme", choices=["nooverlap", "domainoverlap", "dataoverlap"],
                    default="nooverlap")
    pm.add_argument("--test-fraction", type=float, default=0.2)
    pm.add_argument("--length", type=float, default=10.0)
    pm.add_argument("--stride", type=float, default=5.0)
    pm.add_argument("--out", required=True)
    _add_common(pm)
    pm.set_defaults(func=_cmd_split_make)
    pa = ssub.add_parser("audit")
    pa.add_argument("--split", required=True)
    pa.add_argument("--manifest", default=None)
    pa.add_argument("--max-examples", type=int, default=20)
    pa.add_argument("--out", required=True)
    _add_common(pa)
    pa.set_defaults(func=_cmd_split_audit)

    p = sub.add_parser("calib", help="calibration baselines + standards grading")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--method", choices=["naive", "offset", "none"], default="none")
    p.add_argument("--predictor", choices=["mean", "linear"], default="mean")
    p.add_argument("--label", default="sbp")
    p.add_argument("--calib-windows", type=int, default=None,
                   help="calibration windows per record (default: 3 naive, 1 offset)")
    p.add_argument("--bucket", type=float, default=60.0, help="drift bucket (s)")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_calib)

    p = sub.add_parser("report", help="bundle stage artifacts into one report")
    p.add_argument("--mvm", default=None)
    p.add_argument("--mi", default=None)
    p.add_argument("--leakage", default=None)
    p.add_argument("--calib", default=None)
    p.add_argument("--csv-dir", default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    threads = args.threads
    if threads is None and os.environ.get("PULSEAUDIT_THREADS"):
        try:
            threads = int(os.environ["PULSEAUDIT_THREADS"])
        except ValueError:
            print("usage error: PULSEAUDIT_THREADS must be an integer", file=sys.stderr)
            return 1
    if threads is not None:
        # only effective when numpy has not been imported yet in this process
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(threads)
    if getattr(args, "method", None) is not None and getattr(args, "calib_windows", None) is None:
        args.calib_windows = 3 if args.method == "naive" else 1
    from .util import PulseAuditError
    try:
        return args.func(args)
    except PulseAuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
