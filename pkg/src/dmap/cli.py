"""Command-line surface: generate data, inspect semantic spaces, train,
predict, evaluate, and run the whole pipeline.

Exit codes: 0 success; 2 input validation; 3 numerical failure
(ill-conditioned or singular systems); 4 file I/O or format problems.
Structured errors go to stderr as one JSON object.

Configuration precedence is flags > config file > built-in defaults.
``--threads`` caps the linear-algebra thread pools; it must act before
``numpy`` is first imported, which is why every command imports the
compute modules lazily.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return  # machine default
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(threads)


def _merge_config(file_config, flag_values: dict):
    """Apply explicitly-passed flags on top of a config object."""
    from .model import DmapConfig

    base = {
        "m": file_config.m,
        "lam": file_config.lam,
        "gamma": file_config.gamma,
        "eta": file_config.eta,
        "train_max_iter": file_config.train_max_iter,
        "test_max_iter": file_config.test_max_iter,
        "convergence_tol": file_config.convergence_tol,
        "mode": file_config.mode,
        "normalize": file_config.normalize,
        "center": file_config.center,
    }
    for key, value in flag_values.items():
        if value is not None:
            base[key] = value
    return DmapConfig(**base)


def _load_effective_config(args, start=None):
    """Start from defaults (or ``start``), overlay config file, then flags."""
    from . import io as dio
    from .model import DmapConfig

    config = start if start is not None else DmapConfig()
    epsilon, seed = None, 0
    if getattr(args, "config", None):
        config, epsilon, seed = dio.load_run_config(args.config)
        if start is not None:
            # A file explicitly given at predict time overrides the
            # model's stored hyper-parameters wholesale.
            pass
    flags = {
        "m": getattr(args, "m", None),
        "lam": getattr(args, "lam", None),
        "gamma": getattr(args, "gamma", None),
        "eta": getattr(args, "eta", None),
        "train_max_iter": getattr(args, "train_max_iter", None),
        "test_max_iter": getattr(args, "test_max_iter", None),
        "convergence_tol": getattr(args, "convergence_tol", None),
        "mode": getattr(args, "mode", None),
        "normalize": getattr(args, "normalize", None),
        "center": getattr(args, "center", None),
    }
    config = _merge_config(config, flags)
    if getattr(args, "epsilon", None) is not None:
        epsilon = args.epsilon
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    return config, epsilon, seed


def _ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _add_config_flags(sub, *, include_mode=True) -> None:
    sub.add_argument("--config", help="run-config JSON file")
    sub.add_argument("--lambda", dest="lam", type=float, help="relationship ridge regulariser")
    sub.add_argument("--gamma", type=float, help="feature-side ridge regulariser")
    sub.add_argument("--eta", type=float, help="embedding-side ridge regulariser")
    sub.add_argument("--m", type=int, help="neighbour count for prototypes")
    sub.add_argument("--train-max-iter", type=int, help="training refinement iterations")
    sub.add_argument("--test-max-iter", type=int, help="transductive refinement iterations")
    sub.add_argument("--convergence-tol", type=float, help="prototype convergence threshold")
    if include_mode:
        sub.add_argument("--mode", choices=("czsr", "gzsr"), help="candidate set at inference")
    sub.add_argument("--normalize", action="store_const", const=True, default=None,
                     help="l2-normalise feature and embedding columns")
    sub.add_argument("--center", action="store_const", const=True, default=None,
                     help="subtract the training-feature mean")


# --- command handlers -------------------------------------------------------

def _cmd_preinspect(args) -> int:
    from . import io as dio
    from .consistency import preinspect

    K_s = dio.load_matrix(args.kseen)
    K_u = dio.load_matrix(args.kunseen)
    report = preinspect(K_s, K_u, epsilon=args.epsilon)
    _ensure_parent(args.out)
    dio.save_defect_report(report, args.out)
    print(f"flagged {len(report.flagged_pairs)} pair(s) at epsilon={report.epsilon!r}")
    return 0


def _cmd_cm(args) -> int:
    from . import io as dio
    from .consistency import build_relationship_matrix, consistency_measure, irc_gap
    from .core import class_mean_prototypes

    X = dio.load_matrix(args.features)
    labels = dio.load_labels(args.labels)
    split = dio.load_split(args.split)
    emb = dio.load_matrix(args.embeddings)
    from .core import EmbeddingMatrix

    embeddings = EmbeddingMatrix(emb, split.seen + split.unseen)
    lam = args.lam if args.lam is not None else 1e-4
    seen_protos = class_mean_prototypes(X, labels, split.seen)
    unseen_protos = class_mean_prototypes(X, labels, split.unseen)
    R_x = build_relationship_matrix(seen_protos, unseen_protos, lam)
    R_k = build_relationship_matrix(
        embeddings.subset(split.seen), embeddings.subset(split.unseen), lam
    )
    cm = consistency_measure(seen_protos, R_x, R_k)
    gap = irc_gap(seen_protos, R_x, R_k)
    _ensure_parent(args.out)
    dio._dump_json({"cm": cm, "irc_gap": gap, "lambda": lam}, args.out)
    print(f"cm={cm!r} irc_gap={gap!r}")
    return 0


def _dataset_from_files(features_path, labels_path, split_path, embeddings_path):
    from . import io as dio
    from .core import EmbeddingMatrix, FeatureMatrix, LabeledDataset

    X = dio.load_matrix(features_path)
    labels = dio.load_labels(labels_path)
    split = dio.load_split(split_path)
    emb = dio.load_matrix(embeddings_path)
    embeddings = EmbeddingMatrix(emb, split.seen + split.unseen)
    features = FeatureMatrix(X, tuple(f"tr{i:06d}" for i in range(X.shape[1])))
    return LabeledDataset(features=features, labels=labels, split=split,
                          semantic=embeddings), split, embeddings


def _cmd_train(args) -> int:
    from . import io as dio
    from .model import train

    config, _, _ = _load_effective_config(args)
    dataset, _, _ = _dataset_from_files(args.features, args.labels, args.split,
                                        args.embeddings)
    model = train(dataset, config)
    dio.save_model(model, args.model_dir)
    print(f"trained: {model.train_iterations_run} refinement iteration(s), "
          f"model in {args.model_dir}")
    return 0


def _cmd_predict(args) -> int:
    from . import io as dio
    from .core import EmbeddingMatrix, FeatureMatrix
    from .model import infer_inductive, infer_transductive

    model = dio.load_model(args.model_dir)
    config, _, _ = _load_effective_config(args, start=model.config)
    if config != model.config:
        from dataclasses import replace
        model = replace(model, config=config)
    split = dio.load_split(args.split)
    emb = dio.load_matrix(args.embeddings)
    embeddings = EmbeddingMatrix(emb, split.seen + split.unseen)
    X = dio.load_matrix(args.test_features)
    test = FeatureMatrix(X, tuple(f"te{i:06d}" for i in range(X.shape[1])))
    K_unseen = embeddings.subset(split.unseen)
    K_seen = embeddings.subset(split.seen)
    _ensure_parent(args.out)
    if args.inductive:
        prediction = infer_inductive(model, test, K_unseen, K_seen, config.mode)
    else:
        iterations = args.iterations if args.iterations is not None else config.test_max_iter
        prediction, k_tilde_u = infer_transductive(model, test, K_unseen,
                                                   config.mode, iterations)
        dio.save_matrix(k_tilde_u.data, _ktilde_path(args.out))
    dio.save_prediction(prediction, config.mode, args.out)
    print(f"predicted {len(prediction.instance_ids)} instance(s) -> {args.out}")
    return 0


def _ktilde_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + "_ktilde_u.dmx")


def _cmd_eval(args) -> int:
    from . import io as dio
    from .evaluation import evaluate

    prediction, stored_mode = dio.load_prediction(args.pred)
    truth = dio.load_labels(args.truth)
    mode = args.mode if args.mode is not None else stored_mode
    ks = tuple(int(tok) for tok in args.topk.split(",")) if args.topk else (1,)
    report = evaluate(prediction, truth, mode, ks)
    _ensure_parent(args.out)
    dio.save_eval_report(report, args.out)
    out = Path(args.out)
    dio.save_confusion_csv(report, out.with_name(out.stem + "_confusion.csv"))
    print(f"mean per-class accuracy: {report.mean_per_class_accuracy!r}")
    return 0


def _cmd_synth(args) -> int:
    from . import io as dio
    from .errors import ValidationError
    from .synth import SynthConfig, generate

    obj = dio._load_json(args.config)
    if not isinstance(obj, dict):
        raise ValidationError("synth config must be a JSON object")
    allowed = {"d", "p", "k", "l", "n_per_class", "noise_sigma",
               "irc_distortion", "defect_pairs", "seed"}
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"unknown synth-config keys: {sorted(unknown)}")
    dataset = generate(SynthConfig(**obj))
    dio.save_dataset(dataset, args.out_dir)
    print(f"dataset written to {args.out_dir}")
    return 0


def _cmd_pipeline(args) -> int:
    from . import io as dio
    from .consistency import build_relationship_matrix, consistency_measure, irc_gap
    from .core import FeatureMatrix, class_mean_prototypes
    from .evaluation import evaluate
    from .model import infer_inductive, infer_transductive, train
    import numpy as np

    config, _, _ = _load_effective_config(args)
    data_dir = Path(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set, test_features, test_labels, embeddings = dio.load_dataset(data_dir)
    split = train_set.split
    K_unseen = embeddings.subset(split.unseen)
    K_seen = embeddings.subset(split.seen)

    model = train(train_set, config)
    dio.save_model(model, out_dir / "model")

    # Consistency diagnostics on class-mean prototypes (train side gives
    # the seen prototypes, the labelled test side the unseen ones).
    all_X = np.concatenate([train_set.features.data, test_features.data], axis=1)
    all_labels = tuple(train_set.labels) + tuple(test_labels)
    seen_protos = class_mean_prototypes(all_X, all_labels, split.seen)
    unseen_protos = class_mean_prototypes(all_X, all_labels, split.unseen)
    R_x = build_relationship_matrix(seen_protos, unseen_protos, config.lam)
    R_k = build_relationship_matrix(K_seen, K_unseen, config.lam)
    cm_value = consistency_measure(seen_protos, R_x, R_k)
    gap_value = irc_gap(seen_protos, R_x, R_k)

    rows = []

    prediction = infer_inductive(model, test_features, K_unseen, K_seen, config.mode)
    dio.save_prediction(prediction, config.mode, out_dir / "pred_inductive.json")
    report = evaluate(prediction, test_labels, config.mode, ks=(1,))
    dio.save_eval_report(report, out_dir / "eval_inductive.json")
    rows.append({
        "iteration": 0,
        "mode": config.mode,
        "mean_per_class_acc": report.mean_per_class_accuracy,
        "top1": report.top_k_accuracy[1],
        "cm": cm_value,
        "irc_gap": gap_value,
    })

    for t in range(1, config.test_max_iter + 1):
        prediction, k_tilde_u = infer_transductive(model, test_features, K_unseen,
                                                   config.mode, iterations=t)
        dio.save_prediction(prediction, config.mode, out_dir / f"pred_iter{t}.json")
        dio.save_matrix(k_tilde_u.data, out_dir / f"ktilde_u_iter{t}.dmx")
        report = evaluate(prediction, test_labels, config.mode, ks=(1,))
        dio.save_eval_report(report, out_dir / f"eval_iter{t}.json")
        rows.append({
            "iteration": t,
            "mode": config.mode,
            "mean_per_class_acc": report.mean_per_class_accuracy,
            "top1": report.top_k_accuracy[1],
            "cm": cm_value,
            "irc_gap": gap_value,
        })

    dio.write_summary_csv(rows, out_dir / "summary.csv")
    for row in rows:
        print(f"iteration {row['iteration']}: "
              f"mean_per_class_acc={row['mean_per_class_acc']!r} top1={row['top1']!r}")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmap",
        description="Zero-shot recognition with dual visual-semantic mapping paths.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap linear-algebra thread pools (default: machine)")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("preinspect",
                              help="flag unseen-class pairs indistinguishable from seen data")
    sub.add_argument("--kseen", required=True, help="seen embeddings matrix file (p x k)")
    sub.add_argument("--kunseen", required=True, help="unseen embeddings matrix file (p x l)")
    sub.add_argument("--epsilon", type=float, default=None,
                     help="absolute distance threshold (default: 1e-6 x median)")
    sub.add_argument("--out", required=True, help="defect report JSON")
    sub.set_defaults(func=_cmd_preinspect)

    sub = commands.add_parser("cm", help="consistency measure between feature and semantic manifolds")
    sub.add_argument("--features", required=True, help="features matrix file (d x n)")
    sub.add_argument("--labels", required=True,
                     help="labels JSON array covering seen and unseen instances")
    sub.add_argument("--split", required=True, help="split JSON file")
    sub.add_argument("--embeddings", required=True,
                     help="embeddings matrix file, columns in split order")
    sub.add_argument("--lambda", dest="lam", type=float, default=None,
                     help="relationship ridge regulariser (default 1e-4)")
    sub.add_argument("--out", required=True, help="output JSON with cm and irc_gap")
    sub.set_defaults(func=_cmd_cm)

    sub = commands.add_parser("train", help="fit both mapping paths and refined prototypes")
    sub.add_argument("--features", required=True)
    sub.add_argument("--labels", required=True)
    sub.add_argument("--split", required=True)
    sub.add_argument("--embeddings", required=True)
    _add_config_flags(sub)
    sub.add_argument("--model-dir", required=True)
    sub.set_defaults(func=_cmd_train)

    sub = commands.add_parser("predict", help="classify test features with a trained model")
    sub.add_argument("--model-dir", required=True)
    sub.add_argument("--test-features", required=True)
    sub.add_argument("--embeddings", required=True)
    sub.add_argument("--split", required=True)
    _add_config_flags(sub)
    sub.add_argument("--inductive", action="store_true",
                     help="score against the given embeddings instead of transductive prototypes")
    sub.add_argument("--iterations", type=int, default=None,
                     help="transductive refinement iterations (default: test_max_iter)")
    sub.add_argument("--out", required=True, help="prediction JSON")
    sub.set_defaults(func=_cmd_predict)

    sub = commands.add_parser("eval", help="score a prediction against ground truth")
    sub.add_argument("--pred", required=True)
    sub.add_argument("--truth", required=True, help="ground-truth labels JSON array")
    sub.add_argument("--mode", choices=("czsr", "gzsr"), default=None)
    sub.add_argument("--topk", default="1", help="comma-separated top-k cutoffs")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=_cmd_eval)

    sub = commands.add_parser("synth", help="generate a synthetic dataset")
    sub.add_argument("--config", required=True, help="synth-config JSON file")
    sub.add_argument("--out-dir", required=True)
    sub.set_defaults(func=_cmd_synth)

    sub = commands.add_parser("pipeline", help="train, predict and evaluate end to end")
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--out-dir", required=True)
    _add_config_flags(sub)
    sub.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(args.threads)
    from .errors import DmapError, FileFormatError, NumericalError

    try:
        return args.func(args)
    except FileFormatError as exc:
        _report_error(exc)
        return 4
    except NumericalError as exc:
        _report_error(exc)
        return 3
    except DmapError as exc:
        _report_error(exc)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        _report_error(exc)
        return 4


def _report_error(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
