"""Command-line surface: reproducible runs over files.

Subcommands cover the whole pipeline: synthesize data, build the graph,
train, evaluate, predict, and verify gradients. Option values resolve as
defaults, then a flat ``key = value`` config file (--config, or the
RADKG_CONFIG environment variable), then explicit flags; the effective
configuration is echoed into every output artifact. Exit codes: 0 success,
1 usage error, 2 data or parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import gradcheck
from .encoders import FeatureTable, SyntheticSpec, load_features, synth_dataset, write_features
from .errors import CheckpointError, ParseError, TrainingDivergedError
from .evaluate import format_report, macro_auc, param_count, predict_table, write_predictions
from .kg import (
    RelationKind,
    UncertainPolicy,
    add_cooccurrence,
    build_radkg,
    cooccurrence_matrix,
    load_annotations,
    split,
    write_annotations,
    write_kg,
)
from .scoring import init_model
from .training import TrainConfig, load_checkpoint, resolve_relations, save_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this surface reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# Option table: one declarative spec per flag, shared by the argparse layer,
# the config-file layer, and the echo.
# ---------------------------------------------------------------------------

def _conv_int(v):
    if isinstance(v, int):
        return v
    try:
        return int(v)
    except ValueError:
        raise UsageError(f"expected an integer, got {v!r}") from None


def _conv_float(v):
    if isinstance(v, float):
        return v
    try:
        return float(v)
    except ValueError:
        raise UsageError(f"expected a number, got {v!r}") from None


def _conv_optional_float(v):
    if v is None or (isinstance(v, str) and v.lower() == "none"):
        return None
    return _conv_float(v)


def _conv_bool(v):
    if isinstance(v, bool):
        return v
    low = str(v).lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise UsageError(f"expected true/false, got {v!r}")


def _conv_str(v):
    return str(v)


def _conv_ratios(v):
    if isinstance(v, tuple):
        return v
    parts = str(v).split(",")
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated ratios, got {v!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"non-numeric ratio in {v!r}") from None


def _conv_relations(v):
    if v is None or (isinstance(v, str) and v.lower() in ("none", "auto")):
        return None
    if isinstance(v, tuple):
        return v
    try:
        return tuple(RelationKind(token.strip()) for token in str(v).split(","))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _conv_names(v):
    if v is None or (isinstance(v, str) and v.lower() == "none"):
        return None
    if isinstance(v, list):
        return v
    return [token.strip() for token in str(v).split(",") if token.strip()]


def _conv_policy(v):
    if v is None or isinstance(v, UncertainPolicy):
        return v
    try:
        return UncertainPolicy(str(v))
    except ValueError:
        choices = ", ".join(p.value for p in UncertainPolicy)
        raise UsageError(f"unknown policy {v!r}, expected one of: {choices}") from None


@dataclass(frozen=True)
class Opt:
    name: str
    convert: object
    default: object = None
    help: str = ""
    flag: bool = False
    required: bool = False
    choices: tuple = ()

    @property
    def key(self) -> str:
        return self.name.replace("-", "_")


_CONFIG_OPT = Opt("config", _conv_str, None, "path to a key = value config file")

_SPLIT_OPTS = [
    Opt("ratios", _conv_ratios, (0.7, 0.1, 0.2), "train,val,test proportions"),
    Opt("split-seed", _conv_int, 0, "seed for the fold assignment"),
]

_KG_OPTS = [
    Opt("policy", _conv_policy, UncertainPolicy.AS_POSITIVE,
        "uncertain-label handling", choices=tuple(p.value for p in UncertainPolicy)),
    Opt("cooccurrence", _conv_bool, False, "add finding co-occurrence edges", flag=True),
    Opt("cooccur-threshold", _conv_float, 0.2,
        "conditional probability above which a co-occurrence edge is added"),
]

COMMAND_OPTS: dict[str, list[Opt]] = {
    "synth": [
        Opt("out-features", _conv_str, required=True, help="feature CSV to write"),
        Opt("out-annotations", _conv_str, required=True, help="annotation CSV to write"),
        Opt("m", _conv_int, 500, "number of images"),
        Opt("n", _conv_int, 14, "number of findings"),
        Opt("dim", _conv_int, 64, "feature dimension"),
        Opt("prototype-scale", _conv_float, 1.0, "scale of per-finding prototypes"),
        Opt("noise-scale", _conv_float, 0.1, "additive feature noise"),
        Opt("sparsity", _conv_float, 0.25, "per-cell positive-label probability"),
        Opt("uncertain-fraction", _conv_float, 0.0,
            "fraction of positive cells downgraded to uncertain"),
        Opt("seed", _conv_int, 0, "generator seed"),
    ],
    "build-kg": [
        Opt("annotations", _conv_str, required=True, help="annotation CSV to read"),
        Opt("out", _conv_str, required=True, help="graph file to write"),
        *_KG_OPTS,
    ],
    "train": [
        Opt("features", _conv_str, required=True, help="feature CSV"),
        Opt("annotations", _conv_str, required=True, help="annotation CSV"),
        Opt("out-checkpoint", _conv_str, required=True, help="checkpoint to write"),
        Opt("out-history", _conv_str, None, "per-epoch loss/val-AUC file"),
        Opt("scorer", _conv_str, "distmult", "scoring function",
            choices=("distmult", "conve")),
        Opt("embed-dim", _conv_int, 100, "embedding dimension d"),
        Opt("channels", _conv_int, 8, "convolution channels (conve only)"),
        *_KG_OPTS,
        *_SPLIT_OPTS,
        Opt("lr", _conv_float, 1e-3, "learning rate"),
        Opt("epochs", _conv_int, 20, "maximum epochs"),
        Opt("batch-size", _conv_int, 32, "minibatch size in items"),
        Opt("optimizer", _conv_str, "adam", "optimizer", choices=("adam", "sgd")),
        Opt("seed", _conv_int, 0, "training seed (init and shuffling)"),
        Opt("patience", _conv_int, 5, "epochs without val-AUC gain before stopping"),
        Opt("relations", _conv_relations, None,
            "relations to train on (comma list; default: those present in the graph)"),
    ],
    "eval": [
        Opt("checkpoint", _conv_str, required=True, help="checkpoint to read"),
        Opt("features", _conv_str, required=True, help="feature CSV"),
        Opt("annotations", _conv_str, required=True, help="annotation CSV"),
        *_SPLIT_OPTS,
        Opt("fold", _conv_str, "test", "which fold to evaluate",
            choices=("train", "val", "test", "all")),
        Opt("policy", _conv_policy, None,
            "uncertain-label mapping for ground truth (default: the checkpoint's)",
            choices=tuple(p.value for p in UncertainPolicy)),
        Opt("findings", _conv_names, None, "comma list restricting the reported findings"),
        Opt("tau", _conv_optional_float, None, "threshold for sensitivity/specificity"),
        Opt("out", _conv_str, None, "report file (also printed to stdout)"),
    ],
    "predict": [
        Opt("checkpoint", _conv_str, required=True, help="checkpoint to read"),
        Opt("features", _conv_str, required=True, help="feature CSV"),
        Opt("out", _conv_str, required=True, help="prediction CSV to write"),
        Opt("ids", _conv_names, None, "comma list of image ids (default: all rows)"),
        Opt("tau", _conv_optional_float, None, "threshold adding binary label columns"),
    ],
    "gradcheck": [
        Opt("scorer", _conv_str, "distmult", "scoring function",
            choices=("distmult", "conve")),
        Opt("dim", _conv_int, 1024, "feature dimension D"),
        Opt("embed-dim", _conv_int, 100, "embedding dimension d"),
        Opt("channels", _conv_int, 8, "convolution channels (conve only)"),
        Opt("n", _conv_int, 14, "number of findings"),
        Opt("trials", _conv_int, 5, "random instances per mode"),
        Opt("seed", _conv_int, 0, "base seed"),
        Opt("tolerance", _conv_float, gradcheck.TOLERANCE, "max allowed relative error"),
    ],
}


def build_parser() -> _Parser:
    parser = _Parser(prog="radkg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for command, opts in COMMAND_OPTS.items():
        p = sub.add_parser(command)
        for opt in [_CONFIG_OPT, *opts]:
            if opt.flag:
                p.add_argument(f"--{opt.name}", dest=opt.key, action="store_true",
                               default=argparse.SUPPRESS, help=opt.help)
            else:
                kwargs = {"dest": opt.key, "default": argparse.SUPPRESS, "help": opt.help}
                if opt.choices:
                    kwargs["choices"] = opt.choices
                p.add_argument(f"--{opt.name}", **kwargs)
    return parser


def _load_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            key, sep, value = text.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


_ALL_KEYS = {opt.key for opts in COMMAND_OPTS.values() for opt in opts}


def resolve_options(command: str, namespace: argparse.Namespace) -> dict[str, object]:
    """Merge defaults, config file, and explicit flags, then convert."""
    opts = COMMAND_OPTS[command]
    given = vars(namespace)
    config_path = given.get("config") or os.environ.get("RADKG_CONFIG")
    file_values = _load_config_file(config_path) if config_path else {}
    for key in file_values:
        if key not in _ALL_KEYS:
            raise UsageError(f"unknown config key {key!r}")

    resolved: dict[str, object] = {"config": config_path}
    for opt in opts:
        if opt.key in given:
            raw = given[opt.key]
        elif opt.key in file_values:
            raw = file_values[opt.key]
        else:
            resolved[opt.key] = opt.default
            continue
        value = opt.convert(raw)
        if opt.choices and not isinstance(raw, bool):
            rendered = value.value if isinstance(value, UncertainPolicy) else value
            if rendered not in opt.choices:
                raise UsageError(f"--{opt.name}: invalid choice {raw!r}")
        resolved[opt.key] = value
    for opt in opts:
        if opt.required and resolved.get(opt.key) is None:
            raise UsageError(f"--{opt.name} is required")
    return resolved


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, UncertainPolicy):
        return value.value
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, RelationKind):
        return value.value
    return str(value)


def echo_lines(command: str, resolved: dict[str, object]) -> list[str]:
    """The effective configuration as sorted ``key = value`` lines."""
    lines = [f"command = {command}"]
    for key in sorted(resolved):
        lines.append(f"{key.replace('_', '-')} = {_render(resolved[key])}")
    return lines


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _align_features(features: FeatureTable, ids: list[str]) -> FeatureTable:
    index = {image_id: i for i, image_id in enumerate(features.image_ids)}
    missing = [i for i in ids if i not in index]
    if missing:
        listing = "\n".join(f"  missing features for {i!r}" for i in missing)
        raise ValueError(f"{len(missing)} image ids lack feature rows:\n{listing}")
    if not ids:
        return FeatureTable([], np.zeros((0, features.dim)))
    rows = features.codes[[index[i] for i in ids]]
    return FeatureTable(list(ids), rows)


def _cmd_synth(cfg: dict, echo: list[str]) -> int:
    spec = SyntheticSpec(
        m=cfg["m"],
        n=cfg["n"],
        dim=cfg["dim"],
        prototype_scale=cfg["prototype_scale"],
        noise_scale=cfg["noise_scale"],
        label_sparsity=cfg["sparsity"],
        uncertain_fraction=cfg["uncertain_fraction"],
        seed=cfg["seed"],
    )
    features, annotations = synth_dataset(spec)
    write_features(features, cfg["out_features"], comments=echo)
    write_annotations(annotations, cfg["out_annotations"], comments=echo)
    print(f"wrote {features.m} images x {annotations.n} findings")
    return EXIT_OK


def _cmd_build_kg(cfg: dict, echo: list[str]) -> int:
    annotations = load_annotations(cfg["annotations"])
    graph = build_radkg(annotations, cfg["policy"])
    if cfg["cooccurrence"]:
        matrix = cooccurrence_matrix(annotations, cfg["policy"])
        graph = add_cooccurrence(graph, matrix, cfg["cooccur_threshold"])
    write_kg(graph, cfg["out"], comments=echo)
    for relation, count in sorted(graph.relation_counts().items(), key=lambda kv: kv[0].value):
        print(f"{relation.value}: {count}")
    return EXIT_OK


def _split_fold(annotations, cfg, fold: str):
    if fold == "all":
        return annotations
    folds = dict(zip(("train", "val", "test"),
                     split(annotations, cfg["ratios"], cfg["split_seed"])))
    return folds[fold]


def _cmd_train(cfg: dict, echo: list[str]) -> int:
    features = load_features(cfg["features"])
    annotations = load_annotations(cfg["annotations"])
    train_t, val_t, _ = split(annotations, cfg["ratios"], cfg["split_seed"])
    train_f = _align_features(features, train_t.image_ids)
    val_f = _align_features(features, val_t.image_ids)

    graph = build_radkg(train_t, cfg["policy"])
    if cfg["cooccurrence"]:
        matrix = cooccurrence_matrix(train_t, cfg["policy"])
        graph = add_cooccurrence(graph, matrix, cfg["cooccur_threshold"])

    relations = resolve_relations(graph, cfg["relations"])
    model = init_model(
        cfg["scorer"],
        feature_dim=features.dim,
        embed_dim=cfg["embed_dim"],
        n_findings=annotations.n,
        relations=relations,
        channels=cfg["channels"],
        seed=cfg["seed"],
    )
    config = TrainConfig(
        learning_rate=cfg["lr"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        optimizer=cfg["optimizer"],
        seed=cfg["seed"],
        policy=cfg["policy"],
        relations=relations,
        patience=cfg["patience"],
    )
    best, history = train(model, graph, train_f, (val_f, val_t), config)

    defined = [(h["val_auc"], h["epoch"]) for h in history if h["val_auc"] is not None]
    best_auc, best_epoch = max(defined, key=lambda t: (t[0], -t[1])) if defined else (None, len(history))
    metadata = {f"config.{key.replace('_', '-')}": _render(value) for key, value in cfg.items()}
    metadata.update({
        "findings": ",".join(annotations.finding_names),
        "seed": str(cfg["seed"]),
        "epoch": str(best_epoch),
        "val_auc": _render(best_auc),
    })
    save_checkpoint(best, cfg["out_checkpoint"], metadata)
    if cfg["out_history"]:
        with open(cfg["out_history"], "w", encoding="utf-8") as fh:
            for line in echo:
                fh.write(f"# {line}\n")
            fh.write("epoch,loss,val_auc\n")
            for entry in history:
                fh.write(f"{entry['epoch']},{_render(entry['loss'])},{_render(entry['val_auc'])}\n")
    print(f"trained {len(history)} epochs; best val macro-AUC {_render(best_auc)} at epoch {best_epoch}")
    return EXIT_OK


def _cmd_eval(cfg: dict, echo: list[str]) -> int:
    model, metadata = load_checkpoint(cfg["checkpoint"])
    policy = cfg["policy"]
    if policy is None:
        policy = UncertainPolicy(metadata.get("config.policy", UncertainPolicy.AS_POSITIVE.value))
        cfg = dict(cfg, policy=policy)
        echo = [line if not line.startswith("policy = ") else f"policy = {policy.value}"
                for line in echo]
    features = load_features(cfg["features"])
    annotations = load_annotations(cfg["annotations"])
    if model.n_findings != annotations.n:
        raise ValueError(
            f"checkpoint scores {model.n_findings} findings, annotations list {annotations.n}"
        )
    if model.feature_dim != features.dim:
        raise ValueError(
            f"checkpoint expects {model.feature_dim}-dim features, file has {features.dim}"
        )
    fold_t = _split_fold(annotations, cfg, cfg["fold"])
    fold_f = _align_features(features, fold_t.image_ids)
    rows = predict_table(model, fold_f)
    report = macro_auc(rows, fold_t, policy, findings=cfg["findings"], tau=cfg["tau"])
    text = format_report(report, echo=echo)
    sys.stdout.write(text)
    if cfg["out"]:
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def _cmd_predict(cfg: dict, echo: list[str]) -> int:
    model, metadata = load_checkpoint(cfg["checkpoint"])
    features = load_features(cfg["features"])
    if model.feature_dim != features.dim:
        raise ValueError(
            f"checkpoint expects {model.feature_dim}-dim features, file has {features.dim}"
        )
    selected = _align_features(features, cfg["ids"]) if cfg["ids"] is not None else features
    finding_names = metadata.get("findings", "").split(",")
    if len(finding_names) != model.n_findings:
        finding_names = [f"finding_{j:02d}" for j in range(model.n_findings)]
    rows = predict_table(model, selected)
    write_predictions(rows, finding_names, cfg["out"], tau=cfg["tau"], comments=echo)
    print(f"wrote {len(rows)} prediction rows")
    return EXIT_OK


def _cmd_gradcheck(cfg: dict, echo: list[str]) -> int:
    cases = [(cfg["scorer"], cfg["dim"], cfg["embed_dim"], cfg["n"], cfg["channels"])]
    seeds = range(cfg["seed"], cfg["seed"] + cfg["trials"])
    worst = 0.0
    checked = 0
    for mode in ("score", "loss"):
        report = gradcheck.run_suite(cases, seeds, mode=mode, tolerance=cfg["tolerance"])
        worst = max(worst, report.max_rel_error)
        checked += sum(r.coords_checked for r in report.results)
    print(f"max relative error: {worst:.3e} over {checked} coordinate checks "
          f"(tolerance {cfg['tolerance']:g})")
    if worst >= cfg["tolerance"]:
        print("gradcheck: FAIL")
        return EXIT_NUMERIC
    print("gradcheck: PASS")
    return EXIT_OK


_RUNNERS = {
    "synth": _cmd_synth,
    "build-kg": _cmd_build_kg,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    namespace = parser.parse_args(argv)
    if namespace.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        resolved = resolve_options(namespace.command, namespace)
        echo = echo_lines(namespace.command, resolved)
        return _RUNNERS[namespace.command](resolved, echo)
    except UsageError as exc:
        sys.stderr.write(f"radkg: {exc}\n")
        return EXIT_USAGE
    except (ParseError, CheckpointError) as exc:
        sys.stderr.write(f"radkg: {exc}\n")
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        sys.stderr.write(f"radkg: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(f"radkg: {exc}\n")
        return EXIT_DATA
    except TrainingDivergedError as exc:
        sys.stderr.write(f"radkg: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
