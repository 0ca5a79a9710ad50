"""``motiongate`` command line: synth, ingest, eval, train, score, serve."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .classifiers import CLASSIFIER_KINDS, ClassifierConfig
from .detectors import DETECTOR_KINDS, DetectorConfig
from .preprocess import REPRESENTATIONS, FilterLengthError, WindowOutOfRangeError, WindowSpec
from .protocols import REPORT_FORMAT, oneclass_run, spoof_screening_run, tsc_verification_run
from .seeds import DEFAULT_SEED
from .trace import (SELECTORS, ChannelSelector, TraceError, discover_pairs, load_corpus, read_trace_files,
                    write_corpus)

log = logging.getLogger("motiongate")

SEED_ENV = "MOTIONGATE_SEED"
TASKS = ("spoof", "oneclass", "verify")
TASK_METHODS = {"spoof": DETECTOR_KINDS, "oneclass": DETECTOR_KINDS, "verify": CLASSIFIER_KINDS}
DEFAULT_METHODS = {"spoof": "rockad", "oneclass": "knn_euclid", "verify": "quant_et"}
EXIT_OK, EXIT_ERROR, EXIT_REJECT = 0, 1, 2
REPORT_FILES = ("report.json", "report.md", "curves.csv", "timing.json")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus: str | None = None
    task: str = "spoof"
    method: dict = field(default_factory=lambda: {"kind": "rockad"})
    channels: str = "acc_xyz"
    window: dict = field(default_factory=lambda: WindowSpec().to_dict())
    seed: int = DEFAULT_SEED
    resamples: int = 5
    percentile: float | None = None
    train_fraction: float = 0.8
    inner_folds: int | None = None
    enroll: int = 10
    repeats: int = 5
    outer_folds: int = 5
    inner_repeats: int = 5
    target_frr: float = 1.0

    @classmethod
    def from_mapping(cls, d: dict) -> "RunConfig":
        if d.get("format") == REPORT_FORMAT:  # replay a report
            d = d["config"]
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        if isinstance(d.get("method"), str):
            d["method"] = {"kind": d["method"]}
        if isinstance(d.get("window"), str):
            d["window"] = WindowSpec.parse(d["window"], d.pop("representation", "single")).to_dict()
        return cls(**d)

    @property
    def spec(self) -> WindowSpec:
        return WindowSpec(**self.window)

    @property
    def selector(self) -> ChannelSelector:
        return ChannelSelector(self.channels)

    def method_config(self):
        kind = self.method.get("kind")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if kind not in TASK_METHODS[self.task]:
            raise ConfigError(f"method {kind!r} is not valid for task {self.task!r}; "
                              f"choose from {', '.join(TASK_METHODS[self.task])}")
        cls = ClassifierConfig if self.task == "verify" else DetectorConfig
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(self.method) - names)
        if unknown:
            raise ConfigError(f"unknown {kind} parameters: {', '.join(unknown)}")
        return cls(**self.method)

    def validate(self):
        """Check the whole configuration before any work starts."""
        if not self.corpus:
            raise ConfigError("a corpus path is required")
        method = self.method_config()
        try:
            self.spec, self.selector
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return method

    def resolved(self) -> dict:
        """Full configuration as recorded in reports."""
        method = self.method_config()
        d = asdict(self)
        d["method"] = {"kind": method.kind, **method.to_dict()}
        d["window"] = self.spec.to_dict()
        return d


def _read_structured(path) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data


def _env_seed() -> int | None:
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from None


def build_run_config(args) -> RunConfig:
    """Defaults, then the environment seed, then the config file, then flags."""
    base: dict = {}
    env_seed = _env_seed()
    if env_seed is not None:
        base["seed"] = env_seed
    if args.config:
        base.update(_read_structured(args.config))
    cfg = RunConfig.from_mapping(base)
    if args.corpus:
        cfg.corpus = str(Path(args.corpus).resolve())
    if args.task:
        cfg.task = args.task
    elif args.method in CLASSIFIER_KINDS:
        cfg.task = "verify"
    if args.method:
        if args.method != cfg.method.get("kind"):
            cfg.method = {"kind": args.method}
    elif cfg.task in TASK_METHODS and cfg.method.get("kind") not in TASK_METHODS[cfg.task]:
        cfg.method = {"kind": DEFAULT_METHODS[cfg.task]}
    for p in args.param or []:
        key, _, value = p.partition("=")
        cfg.method[key.strip()] = yaml.safe_load(value)
    window = cfg.spec
    if args.window:
        window = WindowSpec.parse(args.window, window.representation)
    if args.repr:
        window = WindowSpec(window.k_open, window.pre, window.post, args.repr)
    cfg.window = window.to_dict()
    for name in ("channels", "seed", "resamples", "percentile", "train_fraction", "inner_folds", "enroll",
                 "repeats", "outer_folds", "inner_repeats", "target_frr"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def run_eval(cfg: RunConfig, jobs: int = 1):
    method = cfg.validate()
    traces = load_corpus(cfg.corpus)
    extra = {"corpus": cfg.corpus}
    if cfg.task == "spoof":
        return spoof_screening_run(traces, method, cfg.spec, cfg.selector, resamples=cfg.resamples,
                                   percentile=99.0 if cfg.percentile is None else cfg.percentile, seed=cfg.seed,
                                   train_fraction=cfg.train_fraction,
                                   inner_folds=cfg.inner_folds or 5, jobs=jobs, config_extra=extra)
    if cfg.task == "oneclass":
        return oneclass_run(traces, method, cfg.spec, cfg.selector, enroll=cfg.enroll,
                            inner_folds=cfg.inner_folds or 2, repeats=cfg.repeats,
                            percentile=99.0 if cfg.percentile is None else cfg.percentile, seed=cfg.seed,
                            jobs=jobs, config_extra=extra)
    return tsc_verification_run(traces, method, cfg.spec, cfg.selector, outer_folds=cfg.outer_folds,
                                inner_folds=cfg.inner_folds or 3, inner_repeats=cfg.inner_repeats,
                                target_frr=cfg.target_frr if cfg.percentile is None else cfg.percentile,
                                seed=cfg.seed, jobs=jobs, config_extra=extra)


def _full_config(report, cfg: RunConfig) -> dict:
    """The report's config carries everything needed to replay the run."""
    resolved = cfg.resolved()
    merged = dict(resolved)
    merged.update({k: v for k, v in report.config.items() if k in resolved})
    return merged


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    from .synthgen import gen_corpus

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"{out} exists and is not empty; use --force to overwrite")
    counts = (args.stationary, args.handheld, args.shift)
    seed = _resolve_seed(args.seed)
    if args.participants < 0 or args.seqs < 1 or min(counts) < 0:
        raise ConfigError("participant, sequence and attack counts must be non-negative")
    gen_corpus(out, args.participants, args.seqs, counts, seed)
    print(json.dumps({"corpus": str(out), "bonafide": args.participants * args.seqs,
                      "attacks": sum(counts), "seed": seed}))
    return EXIT_OK


def cmd_ingest(args) -> int:
    src, out = Path(args.src), Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"{out} exists and is not empty; use --force to overwrite")
    pairs = discover_pairs(src)
    if not pairs:
        raise ConfigError(f"no <id>.csv + <id>.json pairs in {src}")
    traces = [read_trace_files(c, m) for c, m in pairs]
    traces.sort(key=lambda t: (t.label != "bonafide", t.participant_id or 0, t.trace_id))
    write_corpus(out, traces)
    print(json.dumps({"corpus": str(out), "traces": len(traces)}))
    return EXIT_OK


def _write_outputs(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for name, text in files.items():
            tmp = out / (name + ".partial")
            tmp.write_text(text)
            written.append(tmp)
        for name in files:
            (out / (name + ".partial")).replace(out / name)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise


def cmd_eval(args) -> int:
    cfg = build_run_config(args)
    cfg.validate()
    out = Path(args.out)
    for name in REPORT_FILES:  # stale outputs from an earlier run must not survive a failure
        (out / name).unlink(missing_ok=True)
    report = run_eval(cfg, jobs=args.jobs)
    report.config = _full_config(report, cfg)
    _write_outputs(out, {
        "report.json": report.to_json(),
        "report.md": report.to_markdown(),
        "curves.csv": report.curves_csv(),
        "timing.json": json.dumps(report.timing, sort_keys=True, indent=2) + "\n",
    })
    print(json.dumps({"out": str(out), "config_hash": report.config_hash, "summary": report.summary},
                     sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from .scoring import train_scoring_model

    cfg = build_run_config(args)
    method = cfg.validate()
    traces = load_corpus(cfg.corpus)
    sm = train_scoring_model(traces, method, cfg.spec, cfg.selector, seed=cfg.seed, percentile=cfg.percentile,
                             model_id=args.model_id)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    sm.save(path)
    print(json.dumps({"model": str(path), **sm.describe()}, sort_keys=True))
    return EXIT_OK


def cmd_score(args) -> int:
    from .scoring import ScoringModel, score_trace

    sm = ScoringModel.load(args.model)
    trace = read_trace_files(args.trace, args.meta)
    result = score_trace(sm, trace, args.claim)
    print(json.dumps(result))
    return EXIT_REJECT if result["decision"] == "reject" else EXIT_OK


def cmd_serve(args) -> int:
    from .server import serve

    model_dir = args.models or os.environ.get("MOTIONGATE_MODELS")
    if not model_dir:
        raise ConfigError("a model directory is required (--models or MOTIONGATE_MODELS)")
    host = args.host or os.environ.get("MOTIONGATE_HOST", "127.0.0.1")
    port = args.port if args.port is not None else int(os.environ.get("MOTIONGATE_PORT", "8350"))
    serve(model_dir, host, port)
    return EXIT_OK


def _resolve_seed(flag):
    if flag is not None:
        return flag
    env = _env_seed()
    return DEFAULT_SEED if env is None else env


# ---------------------------------------------------------------------------

def _add_run_flags(p, corpus_required=False):
    p.add_argument("--config", help="JSON or YAML run config, or a report.json to replay")
    p.add_argument("--corpus", required=corpus_required, help="canonical corpus directory")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--method", choices=sorted(set(DETECTOR_KINDS) | set(CLASSIFIER_KINDS)))
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="method hyperparameter override")
    p.add_argument("--channels", choices=sorted(SELECTORS))
    p.add_argument("--window", help="k_open,pre,post sample counts, e.g. 10,50,150")
    p.add_argument("--repr", choices=REPRESENTATIONS)
    p.add_argument("--seed", type=int)
    p.add_argument("--percentile", type=float, help="calibration percentile")
    p.add_argument("--inner-folds", dest="inner_folds", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motiongate", description="Motion-signal spoof screening and "
                                     "verification benchmarks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--participants", type=int, required=True)
    p.add_argument("--seqs", type=int, required=True)
    p.add_argument("--stationary", type=int, default=6)
    p.add_argument("--handheld", type=int, default=11)
    p.add_argument("--shift", type=int, default=18)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate CSV/JSON pairs into a canonical corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("eval", help="run a benchmark protocol")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="output directory for report files")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resamples", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--enroll", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--outer-folds", dest="outer_folds", type=int)
    p.add_argument("--inner-repeats", dest="inner_repeats", type=int)
    p.add_argument("--target-frr", dest="target_frr", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="fit and calibrate a deployable scoring model")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="artifact path (.mgm)")
    p.add_argument("--model-id", dest="model_id")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score one trace with a model artifact")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True, help="trace CSV")
    p.add_argument("--meta", help="sidecar JSON (default: CSV path with .json)")
    p.add_argument("--claim", type=int, help="claimed participant id (verification models)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("serve", help="serve /v1/score and /v1/models over HTTP")
    p.add_argument("--models", help="model directory (or MOTIONGATE_MODELS)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TraceError, WindowOutOfRangeError, FilterLengthError, ValueError, OSError,
            KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
