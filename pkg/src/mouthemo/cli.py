"""Command line front end: ``mouthemo {detect,extract,split,train,eval,report}``.

Exit status is 0 on success, 1 when the domain step fails (no face where one
is needed) and 2 for usage or I/O problems.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import datapipe, haar, net, solver
from .errors import DataError, FormatError, MouthEmoError
from .tensor import SeededRng


class UsageError(Exception):
    pass


class DomainFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# Run configuration

_SOLVER_KEYS = {
    "train_batch_size": int, "test_batch_size": int, "test_iterations": int,
    "test_interval": int, "max_iterations": int, "seed": int,
    "learning_rate": float, "beta1": float, "beta2": float, "epsilon": float,
}
_RUN_KEYS = {
    "network": str, "input_size": int, "width_scale": float, "classes": str,
    "positive_class": str, "dataset": str, "split_manifest": str,
    "train_per_class": int, "val_per_class": int,
    "cascade": str, "mouth_cascade": str,
    "scale_factor": float, "min_neighbors": int, "group_eps": float, "min_size": int,
}
DEFAULT_INPUT_SIZE = {"emex": 28, "alexnet-mini": 64}


@dataclass
class RunConfig:
    solver: solver.SolverConfig = field(default_factory=solver.SolverConfig)
    network: str = "emex"
    input_size: int | None = None
    width_scale: float = 1 / 16
    classes: tuple = ()
    positive_class: str | None = None
    dataset: str | None = None
    split_manifest: str | None = None
    train_per_class: int = 444
    val_per_class: int = 56
    cascade: str | None = None
    mouth_cascade: str | None = None
    scale_factor: float = 1.1
    min_neighbors: int = 3
    group_eps: float = 0.2
    min_size: int | None = None

    @property
    def size(self):
        return self.input_size or DEFAULT_INPUT_SIZE[self.network]

    def label_map(self):
        if not self.classes:
            raise UsageError("config must set 'classes'")
        return datapipe.LabelMap.of(self.classes)

    def positive_index(self):
        if not self.positive_class:
            return None
        return self.label_map().index(self.positive_class)

    def detect_params(self):
        return haar.DetectParams(self.scale_factor, self.min_neighbors, self.group_eps,
                                 self.min_size)

    def build(self):
        k = len(self.label_map())
        shape = (1, self.size, self.size)
        if self.network == "emex":
            return net.build_emex(shape, k)
        return net.build_alexnet_mini(shape, k, self.width_scale)


def parse_config(text, base_dir="."):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors.

    Relative paths are resolved against ``base_dir``.
    """
    solver_kw, run_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _SOLVER_KEYS:
            target, conv = solver_kw, _SOLVER_KEYS[key]
        elif key in _RUN_KEYS:
            target, conv = run_kw, _RUN_KEYS[key]
        else:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        try:
            target[key] = conv(value)
        except ValueError:
            raise UsageError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    if "classes" in run_kw:
        run_kw["classes"] = tuple(c.strip() for c in run_kw["classes"].split(",") if c.strip())
    for key in ("dataset", "split_manifest", "cascade", "mouth_cascade"):
        if key in run_kw:
            run_kw[key] = str(Path(base_dir) / run_kw[key])
    if run_kw.get("network", "emex") not in DEFAULT_INPUT_SIZE:
        raise UsageError(f"network must be one of {', '.join(DEFAULT_INPUT_SIZE)}")
    try:
        cfg = solver.SolverConfig(**solver_kw)
    except MouthEmoError as exc:
        raise UsageError(f"config: {exc}") from None
    return RunConfig(solver=cfg, **run_kw)


def load_config(args):
    if args.config is None:
        cfg = RunConfig()
    else:
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        cfg = parse_config(text, path.parent)
    if getattr(args, "seed", None) is not None:
        cfg.solver = replace(cfg.solver, seed=args.seed)
    if getattr(args, "positive_class", None):
        cfg.positive_class = args.positive_class
    for key in ("cascade", "mouth_cascade", "dataset"):
        if getattr(args, key, None):
            setattr(cfg, key, getattr(args, key))
    return cfg


def _read_cascade(path, what):
    if not path:
        raise UsageError(f"no {what} given")
    try:
        return haar.load_cascade(path)
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}") from None
    except MouthEmoError as exc:
        raise UsageError(f"{what} {path}: {exc}") from None


def _read_image(path):
    try:
        return datapipe.read_pgm(path)
    except (OSError, MouthEmoError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from None


def _write_text(out_dir, name, text):
    try:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / name, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {name} into {out_dir}: {exc}") from None


def _csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Commands


def cmd_detect(args, out=None):
    out = out or sys.stdout
    cfg = load_config(args)
    cascade = _read_cascade(cfg.cascade, "cascade")
    params = cfg.detect_params()
    rows = [["file", "x", "y", "w", "h", "neighbors"]]
    for path in args.images:
        gray = _read_image(path)
        for b in haar.detect(cascade, gray, params):
            rows.append([path, b.x, b.y, b.w, b.h, b.neighbors])
    text = _csv(rows)
    out.write(text)
    if args.out:
        _write_text(args.out, "detections.csv", text)
    return 0


def cmd_extract(args, out=None):
    out = out or sys.stdout
    cfg = load_config(args)
    face_c = _read_cascade(cfg.cascade, "face cascade")
    mouth_c = _read_cascade(cfg.mouth_cascade, "mouth cascade")
    params = cfg.detect_params()
    src = Path(args.images)
    if not args.out:
        raise UsageError("extract needs --out")
    if not src.is_dir():
        raise UsageError(f"{src} is not a directory")
    dst = Path(args.out)
    try:
        dst.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {dst}: {exc}") from None
    rows = [["source", "crop", "face_x", "face_y", "face_w", "face_h",
             "x", "y", "w", "h", "method"]]
    missing = 0
    for path in sorted(p for p in src.rglob("*") if p.suffix.lower() == ".pgm"):
        rel = path.relative_to(src).as_posix()
        gray = _read_image(path)
        face = haar.pick_face(haar.detect(face_c, gray, params))
        if face is None:
            missing += 1
            rows.append([rel, "", "", "", "", "", "", "", "", "", "no_face"])
            continue
        box = haar.locate_mouth(gray, face, mouth_c, params)
        target = dst / rel
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            datapipe.write_pgm(target, haar.crop(gray, box))
        except OSError as exc:
            raise UsageError(f"cannot write {target}: {exc}") from None
        method = "detected" if box.neighbors > 0 else "fallback"
        rows.append([rel, rel, face.x, face.y, face.w, face.h,
                     box.x, box.y, box.w, box.h, method])
    _write_text(dst, "manifest.csv", _csv(rows))
    out.write(f"{len(rows) - 1 - missing} crops written, {missing} images without a face\n")
    if missing:
        raise DomainFailure(f"{missing} image(s) without a detectable face")
    return 0


def _dataset_splits(cfg):
    if not cfg.dataset:
        raise UsageError("no dataset given (config key 'dataset' or --dataset)")
    lmap = cfg.label_map()
    try:
        samples = datapipe.load_dataset(cfg.dataset, lmap)
        if cfg.split_manifest:
            parts = datapipe.apply_split_manifest(cfg.split_manifest, samples)
        else:
            plan = datapipe.SplitPlan(cfg.train_per_class, cfg.val_per_class)
            parts = datapipe.split_dataset(samples, plan, SeededRng(cfg.solver.seed))
    except OSError as exc:
        raise UsageError(str(exc)) from None
    return lmap, parts


def cmd_split(args, out=None):
    out = out or sys.stdout
    cfg = load_config(args)
    lmap, (train, val, test) = _dataset_splits(cfg)
    out_dir = args.out or "."
    _write_manifest(out_dir, lmap, train, val, test)
    out.write(f"train={len(train)} validation={len(val)} test={len(test)}\n")
    return 0


def _write_manifest(out_dir, lmap, train, val, test):
    try:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        datapipe.write_split_manifest(Path(out_dir) / "split.csv", lmap, train, val, test)
    except OSError as exc:
        raise UsageError(f"cannot write split manifest into {out_dir}: {exc}") from None


def cmd_train(args, out=None):
    out = out or sys.stdout
    cfg = load_config(args)
    lmap, (train, val, test) = _dataset_splits(cfg)
    out_dir = Path(args.out or ".")
    _write_manifest(out_dir, lmap, train, val, test)
    spec = cfg.build()
    rng = SeededRng(cfg.solver.seed)
    state = net.init_state(spec, rng)
    xt = datapipe.to_arrays(train, cfg.size)
    xv = datapipe.to_arrays(val, cfg.size)
    try:
        _, log, paths = solver.train(spec, state, xt, xv, cfg.solver, rng, out_dir,
                                     cfg.positive_index())
    except OSError as exc:
        raise UsageError(f"cannot write checkpoints into {out_dir}: {exc}") from None
    _write_text(out_dir, "train_log.csv", log.to_csv())
    out.write(log.to_csv())
    return 0


def _checkpoints(path):
    p = Path(path)
    if p.is_dir():
        found = sorted(p.glob("*.emrc"))
        if not found:
            raise UsageError(f"no checkpoints in {p}")
        return found
    return [p]


def cmd_eval(args, out=None):
    out = out or sys.stdout
    cfg = load_config(args)
    spec = cfg.build()
    lmap = cfg.label_map()
    if args.dataset:
        try:
            samples = datapipe.load_dataset(args.dataset, lmap)
        except OSError as exc:
            raise UsageError(str(exc)) from None
    else:
        _, (_, _, samples) = _dataset_splits(cfg)
    test_set = datapipe.to_arrays(samples, cfg.size)
    rows = []
    for path in _checkpoints(args.checkpoint):
        try:
            state, _, step = solver.load_checkpoint(path, spec)
        except OSError as exc:
            raise UsageError(f"cannot read checkpoint {path}: {exc}") from None
        m = solver.evaluate(spec, state, test_set, cfg.positive_index())
        rows.append((step, m.accuracy, m.f1))
    text = solver.log_csv(sorted(rows))
    out.write(text)
    if args.out:
        _write_text(args.out, "eval.csv", text)
    return 0


def best_row(rows):
    """Row with the highest accuracy; ties go to the earlier step."""
    return min(rows, key=lambda r: (-r[1], r[0]))


def merge_reports(logs):
    """Merge ``{name: [(step, acc, f1), ...]}`` into report rows with best markers."""
    names = list(logs)
    best = {n: best_row(rows)[0] for n, rows in logs.items() if rows}
    steps = sorted({r[0] for rows in logs.values() for r in rows})
    index = {n: {r[0]: r for r in rows} for n, rows in logs.items()}
    header = ["step"] + [f"{n}_{c}" for n in names for c in ("accuracy", "f1")] + ["best"]
    table = [header]
    for step in steps:
        line = [step]
        for n in names:
            r = index[n].get(step)
            line += ["", ""] if r is None else [f"{r[1]:.4f}", f"{r[2]:.4f}"]
        line.append(";".join(n for n in names if best.get(n) == step))
        table.append(line)
    return table


def cmd_report(args, out=None):
    out = out or sys.stdout
    logs = {}
    for path in args.logs:
        name = Path(path).stem
        if name in logs:
            name = f"{name}{len(logs)}"
        try:
            logs[name] = solver.read_log_csv(path)
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot read log {path}: {exc}") from None
    text = _csv(merge_reports(logs))
    out.write(text)
    if args.out:
        _write_text(args.out, "report.csv", text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="mouthemo", description="Mouth-crop emotion recognition.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *extra):
        sp.add_argument("--config", help="key=value run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        for flag in extra:
            sp.add_argument(flag)
        return sp

    d = common(sub.add_parser("detect", help="detect faces, print file,x,y,w,h,neighbors"),
               "--cascade")
    d.add_argument("images", nargs="*")
    d.set_defaults(func=cmd_detect)

    e = common(sub.add_parser("extract", help="crop mouth regions from a directory of images"),
               "--cascade", "--mouth-cascade")
    e.add_argument("images")
    e.set_defaults(func=cmd_extract)

    s = common(sub.add_parser("split", help="write a train/validation/test manifest"),
               "--dataset")
    s.set_defaults(func=cmd_split)

    t = common(sub.add_parser("train", help="train a network, checkpoint every test interval"),
               "--dataset", "--positive-class")
    t.set_defaults(func=cmd_train)

    v = common(sub.add_parser("eval", help="evaluate one checkpoint or a directory of them"),
               "--checkpoint", "--dataset", "--positive-class")
    v.set_defaults(func=cmd_eval)

    r = common(sub.add_parser("report", help="merge step logs and mark the best rows"))
    r.add_argument("logs", nargs="+")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        if args.command == "eval" and not args.checkpoint:
            raise UsageError("eval needs --checkpoint")
        return args.func(args)
    except UsageError as exc:
        print(f"mouthemo {args.command}: {exc}", file=sys.stderr)
        return 2
    except DomainFailure as exc:
        print(f"mouthemo {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError) as exc:
        print(f"mouthemo {args.command}: {exc}", file=sys.stderr)
        return 2
    except MouthEmoError as exc:
        print(f"mouthemo {args.command}: {exc}", file=sys.stderr)
        return 1
