"""ADAM training schedule, evaluation and checkpoint persistence."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metrics, net
from .errors import DataError, FormatError, ParameterError, ShapeError

MAGIC = b"EMRC"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SolverConfig:
    train_batch_size: int = 10
    test_batch_size: int = 16
    test_iterations: int = 7
    test_interval: int = 50
    max_iterations: int = 1000
    seed: int = 1234
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        for name in ("train_batch_size", "test_batch_size", "test_iterations",
                     "test_interval", "max_iterations"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ParameterError("learning_rate and epsilon must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("beta1 and beta2 must lie in [0, 1)")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, cfg):
    """One in-place ADAM update of ``params``; returns ``(params, state)``.

    m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    with the bias-corrected moments m_hat, v_hat at step t (incremented first).
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ShapeError(f"{name}: gradient {np.shape(g)} vs parameter {np.shape(params[name])}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return params, state


@dataclass(frozen=True)
class LogRow:
    step: int
    train_loss: float
    accuracy: float
    f1: float
    val_samples: int


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    @property
    def steps(self):
        return [r.step for r in self.rows]

    def to_csv(self):
        return log_csv([(r.step, r.accuracy, r.f1) for r in self.rows])


def log_csv(rows):
    """``step,accuracy,f1`` CSV text with four-decimal metrics."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "accuracy", "f1"])
    for step, acc, f1 in rows:
        w.writerow([int(step), metrics.fmt4(acc), metrics.fmt4(f1)])
    return buf.getvalue()


def read_log_csv(path):
    with open(path, newline="") as fh:
        return [(int(r["step"]), float(r["accuracy"]), float(r["f1"]))
                for r in csv.DictReader(fh)]


@dataclass
class Metrics:
    accuracy: float
    micro_f1: float
    class_f1: list
    positive_f1: float | None
    confusion: metrics.ConfusionMatrix

    @property
    def f1(self):
        """Positive-class F1 for binary reports, micro-F1 otherwise."""
        return self.micro_f1 if self.positive_f1 is None else self.positive_f1


def metrics_from(cm, positive_class=None):
    return Metrics(
        accuracy=metrics.accuracy_of(cm),
        micro_f1=metrics.micro_f1(cm),
        class_f1=[metrics.f1_of_class(cm, k) for k in range(cm.num_classes)],
        positive_f1=None if positive_class is None else metrics.f1_of_class(cm, positive_class),
        confusion=cm,
    )


def evaluate(spec, state, test_set, positive_class=None, batch_size=64):
    """Inference-mode metrics over a whole ``(images, labels)`` set."""
    x, y = test_set
    if len(y) == 0:
        raise DataError("cannot evaluate on an empty set")
    pred = net.predict(net.predict_proba(spec, state, x, batch_size))
    return metrics_from(metrics.confusion(pred, y, spec.num_classes), positive_class)


class _Cursor:
    """Endless walk over ``n`` indices, reshuffled at each epoch when an rng is given."""

    def __init__(self, n, rng=None):
        self.n, self.rng = n, rng
        self.order, self.pos = self._epoch(), 0

    def _epoch(self):
        return self.rng.permutation(self.n) if self.rng is not None else np.arange(self.n)

    def take(self, k):
        out = []
        while len(out) < k:
            if self.pos == self.n:
                self.order, self.pos = self._epoch(), 0
            grab = min(k - len(out), self.n - self.pos)
            out.extend(self.order[self.pos:self.pos + grab])
            self.pos += grab
        return np.array(out, dtype=np.int64)


def checkpoint_name(step):
    return f"step_{step:06d}.emrc"


def train(spec, state, train_set, val_set, cfg, rng, out_dir=None, positive_class=None,
          adam=None):
    """Run the ADAM schedule; returns ``(state, log, checkpoint_paths)``.

    Every iteration draws ``train_batch_size`` samples from a per-epoch
    shuffled order (wrapping into the next epoch mid-batch). Every
    ``test_interval`` iterations, ``test_iterations`` batches of
    ``test_batch_size`` are read cyclically from the start of the validation
    set, a log row is appended and, when ``out_dir`` is given, a checkpoint is
    written.
    """
    xt, yt = train_set
    xv, yv = val_set
    if len(yt) < cfg.train_batch_size:
        raise DataError(f"training set of {len(yt)} is smaller than one batch")
    if len(yv) == 0:
        raise DataError("validation set is empty")
    adam = adam or AdamState()
    cursor = _Cursor(len(yt), rng)
    log, paths = TrainLog(), []
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    losses = []
    for step in range(adam.t + 1, cfg.max_iterations + 1):
        idx = cursor.take(cfg.train_batch_size)
        loss, grads, _ = net.loss_and_grads(spec, state, xt[idx], yt[idx], "train", rng)
        adam_step(state.params, grads, adam, cfg)
        losses.append(loss)
        if step % cfg.test_interval == 0:
            vcur = _Cursor(len(yv))
            pred, lab = [], []
            for _ in range(cfg.test_iterations):
                vi = vcur.take(cfg.test_batch_size)
                pred.append(net.predict(net.net_forward(spec, state, xv[vi]).output))
                lab.append(yv[vi])
            cm = metrics.confusion(np.concatenate(pred), np.concatenate(lab), spec.num_classes)
            m = metrics_from(cm, positive_class)
            log.rows.append(LogRow(step, float(np.mean(losses)), m.accuracy, m.f1, cm.total))
            losses = []
            if out_dir is not None:
                path = Path(out_dir) / checkpoint_name(step)
                save_checkpoint(state, adam, step, path)
                paths.append(path)
    return state, log, paths


# ---------------------------------------------------------------------------
# Checkpoints: little-endian binary, see README for the layout


def _pack_tensors(tensors):
    out = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def checkpoint_bytes(state, adam, step):
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, step), _pack_tensors(state.params)]
    if adam is None:
        parts.append(b"\x00")
    else:
        parts += [b"\x01", struct.pack("<Q", adam.t),
                  _pack_tensors({f"m/{k}": v for k, v in adam.m.items()}),
                  _pack_tensors({f"v/{k}": v for k, v in adam.v.items()})]
    return b"".join(parts)


def save_checkpoint(state, adam, step, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(state, adam, step))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensors(self):
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (nlen,) = self.unpack("<I")
            try:
                name = self.take(nlen).decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("tensor name is not UTF-8") from None
            (rank,) = self.unpack("<I")
            if rank > 4:
                raise FormatError(f"tensor {name!r} has rank {rank}")
            dims = self.unpack(f"<{rank}I")
            size = int(np.prod(dims)) if dims else 1
            out[name] = np.frombuffer(self.take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
        return out


def parse_checkpoint(data, spec=None):
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise FormatError("bad checkpoint magic")
    version, step = r.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    params = r.tensors()
    (flag,) = r.unpack("<B")
    adam = None
    if flag == 1:
        (t,) = r.unpack("<Q")
        m = {k[2:]: v for k, v in r.tensors().items()}
        v = {k[2:]: v for k, v in r.tensors().items()}
        adam = AdamState(m, v, t)
    elif flag != 0:
        raise FormatError(f"bad optimizer block flag {flag}")
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after checkpoint")
    if spec is not None:
        expected = spec.param_shapes()
        got = {k: a.shape for k, a in params.items()}
        if got != expected:
            raise FormatError(f"checkpoint tensors {got} do not match network {expected}")
    return net.NetworkState(params), adam, step


def load_checkpoint(path, spec=None):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read(), spec)
