"""Deep subspace network: greedy layer-wise expansion, skip-connection
wiring, per-task noise calibration, forward evaluation, and a binary model
file format.

Layer 0 consumes the raw features. In ``concat`` mode every later layer
consumes ``[previous prediction; raw features]`` (length T + D), which lets
a new layer reproduce its predecessor through the feature block alone, so
stacking cannot lose information. In ``naive`` mode later layers consume
only the previous prediction (length T), which can discard information and
exists to demonstrate exactly that.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import (
    ChecksumError,
    DimensionError,
    EmptyInputError,
    InvalidArgumentError,
    ModelFormatError,
    ModelVersionError,
    SubspaceNetError,
    TruncatedModelError,
)
from .layer import (
    SubspaceLayer,
    TraceLog,
    TrainConfig,
    clone_config,
    predict_batch,
    predict_linear_batch,
    train_layer,
)

SKIP_MODES = ("concat", "naive")

MODEL_MAGIC = b"SSNW"
MODEL_VERSION = 1

SIGMA_MIN = 1e-2
SIGMA_MAX = 1e2

RESIDUAL_SETS = ("all", "uncensored")


@dataclass
class SubspaceNetwork:
    """Ordered stack of trained layers plus the skip wiring between them."""

    layers: list[SubspaceLayer]
    skip_mode: str = "concat"

    def __post_init__(self):
        if not self.layers:
            raise EmptyInputError("a network needs at least one layer")
        if self.skip_mode not in SKIP_MODES:
            raise InvalidArgumentError(
                f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        t = self.layers[0].t_out
        for k, layer in enumerate(self.layers):
            if layer.t_out != t:
                raise DimensionError(
                    f"layer {k} outputs {layer.t_out} tasks, expected {t}")
            if k > 0 and layer.d_in != self._stacked_d_in():
                raise DimensionError(
                    f"layer {k} consumes {layer.d_in} inputs, expected "
                    f"{self._stacked_d_in()} for skip_mode={self.skip_mode!r}")

    def _stacked_d_in(self) -> int:
        t = self.layers[0].t_out
        return t + self.input_dim if self.skip_mode == "concat" else t

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def task_dim(self) -> int:
        return self.layers[0].t_out

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass
class CalibrationReport:
    """Per-task noise estimates from one layer's pre-activation residuals.

    ``clamped_low`` / ``clamped_high`` flag tasks whose raw estimate fell
    outside ``[sigma_min, sigma_max]``. In ``uncensored`` mode, tasks without
    a single positive target fall back to the all-samples residual and are
    flagged in ``fallback``.
    """

    sigma: np.ndarray
    clamped_low: np.ndarray
    clamped_high: np.ndarray
    fallback: np.ndarray
    residual_set: str
    n_used: np.ndarray


def _layer_inputs(net: SubspaceNetwork, h: np.ndarray, x: np.ndarray) -> np.ndarray:
    if net.skip_mode == "concat":
        return np.concatenate([h, x], axis=-1)
    return h


def forward(net: SubspaceNetwork, x, upto: int | None = None) -> np.ndarray:
    """Evaluate the network on one input vector, optionally stopping after
    ``upto`` layers. The result is entrywise nonnegative."""
    return forward_batch(net, np.asarray(x, dtype=np.float64)[None, :], upto)[0]


def forward_batch(net: SubspaceNetwork, x_mat, upto: int | None = None) -> np.ndarray:
    """Evaluate the network on a batch of row vectors (N x D)."""
    if upto is None:
        upto = net.depth
    if not 1 <= upto <= net.depth:
        raise InvalidArgumentError(
            f"upto must lie in [1, {net.depth}], got {upto}")
    x_mat = np.asarray(x_mat, dtype=np.float64)
    if x_mat.ndim != 2 or x_mat.shape[1] != net.input_dim:
        raise DimensionError(
            f"inputs must have shape (n, {net.input_dim}), got {x_mat.shape}")
    h = predict_batch(net.layers[0], x_mat)
    for k in range(1, upto):
        try:
            h = predict_batch(net.layers[k], _layer_inputs(net, h, x_mat))
        except DimensionError as exc:
            raise DimensionError(f"layer {k}: {exc}") from exc
    return h


def calibrate_sigma(layer: SubspaceLayer, data: Dataset,
                    residual_set: str = "all",
                    sigma_min: float = SIGMA_MIN,
                    sigma_max: float = SIGMA_MAX) -> CalibrationReport:
    """Estimate per-task noise scales from pre-activation residuals.

    For each task, ``sigma_t^2`` is the mean squared residual between the
    targets and the layer's linear (pre-ReLU) predictions, clamped to
    ``[sigma_min, sigma_max]``. ``residual_set="all"`` averages over every
    sample; ``"uncensored"`` restricts to samples with a positive target,
    which avoids inflating the estimate on heavily censored tasks where
    zero targets sit far from a strongly negative predictor.
    """
    if residual_set not in RESIDUAL_SETS:
        raise InvalidArgumentError(
            f"residual_set must be one of {RESIDUAL_SETS}, got {residual_set!r}")
    if data.n < 1:
        raise EmptyInputError("calibration data is empty")
    if not 0 < sigma_min <= sigma_max:
        raise InvalidArgumentError("need 0 < sigma_min <= sigma_max")
    resid2 = (data.Y - predict_linear_batch(layer, data.X)) ** 2
    mean_all = resid2.mean(axis=0)
    n_used = np.full(data.t, data.n)
    fallback = np.zeros(data.t, dtype=bool)
    if residual_set == "uncensored":
        pos = data.Y > 0
        counts = pos.sum(axis=0)
        with np.errstate(invalid="ignore"):
            mean_pos = np.where(counts > 0,
                                (resid2 * pos).sum(axis=0) / np.maximum(counts, 1),
                                mean_all)
        fallback = counts == 0
        n_used = np.where(fallback, data.n, counts)
        mean_sq = mean_pos
    else:
        mean_sq = mean_all
    raw = np.sqrt(mean_sq)
    sigma = np.clip(raw, sigma_min, sigma_max)
    return CalibrationReport(
        sigma=sigma,
        clamped_low=raw < sigma_min,
        clamped_high=raw > sigma_max,
        fallback=fallback,
        residual_set=residual_set,
        n_used=n_used,
    )


def _derived_seed(seed: int, k: int) -> int:
    if k == 0:
        return seed
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(k,))
               .generate_state(1, dtype=np.uint64)[0])


def expand(data: Dataset, depth: int, cfg: TrainConfig, calibrate: bool = False,
           skip_mode: str = "concat", sigma=None, residual_set: str = "all",
           pred_scale: float = 0.1,
           stop_on_degrade: bool = True) -> tuple[SubspaceNetwork, list[TraceLog]]:
    """Grow a network up to ``depth`` layers by greedy one-pass training.

    Layer 0 trains on the raw features; each later layer trains on the
    previous layer's predictions (wired per ``skip_mode``) against the
    original targets, and is frozen once trained. With ``calibrate`` on,
    layer k >= 1 trains with the noise scales estimated from layer k-1's
    pre-activation residuals (``residual_set`` selects which samples enter
    the estimate); otherwise every layer uses ``sigma`` (default 1).

    Stacked-layer inputs are standardized for conditioning: the skip block
    to unit root-mean-square entry scale and the prediction block to
    ``pred_scale`` (a small value stops the optimizer from leaning on the
    lossy ReLU'd predictions before it has exploited the raw features). The
    factors are folded back into the trained sketch, so stored layers
    operate on the raw concatenated inputs.

    With ``stop_on_degrade`` (the greedy-boosting guard), a freshly trained
    layer is accepted only if it does not increase the training mean squared
    error of the network's predictions; the first rejected layer ends the
    expansion, so the returned network may be shallower than ``depth`` and
    appending layers never degrades the training fit.

    With ``depth=1`` the result wraps exactly the output of `train_layer`
    on the same arguments. Layer k's initialization seed is derived from
    ``cfg.seed`` and k (layer 0 uses ``cfg.seed`` itself).
    """
    if depth < 1:
        raise InvalidArgumentError(f"depth must be >= 1, got {depth}")
    if skip_mode not in SKIP_MODES:
        raise InvalidArgumentError(
            f"skip_mode must be one of {SKIP_MODES}, got {skip_mode!r}")
    if pred_scale <= 0:
        raise InvalidArgumentError(f"pred_scale must be positive, got {pred_scale}")

    t = data.t
    layers: list[SubspaceLayer] = []
    traces: list[TraceLog] = []
    inputs = data.X
    sigma_k = sigma
    h_prev = None
    for k in range(depth):
        cfg_k = clone_config(cfg, seed=_derived_seed(cfg.seed, k))
        if k == 0:
            scales = None
            z = inputs
        else:
            scales = np.ones(2)
            scales[0] = (float(np.sqrt(np.mean(inputs[:, :t] ** 2))) or 1.0) / pred_scale
            if skip_mode == "concat":
                scales[1] = float(np.sqrt(np.mean(inputs[:, t:] ** 2))) or 1.0
            z = inputs.copy()
            z[:, :t] /= scales[0]
            if skip_mode == "concat":
                z[:, t:] /= scales[1]
        try:
            layer, trace = train_layer(
                Dataset(X=z, Y=data.Y), cfg_k, sigma=sigma_k)
        except SubspaceNetError as exc:
            exc.args = (f"layer {k}: {exc.args[0] if exc.args else ''}",)
            raise
        if scales is not None:
            v = layer.V.copy()
            v[:, :t] /= scales[0]
            if skip_mode == "concat":
                v[:, t:] /= scales[1]
            layer = SubspaceLayer(U=layer.U, V=v, sigma=layer.sigma, lam=layer.lam)

        h = predict_batch(layer, inputs)
        if k > 0 and stop_on_degrade:
            if np.mean((data.Y - h) ** 2) > np.mean((data.Y - h_prev) ** 2):
                break
        layers.append(layer)
        traces.append(trace)
        h_prev = h
        if k + 1 < depth:
            if calibrate:
                report = calibrate_sigma(layer, Dataset(X=inputs, Y=data.Y),
                                         residual_set=residual_set)
                # calibration contributes relative task weighting; anchor the
                # smallest estimate at the initial scale so the per-task
                # curvature never exceeds the regime the step sizes were
                # tuned for (noisier tasks are downweighted, none upweighted)
                sigma_k = report.sigma * (float(np.min(layers[0].sigma))
                                          / float(np.min(report.sigma)))
            inputs = (np.concatenate([h, data.X], axis=1)
                      if skip_mode == "concat" else h)
    return SubspaceNetwork(layers=layers, skip_mode=skip_mode), traces


def _pack_matrix(m: np.ndarray) -> bytes:
    return np.ascontiguousarray(m, dtype="<f8").tobytes()


def save_model(net: SubspaceNetwork, path):
    """Write a network to ``path`` in the versioned binary format.

    Layout (little-endian): magic ``SSNW``; u32 version; u8 skip mode;
    u32 input dim, task dim, depth; then per layer u32 d_in, t_out, r,
    f64 lam, the sigma vector, and the row-major f64 U and V matrices;
    finally the CRC32 (u32) of everything after the magic. The file is
    written atomically via a temp file and rename.
    """
    body = bytearray()
    body += struct.pack("<I", MODEL_VERSION)
    body += struct.pack("<B", SKIP_MODES.index(net.skip_mode))
    body += struct.pack("<III", net.input_dim, net.task_dim, net.depth)
    for layer in net.layers:
        body += struct.pack("<III", layer.d_in, layer.t_out, layer.r)
        body += struct.pack("<d", layer.lam)
        body += _pack_matrix(layer.sigma)
        body += _pack_matrix(layer.U)
        body += _pack_matrix(layer.V)
    blob = MODEL_MAGIC + bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=os.path.basename(path) + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedModelError(
                f"model file ends at byte {len(self.buf)}, needed {self.pos + n}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        raw = self.take(8 * rows * cols)
        return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()


def load_model(path) -> SubspaceNetwork:
    """Read a network written by `save_model`, verifying magic, version,
    and checksum before constructing anything."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MODEL_MAGIC) + 8:
        raise TruncatedModelError(f"model file is only {len(blob)} bytes")
    if blob[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic bytes {blob[:4]!r}")
    body, stored = blob[4:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) != stored:
        raise ChecksumError("model file checksum mismatch")
    rd = _Reader(body)
    version = rd.u32()
    if version != MODEL_VERSION:
        raise ModelVersionError(
            f"unsupported model format version {version} (expected {MODEL_VERSION})")
    mode_byte = rd.u8()
    if mode_byte >= len(SKIP_MODES):
        raise ModelFormatError(f"unknown skip mode byte {mode_byte}")
    input_dim, task_dim, depth = rd.u32(), rd.u32(), rd.u32()
    layers = []
    for _ in range(depth):
        d_in, t_out, r = rd.u32(), rd.u32(), rd.u32()
        lam = rd.f64()
        sigma = rd.matrix(1, t_out)[0]
        u = rd.matrix(t_out, r)
        v = rd.matrix(r, d_in)
        layers.append(SubspaceLayer(U=u, V=v, sigma=sigma, lam=lam))
    if rd.pos != len(body):
        raise ModelFormatError(f"{len(body) - rd.pos} unexpected trailing bytes")
    net = SubspaceNetwork(layers=layers, skip_mode=SKIP_MODES[mode_byte])
    if net.input_dim != input_dim or net.task_dim != task_dim:
        raise ModelFormatError("header dimensions disagree with layer shapes")
    return net
