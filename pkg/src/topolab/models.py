"""The two reference CNNs, their topographic fc1 layer, and checkpoint I/O.

Both nets end in fc1 (121 units, laid out on the 11x11 grid) followed by
fc2 (10 logits). Linear weights are stored unit-major, so fc1_w is
(121, 64) for the MNIST net and (121, 256) for the CIFAR-10 net, and
fc2_w is the (10, 121) class-prototype matrix.

Checkpoint container (little-endian): magic ``TPLC``, u32 format version,
u32 header length, JSON header (spec fields, epoch, accuracies, array
names), then per array: u16 name length, name bytes, u8 ndim, u32 dims,
raw float64 data.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

import topolab.tensor as T
from topolab.grid import TopoGrid

CONSTRAINTS = ("none", "ws", "as", "as_global")
LAMBDA_LEVELS = (0.1, 0.3, 0.5, 1.0, 2.0, 3.0)
CHECKPOINT_MAGIC = b"TPLC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    arch: str  # "mnist" | "cifar"
    constraint: str  # one of CONSTRAINTS; "none" for control
    lam: float
    seed: int

    def validate(self) -> None:
        if self.arch not in ("mnist", "cifar"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.constraint == "none":
            if self.lam != 0.0:
                raise ValueError("control models must have lam == 0")
        else:
            # lam = 0 degenerates a constrained run to control; kept legal so
            # the two paths can be checked against each other
            if self.lam != 0.0 and not any(np.isclose(self.lam, l) for l in LAMBDA_LEVELS):
                raise ValueError(f"lam must be 0 or one of {LAMBDA_LEVELS}, got {self.lam}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def model_id(self) -> str:
        lam = f"{self.lam:g}"
        return f"{self.arch}_{self.constraint}_lam{lam}_seed{self.seed}"

    def spec_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Model:
    """Parameter container with an arch-specific forward pass."""

    def __init__(self, arch: str, init_seed: int):
        self.arch = arch
        self.init_seed = init_seed
        self.params: dict[str, T.Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grid = TopoGrid()

    def _add_conv(self, name: str, rng, out_ch: int, in_ch: int) -> None:
        limit = np.sqrt(6.0 / (in_ch * 9))
        w = rng.uniform(-limit, limit, size=(out_ch, in_ch, 3, 3))
        self.params[f"{name}_w"] = T.Tensor(w, requires_grad=True, op_tag="param")
        self.params[f"{name}_b"] = T.Tensor(np.zeros(out_ch), requires_grad=True, op_tag="param")

    def _add_linear(self, name: str, rng, out_dim: int, in_dim: int) -> None:
        limit = np.sqrt(6.0 / in_dim)
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        self.params[f"{name}_w"] = T.Tensor(w, requires_grad=True, op_tag="param")
        self.params[f"{name}_b"] = T.Tensor(np.zeros(out_dim), requires_grad=True, op_tag="param")

    def _add_batchnorm(self, name: str, channels: int) -> None:
        self.params[f"{name}_gamma"] = T.Tensor(np.ones(channels), requires_grad=True, op_tag="param")
        self.params[f"{name}_beta"] = T.Tensor(np.zeros(channels), requires_grad=True, op_tag="param")
        self.buffers[f"{name}_mean"] = np.zeros(channels)
        self.buffers[f"{name}_var"] = np.ones(channels)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def fc1_weight(self) -> T.Tensor:
        """fc1 afferent weights, one grid unit per row."""
        return self.params["fc1_w"]

    def fc1_grid_weights(self) -> np.ndarray:
        return self.params["fc1_w"].data.copy()

    def class_prototypes(self) -> np.ndarray:
        """The (10, 121) fc2 weight matrix, one class prototype per row."""
        return self.params["fc2_w"].data.copy()

    def forward(self, images: np.ndarray, train: bool = False, rng=None):
        raise NotImplementedError

    def head(self, fc1_pre: T.Tensor, train: bool, rng) -> T.Tensor:
        h = T.relu(fc1_pre)
        h = T.dropout(h, self.dropout_rate, train_mode=train, rng=rng)
        return T.linear(h, T.transpose2d(self.params["fc2_w"]), self.params["fc2_b"])


class MnistNet(Model):
    dropout_rate = 0.5

    def __init__(self, seed: int):
        super().__init__("mnist", seed)
        rng = np.random.default_rng(seed)
        self._add_conv("conv1", rng, 32, 1)
        self._add_conv("conv2", rng, 64, 32)
        self._add_linear("fc1", rng, 121, 64)
        self._add_linear("fc2", rng, 10, 121)

    def forward(self, images: np.ndarray, train: bool = False, rng=None):
        # channels-last internally: contiguous channel runs keep the conv
        # im2col and pooling memory-bound paths fast on CPU
        p = self.params
        x = T.Tensor(np.ascontiguousarray(np.transpose(images, (0, 2, 3, 1))))
        h = T.maxpool2x2(
            T.conv2d(x, p["conv1_w"], p["conv1_b"], channels_last=True, activation="relu"),
            channels_last=True)
        h = T.maxpool2x2(
            T.conv2d(h, p["conv2_w"], p["conv2_b"], channels_last=True, activation="relu"),
            channels_last=True)
        feats = T.global_avg_pool(h, channels_last=True)
        fc1_pre = T.linear(feats, T.transpose2d(p["fc1_w"]), p["fc1_b"])
        return self.head(fc1_pre, train, rng), fc1_pre


class CifarNet(Model):
    dropout_rate = 0.3

    def __init__(self, seed: int):
        super().__init__("cifar", seed)
        rng = np.random.default_rng(seed)
        chans = [(32, 3), (64, 32), (128, 64), (256, 128)]
        for i, (out_ch, in_ch) in enumerate(chans, start=1):
            self._add_conv(f"conv{i}", rng, out_ch, in_ch)
            self._add_batchnorm(f"bn{i}", out_ch)
        self._add_linear("fc1", rng, 121, 256)
        self._add_linear("fc2", rng, 10, 121)

    def forward(self, images: np.ndarray, train: bool = False, rng=None):
        p, b = self.params, self.buffers
        h = T.Tensor(np.ascontiguousarray(np.transpose(images, (0, 2, 3, 1))))
        for i in range(1, 5):
            h = T.conv2d(h, p[f"conv{i}_w"], p[f"conv{i}_b"], channels_last=True)
            h = T.batchnorm2d(
                h, p[f"bn{i}_gamma"], p[f"bn{i}_beta"],
                b[f"bn{i}_mean"], b[f"bn{i}_var"], train_mode=train, channels_last=True,
            )
            h = T.relu(h)
            if i < 4:
                h = T.maxpool2x2(h, channels_last=True)
        feats = T.global_avg_pool(h, channels_last=True)
        fc1_pre = T.linear(feats, T.transpose2d(p["fc1_w"]), p["fc1_b"])
        return self.head(fc1_pre, train, rng), fc1_pre


def build_mnist_net(seed: int) -> Model:
    return MnistNet(seed)


def build_cifar_net(seed: int) -> Model:
    return CifarNet(seed)


def build_model(arch: str, seed: int) -> Model:
    if arch == "mnist":
        return build_mnist_net(seed)
    if arch == "cifar":
        return build_cifar_net(seed)
    raise ValueError(f"unknown arch {arch!r}")


def fc1_activations(model: Model, images: np.ndarray, stage: str = "pre_relu",
                    batch_size: int = 256) -> np.ndarray:
    """Eval-mode (N, 121) fc1 activations at the requested stage."""
    if stage not in ("pre_relu", "post_relu"):
        raise ValueError(f"stage must be pre_relu or post_relu, got {stage!r}")
    outs = []
    with T.no_grad():
        for start in range(0, images.shape[0], batch_size):
            _, fc1_pre = model.forward(images[start : start + batch_size], train=False)
            outs.append(fc1_pre.data)
    acts = np.concatenate(outs, axis=0)
    if stage == "post_relu":
        acts = np.maximum(acts, 0.0)
    return acts


def model_logits(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode (N, 10) logits."""
    outs = []
    with T.no_grad():
        for start in range(0, images.shape[0], batch_size):
            logits, _ = model.forward(images[start : start + batch_size], train=False)
            outs.append(logits.data)
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


@dataclass
class CheckpointMeta:
    spec: ModelSpec
    epoch: int
    train_acc: float
    test_acc: float
    extra: dict

    @property
    def model_id(self) -> str:
        return self.spec.model_id


def save_checkpoint(model: Model, spec: ModelSpec, epoch: int, train_acc: float,
                    test_acc: float, path: str | Path, extra: dict | None = None) -> None:
    """Serialize parameters and buffers; the write is atomic (tmp + rename)."""
    path = Path(path)
    header = {
        "spec": asdict(spec),
        "spec_hash": spec.spec_hash(),
        "epoch": int(epoch),
        "train_acc": float(train_acc),
        "test_acc": float(test_acc),
        "extra": extra or {},
        "params": list(model.params.keys()),
        "buffers": list(model.buffers.keys()),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<II", CHECKPOINT_VERSION, len(blob))
    out += blob
    named = [(k, model.params[k].data) for k in model.params]
    named += [(k, model.buffers[k]) for k in model.buffers]
    for name, arr in named:
        enc = name.encode()
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(out))
    tmp.replace(path)


def read_checkpoint_meta(path: str | Path) -> CheckpointMeta:
    """Parse only the checkpoint header; cheap enough for manifest scans."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(12)
        if head[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path.name}: not a checkpoint file (bad magic)")
        version, hlen = struct.unpack("<II", head[4:])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path.name}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode())
    spec = ModelSpec(**header["spec"])
    if spec.spec_hash() != header["spec_hash"]:
        raise ValueError(f"{path.name}: spec hash mismatch")
    return CheckpointMeta(
        spec=spec,
        epoch=header["epoch"],
        train_acc=header["train_acc"],
        test_acc=header["test_acc"],
        extra=header.get("extra", {}),
    )


def load_checkpoint(path: str | Path) -> tuple[Model, CheckpointMeta]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path.name}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path.name}: unsupported checkpoint version {version}")
    header = json.loads(raw[12 : 12 + hlen].decode())
    spec = ModelSpec(**header["spec"])
    if spec.spec_hash() != header["spec_hash"]:
        raise ValueError(f"{path.name}: spec hash mismatch")

    arrays = {}
    off = 12 + hlen
    while off < len(raw):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims)
        off += 8 * count
        arrays[name] = arr.astype(np.float64)

    model = build_model(spec.arch, spec.seed)
    missing = (set(model.params) | set(model.buffers)) ^ set(arrays)
    if missing:
        raise ValueError(f"{path.name}: parameter set mismatch: {sorted(missing)}")
    for k, p in model.params.items():
        if p.data.shape != arrays[k].shape:
            raise ValueError(f"{path.name}: shape mismatch for {k}")
        p.data[...] = arrays[k]
    for k in model.buffers:
        model.buffers[k][...] = arrays[k]

    meta = CheckpointMeta(
        spec=spec,
        epoch=header["epoch"],
        train_acc=header["train_acc"],
        test_acc=header["test_acc"],
        extra=header.get("extra", {}),
    )
    return model, meta
