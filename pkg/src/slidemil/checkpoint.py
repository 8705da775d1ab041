"""Checkpoint bundles: lossless save/restore of model, optimizer, metadata.

File layout, little-endian throughout:

    magic    8 bytes  "TCV2CKPT"
    version  u16
    params   u32 count, then per entry:
             u16 id length, id utf-8, u8 rank, rank x u32 dims,
             count x f64 values (row-major)
    moments  u32 count, then per entry keyed by stable_id:
             u16 id length, id utf-8, u64 step count,
             f64 first-moment values, f64 second-moment values
             (shapes come from the parameter directory)
    metadata u32 byte length, utf-8 "key=value" lines sorted by key

Values are written as raw 64-bit floats, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .model import EncoderConfig, MultiTaskModel
from .optim import MomentPair, OptimizerState
from .tasks import TaskRegistry, TaskSpec

MAGIC = b"TCV2CKPT"
FORMAT_VERSION = 1


@dataclass
class CheckpointBundle:
    params: dict[str, np.ndarray]
    moments: dict[str, MomentPair] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += MAGIC
        out += struct.pack("<H", FORMAT_VERSION)

        out += struct.pack("<I", len(self.params))
        for stable_id, values in self.params.items():
            arr = np.ascontiguousarray(values, dtype="<f8")
            ident = stable_id.encode("utf-8")
            out += struct.pack("<H", len(ident))
            out += ident
            out += struct.pack("<B", arr.ndim)
            for dim in arr.shape:
                out += struct.pack("<I", dim)
            out += arr.tobytes()

        out += struct.pack("<I", len(self.moments))
        for stable_id, pair in self.moments.items():
            if stable_id not in self.params:
                raise CheckpointError(f"optimizer moment for unknown parameter {stable_id!r}")
            ident = stable_id.encode("utf-8")
            out += struct.pack("<H", len(ident))
            out += ident
            out += struct.pack("<Q", pair.t)
            out += np.ascontiguousarray(pair.m, dtype="<f8").tobytes()
            out += np.ascontiguousarray(pair.v, dtype="<f8").tobytes()

        meta_lines = "".join(
            f"{key}={self.metadata[key]}\n" for key in sorted(self.metadata)
        ).encode("utf-8")
        out += struct.pack("<I", len(meta_lines))
        out += meta_lines
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CheckpointBundle":
        reader = _Reader(blob)
        magic = reader.take(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<H", reader.take(2))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {version}, expected {FORMAT_VERSION}")

        params: dict[str, np.ndarray] = {}
        (n_params,) = struct.unpack("<I", reader.take(4))
        for _ in range(n_params):
            stable_id = reader.take_string()
            (rank,) = struct.unpack("<B", reader.take(1))
            dims = struct.unpack(f"<{rank}I", reader.take(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            values = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(dims)
            params[stable_id] = values.astype(np.float64)

        moments: dict[str, MomentPair] = {}
        (n_moments,) = struct.unpack("<I", reader.take(4))
        for _ in range(n_moments):
            stable_id = reader.take_string()
            if stable_id not in params:
                raise CheckpointError(f"optimizer moment for unknown parameter {stable_id!r}")
            shape = params[stable_id].shape
            count = int(np.prod(shape)) if shape else 1
            (t,) = struct.unpack("<Q", reader.take(8))
            m = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
            v = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
            moments[stable_id] = MomentPair(m, v, t)

        (meta_len,) = struct.unpack("<I", reader.take(4))
        metadata: dict[str, str] = {}
        for line in reader.take(meta_len).decode("utf-8").splitlines():
            if not line:
                continue
            key, _, value = line.partition("=")
            metadata[key] = value
        if reader.remaining():
            raise CheckpointError(f"{reader.remaining()} trailing bytes after metadata")
        return cls(params, moments, metadata)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"only {len(self.blob) - self.pos} left"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def take_string(self) -> str:
        (length,) = struct.unpack("<H", self.take(2))
        return self.take(length).decode("utf-8")

    def remaining(self) -> int:
        return len(self.blob) - self.pos


def write_checkpoint(bundle: CheckpointBundle, path) -> None:
    with open(path, "wb") as fh:
        fh.write(bundle.to_bytes())


def read_checkpoint(path) -> CheckpointBundle:
    with open(path, "rb") as fh:
        return CheckpointBundle.from_bytes(fh.read())


def _arch_metadata(model: MultiTaskModel) -> dict[str, str]:
    cfg = model.encoder_config
    meta = {
        "arch.input_width": str(cfg.input_width),
        "arch.hidden_widths": ",".join(str(w) for w in cfg.hidden_widths),
        "arch.output_width": str(cfg.output_width),
        "arch.activation": cfg.activation,
        "arch.heads": str(model.pool.heads),
        "arch.att_dim": str(model.pool.att_dim),
        "arch.dropout_p": repr(model.dropout_p),
        "arch.tasks": ",".join(model.registry.ids()),
    }
    for spec in model.registry:
        meta[f"arch.task.{spec.task_id}.kind"] = spec.kind
        meta[f"arch.task.{spec.task_id}.classes"] = str(spec.num_classes)
        meta[f"arch.task.{spec.task_id}.weight"] = repr(spec.loss_weight)
        meta[f"arch.task.{spec.task_id}.cohort"] = spec.cohort_tag
    return meta


def save_checkpoint(
    model: MultiTaskModel,
    optimizer_state: OptimizerState | None = None,
    metadata: dict[str, str] | None = None,
) -> CheckpointBundle:
    """Snapshot parameters, optimizer moments, and metadata into a bundle."""
    params = {p.stable_id: p.data.copy() for p in model.parameters()}
    moments = {}
    if optimizer_state is not None:
        for stable_id, pair in optimizer_state.moments.items():
            moments[stable_id] = MomentPair(pair.m.copy(), pair.v.copy(), pair.t)
    meta = _arch_metadata(model)
    if metadata:
        meta.update({str(k): str(v) for k, v in metadata.items()})
    return CheckpointBundle(params, moments, meta)


def _registry_from_metadata(meta: dict[str, str]) -> TaskRegistry:
    ids = [t for t in meta.get("arch.tasks", "").split(",") if t]
    tasks = []
    for task_id in ids:
        tasks.append(
            TaskSpec(
                task_id=task_id,
                kind=meta[f"arch.task.{task_id}.kind"],
                num_classes=int(meta[f"arch.task.{task_id}.classes"]),
                loss_weight=float(meta[f"arch.task.{task_id}.weight"]),
                cohort_tag=meta.get(f"arch.task.{task_id}.cohort", ""),
            )
        )
    return TaskRegistry(tasks)


def load_checkpoint(
    bundle: CheckpointBundle, model: MultiTaskModel | None = None
) -> tuple[MultiTaskModel, OptimizerState, dict[str, str]]:
    """Restore a model, optimizer state, and metadata from a bundle.

    With ``model`` given, values are loaded into it and the parameter
    sets must match exactly; otherwise the model is rebuilt from the
    architecture metadata stored at save time.
    """
    meta = bundle.metadata
    if model is None:
        try:
            cfg = EncoderConfig(
                input_width=int(meta["arch.input_width"]),
                hidden_widths=[int(w) for w in meta["arch.hidden_widths"].split(",") if w],
                output_width=int(meta["arch.output_width"]),
                activation=meta["arch.activation"],
            )
            registry = _registry_from_metadata(meta)
            model = MultiTaskModel(
                cfg,
                registry,
                heads=int(meta["arch.heads"]),
                att_dim=int(meta["arch.att_dim"]),
                dropout_p=float(meta["arch.dropout_p"]),
            )
        except KeyError as exc:
            raise CheckpointError(f"metadata missing architecture key {exc}") from exc

    by_id = model.parameters_by_id()
    missing = sorted(set(by_id) - set(bundle.params))
    extra = sorted(set(bundle.params) - set(by_id))
    if missing or extra:
        raise CheckpointError(
            f"stable_id mismatch: missing from bundle {missing}, not in model {extra}"
        )
    for stable_id, param in by_id.items():
        stored = bundle.params[stable_id]
        if stored.shape != param.shape:
            raise CheckpointError(
                f"parameter {stable_id!r}: bundle shape {stored.shape} != model {param.shape}"
            )
        param.data = stored.copy()

    state = OptimizerState()
    for stable_id, pair in bundle.moments.items():
        state.moments[stable_id] = MomentPair(pair.m.copy(), pair.v.copy(), pair.t)
    return model, state, dict(meta)
