"""The three training/generation stages, each a pure function of config, seed and inputs.

Stage outputs in ``run.out``:

* ``autoencoder.ckpt``, ``autoencoder_metrics.csv``, ``autoencoder_loss.png``
* ``capsules.ckpt``, ``capsules_metrics.csv``, ``capsules_xent.png``
* ``generated.pgm`` (``.ppm`` for colour) and ``generated.png``
* ``routing.svg``
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from pathlib import Path

import numpy as np

from . import dataio, plotting
from .autoencoder import AutoencoderParams, capsulize, decapsulize, decode, encode, feature_shape, train_autoencoder
from .config import RunConfig, parse_config
from .energy import EnergyModel, generate, train_capsule_layer
from .kernels import SeededRng, SgdMomentumState
from .routing import CapsuleLayerSpec, route_forward, routing_diagram, squash

log = logging.getLogger(__name__)

AE_CKPT = "autoencoder.ckpt"
CAPS_CKPT = "capsules.ckpt"
AE_LOG = "autoencoder_metrics.csv"
CAPS_LOG = "capsules_metrics.csv"
AE_FIELDS = ("epoch", "step", "mse", "learning_rate")
CAPS_FIELDS = ("epoch", "step", "reconstruction_xent", "grad_norm", "learning_rate")

# distinct random streams per stage
_STREAM_AE, _STREAM_CAPS, _STREAM_GEN = 0, 1, 2


class CheckpointMismatchError(ValueError):
    """A checkpoint does not fit the configuration it is used with."""


def _stream(cfg: RunConfig, k: int) -> SeededRng:
    return SeededRng((cfg.run.seed + k) % 2**64)


def out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.run.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def dataset_path(cfg: RunConfig, data_dir=None) -> Path:
    path = Path(cfg.data.path)
    if data_dir is not None and not path.is_absolute():
        path = Path(data_dir) / path
    return path


def load_dataset(cfg: RunConfig, data_dir=None) -> np.ndarray:
    """Images ``[n, H, W, C]`` in [0, 1], truncated to ``data.limit``."""
    path = dataset_path(cfg, data_dir)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if cfg.data.name == "cifar10":
        images = dataio.load_cifar10(path)
    else:
        images = dataio.load_idx(path, expected_shape=(28, 28))[..., None]
    if cfg.data.limit:
        images = images[:cfg.data.limit]
    if len(images) == 0:
        raise ValueError(f"dataset {path} holds no images")
    return images


def _batches(data: np.ndarray, batch: int, rng: SeededRng):
    def gen(epoch):
        order = rng.permutation(len(data))
        for k in range(0, len(data), batch):
            yield data[order[k:k + batch]]
    return gen


def _write_log(path: Path, fields, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in records:
            w.writerow([repr(r[f]) if isinstance(r[f], float) else r[f] for f in fields])


def read_log(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("epoch", "step") else float(v)) for k, v in r.items()} for r in rows]


def _same_except_epochs(saved_text: str, cfg: RunConfig) -> bool:
    # epoch counts may grow between runs; everything else must match
    saved = parse_config(saved_text)
    mine = dataclasses.replace(cfg)
    for c in (saved, mine):
        for stage in ("autoencoder", "capsules"):
            setattr(c, stage, dataclasses.replace(getattr(c, stage), epochs=1))
        c.run = dataclasses.replace(c.run, out="")
    return saved.to_text() == mine.to_text()


def _optimizer_sections(opt: SgdMomentumState) -> dict:
    sec = {f"opt.v.{k}": v for k, v in opt.velocity.items()}
    sec["opt.lr"] = np.array([opt.learning_rate])
    return sec


def _restore_optimizer(sections: dict, opt: SgdMomentumState) -> None:
    opt.learning_rate = float(sections["opt.lr"][0])
    opt.velocity = {k[len("opt.v."):]: v.copy() for k, v in sections.items() if k.startswith("opt.v.")}


# ---------------------------------------------------------------------------
# stage 1


def autoencoder_sections(cfg, params: AutoencoderParams, opt, rng, epoch, step, image_shape) -> dict:
    sec = {f"ae.{k}": v for k, v in params.tensors().items()}
    sec["ae.hyper"] = np.array([params.dropout_rate, params.leaky_slope])
    sec.update(_optimizer_sections(opt))
    sec["rng.state"] = rng.get_state()
    sec["train.progress"] = np.array([epoch, step], dtype=float)
    sec["meta.image_shape"] = np.array(image_shape, dtype=float)
    sec["meta.config"] = dataio.text_to_tensor(cfg.to_text())
    return sec


def load_autoencoder(path):
    """-> (params, image_shape, sections)."""
    sec = dataio.load_checkpoint(path)
    try:
        dropout, slope = sec["ae.hyper"]
        params = AutoencoderParams(sec["ae.enc1"], sec["ae.enc2"], sec["ae.dec1"], sec["ae.dec2"],
                                   dropout_rate=float(dropout), leaky_slope=float(slope))
        shape = tuple(int(v) for v in sec["meta.image_shape"])
    except KeyError as exc:
        raise CheckpointMismatchError(f"{path}: missing section {exc}") from None
    return params, shape, sec


def train_autoencoder_stage(cfg: RunConfig, data_dir=None, resume: bool = False):
    """Train the front-end; returns ``(params, records)``."""
    out = out_dir(cfg)
    images = load_dataset(cfg, data_dir)
    ae_cfg = cfg.autoencoder
    rng = _stream(cfg, _STREAM_AE)
    params = AutoencoderParams.initialize(images.shape[-1], rng, channels=ae_cfg.channels,
                                          dropout_rate=ae_cfg.dropout, leaky_slope=ae_cfg.leaky_slope)
    opt = SgdMomentumState(ae_cfg.lr, ae_cfg.momentum, ae_cfg.decay, ae_cfg.l2)
    start_epoch = start_step = 0
    records = []
    ckpt_path = out / AE_CKPT
    if resume and ckpt_path.exists():
        params, _, sec = load_autoencoder(ckpt_path)
        if not _same_except_epochs(dataio.tensor_to_text(sec["meta.config"]), cfg):
            raise CheckpointMismatchError(f"{ckpt_path} was written with a different configuration")
        _restore_optimizer(sec, opt)
        rng.set_state(sec["rng.state"])
        start_epoch, start_step = (int(v) for v in sec["train.progress"])
        records = [r for r in read_log(out / AE_LOG) if r["epoch"] <= start_epoch]

    def checkpoint(epoch, p, step):
        dataio.save_checkpoint(
            autoencoder_sections(cfg, p, opt, rng, epoch, step, images.shape[1:]), ckpt_path)

    params, new = train_autoencoder(params, _batches(images, ae_cfg.batch, rng), ae_cfg.epochs, opt, rng,
                                    start_epoch=start_epoch, start_step=start_step, on_epoch_end=checkpoint)
    records += new
    if start_epoch >= ae_cfg.epochs:
        checkpoint(start_epoch, params, start_step)
    _write_log(out / AE_LOG, AE_FIELDS, records)
    if records:
        plotting.plot_training_curve(records, "mse", out / "autoencoder_loss.png", "autoencoder reconstruction")
    return params, records


# ---------------------------------------------------------------------------
# stage 2


def encode_capsules(params: AutoencoderParams, images: np.ndarray, capsule_dim: int, batch: int = 256):
    chunks = [capsulize(encode(params, images[k:k + batch]), capsule_dim)
              for k in range(0, len(images), batch)]
    return np.concatenate(chunks)


def capsule_sections(cfg, model: EnergyModel, opt, rng, epoch, step) -> dict:
    sec = {"caps.W": model.W}
    sec.update(_optimizer_sections(opt))
    sec["rng.state"] = rng.get_state()
    sec["train.progress"] = np.array([epoch, step], dtype=float)
    sec["meta.config"] = dataio.text_to_tensor(cfg.to_text())
    return sec


def load_capsules(path) -> tuple[EnergyModel, dict]:
    sec = dataio.load_checkpoint(path)
    if "caps.W" not in sec:
        raise CheckpointMismatchError(f"{path}: missing section 'caps.W'")
    return EnergyModel(sec["caps.W"]), sec


def capsule_layers(cfg: RunConfig, params: AutoencoderParams, image_shape) -> tuple[CapsuleLayerSpec, CapsuleLayerSpec]:
    caps = cfg.capsules
    if params.channels % caps.capsule_dim:
        raise CheckpointMismatchError(
            f"autoencoder has {params.channels} channels, not divisible into {caps.capsule_dim}-dim capsules")
    fh, fw, fc = feature_shape(image_shape[:2], params.channels, params.kernel)
    lower = CapsuleLayerSpec(fh * fw * fc // caps.capsule_dim, caps.capsule_dim)
    return lower, CapsuleLayerSpec(caps.capsules, caps.dim)


def train_capsules_stage(cfg: RunConfig, data_dir=None, autoencoder_checkpoint=None, resume: bool = False):
    """Train the capsule layer on frozen encoder features; returns ``(model, records)``."""
    out = out_dir(cfg)
    ae_path = Path(autoencoder_checkpoint) if autoencoder_checkpoint else out / AE_CKPT
    params, image_shape, _ = load_autoencoder(ae_path)
    lower, upper = capsule_layers(cfg, params, image_shape)
    images = load_dataset(cfg, data_dir)
    if images.shape[1:] != tuple(image_shape):
        raise CheckpointMismatchError(
            f"autoencoder was trained on {image_shape} images, dataset has {images.shape[1:]}")

    caps = cfg.capsules
    rng = _stream(cfg, _STREAM_CAPS)
    model = EnergyModel.initialize(lower, upper, rng, caps.init_scale)
    opt = SgdMomentumState(caps.lr, caps.momentum, caps.decay, caps.l2)
    start_epoch = start_step = 0
    records = []
    ckpt_path = out / CAPS_CKPT
    if resume and ckpt_path.exists():
        model, sec = load_capsules(ckpt_path)
        if not _same_except_epochs(dataio.tensor_to_text(sec["meta.config"]), cfg):
            raise CheckpointMismatchError(f"{ckpt_path} was written with a different configuration")
        _restore_optimizer(sec, opt)
        rng.set_state(sec["rng.state"])
        start_epoch, start_step = (int(v) for v in sec["train.progress"])
        records = [r for r in read_log(out / CAPS_LOG) if r["epoch"] <= start_epoch]

    x = encode_capsules(params, images, caps.capsule_dim)
    log.info("encoded %d images into %d x %d capsules", len(x), lower.count, lower.dim)

    def checkpoint(epoch, m, step):
        dataio.save_checkpoint(capsule_sections(cfg, m, opt, rng, epoch, step), ckpt_path)

    model, new = train_capsule_layer(model, _batches(x, caps.batch, rng), caps.epochs, opt, rng,
                                     routing_iterations=caps.routing_iterations,
                                     start_epoch=start_epoch, start_step=start_step,
                                     on_epoch_end=checkpoint)
    records += new
    if start_epoch >= caps.epochs:
        checkpoint(start_epoch, model, start_step)
    _write_log(out / CAPS_LOG, CAPS_FIELDS, records)
    if records:
        plotting.plot_training_curve(records, "reconstruction_xent", out / "capsules_xent.png",
                                     "capsule layer CD-1 reconstruction")
    return model, records


# ---------------------------------------------------------------------------
# stage 3


def _load_both(cfg: RunConfig, autoencoder_checkpoint=None, capsule_checkpoint=None):
    out = out_dir(cfg)
    params, image_shape, _ = load_autoencoder(autoencoder_checkpoint or out / AE_CKPT)
    model, _ = load_capsules(capsule_checkpoint or out / CAPS_CKPT)
    lower, _ = capsule_layers(cfg, params, image_shape)
    if model.lower != lower:
        raise CheckpointMismatchError(
            f"capsule model expects {tuple(model.lower)} lower capsules, autoencoder yields {tuple(lower)}")
    return params, image_shape, model


def make_decoder(params: AutoencoderParams, image_shape):
    fshape = feature_shape(image_shape[:2], params.channels, params.kernel)
    return lambda visible: decode(params, decapsulize(visible, fshape), image_shape[:2])


def generate_grid(cfg: RunConfig, samples_per_capsule: int | None = None,
                  autoencoder_checkpoint=None, capsule_checkpoint=None) -> tuple[Path, list]:
    """Rows are samples, columns are upper-layer capsules; returns ``(grid path, images)``."""
    rows = cfg.generate.samples_per_capsule if samples_per_capsule is None else samples_per_capsule
    if rows < 1:
        raise ValueError("samples_per_capsule must be at least 1")
    params, image_shape, model = _load_both(cfg, autoencoder_checkpoint, capsule_checkpoint)
    decoder = make_decoder(params, image_shape)
    rng = _stream(cfg, _STREAM_GEN)
    cols = model.upper.count
    images = [generate(model, j, rng, decoder, cfg.capsules.routing_iterations)
              for _ in range(rows) for j in range(cols)]
    out = out_dir(cfg)
    suffix = "pgm" if image_shape[-1] == 1 else "ppm"
    path = dataio.emit_image_grid(images, rows, cols, out / f"generated.{suffix}")
    plotting.plot_image_grid(dataio.image_grid(images, rows, cols), out / "generated.png",
                             f"{rows} samples x {cols} capsules")
    return path, images


def routing_for_sample(cfg: RunConfig, sample_index: int | None = None, data_dir=None,
                       autoencoder_checkpoint=None, capsule_checkpoint=None):
    """Encode one dataset image and route it -> (diagram model, routing state)."""
    index = cfg.diagram.sample_index if sample_index is None else sample_index
    params, image_shape, model = _load_both(cfg, autoencoder_checkpoint, capsule_checkpoint)
    images = load_dataset(cfg, data_dir)
    if not 0 <= index < len(images):
        raise IndexError(f"sample index {index} outside dataset of {len(images)} images")
    x = capsulize(encode(params, images[index]), cfg.capsules.capsule_dim)
    state, _, act_upper = route_forward(model.W, x, cfg.capsules.routing_iterations)
    act_lower = np.linalg.norm(squash(x), axis=-1)
    diagram = routing_diagram(state, act_lower, act_upper, cfg.diagram.edge_threshold)
    return diagram, state


def diagram_stage(cfg: RunConfig, sample_index: int | None = None, data_dir=None,
                  autoencoder_checkpoint=None, capsule_checkpoint=None) -> Path:
    diagram, _ = routing_for_sample(cfg, sample_index, data_dir, autoencoder_checkpoint, capsule_checkpoint)
    return dataio.emit_routing_svg(diagram, out_dir(cfg) / "routing.svg")
