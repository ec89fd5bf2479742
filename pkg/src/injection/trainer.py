"""Alternating optimisation of the discriminator and the joint generator-encoder.

One *step* is one optimiser update (either a discriminator or a
generator-encoder update) on one freshly sampled batch. Steps are grouped into
epochs of ``ceil(len(dataset) / batch_size)`` steps; the learning rate is set
per epoch from ``lr_at_epoch``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import pickle
import types
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
from torch import nn

from . import objectives as obj
from .config import LossWeights, ModelConfig, RandomSource, TrainConfig, lr_at_epoch
from .data import Batch, Dataset, sample_batch
from .errors import CheckpointError, TrainingError
from .networks import build_discriminator, build_encoder, build_generator

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_NAME = "train_log.csv"
LOG_HEADER = "step,epoch,phase,lr," + obj.LossReport.header()
RNG_STREAMS = ("data", "latent", "gp")


@dataclass
class TrainState:
    model_cfg: ModelConfig
    weights: LossWeights
    train_cfg: TrainConfig
    G: nn.Module
    E: nn.Module
    D: nn.Module
    opt_d: torch.optim.Optimizer
    opt_ge: torch.optim.Optimizer
    rngs: dict = field(default_factory=dict)
    epoch: int = 0  # completed epochs
    step: int = 0  # completed updates of either kind
    g_steps: int = 0
    d_steps: int = 0


def make_adam(params, train_cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=train_cfg.base_lr, betas=(train_cfg.beta1, train_cfg.beta2))


def init_state(model_cfg: ModelConfig, weights: LossWeights, train_cfg: TrainConfig,
               G=None, E=None, D=None) -> TrainState:
    """Fresh networks (unless given) and optimisers, seeded from ``train_cfg.seed``."""
    model_cfg.validate(), weights.validate(), train_cfg.validate()
    seed = train_cfg.seed
    G = G if G is not None else build_generator(model_cfg, RandomSource(seed, "init/G"))
    E = E if E is not None else build_encoder(model_cfg, RandomSource(seed, "init/E"))
    D = D if D is not None else build_discriminator(model_cfg, RandomSource(seed, "init/D"))
    opt_d = make_adam(D.parameters(), train_cfg)
    # one optimiser for G and E: they share a single objective
    opt_ge = make_adam([*G.parameters(), *E.parameters()], train_cfg)
    rngs = {name: RandomSource(seed, name) for name in RNG_STREAMS}
    return TrainState(model_cfg, weights, train_cfg, G, E, D, opt_d, opt_ge, rngs)


def _check_finite(report: obj.LossReport) -> None:
    bad = report.first_nonfinite()
    if bad is not None:
        raise TrainingError(f"non-finite loss term {bad!r}", term=bad, report=report)


def d_step(state: TrainState, batch: Batch) -> obj.LossReport:
    """One discriminator update on ``-adv + lambda_gp * gp + lambda * cls_real``."""
    x, c0, c = batch
    n, d = x.shape[0], state.model_cfg.latent_dim
    z = state.rngs["latent"].normal((n, d), dtype=x.dtype)
    alpha = state.rngs["gp"].uniform((n,), dtype=x.dtype)
    state.D.requires_grad_(True)
    terms = obj.discriminator_terms(state.G, state.D, x, c0, c, z, alpha)
    total = obj.total_d(terms["adv_d"], terms["gp"], terms["cls_real"], state.weights)
    report = obj.LossReport(**{k: v.item() for k, v in terms.items()}, total_d=total.item())
    _check_finite(report)
    state.opt_d.zero_grad(set_to_none=True)
    total.backward()
    state.opt_d.step()
    state.d_steps += 1
    return report


def g_step(state: TrainState, batch: Batch) -> obj.LossReport:
    """One joint generator-encoder update; the discriminator is only read."""
    x, c0, c = batch
    n, d = x.shape[0], state.model_cfg.latent_dim
    z = state.rngs["latent"].normal((n, d), dtype=x.dtype)
    eta = state.rngs["latent"].normal((n, d), dtype=x.dtype)
    state.D.requires_grad_(False)
    try:
        terms = obj.generator_terms(state.G, state.E, state.D, x, c0, c, z, eta,
                                    cycle_latent=state.train_cfg.cycle_latent)
        total = obj.total_g(terms["adv_g"], terms["cls_fake"], terms["cycle_image"],
                            terms["latent_l1"], terms["kl"], state.weights)
        report = obj.LossReport(**{k: v.item() for k, v in terms.items()}, total_g=total.item())
        _check_finite(report)
        state.opt_ge.zero_grad(set_to_none=True)
        total.backward()
        state.opt_ge.step()
    finally:
        state.D.requires_grad_(True)
    state.g_steps += 1
    return report


def phase_of(step: int, cfg: TrainConfig) -> str:
    """``"g"`` or ``"d"`` for a global step index.

    Each cycle is ``g_steps_per_d_step`` generator updates followed by one
    discriminator update, or the reverse roles with ``invert_update_ratio``.
    """
    k = cfg.g_steps_per_d_step
    major, minor = ("d", "g") if cfg.invert_update_ratio else ("g", "d")
    return major if step % (k + 1) < k else minor


def steps_per_epoch(ds: Dataset, cfg: TrainConfig) -> int:
    return math.ceil(len(ds) / cfg.batch_size)


def set_lr(state: TrainState, lr: float) -> None:
    for opt in (state.opt_d, state.opt_ge):
        for group in opt.param_groups:
            group["lr"] = lr


def log_line(step: int, epoch: int, phase: str, lr: float, report: obj.LossReport) -> str:
    return f"{step},{epoch},{phase},{lr:.6e},{report.to_line()}"


def checkpoint_path(out, epoch: int) -> Path:
    return Path(out) / f"ckpt_epoch{epoch:04d}.pt"


class _CanonicalPickler(pickle.Pickler):
    """Pickler without a memo: output bytes depend on values only, not object identity.

    With the default memo a resumed run (whose strings and tuples come from an
    unpickled checkpoint) would serialise equal state to different bytes.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.fast = True


_canonical_pickle = types.SimpleNamespace(Pickler=_CanonicalPickler, __name__="pickle")


def save_checkpoint(state: TrainState, path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_cfg": dataclasses.asdict(state.model_cfg),
        "weights": dataclasses.asdict(state.weights),
        "train_cfg": dataclasses.asdict(state.train_cfg),
        "G": state.G.state_dict(),
        "E": state.E.state_dict(),
        "D": state.D.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "opt_ge": state.opt_ge.state_dict(),
        "rngs": {name: rng.get_state() for name, rng in state.rngs.items()},
        "counters": {"epoch": state.epoch, "step": state.step,
                     "g_steps": state.g_steps, "d_steps": state.d_steps},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp, pickle_module=_canonical_pickle)
    tmp.replace(path)


def load_checkpoint(path, model_cfg: ModelConfig | None = None) -> TrainState:
    """Restore a ``TrainState``; ``model_cfg``, if given, must match the stored one."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('version') if isinstance(payload, dict) else None!r}"
        )
    try:
        stored = ModelConfig(**payload["model_cfg"])
        if model_cfg is not None and model_cfg != stored:
            raise CheckpointError(f"checkpoint model config {stored} does not match {model_cfg}")
        state = init_state(stored, LossWeights(**payload["weights"]), TrainConfig(**payload["train_cfg"]))
        for name in ("G", "E", "D", "opt_d", "opt_ge"):
            getattr(state, name).load_state_dict(payload[name])
        for name, rng_state in payload["rngs"].items():
            state.rngs[name].set_state(rng_state)
        for name, value in payload["counters"].items():
            setattr(state, name, int(value))
    except CheckpointError:
        raise
    except (KeyError, TypeError, RuntimeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return state


def latest_checkpoint(out) -> Path | None:
    found = sorted(Path(out).glob("ckpt_*.pt"), key=lambda p: p.stat().st_mtime_ns)
    return found[-1] if found else None


def _open_log(path: Path, resume_step: int | None):
    if resume_step is not None and path.exists():
        kept = [ln for ln in path.read_text().splitlines()[1:] if int(ln.split(",", 1)[0]) < resume_step]
        path.write_text("\n".join([LOG_HEADER, *kept]) + "\n")
        return path.open("a")
    fh = path.open("w")
    fh.write(LOG_HEADER + "\n")
    return fh


def train(model_cfg: ModelConfig, weights: LossWeights, train_cfg: TrainConfig, ds: Dataset, out,
          resume=None, max_steps: int | None = None, checkpoint_every: int = 1,
          callback: Callable[[TrainState, str, obj.LossReport], None] | None = None) -> TrainState:
    """Run the full schedule, logging every step and checkpointing every epoch.

    ``resume`` continues from a checkpoint (epoch or mid-epoch). ``max_steps``
    stops early after that many global steps and writes ``ckpt_step<N>.pt``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = load_checkpoint(resume, model_cfg)
        state.weights, state.train_cfg = weights, train_cfg
    else:
        state = init_state(model_cfg, weights, train_cfg)
    spe = steps_per_epoch(ds, train_cfg)
    fh = _open_log(out / LOG_NAME, state.step if resume is not None else None)
    try:
        while state.epoch < train_cfg.total_epochs:
            lr = lr_at_epoch(train_cfg, state.epoch)
            set_lr(state, lr)
            while state.step < (state.epoch + 1) * spe:
                if max_steps is not None and state.step >= max_steps:
                    save_checkpoint(state, out / f"ckpt_step{state.step:07d}.pt")
                    return state
                batch = sample_batch(ds, train_cfg.batch_size, state.rngs["data"], model_cfg)
                phase = phase_of(state.step, train_cfg)
                try:
                    report = g_step(state, batch) if phase == "g" else d_step(state, batch)
                except TrainingError as exc:
                    fh.write(log_line(state.step, state.epoch, phase, lr, exc.report) + "\n")
                    raise
                fh.write(log_line(state.step, state.epoch, phase, lr, report) + "\n")
                state.step += 1
                if callback is not None:
                    callback(state, phase, report)
            state.epoch += 1
            fh.flush()
            if state.epoch % checkpoint_every == 0 or state.epoch == train_cfg.total_epochs:
                save_checkpoint(state, checkpoint_path(out, state.epoch))
            log.info("epoch %d/%d done (step %d)", state.epoch, train_cfg.total_epochs, state.step)
    finally:
        fh.close()
    return state


@torch.no_grad()
def sample_variants(G: nn.Module, images: torch.Tensor, target: int, n_variants: int,
                    rng: RandomSource) -> torch.Tensor:
    """Translate each image to ``target`` with ``n_variants`` independent prior codes.

    Returns ``(B, n_variants, C, H, W)``.
    """
    b = images.shape[0]
    d = G.cfg.latent_dim
    z = rng.normal((b, n_variants, d), dtype=images.dtype)
    x = images[:, None].expand(-1, n_variants, -1, -1, -1).reshape(b * n_variants, *images.shape[1:])
    c = torch.full((b * n_variants,), target, dtype=torch.long)
    return G(x, c, z.reshape(b * n_variants, d)).reshape(b, n_variants, *images.shape[1:])
