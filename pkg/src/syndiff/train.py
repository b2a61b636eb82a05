"""Cycle training orchestration: Adam, the per-iteration update, epoch loop.

One iteration runs, in order: the one-shot translators produce paired
source estimates and back-projections; a grid time is drawn and both
modalities are noised through the closed-form marginal; the diffusive
generators estimate clean images; discriminators update on real pairs
(drawn from the true-image posterior) versus detached fakes; generators
update on the adversarial terms plus cycle consistency. Training only ever
sees per-modality image pools, so pairing information cannot leak in.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .diffusion import forward_marginal, posterior_params, posterior_sample
from .losses import LossWeights, loss_cycle, loss_d_adv, loss_g_adv, total_d, total_g
from .nets import CycleNets, NetConfig, build_cycle_nets, save_checkpoint
from .schedule import FastSchedule, build_fast_schedule
from .tensor import Tensor

LOG_COLUMNS = (
    "epoch",
    "iter",
    "L_G_total",
    "L_D_total",
    "L_cyc",
    "L_G_adv_diff_A",
    "L_G_adv_diff_B",
    "L_G_adv_nd_A",
    "L_G_adv_nd_B",
    "L_D_adv_diff",
    "L_D_adv_nd",
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    batch_size: int = 8
    T: int = 1000
    k: int = 250
    beta_min: float = 0.1
    beta_max: float = 20.0
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def schedule(self) -> FastSchedule:
        return build_fast_schedule(self.T, self.k, self.beta_min, self.beta_max)


class Adam:
    """Standard Adam with bias correction, updating parameter data in place."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, Tensor]) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            g = grads[name].data if isinstance(grads[name], Tensor) else grads[name]
            if g.shape != p.shape:
                raise T.ShapeError("adam_step", f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_iteration(
    batch_a: np.ndarray,
    batch_b: np.ndarray,
    nets: CycleNets,
    schedule: FastSchedule,
    config: TrainConfig,
    rng: np.random.Generator,
    opt_g: Adam,
    opt_d: Adam,
) -> dict[str, float]:
    """One full discriminator-then-generator update; returns the loss report."""
    xa = Tensor(batch_a)
    xb = Tensor(batch_b)

    # one-shot translations and back-projections (kept attached for the G step)
    y_b = nets.gen_ab(xa)  # B-style estimate paired with each A image
    y_a = nets.gen_ba(xb)
    back_a = nets.gen_ba(y_b)
    back_b = nets.gen_ab(y_a)

    # shared grid time and noisy samples
    t = int(rng.integers(1, schedule.num_steps + 1)) * schedule.k
    xt_a = forward_marginal(xa, t, schedule, rng)
    xt_b = forward_marginal(xb, t, schedule, rng)

    # clean-image estimates from the diffusive generators
    est_a = nets.gen_diff_a(xt_a, y_b, t)
    est_b = nets.gen_diff_b(xt_b, y_a, t)

    # -- discriminator update (all generator outputs detached) --
    losses_d = {}
    for tag, disc, x0, xt, est in (
        ("a", nets.disc_diff_a, xa, xt_a, est_a),
        ("b", nets.disc_diff_b, xb, xt_b, est_b),
    ):
        real = Tensor(posterior_sample(posterior_params(xt, x0, t, schedule), rng).data, requires_grad=True)
        fake = posterior_sample(posterior_params(xt, est.detach(), t, schedule), rng)
        logits_real = disc(real, xt, t)
        penalty = T.grad_norm_sq(logits_real, real)
        logits_fake = disc(fake, xt, t)
        losses_d[f"diff_{tag}"] = loss_d_adv(logits_real, logits_fake, penalty, config.weights.gp_weight)
    losses_d["nd_a"] = loss_d_adv(nets.disc_a(xa), nets.disc_a(y_a.detach()))
    losses_d["nd_b"] = loss_d_adv(nets.disc_b(xb), nets.disc_b(y_b.detach()))
    l_d = total_d(losses_d["diff_a"], losses_d["diff_b"], losses_d["nd_a"], losses_d["nd_b"])
    opt_d.step(T.backward(l_d, nets.discriminator_params()))

    # -- generator update --
    fake_a = posterior_sample(posterior_params(xt_a, est_a, t, schedule), rng)
    fake_b = posterior_sample(posterior_params(xt_b, est_b, t, schedule), rng)
    g_diff_a = loss_g_adv(nets.disc_diff_a(fake_a, xt_a, t))
    g_diff_b = loss_g_adv(nets.disc_diff_b(fake_b, xt_b, t))
    g_nd_a = loss_g_adv(nets.disc_a(y_a))
    g_nd_b = loss_g_adv(nets.disc_b(y_b))
    cyc = loss_cycle(xa, xb, back_a, back_b, est_a, est_b)
    l_g = total_g(g_diff_a, g_diff_b, g_nd_a, g_nd_b, cyc, config.weights.lambda_cyc)
    opt_g.step(T.backward(l_g, nets.generator_params()))

    return {
        "L_G_total": l_g.item(),
        "L_D_total": l_d.item(),
        "L_cyc": cyc.item(),
        "L_G_adv_diff_A": g_diff_a.item(),
        "L_G_adv_diff_B": g_diff_b.item(),
        "L_G_adv_nd_A": g_nd_a.item(),
        "L_G_adv_nd_B": g_nd_b.item(),
        "L_D_adv_diff": losses_d["diff_a"].item() + losses_d["diff_b"].item(),
        "L_D_adv_nd": losses_d["nd_a"].item() + losses_d["nd_b"].item(),
    }


def _batches(pool_a: np.ndarray, pool_b: np.ndarray, batch: int, rng: np.random.Generator):
    """One pass over the larger pool; the smaller pool cycles, both shuffled."""
    n_a, n_b = len(pool_a), len(pool_b)
    big, small, flip = (pool_a, pool_b, False) if n_a >= n_b else (pool_b, pool_a, True)
    order_big = rng.permutation(len(big))
    idx_small = rng.permutation(len(small))
    pos = 0
    for start in range(0, len(big), batch):
        take = order_big[start : start + batch]
        chunk_big = big[take]
        picks = []
        for _ in range(len(take)):
            if pos == len(idx_small):
                idx_small = rng.permutation(len(small))
                pos = 0
            picks.append(idx_small[pos])
            pos += 1
        chunk_small = small[np.asarray(picks)]
        yield (chunk_small, chunk_big) if flip else (chunk_big, chunk_small)


def train(
    pools,
    config: TrainConfig,
    ckpt_path: str | None = None,
    log_path: str | None = None,
    net_config: NetConfig | None = None,
    progress: bool = False,
) -> dict:
    """Full training run over per-modality pools; writes checkpoint and TSV log."""
    pool_a = np.asarray(pools.images_a, dtype=np.float32)
    pool_b = np.asarray(pools.images_b, dtype=np.float32)
    if pool_a.size == 0 or pool_b.size == 0:
        raise ValueError("both training pools must be nonempty")
    if pool_a.ndim == 3:
        pool_a = pool_a[:, None]
        pool_b = pool_b[:, None]
    if net_config is None:
        net_config = NetConfig(image_size=pool_a.shape[-1])

    rng = np.random.default_rng(config.seed)
    nets = build_cycle_nets(net_config, rng)
    schedule = config.schedule()
    opt_g = Adam(nets.generator_params(), config.lr, config.adam_beta1, config.adam_beta2)
    opt_d = Adam(nets.discriminator_params(), config.lr, config.adam_beta1, config.adam_beta2)

    rows = []
    t_start = time.perf_counter()
    for epoch in range(config.epochs):
        for it, (batch_a, batch_b) in enumerate(_batches(pool_a, pool_b, config.batch_size, rng)):
            report = train_iteration(batch_a, batch_b, nets, schedule, config, rng, opt_g, opt_d)
            rows.append((epoch, it, report))
            if not all(math.isfinite(v) for v in report.values()):
                raise FloatingPointError(f"non-finite loss at epoch {epoch} iter {it}: {report}")
        if progress:
            last = rows[-1][2]
            print(
                f"epoch {epoch + 1}/{config.epochs}  L_G={last['L_G_total']:.4f}  "
                f"L_D={last['L_D_total']:.4f}  L_cyc={last['L_cyc']:.4f}  "
                f"[{time.perf_counter() - t_start:.0f}s]",
                flush=True,
            )

    if log_path is not None:
        _write_log(log_path, rows)
    if ckpt_path is not None:
        save_checkpoint(
            ckpt_path,
            nets,
            {"T": config.T, "k": config.k, "beta_min": config.beta_min, "beta_max": config.beta_max},
        )
    return {"nets": nets, "rows": rows, "seconds": time.perf_counter() - t_start}


def _write_log(path: str, rows) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\t".join(LOG_COLUMNS) + "\n")
            for epoch, it, report in rows:
                vals = [str(epoch), str(it)] + [f"{report[c]:.6f}" for c in LOG_COLUMNS[2:]]
                f.write("\t".join(vals) + "\n")
    except OSError as e:
        raise OSError(f"cannot write loss log {path}: {e}") from e
