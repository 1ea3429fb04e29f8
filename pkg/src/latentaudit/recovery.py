"""Latent recovery: nearest-neighbor search in a generator's output manifold.

For a target image y, minimize mean((phi(G(z)) - phi(y))^2) over the latent z
(LBFGS by default, standard-normal restarts). Errors are per-element means on
the phi-domain, so the plausible/verbatim thresholds carry across resolutions
and operators. AEGAN-style models skip the optimization entirely and report
the autoencoding residual with z* = E(y).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .models import Model, encode, generate
from .optim import MinimizeResult, OptimizerConfig, minimize
from .rng import Rng

PLAUSIBLE_MSE = 0.1
VERBATIM_MSE = 0.025
NN_RECOVERED_MRE = 0.024


@dataclass(frozen=True)
class PhiOperator:
    """Linear observation operator applied to both G(z) and y in the loss.

    kinds: identity | mask (binary (h, w) map, 1 = observed) |
    avgpool (factor k) | crop (top, left, height, width).
    """

    kind: str = "identity"
    mask: np.ndarray | None = None
    pool_factor: int = 0
    rect: tuple[int, int, int, int] | None = None

    @staticmethod
    def identity() -> "PhiOperator":
        return PhiOperator("identity")

    @staticmethod
    def masked(mask: np.ndarray) -> "PhiOperator":
        m = np.asarray(mask, dtype=np.float64)
        if m.ndim != 2 or not np.all((m == 0) | (m == 1)):
            raise ValueError("mask must be a 2-d {0,1} map")
        return PhiOperator("mask", mask=m)

    @staticmethod
    def avgpool(k: int) -> "PhiOperator":
        if k < 1:
            raise ValueError("pool factor must be >= 1")
        return PhiOperator("avgpool", pool_factor=int(k))

    @staticmethod
    def crop(top: int, left: int, height: int, width: int) -> "PhiOperator":
        return PhiOperator("crop", rect=(top, left, height, width))

    def n_elements(self, image_shape: tuple[int, int, int]) -> int:
        """Number of phi-domain elements, the MSE normalizer."""
        c, h, w = image_shape
        if self.kind == "identity":
            return c * h * w
        if self.kind == "mask":
            if self.mask.shape != (h, w):
                raise ShapeError(f"mask {self.mask.shape} vs image {(h, w)}")
            nnz = int(self.mask.sum())
            if nnz == 0:
                raise ValueError("mask has empty support; loss is degenerate")
            return c * nnz
        if self.kind == "avgpool":
            if h % self.pool_factor or w % self.pool_factor:
                raise ShapeError(f"pool factor {self.pool_factor} does not divide {(h, w)}")
            return c * (h // self.pool_factor) * (w // self.pool_factor)
        t, l, hh, ww = self.rect
        if not (0 <= t and 0 <= l and t + hh <= h and l + ww <= w and hh > 0 and ww > 0):
            raise ShapeError(f"crop rectangle {self.rect} outside image {(h, w)}")
        return c * hh * ww


def apply_phi(op: PhiOperator, image: Tensor | np.ndarray) -> Tensor:
    """Apply the operator to (..., c, h, w); differentiable through the tape.

    The mask kind keeps the image shape and zeroes unobserved pixels;
    avgpool and crop return reduced images.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    if op.kind == "identity":
        return x
    if op.kind == "mask":
        return ad.mask_mul(x, op.mask)
    if op.kind == "avgpool":
        return ad.avgpool(x, op.pool_factor)
    return ad.crop2d(x, *op.rect)


@dataclass(frozen=True)
class RecoveryConfig:
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(kind="lbfgs", max_iters=100))
    restarts: int = 1
    loss: str = "l2"  # l2 | l1
    plausible_threshold: float = PLAUSIBLE_MSE
    verbatim_threshold: float = VERBATIM_MSE
    seed: int = 0

    def validate(self) -> None:
        if self.restarts < 1 or self.restarts > 10:
            raise ValueError("restarts must be in [1, 10]")
        if self.loss not in ("l2", "l1"):
            raise ValueError(f"unknown recovery loss {self.loss!r}")
        if self.plausible_threshold <= 0 or self.verbatim_threshold <= 0:
            raise ValueError("thresholds must be positive")
        self.optimizer.validate()


@dataclass
class RecoveryResult:
    best_z: np.ndarray
    final_mse: float
    restart_errors: list[float]
    trace: list[float]
    plausible: bool
    verbatim: bool
    stalled: bool
    iterations: int

    @staticmethod
    def csv_header() -> str:
        return "target_id,set_label,final_mse,restarts,iterations,plausible,verbatim\n"

    def csv_row(self, target_id: int, set_label: str) -> str:
        return (
            f"{target_id},{set_label},{self.final_mse:.10e},{len(self.restart_errors)},"
            f"{self.iterations},{int(self.plausible)},{int(self.verbatim)}\n"
        )


def results_to_csv(results: Sequence[RecoveryResult], set_label: str, start_id: int = 0) -> str:
    out = [RecoveryResult.csv_header()]
    out += [r.csv_row(start_id + i, set_label) for i, r in enumerate(results)]
    return "".join(out)


def _phi_mse(op: PhiOperator, gen_out: Tensor, phi_target: Tensor, n_elem: int, loss: str) -> Tensor:
    diff = ad.sub(apply_phi(op, gen_out), phi_target)
    total = ad.squared_l2(diff) if loss == "l2" else ad.l1_norm(diff)
    return ad.smul(total, 1.0 / n_elem)


def recover_one(
    model: Model,
    target: np.ndarray,
    phi: PhiOperator,
    cfg: RecoveryConfig,
    rng: Rng,
) -> RecoveryResult:
    """Best-of-restarts latent recovery of one target image.

    Each restart draws z0 ~ N(0, I) from ``rng`` and minimizes the phi-domain
    loss; the restart with the lowest final objective wins. final_mse is
    always the squared-error mean (recomputed when optimizing L1).
    """
    cfg.validate()
    spec = model.spec
    tgt = np.asarray(target, dtype=np.float64)
    if tgt.shape == spec.image_shape:
        tgt = tgt[None]
    if tgt.shape != (1, *spec.image_shape):
        raise ShapeError(f"target {tgt.shape} vs model image shape {spec.image_shape}")
    n_elem = phi.n_elements(spec.image_shape)
    phi_target = apply_phi(phi, Tensor(tgt)).detach()
    zdim = spec.latent_dim

    def objective(z: Tensor) -> Tensor:
        out = generate(model, ad.reshape(z, (1, zdim)))
        return _phi_mse(phi, out, phi_target, n_elem, cfg.loss)

    best: MinimizeResult | None = None
    restart_errors: list[float] = []
    all_stalled = True
    for _ in range(cfg.restarts):
        z0 = rng.normals(zdim)
        res = minimize(objective, z0, cfg.optimizer)
        restart_errors.append(res.fmin)
        all_stalled = all_stalled and res.stalled
        if best is None or res.fmin < best.fmin:
            best = res
    z_best = best.x.data
    if cfg.loss == "l2":
        final_mse = best.fmin
    else:
        out = generate(model, z_best.reshape(1, zdim))
        final_mse = _phi_mse(phi, out, phi_target, n_elem, "l2").item()
    return RecoveryResult(
        best_z=z_best,
        final_mse=final_mse,
        restart_errors=restart_errors,
        trace=[best.f0, *best.trace],
        plausible=final_mse < cfg.plausible_threshold,
        verbatim=final_mse < cfg.verbatim_threshold,
        stalled=all_stalled,
        iterations=best.iterations,
    )


def recover_set(
    model: Model,
    targets: Sequence[np.ndarray] | np.ndarray,
    phi: PhiOperator,
    cfg: RecoveryConfig,
    rng: Rng,
    threads: int = 1,
) -> list[RecoveryResult]:
    """recover_one per target, target i on stream_id i of rng's seed.

    Per-target streams make results independent of evaluation order and of
    the thread count.
    """
    targets = list(targets)
    if not targets:
        raise ValueError("recover_set needs at least one target")

    def run(i: int) -> RecoveryResult:
        return recover_one(model, targets[i], phi, cfg, rng.substream(i))

    if threads <= 1 or len(targets) == 1:
        return [run(i) for i in range(len(targets))]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, range(len(targets))))


def recover_aegan(encoder: Model, generator: Model, target: np.ndarray) -> RecoveryResult:
    """Autoencoder route: z* = E(y), error = mean((G(E(y)) - y)^2), no iterations."""
    tgt = np.asarray(target, dtype=np.float64)
    if tgt.shape == generator.spec.image_shape:
        tgt = tgt[None]
    if tgt.shape != (1, *generator.spec.image_shape):
        raise ShapeError(f"target {tgt.shape} vs model image shape {generator.spec.image_shape}")
    z = encode(encoder, tgt).data
    recon = generate(generator, z).data
    final_mse = float(((recon - tgt) ** 2).mean())
    return RecoveryResult(
        best_z=z[0],
        final_mse=final_mse,
        restart_errors=[final_mse],
        trace=[final_mse],
        plausible=final_mse < PLAUSIBLE_MSE,
        verbatim=final_mse < VERBATIM_MSE,
        stalled=False,
        iterations=0,
    )


def success_rate(results: Sequence[RecoveryResult], threshold: float) -> float:
    """Fraction of recoveries with final_mse below the threshold."""
    if not results:
        raise ValueError("success_rate of empty result list")
    return sum(1 for r in results if r.final_mse < threshold) / len(results)
