"""Overfitting statistics over recovery-error samples.

The detector reduces each target set to its median recovery error, compares
train and validation sets through the normalized gap
(MRE_val - MRE_train) / MRE_val, and tests distribution equality with a
two-sample Kolmogorov-Smirnov statistic. Verdict thresholds: p < 1% or
gap > 10% flag overfitting. A Frechet distance over a toy feature map is
included as the distribution-level baseline that fails to see memorization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng, derive_seed

VERDICT_P_THRESHOLD = 0.01
VERDICT_GAP_THRESHOLD = 0.10
_P_FLOOR = 1e-300  # underflow guard so p stays in (0, 1]


@dataclass
class ErrorSampleSet:
    label: str  # train | validation | generated | distorted
    errors: list[float]

    def __post_init__(self):
        if not self.errors:
            raise ValueError("empty error sample set")
        arr = np.asarray(self.errors, dtype=np.float64)
        if not np.all(np.isfinite(arr)) or arr.min() < 0:
            raise ValueError("recovery errors must be finite and >= 0")


def median(values) -> float:
    """Lower median: the 1-based ceil(n/2)-th order statistic."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("median of empty sequence")
    return float(np.partition(arr, (arr.size - 1) // 2)[(arr.size - 1) // 2])


def mre_gap(mre_train: float, mre_val: float) -> float:
    """(MRE_val - MRE_train) / MRE_val; negative when train errors exceed val."""
    if mre_val <= 0:
        raise ValueError("mre_val must be positive")
    return (mre_val - mre_train) / mre_val


def ks_statistic(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| over the pooled sample points."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_statistic needs non-empty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _kolmogorov_sf(lam: float) -> float:
    """Two-sided Kolmogorov survival function 2 sum (-1)^(k-1) exp(-2 k^2 lam^2)."""
    if lam <= 0:
        return 1.0
    total, sign, k = 0.0, 1.0, 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += sign * term
        if term < 1e-12 or k > 100000:
            break
        sign = -sign
        k += 1
    return 2.0 * total


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS test: (d, asymptotic p).

    p uses the Kolmogorov distribution with the small-sample correction
    lam = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * d, ne = n*m/(n+m), clamped
    into (0, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = ks_statistic(a, b)
    ne = a.size * b.size / (a.size + b.size)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    p = _kolmogorov_sf(lam)
    return d, min(max(p, _P_FLOOR), 1.0)


def permutation_p(a, b, iterations: int, rng: Rng) -> float:
    """Monte-Carlo p for the KS statistic under label shuffling.

    Fraction of shuffles with d >= observed d, with add-one smoothing. This
    is the model-free oracle the asymptotic formula is tested against.
    """
    if iterations < 100:
        raise ValueError("iterations must be >= 100")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d_obs = ks_statistic(a, b)
    pooled = np.concatenate([a, b])
    n = a.size
    hits = 0
    for _ in range(iterations):
        perm = rng.permutation(pooled.size)
        shuffled = pooled[perm]
        if ks_statistic(shuffled[:n], shuffled[n:]) >= d_obs - 1e-15:
            hits += 1
    return (hits + 1) / (iterations + 1)


# ---------------------------------------------------------------------------
# Frechet distance between Gaussian fits (toy feature map, no Inception)


def toy_feature_map(images: np.ndarray) -> np.ndarray:
    """Flattened 4x4 average pooling of an (n, c, h, w) batch -> (n, 16*c)."""
    n, c, h, w = images.shape
    k = h // 4
    pooled = images.reshape(n, c, 4, k, 4, w // 4).mean(axis=(3, 5))
    return pooled.reshape(n, -1)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric matrix square root; negative eigenvalues clamped to zero."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_gaussian_distance(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^0.5 Sb Sa^0.5)^0.5).

    Covariances use the n-1 normalization; when a side has fewer than dim+1
    samples its covariance is ridged by 1e-6 I.
    """
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ValueError(f"feature sets must be (n, d) with equal d: {fa.shape} vs {fb.shape}")
    dim = fa.shape[1]
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False).reshape(dim, dim)
    cov_b = np.cov(fb, rowvar=False).reshape(dim, dim)
    if fa.shape[0] < dim + 1:
        cov_a = cov_a + 1e-6 * np.eye(dim)
    if fb.shape[0] < dim + 1:
        cov_b = cov_b + 1e-6 * np.eye(dim)
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    mean_term = float(((mu_a - mu_b) ** 2).sum())
    return mean_term + float(np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))


# ---------------------------------------------------------------------------
# histograms


@dataclass
class Histogram:
    bin_edges: np.ndarray
    counts: dict[str, np.ndarray]


def histogram(samples_by_label: dict[str, list[float]], bin_count: int) -> Histogram:
    """Shared equal-width bins over the pooled range, counts per label."""
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    pooled = np.concatenate([np.asarray(v, dtype=np.float64) for v in samples_by_label.values()])
    if pooled.size == 0:
        raise ValueError("histogram of empty pool")
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bin_count + 1)
    counts = {
        label: np.histogram(np.asarray(v, dtype=np.float64), bins=edges)[0]
        for label, v in samples_by_label.items()
    }
    return Histogram(edges, counts)


def histogram_to_csv(hist: Histogram) -> str:
    labels = sorted(hist.counts)
    lines = ["bin_lo,bin_hi," + ",".join(f"count_{label}" for label in labels)]
    for i in range(len(hist.bin_edges) - 1):
        row = [f"{hist.bin_edges[i]:.10e}", f"{hist.bin_edges[i + 1]:.10e}"]
        row += [str(int(hist.counts[label][i])) for label in labels]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# the audit proper


@dataclass
class AuditReport:
    mre_train: float
    mre_val: float
    mre_gap: float
    ks_d: float
    ks_p: float
    overfit_by_p: bool
    overfit_by_gap: bool
    mre_generated: float | None = None
    mre_distorted: float | None = None
    errors: dict[str, list[float]] | None = None

    def verdict_consistent(self) -> bool:
        return self.overfit_by_p == (self.ks_p < VERDICT_P_THRESHOLD) and self.overfit_by_gap == (
            self.mre_gap > VERDICT_GAP_THRESHOLD
        )


AUDIT_CSV_HEADER = "model,ks_p,mre_gap,mre_train,mre_val,mre_generated,mre_small_distort\n"


def audit_csv_row(name: str, report: AuditReport) -> str:
    def fmt(x):
        return "N/A" if x is None else f"{x:.6e}"

    return (
        f"{name},{report.ks_p:.6e},{report.mre_gap:.6e},{fmt(report.mre_train)},"
        f"{fmt(report.mre_val)},{fmt(report.mre_generated)},{fmt(report.mre_distorted)}\n"
    )


def audit_from_errors(
    train_errors: list[float],
    val_errors: list[float],
    generated_errors: list[float] | None = None,
    distorted_errors: list[float] | None = None,
) -> AuditReport:
    """Assemble the report from already-computed recovery errors."""
    mt = median(train_errors)
    mv = median(val_errors)
    gap = mre_gap(mt, mv)
    d, p = ks_two_sample(train_errors, val_errors)
    errors = {"train": list(train_errors), "validation": list(val_errors)}
    if generated_errors is not None:
        errors["generated"] = list(generated_errors)
    if distorted_errors is not None:
        errors["distorted"] = list(distorted_errors)
    return AuditReport(
        mre_train=mt,
        mre_val=mv,
        mre_gap=gap,
        ks_d=d,
        ks_p=p,
        overfit_by_p=p < VERDICT_P_THRESHOLD,
        overfit_by_gap=gap > VERDICT_GAP_THRESHOLD,
        mre_generated=None if generated_errors is None else median(generated_errors),
        mre_distorted=None if distorted_errors is None else median(distorted_errors),
        errors=errors,
    )


def audit(
    model,
    train_images: np.ndarray,
    val_images: np.ndarray,
    cfg=None,
    n_generated: int = 0,
    distortion=None,
    threads: int = 1,
) -> AuditReport:
    """Recover train and validation targets under one configuration and
    assemble the overfitting report.

    ``model`` is either a generator Model (recovery by optimization) or an
    (encoder, generator) pair (recovery by autoencoding). Optionally also
    recovers ``n_generated`` fresh samples and a distorted copy of the train
    targets (the "small distort" column).
    """
    from .distortions import distort_dataset
    from .models import generate, sample_latents
    from .recovery import PhiOperator, RecoveryConfig, recover_aegan, recover_set

    if cfg is None:
        cfg = RecoveryConfig()
    aegan = isinstance(model, tuple)
    generator = model[1] if aegan else model
    phi = PhiOperator.identity()

    def errors_for(images) -> list[float]:
        if aegan:
            encoder = model[0]
            return [recover_aegan(encoder, generator, img).final_mse for img in images]
        rng = Rng(derive_seed(cfg.seed, "audit-recovery"), 0)
        return [r.final_mse for r in recover_set(generator, images, phi, cfg, rng, threads)]

    train_errors = errors_for(train_images)
    val_errors = errors_for(val_images)
    generated_errors = None
    if n_generated > 0 and not aegan:
        z = sample_latents(
            n_generated, generator.spec.latent_dim, Rng(derive_seed(cfg.seed, "audit-gen-latents"), 0)
        )
        generated_errors = errors_for(generate(generator, z).data)
    distorted_errors = None
    if distortion is not None:
        distorted = distort_dataset(distortion, np.asarray(train_images), derive_seed(cfg.seed, "audit"))
        distorted_errors = errors_for(distorted)
    return audit_from_errors(train_errors, val_errors, generated_errors, distorted_errors)
