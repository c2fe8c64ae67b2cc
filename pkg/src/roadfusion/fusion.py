"""Gaussian fusion of query logits with a retrieved-template prior.

Treating each class logit as a Gaussian measurement, the query value
(std sigma_q) is combined with the template value (std sigma_s scaled by
a per-class tempering factor omega) into a posterior mean. Two variance
rules are provided:

* ``as_published``: sigma*^2 = 1 / (sigma_q^2 + (omega sigma_s)^2)
* ``conjugate``:    sigma*^2 = 1 / (1/sigma_q^2 + 1/(omega sigma_s)^2)

Both share the mean x* = sigma*^2 (x_q/sigma_q^2 + x_s/(omega sigma_s)^2).
The conjugate rule is the standard precision-weighted update; the other
sums variances inside the reciprocal instead. They coincide whenever
sigma_q * omega * sigma_s = 1.

Omega rescales the prior spread per class from coverage consistency:
a prior whose coverage moved little between the top-k and the wider
top-ell set, while the query disagrees with the top-ell set, is trusted
more (small omega), and vice versa.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError, SchemaMismatchError
from .prior import ClassStats, CoverageVector, TemplatePrior, build_template
from .tensorio import LogitMap, LabelGrid

POSTERIOR_MODES = ("as_published", "conjugate")
UPDATE_SCOPES = ("road_candidates", "all_pixels")

DEFAULT_OMEGA_CLAMP = (1e-3, 1e3)


@dataclass(frozen=True)
class FusionConfig:
    """Knobs of the fusion step; validated on construction."""

    road_class: int
    k: int = 5
    ell: int = 10
    omega_clamp: tuple[float, float] = DEFAULT_OMEGA_CLAMP
    posterior_mode: str = "as_published"
    update_scope: str = "road_candidates"

    def __post_init__(self):
        if not 1 <= self.k < self.ell:
            raise ConfigError(f"need 1 <= k < ell, got k={self.k} ell={self.ell}")
        lo, hi = self.omega_clamp
        if not (0.0 < lo < hi):
            raise ConfigError(f"omega clamp must satisfy 0 < min < max, got {self.omega_clamp}")
        if self.posterior_mode not in POSTERIOR_MODES:
            raise ConfigError(f"unknown posterior mode {self.posterior_mode!r}")
        if self.update_scope not in UPDATE_SCOPES:
            raise ConfigError(f"unknown update scope {self.update_scope!r}")
        if self.road_class < 0:
            raise ConfigError("road class index must be non-negative")


@dataclass(frozen=True)
class FusedResult:
    """Output of one fusion: logits, per-class posterior spread and omega."""

    fused_logits: LogitMap
    posterior_sigma: np.ndarray  # (N_c,) float64
    omega: np.ndarray            # (N_c,) float64, clamped
    candidate_mask: np.ndarray   # (H, W) bool
    prediction: np.ndarray       # (H, W) uint8, argmax of fused_logits


def compute_tempering(c_q: CoverageVector, c_k: CoverageVector,
                      c_ell: CoverageVector,
                      clamp: tuple[float, float] = DEFAULT_OMEGA_CLAMP) -> np.ndarray:
    """Per-class omega = |C_ell - C_k| / |C_q - C_ell|, clamped.

    A zero denominator (query coverage matches the wider reference set)
    maps to clamp max: the prior adds nothing and is maximally down
    weighted. A zero numerator maps to clamp min.
    """
    if c_q.coverage.shape != c_k.coverage.shape or c_q.coverage.shape != c_ell.coverage.shape:
        raise SchemaMismatchError("coverage vectors must share the class schema")
    lo, hi = clamp
    numer = np.abs(c_ell.coverage - c_k.coverage)
    denom = np.abs(c_q.coverage - c_ell.coverage)
    omega = np.full_like(numer, hi)
    nonzero = denom != 0.0
    omega[nonzero] = np.clip(numer[nonzero] / denom[nonzero], lo, hi)
    return omega


def posterior_update(x_q, sigma_q, x_s, sigma_s, omega, mode: str):
    """Posterior (mean, std) of one class logit; works on scalars or arrays.

    All sigma and omega inputs must be positive (callers floor them).
    """
    scaled = omega * sigma_s
    var_q = sigma_q * sigma_q
    var_s = scaled * scaled
    if mode == "as_published":
        var_star = 1.0 / (var_q + var_s)
    elif mode == "conjugate":
        var_star = 1.0 / (1.0 / var_q + 1.0 / var_s)
    else:
        raise ConfigError(f"unknown posterior mode {mode!r}")
    x_star = var_star * (x_q / var_q + x_s / var_s)
    return x_star, np.sqrt(var_star)


def road_candidate_mask(query_pred: np.ndarray, template_pred: np.ndarray,
                        road_class: int) -> np.ndarray:
    """Pixels where either prediction grid equals the target class."""
    if query_pred.shape != template_pred.shape:
        raise SchemaMismatchError(
            f"prediction grids differ in shape: {query_pred.shape} vs {template_pred.shape}"
        )
    return (query_pred == road_class) | (template_pred == road_class)


def fuse(query: LogitMap, template: TemplatePrior, stats_q: ClassStats,
         stats_s: ClassStats, c_q: CoverageVector, c_k: CoverageVector,
         c_ell: CoverageVector, cfg: FusionConfig) -> FusedResult:
    """Fuse a query logit map with its template prior.

    The posterior is evaluated for every class at every candidate pixel;
    all other pixels keep the query logits bit for bit.
    """
    prior = template.mean_logits
    if prior.values.shape != query.values.shape:
        raise SchemaMismatchError(
            f"template shape {prior.values.shape} does not match query {query.values.shape}"
        )
    num_classes = query.num_classes
    if cfg.road_class >= num_classes:
        raise ConfigError(f"road class {cfg.road_class} outside schema of {num_classes} classes")

    omega = compute_tempering(c_q, c_k, c_ell, cfg.omega_clamp)
    query_pred = query.argmax()
    if cfg.update_scope == "road_candidates":
        mask = road_candidate_mask(query_pred, prior.argmax(), cfg.road_class)
    else:
        mask = np.ones(query_pred.shape, dtype=bool)

    sigma_q = stats_q.sigma.astype(np.float64)
    sigma_s = stats_s.sigma.astype(np.float64)
    _, posterior_sigma = posterior_update(0.0, sigma_q, 0.0, sigma_s, omega,
                                          cfg.posterior_mode)

    fused = query.values.copy()
    if mask.any():
        x_q = query.values[mask].astype(np.float64)
        x_s = prior.values[mask].astype(np.float64)
        x_star, _ = posterior_update(x_q, sigma_q[None, :], x_s, sigma_s[None, :],
                                     omega[None, :], cfg.posterior_mode)
        fused[mask] = x_star.astype(np.float32)

    fused_map = LogitMap(values=fused)
    return FusedResult(fused_logits=fused_map, posterior_sigma=posterior_sigma,
                       omega=omega, candidate_mask=mask,
                       prediction=fused_map.argmax())


def prior_only_predict(template: TemplatePrior) -> np.ndarray:
    """Prediction from the template alone: argmax of its mean logits."""
    return template.mean_logits.argmax()


def dataset_avg_prior(references: list[LogitMap], target_h: int, target_w: int,
                      source_ids: list[str] | None = None) -> TemplatePrior:
    """Static baseline prior: the mean over the whole reference set."""
    return build_template(references, target_h, target_w, source_ids)


def gt_to_pseudologits(labels: LabelGrid, class_confidence) -> LogitMap:
    """Turn a label grid into logits that softmax back to set confidences.

    A pixel labeled c gets logit ln(p_c (N_c - 1) / (1 - p_c)) for class c
    and 0 for the rest, so softmax assigns probability p_c to c. Undefined
    pixels get the all-zero (indifferent) vector.
    """
    conf = np.asarray(class_confidence, dtype=np.float64)
    if conf.ndim != 1 or conf.size < 2:
        raise ConfigError("need one confidence per class, at least two classes")
    if np.any(conf <= 0.0) or np.any(conf >= 1.0):
        raise ConfigError("class confidences must lie strictly inside (0, 1)")
    num_classes = conf.size

    grid = labels.values
    defined = grid != labels.undefined_id
    ids = grid[defined].astype(np.int64)
    if ids.size and int(ids.max()) >= num_classes:
        raise DataFormatError(
            f"label id {int(ids.max())} outside schema of {num_classes} classes"
        )

    # Kept float64: storing at file precision would cost the inversion
    # property more than the 1e-9 it is held to.
    logit_of = np.log(conf * (num_classes - 1) / (1.0 - conf))
    out = np.zeros((grid.shape[0], grid.shape[1], num_classes), dtype=np.float64)
    rows, cols = np.nonzero(defined)
    out[rows, cols, ids] = logit_of[ids]
    return LogitMap(values=out)
