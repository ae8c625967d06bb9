"""Experiment protocols: control-error histograms, traversals,
correlations, convex-hull membership and violation/repair censuses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from ivsgen import arbitrage, cvae, repair
from ivsgen.features import FEATURE_NAMES, FeatureVector, extract_features_matrix
from ivsgen.surfaces import surface_from_flat

HIST_BINS = 25
HIST_RANGE = (-6.0, 0.0)
LOG_ERR_FLOOR = 1e-300  # avoids log10(0) for exact hits


@dataclass
class ExperimentReport:
    """Container for one experiment run; unused fields stay empty."""

    errors: dict[str, np.ndarray] = field(default_factory=dict)
    histograms: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    traversal_table: list[dict] = field(default_factory=list)
    pearson_coefficients: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def validate_counts(self) -> None:
        c = self.counts
        if c:
            assert c["valid"] + c["violations"] == c["total"]
            assert c["repaired"] + c["unrepaired"] == c["violations"]

    def to_dict(self) -> dict:
        return {
            "errors": {k: v.tolist() for k, v in self.errors.items()},
            "histograms": {
                k: {"counts": c.tolist(), "edges": e.tolist()}
                for k, (c, e) in self.histograms.items()
            },
            "traversal_table": self.traversal_table,
            "pearson_coefficients": self.pearson_coefficients,
            "counts": self.counts,
            "metadata": self.metadata,
        }


def pearson(a, b) -> float:
    """Sample Pearson correlation coefficient."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length vectors of size >= 2")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.sum(da**2)) * np.sqrt(np.sum(db**2))
    if denom == 0:
        raise ValueError("zero variance: correlation undefined")
    return float(np.sum(da * db) / denom)


def hull_membership(labels, query) -> bool:
    """Exact convex-hull membership by LP feasibility.

    ``labels``: (n, d) array or list of FeatureVector; ``query``: (d,)
    array or FeatureVector.  Raises on a degenerate (rank-deficient)
    label set.
    """
    pts = _label_matrix(labels)
    q = query.values if isinstance(query, FeatureVector) else np.asarray(query, dtype=np.float64)
    n, d = pts.shape
    if q.shape != (d,):
        raise ValueError("query dimension mismatch")
    centered = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-12) < d:
        raise ValueError("degenerate hull: labels do not span the feature space")
    a_eq = np.vstack([pts.T, np.ones(n)])
    b_eq = np.concatenate([q, [1.0]])
    res = linprog(np.zeros(n), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return bool(res.status == 0)


def _label_matrix(labels) -> np.ndarray:
    if isinstance(labels, np.ndarray):
        return labels
    return np.stack([lab.values for lab in labels])


# --------------------------------------------------------------------------
# sampling regimes
# --------------------------------------------------------------------------


def sample_y_in_hull(rng, label_mat: np.ndarray, n: int) -> np.ndarray:
    """Random convex combinations of dataset labels (guaranteed in-hull)."""
    n_labels = label_mat.shape[0]
    k = min(4, n_labels)
    idx = rng.integers(0, n_labels, size=(n, k))
    weights = rng.dirichlet(np.ones(k), size=n)
    return np.einsum("nk,nkd->nd", weights, label_mat[idx])


def sample_y_extended_box(rng, label_mat: np.ndarray, n: int, inflate: float = 0.2) -> np.ndarray:
    """Uniform in each feature's [min, max] inflated per side."""
    lo = label_mat.min(axis=0)
    hi = label_mat.max(axis=0)
    span = hi - lo
    return rng.uniform(lo - inflate * span, hi + inflate * span, size=(n, label_mat.shape[1]))


def sample_z(rng, n: int, d_z: int, regime: str = "central", bound: float = 3.0) -> np.ndarray:
    """'central': standard normal truncated to [-bound, bound] by rejection;
    'full': untruncated prior."""
    z = rng.standard_normal((n, d_z))
    if regime == "central":
        bad = np.abs(z) > bound
        while np.any(bad):
            z[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(z) > bound
    elif regime != "full":
        raise ValueError(f"unknown z regime {regime!r}")
    return z


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def _decode_batch(model: cvae.CvaeModel, y_mat: np.ndarray, z_mat: np.ndarray) -> np.ndarray:
    """Flat decoded surfaces for rows of (y, z)."""
    y_norm = (y_mat - model.y_mean) / model.y_std
    dec_in = np.concatenate([z_mat, y_norm], axis=1)
    (xhat_norm,), _ = model.decoder.forward(dec_in)
    raw = xhat_norm * model.x_std + model.x_mean
    return np.maximum(raw, cvae.DECODE_FLOOR)


def control_error_experiment(model: cvae.CvaeModel, n: int, label_mat: np.ndarray,
                             z_regime: str = "central", seed: int = 0) -> ExperimentReport:
    """Decode n (y, z) pairs and accumulate per-feature control errors."""
    report = ExperimentReport(metadata={"n": n, "seed": seed, "z_regime": z_regime,
                                        "model_hash": model.param_hash()})
    names = model.feature_names
    if n == 0:
        report.errors = {name: np.empty(0) for name in names}
        return report
    rng = np.random.default_rng(seed)
    cols = [FEATURE_NAMES.index(nm) for nm in names]
    y_mat = sample_y_in_hull(rng, label_mat[:, cols], n)
    z_mat = sample_z(rng, n, model.d_z, regime=z_regime)
    flat = _decode_batch(model, y_mat, z_mat)
    extracted = extract_features_matrix(flat, model.grid, names)
    errors = extracted - y_mat
    for k, name in enumerate(names):
        e = errors[:, k]
        report.errors[name] = e
        log_abs = np.clip(np.log10(np.abs(e) + LOG_ERR_FLOOR), *HIST_RANGE)
        counts, edges = np.histogram(log_abs, bins=HIST_BINS, range=HIST_RANGE)
        report.histograms[name] = (counts, edges)
    return report


def traversal(model: cvae.CvaeModel, vary: str, coordinate, values,
              y_base: FeatureVector, z_base: np.ndarray) -> list[dict]:
    """Decode along one varied coordinate; extract all four features per step.

    ``vary`` is 'z' (coordinate: latent index) or 'y' (coordinate:
    feature name).
    """
    rows = []
    for value in values:
        y = np.array(y_base.values, dtype=np.float64)
        z = np.array(z_base, dtype=np.float64)
        if vary == "z":
            z[int(coordinate)] = value
        elif vary == "y":
            y[list(y_base.names).index(coordinate)] = value
        else:
            raise ValueError("vary must be 'z' or 'y'")
        flat = _decode_batch(model, y[None, :], z[None, :])
        feats = extract_features_matrix(flat, model.grid, FEATURE_NAMES)[0]
        rows.append(
            {"value": float(value)}
            | {name: float(feats[k]) for k, name in enumerate(FEATURE_NAMES)}
        )
    return rows


def violation_census(model: cvae.CvaeModel, n: int, label_mat: np.ndarray,
                     y_regime: str = "in-hull", z_regime: str = "central",
                     seed: int = 0, repair_cfg: repair.RepairConfig | None = None,
                     do_repair: bool = True) -> ExperimentReport:
    """Generate, audit, repair violators, tabulate counts."""
    rng = np.random.default_rng(seed)
    names = model.feature_names
    cols = [FEATURE_NAMES.index(nm) for nm in names]
    labels = label_mat[:, cols]
    if y_regime == "in-hull":
        y_mat = sample_y_in_hull(rng, labels, n)
    elif y_regime == "extended-box":
        y_mat = sample_y_extended_box(rng, labels, n)
    else:
        raise ValueError(f"unknown y regime {y_regime!r}")
    z_mat = sample_z(rng, n, model.d_z, regime=z_regime)
    flat = _decode_batch(model, y_mat, z_mat)

    violations = []
    for i in range(n):
        surface = surface_from_flat(model.grid, flat[i])
        if not arbitrage.audit(surface).is_free:
            violations.append(i)

    repaired = 0
    if do_repair:
        for i in violations:
            y = FeatureVector(names=names, values=y_mat[i])
            result = repair.repair_surface(model, y, z_mat[i], repair_cfg)
            if result.repaired:
                repaired += 1
    counts = {
        "total": n,
        "valid": n - len(violations),
        "violations": len(violations),
        "repaired": repaired,
        "unrepaired": len(violations) - repaired,
    }
    report = ExperimentReport(
        counts=counts,
        metadata={
            "n": n, "seed": seed, "y_regime": y_regime, "z_regime": z_regime,
            "model_hash": model.param_hash(), "repair_run": do_repair,
        },
    )
    report.validate_counts()
    return report
