"""Decay-rate regression and contrast classification of an indicator curve."""

import json
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from enclab.core.config import FitConfig
from enclab.core.exceptions import InsufficientDataError
from enclab.core.logger import get_logger
from enclab.core.models import Contrast, FitReport, IndicatorCurve, IndicatorRow


logger = get_logger("reconstruction.fit")


def _design(taus: np.ndarray, log_tau: bool) -> np.ndarray:
    columns = [np.ones_like(taus), taus]
    if log_tau:
        columns.append(np.log(taus))
    return np.column_stack(columns)


def decay_rate_fit(
    curve: IndicatorCurve,
    window: Optional[float] = None,
    cfg: Optional[FitConfig] = None,
) -> FitReport:
    """Least-squares fit of log|I_f| = c + s tau (+ q log tau) over the top of the ladder.

    l_hat = -s/2. Censored rows inside the window are dropped, never clamped.

    Raises:
        InsufficientDataError: fewer than ``min_rows`` uncensored rows in the window
    """
    cfg = cfg or FitConfig()
    window = window if window is not None else cfg.window
    rows = [r for r in curve.window(window) if not r.censored and r.value != 0.0]
    if len(rows) < cfg.min_rows:
        raise InsufficientDataError(
            f"{len(rows)} uncensored rows in the top {window:.0%} of the ladder, need {cfg.min_rows}"
        )
    taus = np.array([r.tau for r in rows])
    y = np.log(np.abs([r.value for r in rows]))
    X = _design(taus, cfg.log_tau)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(rows) - X.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    if rank == X.shape[1]:
        cov = sigma2 * np.linalg.inv(X.T @ X)
        slope_err = math.sqrt(max(cov[1, 1], 0.0))
    else:
        slope_err = math.inf

    slope = float(coef[1])
    l_hat = -slope / 2.0
    stderr = slope_err / 2.0
    violation = not curve.duration > 2.0 * l_hat
    if violation:
        logger.warning(f"T={curve.duration:.4g} <= 2 l_hat={2 * l_hat:.4g}: decay formula not applicable")
    report = FitReport(
        l_hat=l_hat,
        stderr=stderr,
        slope=slope,
        intercept=float(coef[0]),
        log_tau_coef=float(coef[2]) if cfg.log_tau else None,
        residual_rms=math.sqrt(float(np.mean(resid ** 2))),
        tau_low=float(taus.min()),
        tau_high=float(taus.max()),
        rows_used=len(rows),
        window=window,
        duration=curve.duration,
        regime_violation=violation,
        config_hash=curve.config_hash,
    )
    logger.info(f"l_hat = {l_hat:.6f} +/- {stderr:.2e} from {len(rows)} rows, tau in [{report.tau_low:.3g}, {report.tau_high:.3g}]")
    return report


def classify_contrast(curve: IndicatorCurve, window: float = 0.4, l_hat: Optional[float] = None) -> Contrast:
    """Sign of e^{tau T} I_f over the window: negative -> A_plus, positive -> A_minus.

    The sign only carries the contrast once T > 2 l; shorter curves are
    reported as indeterminate. ``l_hat`` defaults to the curve's reference
    optical distance.
    """
    l_value = l_hat if l_hat is not None else curve.l_reference
    if math.isfinite(l_value) and l_value > 0 and not curve.duration > 2.0 * l_value:
        logger.warning(f"T={curve.duration:.4g} <= 2 l={2 * l_value:.4g}: contrast left indeterminate")
        return Contrast.INDETERMINATE
    rows: List[IndicatorRow] = [r for r in curve.window(window) if not r.censored]
    if not rows:
        return Contrast.INDETERMINATE
    signs = {math.copysign(1.0, r.scaled) for r in rows if r.scaled != 0.0}
    if signs == {-1.0}:
        return Contrast.A_PLUS
    if signs == {1.0}:
        return Contrast.A_MINUS
    return Contrast.INDETERMINATE


def refit_consistency(
    curve: IndicatorCurve,
    cfg: Optional[FitConfig] = None,
    windows: Tuple[float, float] = (0.3, 0.4),
) -> Tuple[FitReport, FitReport, bool]:
    """Fit on two windows; consistent when l_hat moves by less than twice the larger stderr."""
    cfg = cfg or FitConfig()
    narrow_cfg = cfg.model_copy(update={"min_rows": min(cfg.min_rows, 3)})
    narrow = decay_rate_fit(curve, windows[0], narrow_cfg)
    wide = decay_rate_fit(curve, windows[1], cfg)
    consistent = abs(narrow.l_hat - wide.l_hat) < 2.0 * max(narrow.stderr, wide.stderr)
    return narrow, wide, consistent


def write_fit_report(
    report: FitReport,
    path: Union[str, Path],
    contrast: Optional[Contrast] = None,
    extra: Optional[dict] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    if contrast is not None:
        payload["contrast"] = contrast.value
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2))
    return path
