"""Rolling-window backtests of the HAR family and its regime-switching extensions."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import coefcluster, gbt, hmm, otcluster
from .features import FEATURE_NAMES, RV_LAGS, VIX_LAGS, FeatureFrame, ZScaler, fit_scaler, lagged_regressors
from .linmod import DEFAULT_RIDGE, SingularDesignError, ols, ridge, wls
from .segment import SegmentSet, detect_changepoints

log = logging.getLogger(__name__)

FAMILIES = ("har", "markov", "dist_cluster", "coef_cluster")
MODES = ("nonrecursive", "single_recursive", "dual_recursive")
CLUSTER_FEATURES = RV_LAGS + VIX_LAGS


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    train_len: int = 441
    horizon: int = 5
    step: int | None = None

    def __post_init__(self):
        if self.horizon < 1 or self.train_len <= self.horizon:
            raise ValueError("need train_len > horizon >= 1")
        if self.step is not None and self.step < 1:
            raise ValueError("step must be >= 1")

    @property
    def stride(self) -> int:
        return self.step or self.horizon


@dataclass(frozen=True)
class HMMConfig:
    smooth_window: int = 5
    max_iter: int = 200
    tol: float = 1e-6


@dataclass(frozen=True)
class SegmentConfig:
    window: int = 21
    alpha: float = 0.01
    min_len: int = 30


@dataclass(frozen=True)
class ClusterConfig:
    cap: int = otcluster.DEFAULT_CAP
    sigma: float | None = None
    pca_threshold: float = 0.90
    ridge_lambda: float = DEFAULT_RIDGE


@dataclass(frozen=True)
class ClassifierConfig:
    n_iter: int = 20
    folds: int = 3
    freeze: bool = False
    params: gbt.GBTParams | None = None  # fixed parameters skip the search


@dataclass(frozen=True)
class ModelSpec:
    family: str
    K: int = 2
    mode: str = "nonrecursive"
    features: tuple[str, ...] | None = None
    name: str | None = None
    hmm: HMMConfig = HMMConfig()
    segment: SegmentConfig = SegmentConfig()
    cluster: ClusterConfig = ClusterConfig()
    classifier: ClassifierConfig = ClassifierConfig()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.family == "har" and self.K != 1:
            object.__setattr__(self, "K", 1)
        if self.features is not None:
            bad = set(self.features) - set(FEATURE_NAMES)
            if bad:
                raise ValueError(f"unknown feature(s) {sorted(bad)}")
            if self.mode != "nonrecursive" and set(self.features) & {"kts", "jmp"}:
                raise ValueError("recursive modes can only use RV and VIX lags")
            if self.mode == "single_recursive" and set(self.features) & set(VIX_LAGS):
                raise ValueError("single-recursive mode cannot use VIX lags")

    @property
    def label(self) -> str:
        return self.name or f"{self.family}_K{self.K}_{self.mode}"

    @property
    def feature_names(self) -> tuple[str, ...]:
        if self.features is not None:
            return tuple(self.features)
        if self.mode == "single_recursive":
            return RV_LAGS
        if self.mode == "dual_recursive":
            return RV_LAGS + VIX_LAGS
        if self.family == "coef_cluster":
            return tuple(n for n in FEATURE_NAMES if n != "jmp")
        return FEATURE_NAMES


@dataclass(frozen=True)
class ForecastRecord:
    date: np.datetime64
    window_id: int
    step: int
    y_true: float
    y_pred: float
    probs: np.ndarray
    n_regimes: int


@dataclass
class RegimeModelSet:
    """Per-regime linear models in z-scored units plus the regime router."""
    family: str
    feature_names: tuple[str, ...]
    scaler: ZScaler
    betas: np.ndarray  # (K, p + 1)
    hmm_model: hmm.GaussianHMM | None = None
    gamma_last: np.ndarray | None = None
    classifier: gbt.GBTModel | None = None
    vix_betas: np.ndarray | None = None
    vix_mean: float = 0.0
    vix_std: float = 1.0
    methods: tuple[str, ...] = ()
    info: dict = field(default_factory=dict)

    @property
    def n_regimes(self) -> int:
        return len(self.betas)

    def regime_probs(self, xz: np.ndarray, h: int) -> np.ndarray:
        K = self.n_regimes
        if K == 1:
            return np.ones(1)
        if self.family == "markov":
            return hmm.propagate(self.gamma_last, self.hmm_model.trans, h)
        p = gbt.class_probabilities(self.classifier, xz[None, :], K)[0]
        if self.family == "dist_cluster":
            hard = np.zeros(K)
            hard[int(np.argmax(p))] = 1.0
            return hard
        return p

    def regime_predictions(self, xz: np.ndarray, betas: np.ndarray | None = None) -> np.ndarray:
        b = self.betas if betas is None else betas
        return b[:, 0] + b[:, 1:] @ xz

    def predict(self, x_raw, h: int = 1) -> tuple[float, np.ndarray]:
        xz = self.scaler.apply_x(x_raw)
        p = self.regime_probs(xz, h)
        yz = float(p @ self.regime_predictions(xz))
        return float(self.scaler.invert_y(yz)), p

    def predict_vix(self, x_raw, p: np.ndarray) -> float:
        xz = self.scaler.apply_x(x_raw)
        vz = float(p @ self.regime_predictions(xz, self.vix_betas))
        return vz * self.vix_std + self.vix_mean


def _fit_regimes(Xz, yz, weights: np.ndarray, fallback_lam: float) -> tuple[np.ndarray, list[str]]:
    """WLS per weight column; sparse or singular regimes fall back to full-window OLS."""
    p = Xz.shape[1]
    betas, methods = [], []
    full = None
    for k in range(weights.shape[1]):
        w = weights[:, k]
        if weights.shape[1] == 1 and np.all(w == 1.0):
            fit, method = _ols_or_ridge(Xz, yz, fallback_lam)
            betas.append(fit.coefficients)
            methods.append(method)
            continue
        if w.sum() >= p + 2:
            try:
                betas.append(wls(Xz, yz, w).coefficients)
                methods.append("wls")
                continue
            except SingularDesignError:
                pass
        if full is None:
            full = _ols_or_ridge(Xz, yz, fallback_lam)
        betas.append(full[0].coefficients)
        methods.append("ols-fallback")
    return np.vstack(betas), methods


def _ols_or_ridge(X, y, lam):
    try:
        return ols(X, y), "ols"
    except SingularDesignError:
        return ridge(X, y, lam), "ridge-fallback"


def _classifier_params(cfg: ClassifierConfig, X, labels, seed: int, cache: dict | None):
    if cfg.params is not None:
        return cfg.params
    if cache is not None and cfg.freeze and "params" in cache:
        return cache["params"]
    params = gbt.GBTParams()
    if cfg.n_iter > 0 and len(np.unique(labels)) > 1 and len(labels) >= 3 * cfg.folds:
        params = gbt.random_search(X, labels, n_iter=cfg.n_iter, folds=cfg.folds, seed=seed).best
    if cache is not None and cfg.freeze:
        cache["params"] = params
    return params


def segment_window(yz, cfg: SegmentConfig) -> SegmentSet:
    if len(yz) < max(2 * cfg.window, cfg.min_len):
        return SegmentSet((), len(yz), cfg.min_len)
    return detect_changepoints(yz, cfg.window, cfg.alpha, cfg.min_len)


def fit_family(X_raw, y_raw, spec: ModelSpec, seed: int = 0, vix_target=None,
               cache: dict | None = None) -> RegimeModelSet:
    """Fit one family on a training window (raw units in, z-scored models out)."""
    names = spec.feature_names
    X_raw = np.asarray(X_raw, dtype=float)
    y_raw = np.asarray(y_raw, dtype=float)
    scaler = fit_scaler(X_raw, y_raw, names)
    Xz, yz = scaler.apply_x(X_raw), scaler.apply_y(y_raw)
    n = len(yz)
    lam = spec.cluster.ridge_lambda
    model = RegimeModelSet(spec.family, names, scaler, np.zeros((1, len(names) + 1)))

    if spec.family == "har" or spec.K == 1 and spec.family != "markov":
        weights = np.ones((n, 1))
    elif spec.family == "markov":
        ys = hmm.smooth(yz, spec.hmm.smooth_window)
        hm, track = hmm.fit(ys, spec.K, spec.hmm.max_iter, spec.hmm.tol, seed)
        model.hmm_model = hm
        model.gamma_last = track.gamma[-1]
        model.info["gamma"] = track.gamma
        weights = track.gamma
    elif spec.family == "dist_cluster":
        weights = _fit_dist_cluster(model, Xz, yz, spec, seed, cache)
    else:
        weights = _fit_coef_cluster(model, Xz, yz, spec, seed, cache)

    if spec.family == "dist_cluster" and weights.shape[1] > 1:
        betas, methods = [], []
        for k in range(weights.shape[1]):
            mask = weights[:, k] > 0
            fit, method = _ols_or_ridge(Xz[mask], yz[mask], lam)
            betas.append(fit.coefficients)
            methods.append(method)
        model.betas = np.vstack(betas)
    else:
        model.betas, methods = _fit_regimes(Xz, yz, weights, lam)
    model.methods = tuple(methods)
    model.info["weights"] = weights

    if spec.mode == "dual_recursive":
        if vix_target is None:
            raise ValueError("dual-recursive fitting needs the VIX target series")
        v = np.asarray(vix_target, dtype=float)
        model.vix_mean, model.vix_std = float(v.mean()), float(v.std())
        if not model.vix_std > 0:
            raise ValueError("zero-variance column(s): vix target")
        vz = (v - model.vix_mean) / model.vix_std
        if spec.family == "dist_cluster" and weights.shape[1] > 1:
            model.vix_betas = np.vstack([_ols_or_ridge(Xz[weights[:, k] > 0], vz[weights[:, k] > 0], lam)[0]
                                         .coefficients for k in range(weights.shape[1])])
        else:
            model.vix_betas, _ = _fit_regimes(Xz, vz, weights, lam)
    return model


def _fit_dist_cluster(model, Xz, yz, spec, seed, cache) -> np.ndarray:
    n = len(yz)
    segs = segment_window(yz, spec.segment)
    model.info["segments"] = segs
    k = min(spec.K, len(segs))
    labels = np.zeros(n, dtype=int)
    if k > 1:
        cols = [i for i, nm in enumerate(model.feature_names) if nm in CLUSTER_FEATURES]
        pts = np.column_stack([Xz[:, cols], yz])
        dists = [otcluster.SegmentDistribution(pts[s.start:s.stop]) for s in segs.segments]
        W = otcluster.pairwise_w2(dists, spec.cluster.cap)
        model.info["distances"] = W
        try:
            Kmat = otcluster.kernelize(W, spec.cluster.sigma)
        except otcluster.AllDistancesZero:
            Kmat = None
        if Kmat is not None:
            model.info["kernel"] = Kmat
            seg_labels = otcluster.spectral_cluster(Kmat, k, seed)
            model.info["segment_labels"] = seg_labels
            labels = otcluster.project_labels(segs, seg_labels) - 1
    present = np.unique(labels)
    labels = np.searchsorted(present, labels)
    K_eff = len(present)
    weights = np.zeros((n, K_eff))
    weights[np.arange(n), labels] = 1.0
    if K_eff > 1:
        params = _classifier_params(spec.classifier, Xz, labels, seed, cache)
        model.classifier = gbt.train(Xz, labels, params, seed, model.feature_names)
    return weights


def _fit_coef_cluster(model, Xz, yz, spec, seed, cache) -> np.ndarray:
    n = len(yz)
    segs = segment_window(yz, spec.segment)
    model.info["segments"] = segs
    K_max = min(spec.K, len(segs) - 1)
    if K_max < 2:
        return np.ones((n, 1))
    coefs = coefcluster.segment_coefficients(Xz, yz, segs, spec.cluster.ridge_lambda)
    thetas = np.vstack([c.theta for c in coefs])
    pca = coefcluster.pca_fit(thetas, spec.cluster.pca_threshold)
    Z = pca.apply(thetas)
    mix = coefcluster.bgmm_fit(Z, K_max, seed)
    resp, kept = coefcluster.drop_collapsed(mix.responsibilities(Z), mix.weights)
    model.info.update(coefficients=coefs, pca=pca, bgmm=mix, responsibilities=resp)
    if resp.shape[1] < 2:
        return np.ones((n, 1))
    weights = coefcluster.regime_weights(segs, resp)

    seg_means = np.vstack([Xz[s.start:s.stop].mean(axis=0) for s in segs.segments])
    labels = np.argmax(resp, axis=1)
    if len(seg_means) < 5 * resp.shape[1]:
        log.warning("classifier trained on %d segment means for %d regimes", len(seg_means), resp.shape[1])
    if len(np.unique(labels)) > 1:
        params = _classifier_params(spec.classifier, seg_means, labels, seed, cache)
    else:
        params = spec.classifier.params or gbt.GBTParams()
    model.classifier = gbt.train(seg_means, labels, params, seed, model.feature_names)
    return weights


def recursive_forecast(model: RegimeModelSet, rv_hist, vix_hist, h_max: int, mode: str
                       ) -> list[tuple[float, np.ndarray]]:
    """Multi-step forecasts that feed predictions back as lagged inputs.

    Only the realized RV and VIX histories up to the forecast origin are
    passed in; every later lag is a forecast. Single-recursive leaves the VIX
    buffer empty beyond the origin, dual-recursive fills it with forecasts
    from the auxiliary VIX equations.
    """
    if h_max < 1:
        raise ValueError("h_max must be >= 1")
    if mode not in ("single_recursive", "dual_recursive"):
        raise ValueError(f"mode {mode!r} is not recursive")
    if set(model.feature_names) & {"kts", "jmp"}:
        raise ValueError("recursive forecasts cannot use kurtosis or jump regressors")
    if mode == "dual_recursive" and model.vix_betas is None:
        raise ValueError("model has no VIX equations for dual-recursive forecasting")
    n0 = len(rv_hist)
    rv = np.concatenate([np.asarray(rv_hist, dtype=float), np.full(h_max, np.nan)])
    vix = np.concatenate([np.asarray(vix_hist, dtype=float)[:n0], np.full(h_max, np.nan)])
    blank = np.full(n0 + h_max, np.nan)
    cols = [FEATURE_NAMES.index(nm) for nm in model.feature_names]
    out = []
    for h in range(1, h_max + 1):
        end = n0 + h - 2
        x = lagged_regressors(rv, vix, blank, blank, end)[cols]
        if not np.all(np.isfinite(x)):
            raise PipelineError("recursive regressors read a value that is not yet available")
        y_hat, p = model.predict(x, h)
        if mode == "dual_recursive":
            vix[end + 1] = model.predict_vix(x, p)
        rv[end + 1] = y_hat
        out.append((y_hat, p))
    return out


def window_seed(master: int, origin: int) -> int:
    return int(np.random.SeedSequence([int(master), int(origin)]).generate_state(1)[0])


def forecast_block(frame: FeatureFrame, spec: ModelSpec, origin: int, train_len: int,
                   horizon: int, seed: int = 0, window_id: int = 0, cache: dict | None = None
                   ) -> list[ForecastRecord]:
    """Fit on rows ``origin - train_len + 1 .. origin`` and forecast the next ``horizon`` rows.

    Non-recursive forecasts use the realized regressor row of each target
    date (information dated before the target); recursive forecasts read
    only the aligned history up to the origin.
    """
    lo = origin - train_len + 1
    if lo < 0:
        raise PipelineError(f"window {window_id}: needs {train_len} training rows, only {origin + 1} available")
    if origin + horizon >= len(frame) + (0 if spec.mode == "nonrecursive" else horizon):
        raise PipelineError(f"window {window_id}: forecast rows beyond the frame")
    names = spec.feature_names
    X = frame.columns(names)
    vix_t = frame.vix_target()[lo:origin + 1] if spec.mode == "dual_recursive" else None
    try:
        model = fit_family(X[lo:origin + 1], frame.y[lo:origin + 1], spec, seed, vix_t, cache)
    except Exception as exc:
        raise PipelineError(f"{spec.family} window {window_id}: {exc}") from exc

    if spec.mode == "nonrecursive":
        preds = [model.predict(X[origin + h], h) for h in range(1, horizon + 1)]
    else:
        a = frame.aligned_index(origin)
        preds = recursive_forecast(model, frame.aligned.rv[:a + 1], frame.aligned.vix[:a + 1],
                                   horizon, spec.mode)
    records = []
    for h, (y_hat, p) in enumerate(preds, start=1):
        row = origin + h
        if not np.isfinite(y_hat):
            raise PipelineError(f"{spec.family} window {window_id}: non-finite forecast")
        y_true = float(frame.y[row]) if row < len(frame) else float("nan")
        date = frame.dates[row] if row < len(frame) else np.datetime64("NaT")
        records.append(ForecastRecord(date, window_id, h, y_true, y_hat, p, model.n_regimes))
    return records


def refit_origins(frame: FeatureFrame, window: WindowSpec, period=None, train_inside: bool = False
                  ) -> list[int]:
    """Origins of every full forecast block whose targets fall inside ``period``.

    ``train_inside`` reserves the first ``train_len`` rows of the period for
    the first training window instead of reading history before it.
    """
    dates = frame.dates
    if period is None:
        first = window.train_len
        last = len(frame) - 1
    else:
        start, end = (np.datetime64(p, "D") for p in period)
        inside = np.flatnonzero((dates >= start) & (dates <= end))
        if inside.size == 0:
            raise PipelineError(f"no frame rows inside period {start}..{end}")
        first, last = int(inside[0]), int(inside[-1])
        if train_inside:
            first += window.train_len
            if first > last:
                raise PipelineError(f"period {start}..{end} holds {inside.size} rows, "
                                    f"fewer than the {window.train_len}-row training window")
    if first < window.train_len:
        raise PipelineError(f"insufficient history: period starts at row {first}, "
                            f"needs {window.train_len} training rows before it")
    n_refits = (last - first + 1) // window.stride
    origins = [first - 1 + w * window.stride for w in range(n_refits)]
    return [o for o in origins if o + window.horizon <= last]


def run_backtest(frame: FeatureFrame, spec: ModelSpec, window: WindowSpec = WindowSpec(),
                 period=None, seed: int = 0, train_inside: bool = False) -> list[ForecastRecord]:
    cache: dict = {}
    records: list[ForecastRecord] = []
    for w, origin in enumerate(refit_origins(frame, window, period, train_inside)):
        records.extend(forecast_block(frame, spec, origin, window.train_len, window.horizon,
                                      window_seed(seed, origin), w, cache))
    return records


def write_records(records: Sequence[ForecastRecord], path, K: int | None = None) -> None:
    K = K or max((len(r.probs) for r in records), default=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "window_id", "y_true", "y_pred", *(f"p_regime_{k + 1}" for k in range(K))])
        for r in records:
            probs = list(r.probs) + [0.0] * (K - len(r.probs))
            w.writerow([str(r.date), r.window_id, repr(r.y_true), repr(r.y_pred),
                        *(repr(float(v)) for v in probs[:K])])
