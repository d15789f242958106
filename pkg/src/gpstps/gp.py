"""Weighted sparse Gaussian process regression on inducing points.

The model keeps a free-form Gaussian ``q`` over the function values at a
small set of pseudo inputs.  Fitting maximizes a weighted evidence lower
bound in closed form: each observation enters the likelihood with its own
non-negative weight, which is how return-weighted policy updates reuse the
same regression machinery.  With as many pseudo inputs as observations and
unit weights the whole construction collapses to exact GP regression, and
the tests lean on that identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

__all__ = [
    "KernelParams",
    "NumericalError",
    "SparseGPModel",
    "WeightedDataset",
    "fit_weighted",
    "gram_matrix",
    "kernel_value",
    "model_from_dict",
    "model_to_dict",
    "optimize_hyperparameters",
    "predict",
    "predict_batch",
    "select_pseudo_inputs",
    "weighted_elbo",
]

# Relative jitter added to the pseudo-input Gram diagonal before a Cholesky
# factorization, escalated on failure.  Kept tiny so that the dense-limit
# identities (sparse == exact GP) hold to much better than 1e-6.
BASE_JITTER = 1e-14
MAX_JITTER = 1e-4


class NumericalError(RuntimeError):
    """Raised when a required matrix factorization fails even with jitter."""


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Squared-exponential kernel with one lengthscale per input dimension."""

    lengthscales: np.ndarray
    signal_variance: float = 1.0

    def __post_init__(self) -> None:
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty 1-d array")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0.0):
            raise ValueError("lengthscales must be finite and positive")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0.0):
            raise ValueError("signal_variance must be finite and positive")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))

    @property
    def dim(self) -> int:
        return self.lengthscales.size


def kernel_value(x: np.ndarray, y: np.ndarray, params: KernelParams) -> float:
    """Evaluate the kernel between two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = (x - y) / params.lengthscales
    return params.signal_variance * math.exp(-0.5 * float(z @ z))


def gram_matrix(xs: np.ndarray, ys: np.ndarray, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix between two point sets, shape (len(xs), len(ys)).

    No jitter is applied here; factorization sites add their own diagonal
    jitter (see ``BASE_JITTER``), so a Gram of duplicated points is returned
    as the exact rank-deficient matrix.
    """
    xs = _as_points(xs, params.dim)
    ys = _as_points(ys, params.dim)
    a = xs / params.lengthscales
    b = ys / params.lengthscales
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return params.signal_variance * np.exp(-0.5 * sq)


def _as_points(xs: np.ndarray, dim: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None] if dim == 1 else xs[None, :]
    if xs.ndim != 2 or (xs.size and xs.shape[1] != dim):
        raise ValueError(f"expected points of dimension {dim}, got shape {xs.shape}")
    return xs


def _chol_with_jitter(mat: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``mat`` plus escalating diagonal jitter.

    ``scale`` sets the jitter unit (the kernel signal variance for Gram
    matrices).  Raises :class:`NumericalError` with a condition estimate if
    even the largest jitter fails.
    """
    jitter = BASE_JITTER * scale
    eye = np.eye(mat.shape[0])
    while jitter <= MAX_JITTER * scale:
        try:
            return cholesky(mat + jitter * eye, lower=True), jitter
        except LinAlgError:
            jitter *= 100.0
    cond = float(np.linalg.cond(mat)) if mat.size else float("inf")
    raise NumericalError(
        f"Cholesky failed for {mat.shape[0]}x{mat.shape[0]} matrix even with "
        f"jitter {MAX_JITTER * scale:.3e} (condition estimate {cond:.3e})"
    )


# ---------------------------------------------------------------------------
# data and model containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightedDataset:
    """Inputs, scalar targets, and a non-negative weight per observation."""

    inputs: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        targets = np.asarray(self.targets, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if inputs.ndim != 2:
            raise ValueError("inputs must be a 2-d array of points")
        if len(inputs) != targets.size or targets.size != weights.size:
            raise ValueError(
                f"inconsistent lengths: {len(inputs)} inputs, "
                f"{targets.size} targets, {weights.size} weights"
            )
        if weights.size and (not np.all(np.isfinite(weights)) or np.any(weights < 0.0)):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.targets.size


@dataclass(frozen=True, eq=False)
class SparseGPModel:
    """Gaussian posterior over function values at the pseudo inputs.

    Attributes
    ----------
    pseudo_inputs : (M, d) array
    q_mean : (M,) array
        Mean of the Gaussian over pseudo-input function values.
    q_cov : (M, M) array
        Covariance of that Gaussian.
    prior_mean : float
        Constant prior mean of the latent function.
    noise_variance : float
        Gaussian observation noise variance.
    kernel : KernelParams
    """

    pseudo_inputs: np.ndarray
    q_mean: np.ndarray
    q_cov: np.ndarray
    prior_mean: float
    noise_variance: float
    kernel: KernelParams

    def __post_init__(self) -> None:
        z = _as_points(self.pseudo_inputs, self.kernel.dim)
        if len(z) == 0:
            raise ValueError("at least one pseudo input is required")
        q_mean = np.asarray(self.q_mean, dtype=float).ravel()
        q_cov = np.asarray(self.q_cov, dtype=float)
        if q_mean.size != len(z) or q_cov.shape != (len(z), len(z)):
            raise ValueError("q moments must match the number of pseudo inputs")
        if not (np.isfinite(self.noise_variance) and self.noise_variance > 0.0):
            raise ValueError("noise_variance must be finite and positive")
        object.__setattr__(self, "pseudo_inputs", z)
        object.__setattr__(self, "q_mean", q_mean)
        object.__setattr__(self, "q_cov", q_cov)
        object.__setattr__(self, "prior_mean", float(self.prior_mean))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "_cache", {})

    @classmethod
    def prior(
        cls,
        pseudo_inputs: np.ndarray,
        prior_mean: float,
        noise_variance: float,
        kernel: KernelParams,
    ) -> "SparseGPModel":
        """Model whose q equals the prior at the pseudo inputs."""
        z = _as_points(pseudo_inputs, kernel.dim)
        return cls(
            pseudo_inputs=z,
            q_mean=np.full(len(z), float(prior_mean)),
            q_cov=gram_matrix(z, z, kernel),
            prior_mean=prior_mean,
            noise_variance=noise_variance,
            kernel=kernel,
        )

    @property
    def num_pseudo(self) -> int:
        return len(self.pseudo_inputs)

    def _factors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cached whitened quantities (L, wm, G).

        L is the lower Cholesky factor of the jittered pseudo Gram,
        wm = L^-1 (q_mean - m), and G = L^-1 q_cov L^-T.  Every prediction
        quadratic form goes through a single triangular solve against L,
        which keeps the effective conditioning at sqrt(cond(Kzz)).
        """
        cache: dict = self.__dict__["_cache"]
        if "factors" not in cache:
            kzz = gram_matrix(self.pseudo_inputs, self.pseudo_inputs, self.kernel)
            low, _ = _chol_with_jitter(kzz, self.kernel.signal_variance)
            wm = solve_triangular(low, self.q_mean - self.prior_mean, lower=True)
            half = solve_triangular(low, self.q_cov, lower=True)
            g = solve_triangular(low, half.T, lower=True)
            cache["factors"] = (low, wm, 0.5 * (g + g.T))
        return cache["factors"]


# ---------------------------------------------------------------------------
# fitting and prediction
# ---------------------------------------------------------------------------


def fit_weighted(data: WeightedDataset, model: SparseGPModel) -> SparseGPModel:
    """Closed-form maximizer of the weighted evidence lower bound.

    With W the diagonal weight matrix and sn2 the noise variance,

        Lam    = Kzz + Kzx W Kxz / sn2
        q_cov  = Kzz Lam^-1 Kzz
        q_mean = m 1 + Kzz Lam^-1 Kzx W (y - m 1) / sn2

    which is the usual inducing-point posterior with each observation's
    precision scaled by its weight.  Hyperparameters, pseudo inputs, prior
    mean, and noise are taken from ``model`` unchanged.
    """
    z = model.pseudo_inputs
    if data.inputs.shape[1] != z.shape[1] and len(data) > 0:
        raise ValueError(
            f"data dimension {data.inputs.shape[1]} does not match "
            f"pseudo-input dimension {z.shape[1]}"
        )
    kzz = gram_matrix(z, z, model.kernel)
    low, _ = _chol_with_jitter(kzz, model.kernel.signal_variance)
    kzx = gram_matrix(z, data.inputs, model.kernel)
    sn2 = model.noise_variance

    # Work in coordinates whitened by L (the Cholesky factor of the pseudo
    # Gram): there Lam turns into P = I + H W H^T / sn2 with H = L^-1 Kzx,
    # whose eigenvalues are all >= 1.  Factorizing P instead of Lam keeps
    # the posterior accurate even when the Gram is nearly singular, which
    # is what the dense-limit identities in the tests exercise.
    h = solve_triangular(low, kzx, lower=True)
    p = np.eye(len(z)) + (h * data.weights) @ h.T / sn2
    try:
        p_low = cholesky(p, lower=True)
    except LinAlgError:
        cond = float(np.linalg.cond(p)) if np.all(np.isfinite(p)) else float("inf")
        raise NumericalError(
            f"weighted-fit system is singular (condition estimate {cond:.3e})"
        ) from None
    r0 = solve_triangular(low, kzx @ (data.weights * (data.targets - model.prior_mean)), lower=True)
    half = solve_triangular(p_low, r0, lower=True) / sn2
    wm = solve_triangular(p_low.T, half, lower=False)
    inv_half = solve_triangular(p_low, np.eye(len(z)), lower=True)
    g = inv_half.T @ inv_half
    q_mean = model.prior_mean + low @ wm
    q_cov = low @ g @ low.T
    fitted = replace(model, q_mean=q_mean, q_cov=0.5 * (q_cov + q_cov.T))
    fitted.__dict__["_cache"]["factors"] = (low, wm, 0.5 * (g + g.T))
    fitted.__dict__["_cache"]["p_low"] = p_low
    return fitted


def predict(model: SparseGPModel, x: np.ndarray) -> tuple[float, float]:
    """Posterior mean and variance of the latent function at one point."""
    mean, var = predict_batch(model, _as_points(x, model.kernel.dim))
    return float(mean[0]), float(var[0])


def predict_batch(
    model: SparseGPModel, xs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`predict` over rows of ``xs``; variances clamped at 0."""
    raw_mean, raw_var = _predict_raw(model, xs)
    return raw_mean, np.maximum(raw_var, 0.0)


def _predict_raw(
    model: SparseGPModel, xs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Prediction without the variance clamp (kept separate for testing)."""
    xs = _as_points(xs, model.kernel.dim)
    low, wm, g = model._factors()
    kxz = gram_matrix(xs, model.pseudo_inputs, model.kernel)
    v = solve_triangular(low, kxz.T, lower=True)
    mean = v.T @ wm + model.prior_mean
    lam = model.kernel.signal_variance - np.sum(v * v, axis=0)
    var = lam + np.sum(v * (g @ v), axis=0)
    return mean, var


def weighted_elbo(data: WeightedDataset, model: SparseGPModel) -> float:
    """Weighted evidence lower bound of ``model`` on ``data``.

    Sum of per-observation expected Gaussian log likelihoods, each scaled by
    its weight, minus the KL divergence from q to the prior at the pseudo
    inputs.  Evaluated at the output of :func:`fit_weighted` on the same
    data this is the tightest value for the given hyperparameters.
    """
    z = model.pseudo_inputs
    m = model.prior_mean
    sn2 = model.noise_variance
    low, wm, g = model._factors()

    ll = 0.0
    if len(data) > 0:
        kxz = gram_matrix(data.inputs, z, model.kernel)
        v = solve_triangular(low, kxz.T, lower=True)
        pred_mean = v.T @ wm + m
        lam = model.kernel.signal_variance - np.sum(v * v, axis=0)
        spread = np.sum(v * (g @ v), axis=0)
        resid = data.targets - pred_mean
        per_point = -0.5 * math.log(2.0 * math.pi * sn2) - (
            resid**2 + lam + spread
        ) / (2.0 * sn2)
        ll = float(data.weights @ per_point)

    # KL(q || prior) in whitened coordinates: with G = L^-1 q_cov L^-T the
    # divergence is (tr G + |wm|^2 - M - logdet G) / 2.  Models produced by
    # fit_weighted carry the factor of G^-1 = I + H W H^T / sn2, so their
    # trace and log-determinant come from a matrix bounded below by the
    # identity; otherwise G itself is factorized.
    p_low = model.__dict__["_cache"].get("p_low")
    if p_low is not None:
        inv_half = solve_triangular(p_low, np.eye(len(z)), lower=True)
        trace_g = float(np.sum(inv_half * inv_half))
        logdet_g = -2.0 * float(np.sum(np.log(np.diag(p_low))))
    else:
        g_low, _ = _chol_with_jitter(g, max(float(np.mean(np.diag(g))), 1e-300))
        trace_g = float(np.trace(g))
        logdet_g = 2.0 * float(np.sum(np.log(np.diag(g_low))))
    maha = float(wm @ wm)
    kl = 0.5 * (trace_g + maha - len(z) - logdet_g)
    return ll - kl


# ---------------------------------------------------------------------------
# hyperparameter search
# ---------------------------------------------------------------------------

_LOG_BOUNDS_LS = (math.log(1e-3), math.log(1e3))
_LOG_BOUNDS_SV = (math.log(1e-6), math.log(1e6))
_LOG_BOUNDS_NOISE = (math.log(1e-8), math.log(1e6))


def optimize_hyperparameters(
    data: WeightedDataset,
    model: SparseGPModel,
    budget: int,
    seed: int = 0,
    optimize_noise: bool = True,
    on_accept=None,
) -> SparseGPModel:
    """Derivative-free search over kernel (and optionally noise) parameters.

    Coordinate ascent in log space with multiplicative step proposals; a
    proposal is accepted only if refitting under it raises the weighted
    ELBO, so accepted values are non-decreasing.  Runs three restarts (the
    incoming parameters plus two seeded perturbations) within a total
    evaluation ``budget``.  ``budget <= 0`` returns ``model`` unchanged; a
    proposal whose bound is non-finite is rejected outright.

    ``on_accept``, if given, is called with the ELBO of every accepted
    parameter vector (the restart starting points included).
    """
    if budget <= 0:
        return model

    d = model.kernel.dim
    bounds = [_LOG_BOUNDS_LS] * d + [_LOG_BOUNDS_SV]
    theta0 = list(np.log(model.kernel.lengthscales)) + [
        math.log(model.kernel.signal_variance)
    ]
    if optimize_noise:
        bounds.append(_LOG_BOUNDS_NOISE)
        theta0.append(math.log(model.noise_variance))
    theta0 = np.clip(np.array(theta0), [b[0] for b in bounds], [b[1] for b in bounds])

    evals = 0

    def score(theta: np.ndarray):
        nonlocal evals
        evals += 1
        kern = KernelParams(
            lengthscales=np.exp(theta[:d]), signal_variance=math.exp(theta[d])
        )
        noise = math.exp(theta[d + 1]) if optimize_noise else model.noise_variance
        candidate = replace(model, kernel=kern, noise_variance=noise)
        try:
            fitted = fit_weighted(data, candidate)
            value = weighted_elbo(data, fitted)
        except NumericalError:
            return -math.inf, None
        if not math.isfinite(value):
            return -math.inf, None
        return value, fitted

    base_value, base_fit = score(theta0)
    if base_fit is None:
        return model
    if on_accept is not None:
        on_accept(base_value)
    best_value, best_fit = base_value, base_fit

    rng = np.random.default_rng(seed)
    starts = [theta0]
    for _ in range(2):
        starts.append(theta0 + rng.normal(0.0, 0.5, size=theta0.size))

    for start in starts:
        theta = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
        if np.array_equal(theta, theta0):
            current, current_fit = base_value, base_fit
        else:
            if evals >= budget:
                break
            current, current_fit = score(theta)
            if current_fit is None:
                continue
        if current > best_value:
            best_value, best_fit = current, current_fit
            if on_accept is not None:
                on_accept(current)
        steps = np.full(theta.size, math.log(2.0))
        while evals < budget:
            improved = False
            for i in range(theta.size):
                for sign in (1.0, -1.0):
                    if evals >= budget:
                        break
                    cand = theta.copy()
                    cand[i] = min(max(cand[i] + sign * steps[i], bounds[i][0]), bounds[i][1])
                    if cand[i] == theta[i]:
                        continue
                    value, fitted = score(cand)
                    if value > current:
                        theta, current, current_fit = cand, value, fitted
                        improved = True
                        if current > best_value:
                            best_value, best_fit = current, fitted
                            if on_accept is not None:
                                on_accept(current)
                        break
            if not improved:
                steps *= 0.5
                if float(np.max(steps)) < 1e-3:
                    break
    return best_fit


# ---------------------------------------------------------------------------
# pseudo-input selection
# ---------------------------------------------------------------------------


def select_pseudo_inputs(
    states: np.ndarray, weights: np.ndarray, m: int, seed: int
) -> np.ndarray:
    """Pick ``m`` pseudo inputs by weighted k-means over ``states``.

    Zero-weight states are dropped before clustering so they can never move
    a center.  Seeding follows k-means++ with probabilities proportional to
    weight times squared distance.  Coincident centers (fewer distinct
    states than ``m``) are separated afterwards by a uniform jitter of
    1e-3 times the input scale, so the returned centers are always pairwise
    distinct.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    weights = np.asarray(weights, dtype=float).ravel()
    if len(states) != weights.size or len(states) == 0:
        raise ValueError("states and weights must be equal-length and non-empty")
    keep = weights > 0.0
    if not np.any(keep):
        raise ValueError("at least one state must have positive weight")
    pts = states[keep]
    w = weights[keep]
    rng = np.random.default_rng(seed)

    centers = _kmeans_pp(pts, w, m, rng)
    centers = _lloyd(pts, w, centers)

    scale = float(np.max(np.ptp(pts, axis=0))) if len(pts) > 1 else 0.0
    if scale <= 0.0:
        scale = 1.0
    for _ in range(16):
        dup = _coincident_pairs(centers)
        if not dup:
            break
        for i in dup:
            centers[i] = centers[i] + rng.uniform(
                -1e-3 * scale, 1e-3 * scale, size=centers.shape[1]
            )
    return centers


def _kmeans_pp(
    pts: np.ndarray, w: np.ndarray, m: int, rng: np.random.Generator
) -> np.ndarray:
    probs = w / w.sum()
    first = rng.choice(len(pts), p=probs)
    centers = [pts[first]]
    for _ in range(1, m):
        d2 = np.min(
            np.sum((pts[:, None, :] - np.asarray(centers)[None, :, :]) ** 2, axis=2),
            axis=1,
        )
        mass = w * d2
        total = mass.sum()
        if total <= 0.0:
            # Every remaining point coincides with a center; duplicates get
            # separated by the caller's jitter pass.
            idx = rng.choice(len(pts), p=probs)
        else:
            idx = rng.choice(len(pts), p=mass / total)
        centers.append(pts[idx])
    return np.asarray(centers, dtype=float)


def _lloyd(pts: np.ndarray, w: np.ndarray, centers: np.ndarray) -> np.ndarray:
    centers = centers.copy()
    for _ in range(100):
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d2, axis=1)
        moved = 0.0
        for k in range(len(centers)):
            mask = assign == k
            mass = w[mask].sum()
            if mass <= 0.0:
                continue
            new = (w[mask] @ pts[mask]) / mass
            moved = max(moved, float(np.max(np.abs(new - centers[k]))))
            centers[k] = new
        if moved < 1e-12:
            break
    return centers


def _coincident_pairs(centers: np.ndarray) -> list[int]:
    """Indices of centers that exactly coincide with an earlier one."""
    dup: list[int] = []
    for i in range(1, len(centers)):
        diff = np.abs(centers[:i] - centers[i]).max(axis=1)
        if np.any(diff < 1e-12):
            dup.append(i)
    return dup


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: SparseGPModel) -> dict:
    """JSON-ready dictionary capturing the full model state."""
    return {
        "pseudo_inputs": model.pseudo_inputs.tolist(),
        "q_mean": model.q_mean.tolist(),
        "q_cov": model.q_cov.tolist(),
        "prior_mean": model.prior_mean,
        "noise_variance": model.noise_variance,
        "kernel": {
            "lengthscales": model.kernel.lengthscales.tolist(),
            "signal_variance": model.kernel.signal_variance,
        },
    }


def model_from_dict(doc: dict) -> SparseGPModel:
    kern = KernelParams(
        lengthscales=np.asarray(doc["kernel"]["lengthscales"], dtype=float),
        signal_variance=float(doc["kernel"]["signal_variance"]),
    )
    return SparseGPModel(
        pseudo_inputs=np.asarray(doc["pseudo_inputs"], dtype=float),
        q_mean=np.asarray(doc["q_mean"], dtype=float),
        q_cov=np.asarray(doc["q_cov"], dtype=float),
        prior_mean=float(doc["prior_mean"]),
        noise_variance=float(doc["noise_variance"]),
        kernel=kern,
    )
