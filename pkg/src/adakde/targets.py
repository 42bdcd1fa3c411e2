"""Synthetic target families with exact samplers, log-densities and scores.

Four scenarios are supported:

* ``GMD_F``      Gaussian mixtures from the pre-training prior
* ``GMD_F_PLUS`` the same prior with compact components
* ``BANANA``     autoregressive banana-shaped densities
* ``NOISY_TORUS`` one or two noisy circles, rotated and shifted

All ``log_density``/``score`` methods accept a single point ``(d,)`` or a
batch ``(m, d)``.
"""
from __future__ import annotations

import enum
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .kde import as_queries
from .linalg import LOG_2PI, backward_substitute_t, forward_substitute, log_sum_exp

# radius guard for the torus blocks; the folded density has a 1/s pole at s = 0
TORUS_RADIUS_GUARD = 1e-8


class Scenario(str, enum.Enum):
    GMD_F = "GMD_F"
    GMD_F_PLUS = "GMD_F_PLUS"
    BANANA = "BANANA"
    NOISY_TORUS = "NOISY_TORUS"

    @property
    def key(self) -> int:
        return list(Scenario).index(self)


@dataclass(frozen=True)
class ScenarioSpec:
    family: Scenario
    d: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Scenario(self.family))
        if self.d < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.d}")
        if self.family in (Scenario.BANANA, Scenario.NOISY_TORUS) and self.d < 2:
            raise ConfigError(f"{self.family.value} needs d >= 2, got {self.d}")


def haar_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-corrected)."""
    G = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(G)
    s = np.sign(np.diagonal(R))
    s[s == 0] = 1.0
    return Q * s[None, :]


class TargetModel(ABC):
    family: Scenario
    dim: int

    @abstractmethod
    def log_density(self, x): ...

    @abstractmethod
    def score(self, x): ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    @abstractmethod
    def to_dict(self) -> dict: ...

    def _queries(self, x):
        return as_queries(x, self.dim)


class GaussianMixture(TargetModel):
    """``sum_k w_k N(mu_k, L_k L_k^T)``."""

    def __init__(self, weights, means, chol, family: Scenario = Scenario.GMD_F):
        w = np.asarray(weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(means, dtype=np.float64))
        L = np.asarray(chol, dtype=np.float64)
        if L.ndim == 2:
            L = L[None]
        K, d = mu.shape
        if w.shape != (K,) or L.shape != (K, d, d):
            raise ValueError(f"inconsistent mixture shapes: w {w.shape}, mu {mu.shape}, L {L.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be a probability vector")
        if np.any(np.diagonal(L, axis1=1, axis2=2) <= 0):
            raise ValueError("component Cholesky factors need a positive diagonal")
        self.weights, self.means, self.chol = w, mu, np.tril(L)
        self.family = Scenario(family)
        self.dim = d
        with np.errstate(divide="ignore"):
            self._log_w = np.log(w)
        self._const = -0.5 * d * LOG_2PI - np.sum(np.log(np.diagonal(self.chol, axis1=1, axis2=2)), axis=1)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def _component_terms(self, q):
        # u[k] = L_k^{-1}(x - mu_k), shape (K, m, d)
        z = q[None, :, :] - self.means[:, None, :]
        u = forward_substitute(self.chol[:, None], z)
        logc = self._log_w[:, None] + self._const[:, None] - 0.5 * np.sum(u * u, axis=-1)
        return logc, u

    def log_density(self, x):
        q, single = self._queries(x)
        logc, _ = self._component_terms(q)
        out = log_sum_exp(logc, axis=0)
        return float(out[0]) if single else out

    def score(self, x):
        q, single = self._queries(x)
        logc, u = self._component_terms(q)
        resp = np.exp(logc - log_sum_exp(logc, axis=0)[None])
        # Sigma_k^{-1}(mu_k - x) = -L_k^{-T} u_k
        v = backward_substitute_t(self.chol[:, None], u)
        out = -np.einsum("km,kmd->md", resp, v)
        return out[0] if single else out

    def sample(self, rng, n):
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self.chol[comp], eps)

    def to_dict(self):
        return {
            "family": self.family.value,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "chol": self.chol.tolist(),
        }


class Banana(TargetModel):
    """``X_1 ~ N(0, s_1^2)``, ``X_k | X_{k-1} ~ N(b (X_{k-1}^2 - s_{k-1}^2), s_k^2)``."""

    family = Scenario.BANANA

    def __init__(self, b: float, sigmas):
        s = np.asarray(sigmas, dtype=np.float64)
        if s.ndim != 1 or s.size < 2 or np.any(~(s > 0)):
            raise ValueError("banana needs d >= 2 positive noise scales")
        self.b = float(b)
        self.sigmas = s
        self.dim = s.size

    def _residuals(self, q):
        mean = np.zeros_like(q)
        mean[:, 1:] = self.b * (q[:, :-1] ** 2 - self.sigmas[None, :-1] ** 2)
        return (q - mean) / self.sigmas[None, :]

    def log_density(self, x):
        q, single = self._queries(x)
        r = self._residuals(q)
        out = np.sum(-0.5 * LOG_2PI - np.log(self.sigmas)[None] - 0.5 * r * r, axis=1)
        return float(out[0]) if single else out

    def score(self, x):
        q, single = self._queries(x)
        r = self._residuals(q)
        t = r / self.sigmas[None, :]
        out = -t
        # feedback from the next conditional through its quadratic mean
        out[:, :-1] += t[:, 1:] * 2.0 * self.b * q[:, :-1]
        return out[0] if single else out

    def sample(self, rng, n):
        x = np.empty((n, self.dim))
        eps = rng.standard_normal((n, self.dim))
        x[:, 0] = self.sigmas[0] * eps[:, 0]
        for k in range(1, self.dim):
            x[:, k] = self.b * (x[:, k - 1] ** 2 - self.sigmas[k - 1] ** 2) + self.sigmas[k] * eps[:, k]
        return x

    def to_dict(self):
        return {"family": self.family.value, "b": self.b, "sigmas": self.sigmas.tolist()}


class NoisyTorus(TargetModel):
    """``X = mu + Q Y`` with ``Y`` made of noisy circles plus small Gaussian coordinates.

    Each circle block has signed radius ``R_j + sigma_r rho``.  Since ``(r, t)``
    and ``(-r, t + pi)`` land on the same point, the block density is exactly

        [phi(s - R_j) + phi(s + R_j)] / (2 pi s),   s = |block|.
    """

    family = Scenario.NOISY_TORUS

    def __init__(self, radii, sigma_r: float, sigma_perp: float, rotation, shift):
        R = np.atleast_1d(np.asarray(radii, dtype=np.float64))
        Q = np.asarray(rotation, dtype=np.float64)
        mu = np.asarray(shift, dtype=np.float64)
        d = mu.size
        if R.size not in (1, 2) or 2 * R.size > d:
            raise ValueError(f"{R.size} circle blocks do not fit in d={d}")
        if np.any(R < 0.25) or not (sigma_r > 0 and sigma_perp > 0):
            raise ValueError("radii must be >= 0.25 and noise levels positive")
        if Q.shape != (d, d) or np.linalg.norm(Q.T @ Q - np.eye(d)) > 1e-10:
            raise ValueError("rotation must be a d x d orthogonal matrix")
        self.radii, self.sigma_r, self.sigma_perp = R, float(sigma_r), float(sigma_perp)
        self.rotation, self.shift = Q, mu
        self.dim = d

    @property
    def k_blocks(self) -> int:
        return self.radii.size

    def _local(self, q):
        # row-vector form of y = Q^T (x - mu)
        return (q - self.shift[None]) @ self.rotation

    def _block_terms(self, y):
        sr = self.sigma_r
        logs, dlogs = [], []
        for j, R in enumerate(self.radii):
            blk = y[:, 2 * j : 2 * j + 2]
            s = np.sqrt(np.sum(blk * blk, axis=1))
            sc = np.maximum(s, TORUS_RADIUS_GUARD)
            a = -0.5 * ((sc - R) / sr) ** 2
            c = -0.5 * ((sc + R) / sr) ** 2
            lse = np.logaddexp(a, c)
            logs.append(lse - 0.5 * LOG_2PI - math.log(sr) - LOG_2PI - np.log(sc))
            wa = np.exp(a - lse)
            dlog_ds = (wa * -(sc - R) + (1.0 - wa) * -(sc + R)) / sr**2 - 1.0 / sc
            grad = np.where((s > TORUS_RADIUS_GUARD)[:, None], dlog_ds[:, None] * blk / sc[:, None], 0.0)
            dlogs.append(grad)
        return logs, dlogs

    def log_density(self, x):
        q, single = self._queries(x)
        y = self._local(q)
        logs, _ = self._block_terms(y)
        rest = y[:, 2 * self.k_blocks :]
        sp = self.sigma_perp
        out = sum(logs) + np.sum(-0.5 * LOG_2PI - math.log(sp) - 0.5 * (rest / sp) ** 2, axis=1)
        return float(out[0]) if single else out

    def score(self, x):
        q, single = self._queries(x)
        y = self._local(q)
        _, grads = self._block_terms(y)
        gy = np.concatenate(grads + [-y[:, 2 * self.k_blocks :] / self.sigma_perp**2], axis=1)
        out = gy @ self.rotation.T
        return out[0] if single else out

    def sample(self, rng, n):
        y = np.empty((n, self.dim))
        for j, R in enumerate(self.radii):
            theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
            rad = R + self.sigma_r * rng.standard_normal(n)
            y[:, 2 * j] = rad * np.cos(theta)
            y[:, 2 * j + 1] = rad * np.sin(theta)
        r_d = self.dim - 2 * self.k_blocks
        if r_d:
            y[:, 2 * self.k_blocks :] = self.sigma_perp * rng.standard_normal((n, r_d))
        return self.shift[None] + y @ self.rotation.T

    def to_dict(self):
        return {
            "family": self.family.value,
            "radii": self.radii.tolist(),
            "sigma_r": self.sigma_r,
            "sigma_perp": self.sigma_perp,
            "rotation": self.rotation.tolist(),
            "shift": self.shift.tolist(),
        }


def target_from_dict(data: dict) -> TargetModel:
    family = Scenario(data["family"])
    if family in (Scenario.GMD_F, Scenario.GMD_F_PLUS):
        return GaussianMixture(data["weights"], data["means"], data["chol"], family=family)
    if family is Scenario.BANANA:
        return Banana(data["b"], data["sigmas"])
    return NoisyTorus(data["radii"], data["sigma_r"], data["sigma_perp"], data["rotation"], data["shift"])


# eigenvalue ranges of the component covariances
GMD_EIGEN_RANGE = {Scenario.GMD_F: (0.25, 2.5), Scenario.GMD_F_PLUS: (0.15, 0.25)}


def _sample_gmm(family: Scenario, d: int, rng) -> GaussianMixture:
    K = int(rng.integers(1, 9))
    g = rng.gamma(0.8, 1.0, size=K)
    while not g.sum() > 0:
        g = rng.gamma(0.8, 1.0, size=K)
    w = g / g.sum()
    means = rng.uniform(-10.0, 10.0, size=(K, d))
    lo, hi = GMD_EIGEN_RANGE[family]
    chol = np.empty((K, d, d))
    for k in range(K):
        V = haar_rotation(d, rng)
        lam = rng.uniform(lo, hi, size=d)
        cov = (V * lam[None, :]) @ V.T
        chol[k] = np.linalg.cholesky(0.5 * (cov + cov.T))
    return GaussianMixture(w, means, chol, family=family)


def _sample_banana(d: int, rng) -> Banana:
    b = rng.uniform(0.08, 0.35)
    return Banana(b, rng.uniform(0.05, 0.30, size=d))


def _sample_torus(d: int, rng) -> NoisyTorus:
    k = 1 if d < 4 else 2
    sigma_r = rng.uniform(0.03, 0.06)
    sigma_perp = rng.uniform(0.004, 0.012)
    if k == 1:
        radii = [rng.uniform(2.0, 3.2)]
    else:
        r_out = rng.uniform(2.0, 3.2)
        gap = rng.uniform(1.0, 1.8)
        radii = [r_out, max(r_out - gap, 0.25)]
    Q = haar_rotation(d, rng)
    mu = rng.uniform(-1.0, 1.0, size=d)
    return NoisyTorus(radii, sigma_r, sigma_perp, Q, mu)


def sample_prior(spec: ScenarioSpec, rng: np.random.Generator) -> TargetModel:
    """Draw one target distribution from the scenario's parameter prior."""
    if spec.family in (Scenario.GMD_F, Scenario.GMD_F_PLUS):
        return _sample_gmm(spec.family, spec.d, rng)
    if spec.family is Scenario.BANANA:
        return _sample_banana(spec.d, rng)
    if spec.family is Scenario.NOISY_TORUS:
        return _sample_torus(spec.d, rng)
    raise ConfigError(f"unsupported scenario {spec.family}")
