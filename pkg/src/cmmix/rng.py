"""Counter-based random streams and truncated-distribution samplers.

Every random draw in a chain comes from a Philox generator whose 128-bit key
is derived from (seed, tag path). Streams for distinct tags never overlap, so
updates can be skipped, reordered, or run in parallel without disturbing the
draws of any other update.
"""

import hashlib

import numpy as np
from scipy.special import log_ndtr, ndtri_exp
from scipy.stats import gamma as gamma_dist


def _encode_tag(tag) -> bytes:
    if isinstance(tag, (bool, np.bool_)):
        raise TypeError("bool tags are ambiguous; use int or str")
    if isinstance(tag, (int, np.integer)):
        return b"i" + int(tag).to_bytes(8, "little", signed=True)
    if isinstance(tag, str):
        raw = tag.encode("utf-8")
        return b"s" + len(raw).to_bytes(2, "little") + raw
    raise TypeError(f"unsupported tag type: {type(tag)!r}")


class KeyedRng:
    """Derives independent ``numpy.random.Generator`` streams from tag paths."""

    def __init__(self, seed: int, _prefix: bytes = b""):
        self.seed = int(seed)
        self._prefix = _prefix

    def child(self, *tags) -> "KeyedRng":
        """A new key whose streams live under the extended tag path."""
        suffix = b"".join(_encode_tag(t) for t in tags)
        return KeyedRng(self.seed, self._prefix + suffix)

    def stream(self, *tags) -> np.random.Generator:
        msg = self._prefix + b"".join(_encode_tag(t) for t in tags)
        digest = hashlib.blake2b(
            msg, digest_size=16, key=self.seed.to_bytes(8, "little", signed=True)
        ).digest()
        entropy = int.from_bytes(digest, "little")
        return np.random.Generator(np.random.Philox(seed=np.random.SeedSequence(entropy)))


def truncated_normal(rng, mean, sd, lower, upper):
    """Draw from N(mean, sd^2) restricted to (lower, upper].

    Vectorized inverse-CDF in log-probability space: stable arbitrarily far
    into either tail (no interval-probability underflow), one uniform per
    draw. Bounds may be +-inf.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    a = (np.asarray(lower, dtype=float) - mean) / sd
    b = (np.asarray(upper, dtype=float) - mean) / sd
    a, b = np.broadcast_arrays(a, b)
    out_shape = a.shape
    a = np.atleast_1d(a).astype(float).copy()
    b = np.atleast_1d(b).astype(float).copy()

    # Work in the lower tail: intervals centered in the upper tail are
    # reflected so log_ndtr retains full precision.
    flip = a > -b
    a[flip], b[flip] = -b[flip], -a[flip]

    la = log_ndtr(a)
    lb = log_ndtr(b)
    u = rng.random(a.shape)
    # log of a uniform draw on (e^la, e^lb]; exp(la - lb) <= 1 by construction
    with np.errstate(divide="ignore"):
        logp = lb + np.log(u + (1.0 - u) * np.exp(la - lb))
    z = ndtri_exp(np.minimum(logp, 0.0))
    z[flip] = -z[flip]
    # Degenerate intervals (probability below float resolution) pin at a bound.
    degenerate = ~np.isfinite(z)
    if np.any(degenerate):
        mid = np.where(np.isfinite(a), a, b)
        z[degenerate] = np.where(flip, -mid, mid)[degenerate]
    z = z.reshape(out_shape)
    return np.broadcast_to(mean, out_shape) + np.broadcast_to(sd, out_shape) * z


def truncated_invgamma(rng, shape, rate, upper):
    """Draw from IG(shape, rate) restricted to (0, upper].

    Sampled through the precision: 1/x ~ gamma(shape, rate) restricted to
    [1/upper, inf), via the survival function of the gamma (stable when the
    truncation point sits far in the tail). ``upper`` may be +inf.
    """
    shape_arr, rate_arr, upper_arr = np.broadcast_arrays(
        np.asarray(shape, dtype=float),
        np.asarray(rate, dtype=float),
        np.asarray(upper, dtype=float),
    )
    u = rng.random(shape_arr.shape)
    with np.errstate(divide="ignore"):
        lam0 = np.where(np.isinf(upper_arr), 0.0, 1.0 / upper_arr)
    sf0 = gamma_dist.sf(lam0, shape_arr, scale=1.0 / rate_arr)
    lam = gamma_dist.isf(u * sf0, shape_arr, scale=1.0 / rate_arr)
    return 1.0 / lam


def sample_wishart(rng, df: float, scale: np.ndarray) -> np.ndarray:
    """Bartlett-decomposition draw from Wishart(df, scale)."""
    p = scale.shape[0]
    chol = np.linalg.cholesky(scale)
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    if p > 1:
        A[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    LA = chol @ A
    W = LA @ LA.T
    return 0.5 * (W + W.T)


def sample_invwishart(rng, df: float, scale: np.ndarray) -> np.ndarray:
    """Draw from inverse-Wishart(df, scale) via the Wishart of the inverse."""
    scale_inv = np.linalg.inv(scale)
    scale_inv = 0.5 * (scale_inv + scale_inv.T)
    W = sample_wishart(rng, df, scale_inv)
    out = np.linalg.inv(W)
    return 0.5 * (out + out.T)


def categorical_rows(rng, logprob: np.ndarray) -> np.ndarray:
    """Sample one category per row from unnormalized log-probabilities.

    Rows may contain -inf for excluded categories. Max-subtraction keeps the
    exponentiation stable; one uniform is consumed per row.
    """
    lp = np.asarray(logprob, dtype=float)
    m = np.max(lp, axis=1, keepdims=True)
    w = np.exp(lp - m)
    cum = np.cumsum(w, axis=1)
    u = rng.random((lp.shape[0], 1)) * cum[:, -1:]
    return (u > cum).sum(axis=1)
