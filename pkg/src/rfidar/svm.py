"""Multi-class RBF support vector machine.

Binary problems are solved with SMO using second-order working-set
selection (maximal violating pair for the first index, largest guaranteed
objective gain for the second). Multi-class uses one-vs-one voting.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureVector

log = logging.getLogger(__name__)

MAGIC = b"RFARSVM\x00"
FORMAT_VERSION = 1
_TAU = 1e-12
FULL_GRAM_LIMIT = 2000  # one shared Gram matrix across all pairs up to this many rows
PAIR_GRAM_LIMIT = 4096  # otherwise a per-pair Gram matrix up to this size (~128 MB)


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class FingerprintMismatch(ValueError):
    pass


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-gamma * (d @ d)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Pairwise RBF kernel between rows of ``A`` and rows of ``B``."""
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


# -- scaling ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(X) -> ScalerStats:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("fit_scaler needs a non-empty 2-D training set")
    return ScalerStats(X.mean(axis=0), X.std(axis=0))


def apply_scaler(stats: ScalerStats, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != len(stats.mean):
        raise ValueError(f"dimension mismatch: {X.shape[-1]} vs {len(stats.mean)}")
    ok = stats.std > 0
    safe = np.where(ok, stats.std, 1.0)
    return np.where(ok, (X - stats.mean) / safe, 0.0)


def default_gamma(Xs: np.ndarray) -> float:
    """1 / (d * mean per-dimension variance) of the scaled training features."""
    d = Xs.shape[1]
    v = float(Xs.var(axis=0).mean())
    return 1.0 / (d * v) if v > 0 else 1.0 / d


# -- binary SMO ---------------------------------------------------------------

class _KernelRows:
    """Kernel row provider: a full Gram matrix when small, else an LRU row cache."""

    def __init__(self, X: np.ndarray, gamma: float, gram: np.ndarray | None = None,
                 cache_rows: int = 256):
        self.X = X
        self.gamma = gamma
        self.sq = np.einsum("ij,ij->i", X, X)
        if gram is None and len(X) <= FULL_GRAM_LIMIT:
            gram = rbf_matrix(X, X, gamma)
        self.gram = gram
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cap = cache_rows

    def row(self, i: int) -> np.ndarray:
        if self.gram is not None:
            return self.gram[i]
        r = self._cache.get(i)
        if r is not None:
            self._cache.move_to_end(i)
            return r
        d2 = self.sq + self.sq[i] - 2.0 * (self.X @ self.X[i])
        r = np.exp(-self.gamma * np.maximum(d2, 0.0))
        self._cache[i] = r
        if len(self._cache) > self._cap:
            self._cache.popitem(last=False)
        return r

    def diag(self) -> np.ndarray:
        return np.ones(len(self.X))


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    iterations: int
    violation: float
    objective: float


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    """Maximisation form: sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo_solve(kernel: _KernelRows, y: np.ndarray, C: float, tol: float = 1e-3,
              max_iter: int | None = None) -> SmoResult:
    """Solve the soft-margin dual for labels ``y`` in {-1, +1}."""
    n = len(y)
    y = y.astype(float)
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 1/2 a'Qa - e'a
    QD = kernel.diag()
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    stall_limit = 10 * n
    pos = y > 0
    it = 0
    stall = 0
    violation = np.inf
    while it < max_iter:
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        score = -y * G
        if not up.any() or not low.any():
            violation = 0.0
            break
        s_up = np.where(up, score, -np.inf)
        i = int(np.argmax(s_up))
        m = s_up[i]
        M = float(np.min(np.where(low, score, np.inf)))
        violation = m - M
        if violation < tol:
            break
        Ki = kernel.row(i)
        b = m - score
        cand = low & (b > 0)
        a = QD[i] + QD - 2.0 * Ki
        a = np.where(a > 0, a, _TAU)
        gain = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        Kj = kernel.row(j)

        ai_old, aj_old = alpha[i], alpha[j]
        Kij = Ki[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] - 2.0 * Kij
            quad = quad if quad > 0 else _TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Kij
            quad = quad if quad > 0 else _TAU
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        dai, daj = ai - ai_old, aj - aj_old
        if dai == 0.0 and daj == 0.0:
            stall += 1
            if stall >= stall_limit:
                log.warning("SMO stalled after %d iterations (violation %.3g)", it, violation)
                break
        else:
            stall = 0
        alpha[i], alpha[j] = ai, aj
        # Q_it = y_i y_t K_it
        G += y * (y[i] * dai * Ki + y[j] * daj * Kj)
        it += 1
    else:
        log.warning("SMO hit max_iter=%d (violation %.3g)", max_iter, violation)

    bias = _bias(alpha, y, G, C)
    # G + e = Qa, so the max-form dual is e'a - 1/2 a'(G + e)
    obj = float(alpha.sum() - 0.5 * alpha @ (G + 1.0))
    return SmoResult(alpha, bias, it, float(violation), obj)


def _bias(alpha: np.ndarray, y: np.ndarray, G: np.ndarray, C: float) -> float:
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        pos = y > 0
        upper_side = ((alpha >= C) & ~pos) | ((alpha <= 0) & pos)
        lower_side = ((alpha >= C) & pos) | ((alpha <= 0) & ~pos)
        ub = yG[upper_side].min() if upper_side.any() else np.inf
        lb = yG[lower_side].max() if lower_side.any() else -np.inf
        if np.isfinite(ub) and np.isfinite(lb):
            rho = (ub + lb) / 2
        else:
            rho = float(ub if np.isfinite(ub) else lb)
    return -rho




@dataclass(frozen=True, eq=False)
class BinaryClassifier:
    """One pairwise classifier; ``f(x) > 0`` votes for ``pair[0]``.

    Support vectors are rows ``sv_index`` of a pool matrix: the training set
    for a standalone classifier, the model's shared pool otherwise. Sharing
    the pool keeps one-vs-one models from copying vectors per pair.
    """

    pair: tuple[int, int]
    sv_index: np.ndarray
    coef: np.ndarray  # alpha_i * y_i
    bias: float
    alpha: np.ndarray = field(repr=False)

    def decision_from_kernel(self, K_pool: np.ndarray) -> np.ndarray:
        if len(self.coef) == 0:
            return np.full(len(K_pool), self.bias)
        return K_pool[:, self.sv_index] @ self.coef + self.bias

    def decision(self, pool: np.ndarray, Xs, gamma: float) -> np.ndarray:
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if len(self.coef) == 0:
            return np.full(len(Xs), self.bias)
        return rbf_matrix(Xs, pool[self.sv_index], gamma) @ self.coef + self.bias


def smo_train_binary(X, labels, C: float = 10.0, gamma: float = 1.0, tol: float = 1e-3,
                     max_iter: int | None = None, pair: tuple[int, int] | None = None,
                     gram: np.ndarray | None = None) -> BinaryClassifier:
    """Train one binary classifier; the smaller label maps to +1.

    The working-set selection is deterministic, so no random state is needed:
    the result depends only on the data and instance order. ``sv_index``
    indexes rows of ``X``.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    classes = np.unique(labels)
    if len(classes) != 2:
        raise ValueError(f"binary training needs exactly two classes, got {len(classes)}")
    if C <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    p, q = (int(classes[0]), int(classes[1])) if pair is None else pair
    y = np.where(labels == classes[0], 1.0, -1.0)
    res = smo_solve(_KernelRows(X, gamma, gram), y, C, tol, max_iter)
    sv = np.flatnonzero(res.alpha > 0)
    return BinaryClassifier((p, q), sv, res.alpha[sv] * y[sv], res.bias, res.alpha[sv])


# -- multi-class model -------------------------------------------------------

@dataclass(frozen=True)
class SvmParams:
    C: float = 10.0
    gamma: float | None = None
    tol: float = 1e-3
    max_iter: int | None = None


@dataclass(frozen=True, eq=False)
class InstanceSet:
    """Feature matrix with labels and subject ids sharing one layout fingerprint."""

    X: np.ndarray
    y: np.ndarray
    fingerprint: str
    class_names: tuple[str, ...]
    subjects: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError("X must be 2-D with one row per label")
        subj = np.zeros(len(y), dtype=np.int64) if self.subjects is None else \
            np.asarray(self.subjects, dtype=np.int64)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "subjects", subj)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "InstanceSet":
        return InstanceSet(self.X[idx], self.y[idx], self.fingerprint, self.class_names,
                           self.subjects[idx])

    def with_X(self, X) -> "InstanceSet":
        return InstanceSet(X, self.y, self.fingerprint, self.class_names, self.subjects)

    def with_y(self, y) -> "InstanceSet":
        return InstanceSet(self.X, y, self.fingerprint, self.class_names, self.subjects)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[FeatureVector, int]],
                   class_names: Sequence[str] | None = None) -> "InstanceSet":
        if not pairs:
            raise ValueError("no instances")
        fps = {fv.layout_fingerprint for fv, _ in pairs}
        if len(fps) != 1:
            raise FingerprintMismatch(f"instances carry {len(fps)} different layout fingerprints")
        X = np.stack([fv.values for fv, _ in pairs])
        y = np.array([lab for _, lab in pairs])
        if class_names is None:
            class_names = [str(c) for c in range(int(y.max()) + 1)]
        return cls(X, y, fps.pop(), tuple(class_names))


@dataclass(frozen=True, eq=False)
class SvmModel:
    classes: tuple[int, ...]
    class_names: tuple[str, ...]
    classifiers: tuple[BinaryClassifier, ...]
    support_vectors: np.ndarray  # shared pool, scaled feature space
    gamma: float
    C: float
    scaler: ScalerStats
    fingerprint: str
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def dim(self) -> int:
        return len(self.scaler.mean)

    def label_name(self, cls_id: int) -> str:
        return self.class_names[cls_id] if 0 <= cls_id < len(self.class_names) else str(cls_id)


def train(instances: InstanceSet | Sequence[tuple[FeatureVector, int]],
          params: SvmParams = SvmParams(), metadata: dict | None = None) -> SvmModel:
    """Fit the scaler on all instances, then one SMO classifier per class pair."""
    if not isinstance(instances, InstanceSet):
        instances = InstanceSet.from_pairs(instances)
    X, y = instances.X, instances.y
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    present = set(int(c) for c in np.unique(y))
    missing = [name for c, name in enumerate(instances.class_names) if c not in present]
    if missing:
        raise ValueError(f"classes without instances: {', '.join(missing)}")
    classes = tuple(sorted(present))
    if len(classes) < 2:
        raise ValueError("training needs at least two classes")
    stats = fit_scaler(X)
    Xs = apply_scaler(stats, X)
    gamma = params.gamma if params.gamma is not None else default_gamma(Xs)

    full_gram = rbf_matrix(Xs, Xs, gamma) if len(Xs) <= FULL_GRAM_LIMIT else None
    raw = []
    for p, q in combinations(classes, 2):
        idx = np.flatnonzero((y == p) | (y == q))
        if full_gram is not None:
            gram = full_gram[np.ix_(idx, idx)]
        elif len(idx) <= PAIR_GRAM_LIMIT:
            gram = rbf_matrix(Xs[idx], Xs[idx], gamma)
        else:
            gram = None
        clf = smo_train_binary(Xs[idx], y[idx], params.C, gamma, params.tol,
                               params.max_iter, pair=(p, q), gram=gram)
        raw.append((idx[clf.sv_index], clf))
    used = np.unique(np.concatenate([rows for rows, _ in raw])) if raw else np.zeros(0, int)
    remap = {int(r): k for k, r in enumerate(used)}
    clfs = tuple(
        BinaryClassifier(c.pair, np.array([remap[int(r)] for r in rows], dtype=np.int64),
                         c.coef, c.bias, c.alpha)
        for rows, c in raw
    )
    return SvmModel(classes, instances.class_names, clfs, Xs[used], gamma, params.C, stats,
                    instances.fingerprint, dict(metadata or {}))


def decision_values(model: SvmModel, X) -> np.ndarray:
    """Pairwise decision values for unscaled rows of ``X`` (n x n_pairs)."""
    Xs = apply_scaler(model.scaler, np.atleast_2d(X))
    K = rbf_matrix(Xs, model.support_vectors, model.gamma)
    return np.stack([c.decision_from_kernel(K) for c in model.classifiers], axis=1)


def _vote(model: SvmModel, dec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(dec)
    col_of = {c: k for k, c in enumerate(model.classes)}
    rows = np.arange(n)
    votes = np.zeros((n, len(model.classes)), dtype=np.int64)
    strength = np.zeros((n, len(model.classes)))
    for col, clf in enumerate(model.classifiers):
        p, q = clf.pair
        winner = np.where(dec[:, col] >= 0, col_of[p], col_of[q])
        votes[rows, winner] += 1
        strength[rows, winner] += np.abs(dec[:, col])
    best = np.empty(n, dtype=np.int64)
    for r in range(n):
        tied = np.flatnonzero(votes[r] == votes[r].max())
        if len(tied) > 1:
            s = strength[r, tied]
            tied = tied[s == s.max()]
        best[r] = model.classes[tied[0]]
    return best, votes


def predict_many(model: SvmModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Predict unscaled rows of ``X``; returns (labels, votes per class in ``model.classes`` order)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {model.dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    return _vote(model, decision_values(model, X))


def predict(model: SvmModel, features: FeatureVector) -> tuple[int, np.ndarray]:
    """Majority vote over pairs; ties go to the larger summed |decision|, then the lowest id."""
    if features.layout_fingerprint != model.fingerprint:
        raise FingerprintMismatch(
            f"feature layout {features.layout_fingerprint} != model layout {model.fingerprint}")
    labels, votes = predict_many(model, features.values)
    return int(labels[0]), votes[0]


# -- persistence -------------------------------------------------------------
#
# little-endian container:
#   magic[8] | u16 version | u32 meta_len | meta (utf-8 json)
#   | u32 d | u32 n_pool | u32 n_pairs | f64 gamma | f64 C
#   | f64[d] scaler mean | f64[d] scaler std | f64[n_pool*d] support vector pool
#   | per pair: u32 p | u32 q | u32 n_sv | f64 bias | u32[n_sv] pool index
#               | f64[n_sv] coef | f64[n_sv] alpha
#   | sha256[32] over everything before it

_HEAD = "<IIIdd"
_PAIR = "<IIId"


def dumps_model(model: SvmModel) -> bytes:
    meta = json.dumps({
        "classes": list(model.classes),
        "class_names": list(model.class_names),
        "fingerprint": model.fingerprint,
        "metadata": model.metadata,
    }, sort_keys=True).encode()
    d = model.dim
    pool = np.asarray(model.support_vectors, dtype="<f8").reshape(-1, d)
    out = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(meta)), meta,
           struct.pack(_HEAD, d, len(pool), len(model.classifiers), model.gamma, model.C),
           np.asarray(model.scaler.mean, "<f8").tobytes(),
           np.asarray(model.scaler.std, "<f8").tobytes(), pool.tobytes()]
    for clf in model.classifiers:
        out.append(struct.pack(_PAIR, clf.pair[0], clf.pair[1], len(clf.coef), clf.bias))
        out += [np.asarray(clf.sv_index, "<u4").tobytes(),
                np.asarray(clf.coef, "<f8").tobytes(), np.asarray(clf.alpha, "<f8").tobytes()]
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


def loads_model(data: bytes) -> SvmModel:
    if len(data) < len(MAGIC) + 2 or data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    (version,) = struct.unpack_from("<H", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    body, digest = data[:-32], data[-32:]
    if len(data) < len(MAGIC) + 32 or hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("model checksum mismatch (corrupt or truncated file)")
    off = len(MAGIC) + 2

    def unpack(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, body, off)
        off += struct.calcsize(fmt)
        return vals

    def take(dtype, n):
        nonlocal off
        arr = np.frombuffer(body, dtype=dtype, count=n, offset=off)
        off += arr.itemsize * n
        return arr.astype(np.float64 if dtype == "<f8" else np.int64)

    (meta_len,) = unpack("<I")
    meta = json.loads(body[off:off + meta_len].decode())
    off += meta_len
    d, n_pool, n_pairs, gamma, C = unpack(_HEAD)
    mean, std = take("<f8", d), take("<f8", d)
    pool = take("<f8", n_pool * d).reshape(n_pool, d)
    clfs = []
    for _ in range(n_pairs):
        p, q, n_sv, bias = unpack(_PAIR)
        idx = take("<u4", n_sv)
        coef, alpha = take("<f8", n_sv), take("<f8", n_sv)
        clfs.append(BinaryClassifier((p, q), idx, coef, bias, alpha))
    if off != len(body):
        raise ModelFormatError("unexpected trailing bytes in model body")
    return SvmModel(tuple(meta["classes"]), tuple(meta["class_names"]), tuple(clfs), pool,
                    gamma, C, ScalerStats(mean, std), meta["fingerprint"], meta["metadata"],
                    version)


def save_model(model: SvmModel, path: str | Path) -> None:
    Path(path).write_bytes(dumps_model(model))


def load_model(path: str | Path) -> SvmModel:
    return loads_model(Path(path).read_bytes())
