"""Recommender models: popularity, SVD projectors, and attentive tensor factorizations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .attention import AttentionMatrix, build_attention, shift_left, triangular_restore
from .linalg import ImplicitMatrix, random_orthonormal, skew_block_cache, truncated_svd

__all__ = [
    "ColdUserError",
    "ScalingDiag",
    "build_scaling",
    "MPModel",
    "SVDModel",
    "GlobalAttentionModel",
    "LocalAttentionModel",
    "GlobalAttentionTrainer",
    "LocalAttentionTrainer",
    "train_mp",
    "train_puresvd",
    "train_gasatf",
    "train_lasatf",
    "ga_mode_operator",
    "la_mode_operator",
    "predict_next",
    "save_model",
    "load_model",
]

MODEL_FORMAT_VERSION = 1


class ColdUserError(ValueError):
    pass


@dataclass(frozen=True)
class ScalingDiag:
    """Per-item popularity scaling d_j = count_j ** ((s - 1) / 2)."""

    d: np.ndarray = field(repr=False)
    s: float


def build_scaling(counts, s, neutral_missing=False):
    """Scaling diagonal from per-item interaction counts.

    ``s = 1`` disables scaling. Zero-count items are an error (filtering leaves
    every item with at least one interaction) unless ``neutral_missing`` is set,
    which assigns them the neutral weight 1 so catalogs shared across time
    splits remain usable.
    """
    counts = np.asarray(counts, dtype=float)
    if s == 1:
        return ScalingDiag(d=np.ones(len(counts)), s=1.0)
    zero = counts == 0
    if zero.any():
        if not neutral_missing:
            raise ValueError(f"{int(zero.sum())} items have zero interactions")
        counts = np.where(zero, 1.0, counts)
    return ScalingDiag(d=counts ** ((s - 1.0) / 2.0), s=float(s))


def _project_scores(v, scaling, regime, p):
    """Item-space projection of a preference vector, with optional debias regime."""
    if regime == "plain":
        return v @ (v.T @ p)
    if regime == "restored":
        d = scaling.d
        return (v @ (v.T @ (d * p))) / d
    raise ValueError(f"unknown regime {regime!r}")


# ---------------------------------------------------------------------------
# baselines


@dataclass(frozen=True)
class MPModel:
    counts: np.ndarray = field(repr=False)

    kind = "mp"

    @property
    def n_items(self):
        return len(self.counts)

    @property
    def ranking(self):
        return np.lexsort((np.arange(self.n_items), -self.counts))

    def score_history(self, history):
        return self.counts.astype(float)


def train_mp(train):
    return MPModel(counts=train.item_counts())


@dataclass(frozen=True)
class SVDModel:
    v: np.ndarray = field(repr=False)
    scaling: ScalingDiag
    regime: str

    kind = "svd"

    @property
    def n_items(self):
        return self.v.shape[0]

    def score_history(self, history):
        p = np.zeros(self.n_items)
        p[np.asarray(history, dtype=np.int64)] = 1.0
        return _project_scores(self.v, self.scaling, self.regime, p)


def train_puresvd(train, r, s=1.0, regime="plain", seed=0):
    """Top-r right singular vectors of the popularity-scaled binary matrix."""
    m, n = train.n_users, train.n_items
    if r > min(m, n):
        raise ValueError(f"rank {r} infeasible for a {m} x {n} matrix")
    scaling = build_scaling(train.item_counts(), s, neutral_missing=True)
    x = sp.csr_matrix(
        (np.ones(len(train)), (train.users, train.items)), shape=(m, n)
    ) @ sp.diags(scaling.d)
    xt = x.T.tocsr()
    op = ImplicitMatrix(shape=(n, m), matvec=lambda z: xt @ z, rmatvec=lambda z: x @ z)
    v, _ = truncated_svd(op, r, seed=seed)
    return SVDModel(v=v, scaling=scaling, regime=regime)


# ---------------------------------------------------------------------------
# globally attentive tensor factorization


def ga_mode_operator(tensor, factors, attention, scaling, mode):
    """Implicit compressed unfolding of the weighted positional tensor.

    The approximated object is the tensor scaled by the item diagonal on mode 2
    with the attention transpose applied on mode 3; entries stream in COO form
    and no unfolding or Kronecker product is ever materialized.
    """
    ii, jj, kk = tensor.users, tensor.items, tensor.positions - 1
    m, n, k = tensor.shape
    d = scaling.d
    dvals = d[jj]
    if mode == 1:
        v, w_a = factors["V"], factors["W_A"]
        r2, r3 = v.shape[1], w_a.shape[1]
        if w_a.shape[0] != k or v.shape[0] != n:
            raise ValueError("factor shapes do not match tensor dimensions")

        def matvec(z):
            zm = np.asarray(z).reshape(r3, r2)
            contrib = dvals * np.einsum("ea,ea->e", w_a[kk] @ zm, v[jj])
            return np.bincount(ii, weights=contrib, minlength=m)

        def rmatvec(u):
            w = np.asarray(u)[ii] * dvals
            return (w_a[kk].T @ (v[jj] * w[:, None])).ravel()

        return ImplicitMatrix(shape=(m, r3 * r2), matvec=matvec, rmatvec=rmatvec)
    if mode == 2:
        u, w_a = factors["U"], factors["W_A"]
        r1, r3 = u.shape[1], w_a.shape[1]
        if w_a.shape[0] != k or u.shape[0] != m:
            raise ValueError("factor shapes do not match tensor dimensions")

        def matvec(z):
            zm = np.asarray(z).reshape(r3, r1)
            contrib = dvals * np.einsum("ea,ea->e", w_a[kk] @ zm, u[ii])
            return np.bincount(jj, weights=contrib, minlength=n)

        def rmatvec(uu):
            w = np.asarray(uu)[jj] * dvals
            return (w_a[kk].T @ (u[ii] * w[:, None])).ravel()

        return ImplicitMatrix(shape=(n, r3 * r1), matvec=matvec, rmatvec=rmatvec)
    if mode == 3:
        u, v = factors["U"], factors["V"]
        r1, r2 = u.shape[1], v.shape[1]
        if u.shape[0] != m or v.shape[0] != n:
            raise ValueError("factor shapes do not match tensor dimensions")

        def matvec(z):
            zm = np.asarray(z).reshape(r2, r1)
            contrib = dvals * np.einsum("ea,ea->e", v[jj] @ zm, u[ii])
            fibers = np.bincount(kk, weights=contrib, minlength=k)
            return attention.apply_transpose(fibers)

        def rmatvec(uu):
            b = attention.apply(np.asarray(uu))
            w = dvals * b[kk]
            return (v[jj].T @ (u[ii] * w[:, None])).ravel()

        return ImplicitMatrix(shape=(k, r2 * r1), matvec=matvec, rmatvec=rmatvec)
    raise ValueError(f"mode must be 1, 2, or 3, got {mode}")


@dataclass(frozen=True)
class GlobalAttentionModel:
    """Tensor factorization with whole-sequence positional attention."""

    v: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    w_hat: np.ndarray = field(repr=False)
    attention: AttentionMatrix
    scaling: ScalingDiag
    regime: str
    ranks: tuple

    kind = "global"

    @property
    def n_items(self):
        return self.v.shape[0]

    @property
    def max_position(self):
        return self.attention.size

    def score_history(self, history):
        k = self.max_position
        hist = np.asarray(history, dtype=np.int64)[-k:]
        n_i = len(hist)
        positions = np.arange(k - n_i + 1, k + 1, dtype=np.int64)
        pos, items = shift_left(positions, hist)
        q = self.attention.apply(self.w @ self.w_hat[-1])
        p = np.zeros(self.n_items)
        p[items] = q[pos - 1]
        return _project_scores(self.v, self.scaling, self.regime, p)


class GlobalAttentionTrainer:
    """Alternating sweeps over the three modes; the factor for the attended
    mode feeds the auxiliary task through its attention-weighted image."""

    def __init__(self, tensor, attention, ranks, s=1.0, seed=0,
                 regime="plain", exact_svd=False, svd_tol=1e-8, init=None):
        m, n, k = tensor.shape
        r1, r2, r3 = ranks
        if r1 > m or r2 > n or r3 > k:
            raise ValueError(f"ranks {ranks} infeasible for tensor shape {tensor.shape}")
        if attention.size != k:
            raise ValueError("attention size must equal the position dimension")
        self.tensor = tensor
        self.attention = attention
        self.ranks = (r1, r2, r3)
        self.scaling = build_scaling(tensor.item_counts(), s, neutral_missing=True)
        self.seed = seed
        self.regime = regime
        self.exact_svd = exact_svd
        self.svd_tol = svd_tol
        init = init or {}
        self.v = init.get("V", random_orthonormal(n, r2, seed))
        self.w = init.get("W", random_orthonormal(k, r3, seed + 1))
        self.w_a = attention.apply(self.w)
        self.u = None
        self.sweep_count = 0
        self.fit_history = []

    def _svd(self, op, r, tag):
        return truncated_svd(op, r, seed=self.seed + 1000 + 10 * self.sweep_count + tag,
                             tol=self.svd_tol, exact=self.exact_svd)

    def sweep(self):
        r1, r2, r3 = self.ranks
        factors = {"U": self.u, "V": self.v, "W_A": self.w_a}
        self.u, _ = self._svd(
            ga_mode_operator(self.tensor, factors, self.attention, self.scaling, 1), r1, 1)
        factors["U"] = self.u
        self.v, _ = self._svd(
            ga_mode_operator(self.tensor, factors, self.attention, self.scaling, 2), r2, 2)
        factors["V"] = self.v
        self.w, svals = self._svd(
            ga_mode_operator(self.tensor, factors, self.attention, self.scaling, 3), r3, 3)
        self.w_a = self.attention.apply(self.w)
        self.sweep_count += 1
        self.fit_history.append(float(np.sum(svals ** 2)))

    def snapshot(self):
        return GlobalAttentionModel(
            v=self.v.copy(),
            w=self.w.copy(),
            w_hat=triangular_restore(self.attention, self.w),
            attention=self.attention,
            scaling=self.scaling,
            regime=self.regime,
            ranks=self.ranks,
        )


def train_gasatf(tensor, f, ranks, s=1.0, seed=0, sweeps=4, regime="plain",
                 attention_mode="power-decay", exact_svd=False, init=None):
    attention = build_attention(tensor.max_position, f=f, mode=attention_mode)
    trainer = GlobalAttentionTrainer(tensor, attention, ranks, s=s, seed=seed,
                                     regime=regime, exact_svd=exact_svd, init=init)
    for _ in range(sweeps):
        trainer.sweep()
    return trainer.snapshot()


# ---------------------------------------------------------------------------
# locally attentive tensor factorization over the hankelized tensor


def _window_row_cache(w_s, k):
    """K per-offset row blocks of the one-hot Hankel matrix times w_s.

    ``cache[q][l] = w_s[q - l]`` when that index is valid, 0 otherwise.
    """
    k_s, r = w_s.shape
    k_l = k - k_s + 1
    out = np.zeros((k, k_l, r))
    for l in range(k_l):
        out[l:l + k_s, l, :] = w_s
    return out


def _window_col_cache(w_a, k):
    """Transposed variant: ``cache[q][s] = w_a[q - s]`` when valid, 0 otherwise."""
    k_l, r = w_a.shape
    k_s = k - k_l + 1
    out = np.zeros((k, k_s, r))
    for s in range(k_s):
        out[s:s + k_l, s, :] = w_a
    return out


def la_mode_operator(tensor, factors, attention, cache, mode):
    """Implicit compressed unfolding of the weighted hankelized tensor.

    The two window dimensions are virtual: every COO entry addresses the single
    non-zero skew diagonal of its one-hot Hankel slice, served from per-offset
    caches so no Hankel matrix is ever materialized.
    """
    ii, jj, kk = tensor.users, tensor.items, tensor.positions - 1
    m, n, k = tensor.shape
    scaling = factors["scaling"]
    dvals = scaling.d[jj]
    k_l = attention.size
    k_s = k - k_l + 1
    if mode in (1, 2):
        if cache is None or not cache.matches(factors["W_A"], factors["W_S"]):
            raise ValueError("stale skew-block cache: factors changed since it was built")
        blocks = cache.blocks
        r3, r4 = blocks.shape[1], blocks.shape[2]
        other = factors["V"] if mode == 1 else factors["U"]
        along = ii if mode == 1 else jj
        out_dim = m if mode == 1 else n
        r_other = other.shape[1]

        def matvec(z):
            zc = np.asarray(z).reshape(r4, r3, r_other)
            zo = np.tensordot(zc, other[jj if mode == 1 else ii], axes=([2], [1]))
            contrib = dvals * np.einsum("eab,bae->e", blocks[kk], zo)
            return np.bincount(along, weights=contrib, minlength=out_dim)

        def rmatvec(u):
            w = np.asarray(u)[along] * dvals
            rows = other[jj if mode == 1 else ii]
            return np.einsum("e,eab,ec->bac", w, blocks[kk], rows).ravel()

        return ImplicitMatrix(shape=(out_dim, r4 * r3 * r_other), matvec=matvec, rmatvec=rmatvec)
    if mode in (3, 4):
        u, v = factors["U"], factors["V"]
        r1, r2 = u.shape[1], v.shape[1]
        if mode == 3:
            w_s = factors["W_S"]
            rw = w_s.shape[1]
            window = _window_row_cache(w_s, k)
            out_dim = k_l
        else:
            w_a = factors["W_A"]
            rw = w_a.shape[1]
            window = _window_col_cache(w_a, k)
            out_dim = k_s

        def matvec(z):
            zc = np.asarray(z).reshape(rw, r2, r1)
            g = np.einsum("dbc,eb,ec->ed", zc, v[jj], u[ii])
            s = np.einsum("e,eld,ed->l", dvals, window[kk], g)
            if mode == 3:
                s = attention.apply_transpose(s)
            return s

        def rmatvec(uu):
            b = attention.apply(np.asarray(uu)) if mode == 3 else np.asarray(uu)
            coeff = np.einsum("kld,l->kd", window, b)
            return np.einsum("e,ed,eb,ec->dbc", dvals, coeff[kk], v[jj], u[ii]).ravel()

        return ImplicitMatrix(shape=(out_dim, rw * r2 * r1), matvec=matvec, rmatvec=rmatvec)
    raise ValueError(f"mode must be 1..4, got {mode}")


@dataclass(frozen=True)
class LocalAttentionModel:
    """Tensor factorization with attention confined to a sliding recency window."""

    v: np.ndarray = field(repr=False)
    w_l: np.ndarray = field(repr=False)
    w_l_hat: np.ndarray = field(repr=False)
    w_s: np.ndarray = field(repr=False)
    attention: AttentionMatrix
    scaling: ScalingDiag
    regime: str
    ranks: tuple
    max_position: int

    kind = "local"

    @property
    def n_items(self):
        return self.v.shape[0]

    def score_history(self, history):
        k = self.max_position
        hist = np.asarray(history, dtype=np.int64)[-k:]
        n_i = len(hist)
        positions = np.arange(k - n_i + 1, k + 1, dtype=np.int64)
        pos, items = shift_left(positions, hist)
        left = self.attention.apply(self.w_l @ self.w_l_hat[-1])
        right = self.w_s @ self.w_s[-1]
        gamma = np.convolve(left, right)
        p = np.zeros(self.n_items)
        p[items] = gamma[pos - 1]
        return _project_scores(self.v, self.scaling, self.regime, p)


class LocalAttentionTrainer:
    """Alternating sweeps over the four modes of the hankelized tensor,
    rebuilding skew-block caches whenever a source factor changes."""

    def __init__(self, tensor, window, attention, ranks, s=1.0, seed=0,
                 regime="plain", exact_svd=False, svd_tol=1e-8, init=None):
        m, n, k = tensor.shape
        if not 1 <= window <= k:
            raise ValueError(f"window must be in [1, {k}], got {window}")
        r1, r2, r3, r4 = ranks
        k_s = k - window + 1
        if r1 > m or r2 > n or r3 > window or r4 > k_s:
            raise ValueError(f"ranks {ranks} infeasible for shape {(m, n, window, k_s)}")
        if attention.size != window:
            raise ValueError("attention size must equal the window size")
        self.tensor = tensor
        self.window = window
        self.k_s = k_s
        self.attention = attention
        self.ranks = (r1, r2, r3, r4)
        self.scaling = build_scaling(tensor.item_counts(), s, neutral_missing=True)
        self.seed = seed
        self.regime = regime
        self.exact_svd = exact_svd
        self.svd_tol = svd_tol
        init = init or {}
        self.v = init.get("V", random_orthonormal(n, r2, seed))
        self.w_l = init.get("W_L", random_orthonormal(window, r3, seed + 1))
        self.w_s = init.get("W_S", random_orthonormal(k_s, r4, seed + 2))
        self.w_a = attention.apply(self.w_l)
        self.u = None
        self.sweep_count = 0
        self.fit_history = []

    def _svd(self, op, r, tag):
        return truncated_svd(op, r, seed=self.seed + 1000 + 10 * self.sweep_count + tag,
                             tol=self.svd_tol, exact=self.exact_svd)

    def _factors(self):
        return {"U": self.u, "V": self.v, "W_A": self.w_a, "W_S": self.w_s,
                "scaling": self.scaling}

    def sweep(self):
        r1, r2, r3, r4 = self.ranks
        cache = skew_block_cache(self.w_a, self.w_s)
        self.u, _ = self._svd(
            la_mode_operator(self.tensor, self._factors(), self.attention, cache, 1), r1, 1)
        self.v, _ = self._svd(
            la_mode_operator(self.tensor, self._factors(), self.attention, cache, 2), r2, 2)
        self.w_l, _ = self._svd(
            la_mode_operator(self.tensor, self._factors(), self.attention, None, 3), r3, 3)
        self.w_a = self.attention.apply(self.w_l)
        self.w_s, svals = self._svd(
            la_mode_operator(self.tensor, self._factors(), self.attention, None, 4), r4, 4)
        self.sweep_count += 1
        self.fit_history.append(float(np.sum(svals ** 2)))

    def snapshot(self):
        return LocalAttentionModel(
            v=self.v.copy(),
            w_l=self.w_l.copy(),
            w_l_hat=triangular_restore(self.attention, self.w_l),
            w_s=self.w_s.copy(),
            attention=self.attention,
            scaling=self.scaling,
            regime=self.regime,
            ranks=self.ranks,
            max_position=self.tensor.max_position,
        )


def train_lasatf(tensor, window, f, ranks, s=1.0, seed=0, sweeps=4, regime="plain",
                 attention_mode="power-decay", exact_svd=False, init=None):
    attention = build_attention(window, f=f, mode=attention_mode)
    trainer = LocalAttentionTrainer(tensor, window, attention, ranks, s=s, seed=seed,
                                    regime=regime, exact_svd=exact_svd, init=init)
    for _ in range(sweeps):
        trainer.sweep()
    return trainer.snapshot()


# ---------------------------------------------------------------------------
# prediction and serialization


def predict_next(model, history, n, exclude_seen=True, diagnostics=None):
    """Top-n next-item candidates for an ordered history of item indices.

    Unknown items are dropped (counted in ``diagnostics['dropped_unknown']`` if
    a dict is supplied); an empty usable history raises :class:`ColdUserError`.
    Ties are broken by ascending item index.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    hist = np.asarray(list(history), dtype=np.int64)
    known = (hist >= 0) & (hist < model.n_items)
    if diagnostics is not None:
        diagnostics["dropped_unknown"] = diagnostics.get("dropped_unknown", 0) + int((~known).sum())
    hist = hist[known]
    if len(hist) == 0:
        raise ColdUserError("cold user: no usable history")
    scores = np.asarray(model.score_history(hist), dtype=float)
    if exclude_seen:
        scores[hist] = -np.inf
    order = np.lexsort((np.arange(model.n_items), -scores))
    return order[:n]


def _attention_params(att):
    return {"size": att.size, "f": att.f, "mode": att.mode}


def _attention_from_params(p):
    return build_attention(p["size"], f=p["f"], mode=p["mode"])


def save_model(model, path):
    """Serialize a model to a self-describing npz container (bit-exact round trip)."""
    params = {"kind": model.kind, "version": MODEL_FORMAT_VERSION}
    arrays = {}
    if model.kind == "mp":
        arrays["counts"] = model.counts
    elif model.kind == "svd":
        params.update(regime=model.regime, s=model.scaling.s)
        arrays.update(v=model.v, d=model.scaling.d)
    elif model.kind == "global":
        params.update(regime=model.regime, s=model.scaling.s, ranks=list(model.ranks),
                      attention=_attention_params(model.attention))
        arrays.update(v=model.v, w=model.w, w_hat=model.w_hat, d=model.scaling.d)
    elif model.kind == "local":
        params.update(regime=model.regime, s=model.scaling.s, ranks=list(model.ranks),
                      attention=_attention_params(model.attention),
                      max_position=model.max_position)
        arrays.update(v=model.v, w_l=model.w_l, w_l_hat=model.w_l_hat, w_s=model.w_s,
                      d=model.scaling.d)
    else:
        raise ValueError(f"unknown model kind {model.kind!r}")
    np.savez(path, params=np.array(json.dumps(params)),
             **{k: np.ascontiguousarray(a, dtype=np.float64) for k, a in arrays.items()})


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        params = json.loads(str(data["params"]))
        if params["version"] != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {params['version']}")
        kind = params["kind"]
        if kind == "mp":
            return MPModel(counts=data["counts"].astype(np.int64))
        scaling = ScalingDiag(d=data["d"], s=params["s"])
        if kind == "svd":
            return SVDModel(v=data["v"], scaling=scaling, regime=params["regime"])
        if kind == "global":
            return GlobalAttentionModel(
                v=data["v"], w=data["w"], w_hat=data["w_hat"],
                attention=_attention_from_params(params["attention"]),
                scaling=scaling, regime=params["regime"], ranks=tuple(params["ranks"]),
            )
        if kind == "local":
            return LocalAttentionModel(
                v=data["v"], w_l=data["w_l"], w_l_hat=data["w_l_hat"], w_s=data["w_s"],
                attention=_attention_from_params(params["attention"]),
                scaling=scaling, regime=params["regime"], ranks=tuple(params["ranks"]),
                max_position=params["max_position"],
            )
    raise ValueError(f"unknown model kind {kind!r}")
