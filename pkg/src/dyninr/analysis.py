"""Kernel spectra, Jacobian products, and capacity bound calculators.

Everything here exists to check predicted behavior numerically: the
empirical tangent kernel and its spectrum statistics, closed-form gradient
blocks assembled from per-step Jacobians (checked against the tape), rank
propagation through products of (I + dt J), Lipschitz constants of the
discrete flow, Rademacher-style capacity bounds, and the scalar quadratic
flow with a known analytic solution.

The eigensolver is a hand-rolled cyclic Jacobi sweep.  The one numpy.linalg
entry point used anywhere in the package is numerical-rank extraction via
SVD inside rank_propagation_check / ntk_rank_compare, where squaring the
condition number through an eigen route would sink the rank threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import GradientVector, ShapeError, Tensor, backward, eval_graph
from .csvio import write_csv
from .models import (
    Model,
    ModeError,
    build_forward,
    count_params,
    fourier_embed,
    integrate_flow,
)
from .rng import Xoshiro256

# All capacity bounds share one universal constant.
UNIVERSAL_C = 6.0 * math.sqrt(math.pi)

NTK_PROBE_CAP = 512
DEFAULT_PROBE_COUNT = 128
DEFAULT_TOP_K = 16
JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100
RANK_TOL = 1e-8
POWER_ITERS = 50

BOUND_VARIANTS = ("dinr", "inr", "dinr-depth-ell", "ke-regularized")


# ---------------------------------------------------------------------------
# reports

@dataclass
class NtkReport:
    """Spectrum statistics of one empirical tangent kernel.

    eigenvalues are sorted descending and clipped at zero (the kernel is a
    Gram matrix; any negative tail is roundoff).  probe_coords records the
    (seed, count) that generated the probe lattice.
    """

    eigenvalues: np.ndarray
    effective_rank: float
    condition_number: float
    lognormal_mu: float
    lognormal_sigma: float
    probe_coords: tuple


@dataclass
class JacobianChain:
    """Per-step Jacobians J_k of a latent trajectory plus the step size.

    product(a, b) is the ordered product of (I + dt * J_j) for j in a..b
    with larger j on the left (the direction derivatives propagate), and
    the identity when a > b.  P() is the full product over all steps.
    """

    J_list: list
    dt: float

    def __post_init__(self):
        if not self.J_list:
            raise ValueError("JacobianChain needs at least one Jacobian")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        d = self.J_list[0].shape[0]
        for J in self.J_list:
            if J.shape != (d, d):
                raise ShapeError(f"Jacobians must all be ({d}, {d}), got {J.shape}")

    def product(self, a: int, b: int) -> np.ndarray:
        d = self.J_list[0].shape[0]
        P = np.eye(d)
        for j in range(a, b + 1):
            P = (np.eye(d) + self.dt * self.J_list[j]) @ P
        return P

    def P(self) -> np.ndarray:
        return self.product(0, len(self.J_list) - 1)


@dataclass(frozen=True)
class BoundInputs:
    """Constants feeding the capacity bound calculators; see rademacher_bound.

    Only the fields a given variant uses need to be set.
    """

    L_psi: float | None = None
    L_phi: float | None = None
    L_f: float | None = None
    L0: float | None = None
    ell: int | None = None
    D: float | None = None
    T: float | None = None
    m: int | None = None
    d_y: int | None = None
    n: int | None = None
    B_phi: float | None = None
    E: float | None = None


@dataclass
class RankReport:
    rank_P: int
    rank_J0: int
    satisfied: bool
    hypotheses_met: bool
    note: str


@dataclass
class FlowCheckReport:
    max_ratio: float
    bound: float
    L_phi: float
    L_f: float
    n_pairs: int
    n_skipped: int
    violations: int


@dataclass
class NtkCompareReport:
    static_effective_rank: float
    dyn_effective_rank: float
    static_rank: int
    dyn_rank: int
    dyn_exceeds: bool


# ---------------------------------------------------------------------------
# empirical tangent kernel

def probe_coords(seed: int, count: int, in_dim: int) -> np.ndarray:
    """Seeded uniform probe coordinates in [-1, 1]^in_dim."""
    if count < 2 or in_dim < 1:
        raise ValueError(f"probe needs count >= 2 and in_dim >= 1, got {count}, {in_dim}")
    u = Xoshiro256(seed).uniforms(count * in_dim)
    return (2.0 * u - 1.0).reshape(count, in_dim)


def gradient_rows(model: Model, coords) -> np.ndarray:
    """Per-sample flat parameter gradients, one row per coordinate.

    One single-sample graph is built and replayed across the probe; rows
    follow the trainable block order of the model, so the Gram product of
    this matrix is the tangent kernel.
    """
    coords = Tensor(coords).asarray()
    if coords.ndim != 2 or coords.shape[1] != model.spec.in_dim:
        raise ShapeError(f"coords must be (n, {model.spec.in_dim}), got {coords.shape}")
    n = coords.shape[0]
    if n < 2:
        raise ValueError(f"kernel probe needs n >= 2, got {n}")
    if n > NTK_PROBE_CAP:
        raise ValueError(
            f"probe of {n} rows exceeds the cap of {NTK_PROBE_CAP}; use a smaller probe")
    if model.spec.out_dim != 1:
        raise ModeError("tangent kernel is defined for scalar-output models")

    fg = build_forward(model, coords[0:1])
    rows = np.zeros((n, count_params(model)))
    for i in range(n):
        eval_graph(fg.leaf_values(model.params, coords[i:i + 1]), fg.tape)
        rows[i] = backward(fg.tape, fg.out).flat()
    return rows


def empirical_ntk(model: Model, coords) -> np.ndarray:
    """K[i, j] = <grad y(x_i), grad y(x_j)> over trainable parameters."""
    J = gradient_rows(model, coords)
    return J @ J.T


# ---------------------------------------------------------------------------
# symmetric eigensolver

def eigen_sym(K) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, descending, by cyclic Jacobi.

    Sweeps rotate every off-diagonal pair until the off-diagonal Frobenius
    norm falls below 1e-10 times the matrix norm.  Input asymmetry beyond
    1e-8 (relative) is an error; below that the matrix is symmetrized.
    """
    K = Tensor(K).asarray()
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError(f"eigen_sym needs a square matrix, got {K.shape}")
    scale = float(np.max(np.abs(K))) if K.size else 0.0
    if scale > 0 and float(np.max(np.abs(K - K.T))) > 1e-8 * max(1.0, scale):
        raise ValueError("eigen_sym: input is not symmetric")
    A = (K + K.T) / 2.0
    n = A.shape[0]
    fro = float(np.sqrt(np.sum(A * A)))
    if fro == 0.0:
        return np.zeros(n)
    target = JACOBI_TOL * fro

    for _ in range(JACOBI_MAX_SWEEPS):
        O = A.copy()
        np.fill_diagonal(O, 0.0)
        if float(np.sqrt(np.sum(O * O))) < target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:  # theta^2 would overflow; limit t -> 1/(2 theta)
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
    else:
        raise RuntimeError("jacobi sweep did not converge")
    return np.sort(np.diag(A))[::-1].copy()


def effective_rank(eigs) -> float:
    """exp of the spectral entropy: counts how many directions carry weight."""
    lam = np.asarray(eigs, dtype=np.float64)
    if lam.size == 0:
        raise ValueError("effective_rank needs a nonempty spectrum")
    if np.any(lam < 0):
        raise ValueError("effective_rank needs nonnegative eigenvalues")
    total = float(lam.sum())
    if total == 0.0:
        raise ValueError("effective_rank undefined for an all-zero spectrum")
    p = lam / total
    p = p[p > 0]
    return float(np.exp(-np.sum(p * np.log(p))))


def condition_number(eigs, floor_ratio: float = 1e-12) -> float:
    """lambda_max over the smallest eigenvalue above the numerical floor.

    Eigenvalues below floor_ratio * lambda_max are treated as numerically
    zero and excluded from the denominator.
    """
    lam = np.asarray(eigs, dtype=np.float64)
    if lam.size == 0:
        raise ValueError("condition_number needs a nonempty spectrum")
    lmax = float(lam.max())
    if lmax <= 0:
        raise ValueError("condition_number needs lambda_max > 0")
    kept = lam[lam >= floor_ratio * lmax]
    return lmax / float(kept.min())


def lognormal_fit(eigs, top_k: int):
    """(mu, sigma) of log(lambda) over the top_k leading eigenvalues (MLE)."""
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    lam = np.sort(np.asarray(eigs, dtype=np.float64))[::-1]
    if lam.size < top_k:
        raise ValueError(f"need {top_k} eigenvalues, got {lam.size}")
    head = lam[:top_k]
    if np.any(head <= 0):
        raise ValueError("lognormal fit needs strictly positive eigenvalues")
    logs = np.log(head)
    return float(logs.mean()), float(logs.std())


def ntk_report(model: Model, seed: int = 0, count: int = DEFAULT_PROBE_COUNT,
               top_k: int = DEFAULT_TOP_K) -> NtkReport:
    """Kernel spectrum statistics on a seeded probe lattice."""
    coords = probe_coords(seed, count, model.spec.in_dim)
    eigs = np.clip(eigen_sym(empirical_ntk(model, coords)), 0.0, None)
    k = min(top_k, int(np.sum(eigs > 0)))
    if k < 1:
        raise ValueError("kernel spectrum has no positive eigenvalues")
    mu, sigma = lognormal_fit(eigs, k)
    return NtkReport(eigs, effective_rank(eigs), condition_number(eigs),
                     mu, sigma, (seed, count))


def ntk_reports_to_csv(path, rows, top_k: int = DEFAULT_TOP_K) -> None:
    """rows = [(epoch, NtkReport)] -> one CSV line per checkpoint."""
    header = ["epoch", "effective_rank", "condition_number",
              "lognormal_mu", "lognormal_sigma"]
    header += [f"eig_{i + 1}" for i in range(top_k)]
    out = []
    for epoch, rep in rows:
        eigs = list(rep.eigenvalues[:top_k])
        eigs += [""] * (top_k - len(eigs))
        out.append([epoch, rep.effective_rank, rep.condition_number,
                    rep.lognormal_mu, rep.lognormal_sigma] + eigs)
    write_csv(path, header, out)


# ---------------------------------------------------------------------------
# hand-assembled gradients and trajectory Jacobians

def _act(model: Model, pre: np.ndarray) -> np.ndarray:
    return np.maximum(pre, 0.0) if model.spec.backbone == "ffnet" else np.sin(pre)


def _act_deriv(model: Model, pre: np.ndarray) -> np.ndarray:
    if model.spec.backbone == "ffnet":
        return (pre > 0.0).astype(np.float64)
    return np.cos(pre)


def _body_hand(model: Model, u: np.ndarray):
    """Forward through the velocity network for one flattened input.

    Returns (output, pre-activations per layer, post-activation inputs per
    layer); layout mirrors the tape construction exactly, including the
    missing activation after the final layer.
    """
    depth = model.spec.depth
    pres, hs = [], [u]
    h = u
    for i in range(depth):
        pre = h @ model.params[f"body.w{i}"] + model.params[f"body.b{i}"][0]
        pres.append(pre)
        h = _act(model, pre) if i < depth - 1 else pre
        if i < depth - 1:
            hs.append(h)
    return h, pres, hs


def _body_jacobian(model: Model, pres: list) -> np.ndarray:
    """d(velocity)/d(state) at recorded pre-activations; time column dropped."""
    depth = model.spec.depth
    J = model.params[f"body.w{depth - 1}"].T
    for i in range(depth - 2, -1, -1):
        D = _act_deriv(model, pres[i])
        J = (J * D[None, :]) @ model.params[f"body.w{i}"].T
    d_z = model.spec.embed_dim
    return np.ascontiguousarray(J[:, :d_z])


def _body_vjp(model: Model, pres: list, hs: list, cot: np.ndarray, grads: dict) -> None:
    """Accumulate d(cot . velocity)/d(body params) into grads, in place."""
    depth = model.spec.depth
    g = cot
    for i in range(depth - 1, -1, -1):
        grads[f"body.w{i}"] = grads[f"body.w{i}"] + np.outer(hs[i], g)
        grads[f"body.b{i}"] = grads[f"body.b{i}"] + g
        if i > 0:
            g = (model.params[f"body.w{i}"] @ g) * _act_deriv(model, pres[i - 1])


def _embed_single(model: Model, x: np.ndarray) -> np.ndarray:
    if model.spec.backbone == "ffnet":
        return fourier_embed(x.reshape(1, -1), model.frozen["embed.B"])[0]
    pre = x @ model.params["embed.w"] + model.params["embed.b"][0]
    return np.sin(model.spec.omega0 * pre)


def trajectory_jacobians(model: Model, x) -> JacobianChain:
    """Per-step velocity Jacobians along one sample's latent trajectory."""
    if model.spec.mode != "dynamical":
        raise ModeError("trajectory Jacobians need a dynamical model")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != (model.spec.in_dim,):
        raise ShapeError(f"expected one sample of {model.spec.in_dim} coords, got {x.shape}")
    dt = model.spec.dt
    z = _embed_single(model, x)
    J_list = []
    for k in range(model.spec.steps):
        u = np.append(z, k * dt)
        f, pres, _ = _body_hand(model, u)
        J_list.append(_body_jacobian(model, pres))
        z = z + dt * f
    return JacobianChain(J_list, dt)


def closed_form_dinr_gradient(model: Model, x) -> GradientVector:
    """Output gradient assembled from per-step Jacobians, no tape involved.

    Blocks: the decoder gradient at z_N; for each step k the velocity-network
    gradient propagated through the downstream product of (I + dt J); the
    embedding gradient propagated through the full product.  Scalar-output
    Euler models only (the stage combination of the other solver has no
    single per-step Jacobian).
    """
    spec = model.spec
    if spec.mode != "dynamical":
        raise ModeError("closed-form gradient needs a dynamical model")
    if spec.solver != "euler":
        raise ModeError("closed-form gradient covers the euler solver only")
    if spec.out_dim != 1:
        raise ModeError("closed-form gradient is defined for scalar outputs")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != (spec.in_dim,):
        raise ShapeError(f"expected one sample of {spec.in_dim} coords, got {x.shape}")

    dt, N, d_z = spec.dt, spec.steps, spec.embed_dim
    z = _embed_single(model, x)
    z0 = z
    steps = []
    for k in range(N):
        u = np.append(z, k * dt)
        f, pres, hs = _body_hand(model, u)
        steps.append((pres, hs))
        z = z + dt * f
    chain = JacobianChain([_body_jacobian(model, s[0]) for s in steps], dt)

    # suffix[k] = product of (I + dt J_j) for j in k..N-1; suffix[N] = I
    suffix = [np.eye(d_z) for _ in range(N + 1)]
    for k in range(N - 1, -1, -1):
        suffix[k] = suffix[k + 1] @ (np.eye(d_z) + dt * chain.J_list[k])

    g = model.params["decoder.w"][:, 0]
    grads = {name: np.zeros_like(arr) for name, arr in model.params.items()}
    grads["decoder.w"] = z.reshape(d_z, 1).copy()
    grads["decoder.b"] = np.ones((1, 1))
    for k in range(N):
        cot = dt * (suffix[k + 1].T @ g)
        _body_vjp(model, steps[k][0], steps[k][1], cot, grads)
    if spec.backbone == "siren":
        cot0 = suffix[0].T @ g
        pre = x @ model.params["embed.w"] + model.params["embed.b"][0]
        dpre = cot0 * spec.omega0 * np.cos(spec.omega0 * pre)
        grads["embed.w"] = np.outer(x, dpre)
        grads["embed.b"] = dpre.reshape(1, d_z)
    return GradientVector({name: grads[name].ravel() for name in model.params})


# ---------------------------------------------------------------------------
# rank propagation

def _svd_rank(A: np.ndarray, tol_ratio: float):
    s = np.linalg.svd(A, compute_uv=False)
    smax = float(s[0]) if s.size else 0.0
    if smax == 0.0:
        return 0, s
    return int(np.sum(s >= tol_ratio * smax)), s


def rank_propagation_check(chain: JacobianChain, tol_ratio: float = RANK_TOL) -> RankReport:
    """Does the product of (I + dt J_k) have higher rank than J_0 alone?

    The claim needs every J_k nonzero and at least one later step whose row
    space leaves the row space of J_0; when either hypothesis fails the
    report says so instead of judging the conclusion.
    """
    J0 = chain.J_list[0]
    rank_J0, _ = _svd_rank(J0, tol_ratio)
    rank_P, _ = _svd_rank(chain.P(), tol_ratio)
    satisfied = rank_P > rank_J0

    for k, J in enumerate(chain.J_list):
        if float(np.max(np.abs(J))) == 0.0:
            return RankReport(rank_P, rank_J0, satisfied, False,
                              f"hypotheses not met: J_{k} is the zero matrix")
    escapes = False
    _, _, Vt = np.linalg.svd(J0)
    V = Vt[:rank_J0]
    for k in range(1, len(chain.J_list)):
        Jk = chain.J_list[k]
        resid = Jk - (Jk @ V.T) @ V
        if float(np.linalg.norm(resid)) > tol_ratio * float(np.linalg.norm(Jk)):
            escapes = True
            break
    if not escapes:
        return RankReport(rank_P, rank_J0, satisfied, False,
                          "hypotheses not met: every row space sits inside row(J_0)")
    return RankReport(rank_P, rank_J0, satisfied, True, "")


# ---------------------------------------------------------------------------
# flow Lipschitz constants

def spectral_norm(W, iters: int = POWER_ITERS) -> float:
    """Largest singular value by power iteration on W^T W, seeded start."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.size == 0:
        raise ShapeError(f"spectral_norm needs a nonempty matrix, got {W.shape}")
    B = W.T @ W
    v = Xoshiro256(0).normals(B.shape[0])
    v = v / float(np.sqrt(np.sum(v * v)))
    for _ in range(iters):
        w = B @ v
        nw = float(np.sqrt(np.sum(w * w)))
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(np.sqrt(v @ B @ v))


def embed_lipschitz(model: Model) -> float:
    """Lipschitz constant of the coordinate embedding.

    The paired sin/cos channels make the ffnet embedding Jacobian norm
    exactly 2*pi*||B||; the sine embedding is bounded by omega0*||W||.
    """
    if model.spec.backbone == "ffnet":
        return 2.0 * math.pi * spectral_norm(model.frozen["embed.B"])
    return model.spec.omega0 * spectral_norm(model.params["embed.w"])


def field_lipschitz(model: Model) -> float:
    """Lipschitz constant of the velocity network in the state argument.

    Product of layer spectral norms; the first layer contributes only its
    state rows (the time row is constant within a step), and both body
    activations have unit slope bounds.
    """
    d_z = model.spec.embed_dim
    L = spectral_norm(model.params["body.w0"][:d_z, :])
    for i in range(1, model.spec.depth):
        L *= spectral_norm(model.params[f"body.w{i}"])
    return L


def flow_lipschitz_check(model: Model, pairs, L_phi: float | None = None,
                         L_f: float | None = None) -> FlowCheckReport:
    """Measure flow-map expansion ratios against L_phi * (1 + dt L_f)^N.

    Coincident pairs are skipped (zero denominator) and counted; a ratio
    exceeding the bound by more than 1e-9 relative roundoff slack counts as
    a violation.
    """
    if model.spec.mode != "dynamical":
        raise ModeError("flow check needs a dynamical model")
    if L_phi is None:
        L_phi = embed_lipschitz(model)
    if L_f is None:
        L_f = field_lipschitz(model)
    bound = L_phi * (1.0 + model.spec.dt * L_f) ** model.spec.steps

    pairs = list(pairs)
    if not pairs:
        return FlowCheckReport(0.0, bound, L_phi, L_f, 0, 0, 0)
    X1 = np.stack([np.asarray(p[0], dtype=np.float64).reshape(-1) for p in pairs])
    X2 = np.stack([np.asarray(p[1], dtype=np.float64).reshape(-1) for p in pairs])
    Z1 = build_forward(model, X1).state_vars[-1].value
    Z2 = build_forward(model, X2).state_vars[-1].value
    dx = np.sqrt(np.sum((X1 - X2) ** 2, axis=1))
    dz = np.sqrt(np.sum((Z1 - Z2) ** 2, axis=1))

    max_ratio, skipped, violations, used = 0.0, 0, 0, 0
    for i in range(len(pairs)):
        if dx[i] == 0.0:
            skipped += 1
            continue
        ratio = float(dz[i] / dx[i])
        max_ratio = max(max_ratio, ratio)
        if ratio > bound * (1.0 + 1e-9):
            violations += 1
        used += 1
    return FlowCheckReport(max_ratio, bound, L_phi, L_f, used, skipped, violations)


# ---------------------------------------------------------------------------
# capacity bounds

def _need(inputs: BoundInputs, fields: tuple):
    vals = {}
    for f in fields:
        v = getattr(inputs, f)
        if v is None:
            raise ValueError(f"rademacher_bound: missing field {f!r}")
        if f in ("m", "d_y", "n"):
            if int(v) < 1:
                raise ValueError(f"rademacher_bound: {f} must be >= 1, got {v}")
            vals[f] = int(v)
        else:
            if v < 0:
                raise ValueError(f"rademacher_bound: {f} must be >= 0, got {v}")
            vals[f] = float(v)
    return vals


def rademacher_bound(inputs: BoundInputs, variant: str) -> float:
    """Closed-form capacity bound, all universal constants set to 6*sqrt(pi).

    Variants: "dinr" (exp(L_f T) flow factor), "dinr-depth-ell" (same with
    L_f = L0^ell), "inr" (plain L0^ell depth factor), "ke-regularized"
    (reachable radius B_phi + sqrt(T E)).
    """
    if variant == "dinr":
        v = _need(inputs, ("L_psi", "L_phi", "L_f", "D", "T", "m", "d_y", "n"))
        flow = math.exp(v["L_f"] * v["T"])
        return UNIVERSAL_C * v["L_psi"] * v["L_phi"] * v["D"] * flow \
            * math.sqrt(v["m"] * v["d_y"]) / math.sqrt(v["n"])
    if variant == "dinr-depth-ell":
        v = _need(inputs, ("L_psi", "L_phi", "L0", "ell", "D", "T", "m", "d_y", "n"))
        flow = math.exp(v["L0"] ** v["ell"] * v["T"])
        return UNIVERSAL_C * v["L_psi"] * v["L_phi"] * v["D"] * flow \
            * math.sqrt(v["m"] * v["d_y"]) / math.sqrt(v["n"])
    if variant == "inr":
        v = _need(inputs, ("L_psi", "L_phi", "L0", "ell", "D", "m", "d_y", "n"))
        return UNIVERSAL_C * v["L_psi"] * v["L_phi"] * v["L0"] ** v["ell"] * v["D"] \
            * math.sqrt(v["m"] * v["d_y"]) / math.sqrt(v["n"])
    if variant == "ke-regularized":
        v = _need(inputs, ("L_psi", "L_phi", "D", "T", "m", "n", "B_phi", "E"))
        radius = v["B_phi"] + math.sqrt(v["T"] * v["E"])
        return UNIVERSAL_C * v["L_psi"] * v["L_phi"] * v["D"] \
            * math.sqrt(v["m"]) * radius / math.sqrt(v["n"])
    raise ValueError(f"variant must be one of {BOUND_VARIANTS}, got {variant!r}")


# ---------------------------------------------------------------------------
# quadratic scalar flow oracle

def riccati_reference(x0: float, t: float) -> float:
    """Analytic solution x / (1 - t x) of dz/dt = z^2 from z(0) = x."""
    if t * x0 >= 1.0:
        raise ValueError(f"solution blows up at t = 1/x0; got t*x0 = {t * x0}")
    return x0 / (1.0 - t * x0)


def riccati_numeric(x0: float, T: float, N: int, solver: str = "euler") -> float:
    """Integrate dz/dt = z^2 numerically; diverging trajectories raise."""
    traj = integrate_flow(np.array([[float(x0)]]), lambda z, t: z * z, N, T, solver)
    return float(traj.states[-1][0, 0])


# ---------------------------------------------------------------------------
# kernel rank comparison

def ntk_rank_compare(static_model: Model, dyn_model: Model, coords) -> NtkCompareReport:
    """Effective and numerical kernel ranks of a matched static/dynamical pair."""
    coords = Tensor(coords).asarray()
    if coords.ndim != 2 or coords.shape[0] < 8:
        raise ValueError("rank comparison needs a probe of at least 8 coordinates")
    if static_model.spec.mode != "static" or dyn_model.spec.mode != "dynamical":
        raise ModeError("rank comparison wants one static and one dynamical model")
    ss, ds = static_model.spec, dyn_model.spec
    if (ss.backbone, ss.in_dim, ss.embed_dim, ss.out_dim) != \
            (ds.backbone, ds.in_dim, ds.embed_dim, ds.out_dim):
        raise ValueError("models must share backbone and embed/output shapes")
    cs, cd = count_params(static_model), count_params(dyn_model)
    if abs(cs - cd) > 0.1 * max(cs, cd):
        raise ValueError(f"parameter counts differ by more than 10%: {cs} vs {cd}")

    def spectrum_rank(model):
        rows = gradient_rows(model, coords)
        eigs = np.clip(eigen_sym(rows @ rows.T), 0.0, None)
        nrank, _ = _svd_rank(rows, RANK_TOL)
        return effective_rank(eigs), nrank

    se, sr = spectrum_rank(static_model)
    de, dr = spectrum_rank(dyn_model)
    return NtkCompareReport(se, de, sr, dr, de > se)
