"""Coordinate networks: static backbones and their flow-based counterparts.

Two backbones share one body architecture.  "ffnet" embeds coordinates with
frozen random Fourier features [sin(2*pi*B x), cos(2*pi*B x)] and uses ReLU
inside the body; "siren" embeds with a trainable first sine layer
sin(omega0*(W x + b)) and uses plain sine inside the body.  The body is a
stack of `depth` linear layers (embed_dim -> hidden_width -> ... -> embed_dim)
with the activation after every layer except the last, so the same stack
serves as a static trunk and as a velocity field.

Static mode decodes the body output directly.  Dynamical mode treats the
body as a vector field f(z, t): the latent state starts at the embedding,
integrates dz/dt = f(z, t) for `steps` fixed steps over [0, horizon] (Euler
or classical RK4), and decodes the terminal state.  Time enters f by
concatenating the scalar t as one extra trailing input column.  Each step
also accumulates kinetic energy ||v_k||^2 * dt, where v_k is the velocity
actually applied to the state (for RK4 that is the combined stage velocity
(k1 + 2 k2 + 2 k3 + k4)/6), so z_{k+1} = z_k + dt * v_k holds exactly for
both solvers.

Parameter blocks are ordered embed, body, decoder everywhere: in the params
dict, in gradient vectors, and in the checkpoint stream.  The ffnet Fourier
matrix B is drawn once at init and frozen; it is stored with the model but
never counted as trainable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import ShapeError, Tape, Tensor, Var, add, concat, matmul, scale, square, tsum
from .rng import Xoshiro256

BACKBONES = ("ffnet", "siren")
MODES = ("static", "dynamical")
SOLVERS = ("euler", "rk4")

DIVERGENCE_LIMIT = 1e6
CHECKPOINT_FORMAT = "dinr-checkpoint"
CHECKPOINT_VERSION = 1

TWO_PI = 2.0 * math.pi


class ModelConfigError(ValueError):
    """Raised for invalid model specification fields."""


class ModeError(ValueError):
    """Raised when a forward pass is called on a model of the wrong mode."""


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files."""


class DivergedTrajectoryError(RuntimeError):
    """Raised when a latent state leaves the finite trust region.

    Carries the integration step at which the blow-up was detected (step p
    means state z_p, with z_0 the embedding).
    """

    def __init__(self, step: int, detail: str):
        self.step = step
        super().__init__(f"trajectory diverged at step {step}: {detail}")


@dataclass(frozen=True)
class ModelSpec:
    """Complete architectural description of one model.

    fourier_scale only matters for the ffnet backbone, omega0 only for
    siren, and steps/horizon/solver only in dynamical mode; the unused
    fields keep their defaults and are ignored.
    """

    backbone: str
    mode: str
    in_dim: int
    embed_dim: int
    out_dim: int
    hidden_width: int = 64
    depth: int = 3
    fourier_scale: float = 10.0
    omega0: float = 30.0
    steps: int = 8
    horizon: float = 1.0
    solver: str = "euler"
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ModelConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.mode not in MODES:
            raise ModelConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.solver not in SOLVERS:
            raise ModelConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        for name in ("in_dim", "embed_dim", "out_dim", "hidden_width", "depth"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ModelConfigError(f"{name} must be a positive int, got {v!r}")
        if self.backbone == "ffnet":
            if self.embed_dim % 2 != 0:
                raise ModelConfigError("ffnet embed_dim must be even (sin/cos pairs)")
            if self.fourier_scale < 0:
                raise ModelConfigError("fourier_scale must be >= 0")
        if self.backbone == "siren" and self.omega0 <= 0:
            raise ModelConfigError("omega0 must be > 0")
        if self.mode == "dynamical":
            if not isinstance(self.steps, int) or self.steps < 1:
                raise ModelConfigError(f"steps must be a positive int, got {self.steps!r}")
            if not self.horizon > 0:
                raise ModelConfigError(f"horizon must be > 0, got {self.horizon!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def body_layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per body layer; dynamical adds the time column."""
        d_z, w = self.embed_dim, self.hidden_width
        first_in = d_z + 1 if self.mode == "dynamical" else d_z
        if self.depth == 1:
            return [(first_in, d_z)]
        dims = [(first_in, w)]
        dims += [(w, w)] * (self.depth - 2)
        dims.append((w, d_z))
        return dims


@dataclass
class Model:
    """A spec plus its parameter blocks.

    params holds the trainable blocks in embed/body/decoder order; frozen
    holds the ffnet Fourier matrix under "embed.B" (empty for siren).
    """

    spec: ModelSpec
    params: dict[str, np.ndarray]
    frozen: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrajectoryRecord:
    """One integrated latent trajectory.

    states has steps+1 entries z_0..z_N, velocities has steps entries, and
    z_{k+1} = z_k + dt * velocities[k] holds exactly as computed.
    kinetic_energy is per batch element: sum_k ||v_k||^2 * dt.
    """

    states: list[np.ndarray]
    velocities: list[np.ndarray]
    kinetic_energy: np.ndarray
    dt: float
    horizon: float


@dataclass
class ForwardGraph:
    """A built forward pass, ready for repeated replay with fresh params.

    leaf_names lists every tape leaf in declaration order; leaf_values
    assembles the matching input list for eval_graph.  Parameter leaves are
    block-tagged with their own names, so backward returns one gradient
    block per parameter array, in the same order as model.params.
    """

    tape: Tape
    out: Var
    ke: Var | None
    param_leaves: dict[str, Var]
    leaf_names: list[str]
    const_values: dict[str, np.ndarray]
    state_vars: list[Var]
    velocity_vars: list[Var]
    batch: int

    def leaf_values(self, params: dict[str, np.ndarray], x: np.ndarray) -> list[np.ndarray]:
        vals = []
        for name in self.leaf_names:
            if name in params:
                vals.append(params[name])
            elif name == "x":
                vals.append(x)
            else:
                vals.append(self.const_values[name])
        return vals


# ---------------------------------------------------------------------------
# initialization

def fourier_embed(x: np.ndarray, B: np.ndarray) -> np.ndarray:
    """[sin(2*pi*B x), cos(2*pi*B x)] per row of x; (batch, d_x) -> (batch, 2m)."""
    x = np.asarray(x, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if x.ndim != 2 or B.ndim != 2 or x.shape[1] != B.shape[1]:
        raise ShapeError(f"fourier_embed: x {x.shape} vs B {B.shape}")
    arg = TWO_PI * (x @ B.T)
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _uniform_block(rng: Xoshiro256, n: int, bound: float) -> np.ndarray:
    return (2.0 * rng.uniforms(n) - 1.0) * bound


def init_model(spec: ModelSpec) -> Model:
    """Draw parameters for a spec, seeded and reproducible.

    Draw order: embedding first (ffnet: B ~ N(0, fourier_scale^2), frozen;
    siren: first layer ~ U(-1/in_dim, 1/in_dim)), then body layers in order,
    then the decoder.  Weights are drawn flat row-major and reshaped to
    (fan_in, fan_out); every bias starts at zero and consumes no draws.
    Body and decoder weights are U(-sqrt(6/fan_in), +sqrt(6/fan_in)) for
    ffnet (ReLU gain) and the same bound divided by omega0 for siren.
    """
    rng = Xoshiro256(spec.seed)
    params: dict[str, np.ndarray] = {}
    frozen: dict[str, np.ndarray] = {}
    d_z = spec.embed_dim

    if spec.backbone == "ffnet":
        m = d_z // 2
        frozen["embed.B"] = (rng.normals(m * spec.in_dim) * spec.fourier_scale).reshape(m, spec.in_dim)
    else:
        w = _uniform_block(rng, spec.in_dim * d_z, 1.0 / spec.in_dim).reshape(spec.in_dim, d_z)
        params["embed.w"] = w
        params["embed.b"] = np.zeros((1, d_z))

    for i, (fan_in, fan_out) in enumerate(spec.body_layer_dims()):
        bound = math.sqrt(6.0 / fan_in)
        if spec.backbone == "siren":
            bound /= spec.omega0
        params[f"body.w{i}"] = _uniform_block(rng, fan_in * fan_out, bound).reshape(fan_in, fan_out)
        params[f"body.b{i}"] = np.zeros((1, fan_out))

    bound = math.sqrt(6.0 / d_z)
    if spec.backbone == "siren":
        bound /= spec.omega0
    params["decoder.w"] = _uniform_block(rng, d_z * spec.out_dim, bound).reshape(d_z, spec.out_dim)
    params["decoder.b"] = np.zeros((1, spec.out_dim))
    return Model(spec, params, frozen)


# ---------------------------------------------------------------------------
# forward graphs

def _check_x(spec: ModelSpec, x) -> np.ndarray:
    x = Tensor(x).asarray()
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"input must be (batch, {spec.in_dim}), got {x.shape}")
    return x


def _embed_nodes(tape: Tape, model: Model, x_var: Var, leaves: dict[str, Var],
                 consts: dict[str, np.ndarray]) -> Var:
    spec = model.spec
    if spec.backbone == "ffnet":
        BT = np.ascontiguousarray(model.frozen["embed.B"].T)
        consts["embed.BT"] = BT
        bt = tape.leaf(value=BT, name="embed.BT")
        arg = scale(matmul(x_var, bt), TWO_PI)
        return concat(arg.sin(), arg.cos(), axis=1)
    pre = add(matmul(x_var, leaves["embed.w"]), leaves["embed.b"])
    return scale(pre, spec.omega0).sin()


def _body_nodes(model: Model, h: Var, leaves: dict[str, Var]) -> Var:
    spec = model.spec
    for i in range(spec.depth):
        h = add(matmul(h, leaves[f"body.w{i}"]), leaves[f"body.b{i}"])
        if i < spec.depth - 1:
            h = h.relu() if spec.backbone == "ffnet" else h.sin()
    return h


def _guard_state(z: np.ndarray, step: int):
    if not np.all(np.isfinite(z)):
        raise DivergedTrajectoryError(step, "non-finite state component")
    peak = float(np.max(np.abs(z))) if z.size else 0.0
    if peak > DIVERGENCE_LIMIT:
        raise DivergedTrajectoryError(step, f"max |z| = {peak:.3e} exceeds {DIVERGENCE_LIMIT:.0e}")


def build_forward(model: Model, x) -> ForwardGraph:
    """Build the full forward tape for a batch; values are computed eagerly.

    The graph can then be replayed with new parameter values through
    eval_graph, using leaf_values to line inputs up with leaf order.
    """
    spec = model.spec
    x = _check_x(spec, x)
    batch = x.shape[0]
    tape = Tape()
    consts: dict[str, np.ndarray] = {}

    leaves = {k: tape.leaf(value=v, block=k, name=k) for k, v in model.params.items()}
    x_var = tape.leaf(value=x, name="x")

    z = _embed_nodes(tape, model, x_var, leaves, consts)
    states: list[Var] = []
    velocities: list[Var] = []
    ke = None

    if spec.mode == "static":
        h = _body_nodes(model, z, leaves)
    else:
        _guard_state(z.value, 0)
        states.append(z)
        dt = spec.dt
        ke_acc = None
        for k in range(spec.steps):
            t0 = k * dt
            if spec.solver == "euler":
                v = _step_velocity_euler(tape, model, z, t0, batch, leaves, consts, k)
            else:
                v = _step_velocity_rk4(tape, model, z, t0, dt, batch, leaves, consts, k)
            z = add(z, scale(v, dt))
            _guard_state(z.value, k + 1)
            states.append(z)
            velocities.append(v)
            step_ke = tsum(square(v))
            ke_acc = step_ke if ke_acc is None else add(ke_acc, step_ke)
        ke = scale(ke_acc, dt / batch)
        h = z

    out = add(matmul(h, leaves["decoder.w"]), leaves["decoder.b"])
    leaf_names = [n.name for n in tape.nodes if n.op == "leaf"]
    return ForwardGraph(tape, out, ke, leaves, leaf_names, consts, states, velocities, batch)


def _time_leaf(tape: Tape, consts: dict[str, np.ndarray], batch: int, t: float, name: str) -> Var:
    col = np.full((batch, 1), t)
    consts[name] = col
    return tape.leaf(value=col, name=name)


def _step_velocity_euler(tape, model, z, t0, batch, leaves, consts, k) -> Var:
    tc = _time_leaf(tape, consts, batch, t0, f"t{k}")
    return _body_nodes(model, concat(z, tc, axis=1), leaves)


def _step_velocity_rk4(tape, model, z, t0, dt, batch, leaves, consts, k) -> Var:
    tc0 = _time_leaf(tape, consts, batch, t0, f"t{k}.0")
    tch = _time_leaf(tape, consts, batch, t0 + dt / 2.0, f"t{k}.h")
    tc1 = _time_leaf(tape, consts, batch, t0 + dt, f"t{k}.1")
    k1 = _body_nodes(model, concat(z, tc0, axis=1), leaves)
    k2 = _body_nodes(model, concat(add(z, scale(k1, dt / 2.0)), tch, axis=1), leaves)
    k3 = _body_nodes(model, concat(add(z, scale(k2, dt / 2.0)), tch, axis=1), leaves)
    k4 = _body_nodes(model, concat(add(z, scale(k3, dt)), tc1, axis=1), leaves)
    return scale(add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4)), 1.0 / 6.0)


def static_forward(model: Model, x) -> np.ndarray:
    """One non-integrating pass: decode(body(embed(x)))."""
    if model.spec.mode != "static":
        raise ModeError(f"static_forward needs a static model, got mode={model.spec.mode!r}")
    return np.array(build_forward(model, x).out.value)


def dynamical_forward(model: Model, x, record: bool = False):
    """Integrate the latent flow and decode the terminal state.

    Returns (predictions, TrajectoryRecord) when record is true, else
    (predictions, None).
    """
    if model.spec.mode != "dynamical":
        raise ModeError(f"dynamical_forward needs a dynamical model, got mode={model.spec.mode!r}")
    fg = build_forward(model, x)
    out = np.array(fg.out.value)
    if not record:
        return out, None
    states = [np.array(s.value) for s in fg.state_vars]
    vels = [np.array(v.value) for v in fg.velocity_vars]
    ke = model.spec.dt * sum(np.sum(v * v, axis=1) for v in vels)
    return out, TrajectoryRecord(states, vels, ke, model.spec.dt, model.spec.horizon)


# ---------------------------------------------------------------------------
# hand-wired flows

def integrate_flow(z0, fieldfn, steps: int, horizon: float, solver: str = "euler") -> TrajectoryRecord:
    """Integrate dz/dt = fieldfn(z, t) from a raw initial state.

    Same stepping, velocity bookkeeping, and divergence guard as the model
    path, but for an arbitrary callable field; used to check solvers against
    flows with known closed-form solutions.
    """
    if solver not in SOLVERS:
        raise ModelConfigError(f"solver must be one of {SOLVERS}, got {solver!r}")
    if steps < 1 or not horizon > 0:
        raise ModelConfigError("integrate_flow needs steps >= 1 and horizon > 0")
    z = np.array(z0, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"initial state must be (batch, dim), got {z.shape}")
    dt = horizon / steps
    _guard_state(z, 0)
    states = [z]
    velocities = []
    for k in range(steps):
        t0 = k * dt
        if solver == "euler":
            v = np.asarray(fieldfn(z, t0), dtype=np.float64)
        else:
            k1 = np.asarray(fieldfn(z, t0), dtype=np.float64)
            k2 = np.asarray(fieldfn(z + dt / 2.0 * k1, t0 + dt / 2.0), dtype=np.float64)
            k3 = np.asarray(fieldfn(z + dt / 2.0 * k2, t0 + dt / 2.0), dtype=np.float64)
            k4 = np.asarray(fieldfn(z + dt * k3, t0 + dt), dtype=np.float64)
            v = (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if v.shape != z.shape:
            raise ShapeError(f"field returned {v.shape} for state {z.shape}")
        z = z + dt * v
        _guard_state(z, k + 1)
        states.append(z)
        velocities.append(v)
    ke = dt * sum(np.sum(v * v, axis=1) for v in velocities)
    return TrajectoryRecord(states, velocities, ke, dt, horizon)


def kinetic_energy(traj: TrajectoryRecord) -> float:
    """Batch-mean path energy sum_k ||v_k||^2 * dt of a recorded trajectory."""
    if not traj.velocities:
        raise ValueError("kinetic_energy of an empty trajectory")
    return float(np.mean(traj.kinetic_energy))


# ---------------------------------------------------------------------------
# bookkeeping

def count_params(model: Model) -> int:
    """Trainable scalars across all blocks; frozen arrays (ffnet B) excluded."""
    return sum(int(p.size) for p in model.params.values())


def compression_ratio(model: Model, signal) -> float:
    """Stored-signal bytes over stored-parameter bytes, both at 32-bit width."""
    return (signal.values.size * 4) / (count_params(model) * 4.0)


# ---------------------------------------------------------------------------
# checkpoints

def _block_manifest(model: Model) -> list[tuple[str, bool]]:
    frozen = [(k, False) for k in model.frozen]
    trainable = [(k, True) for k in model.params]
    return frozen + trainable


def save_checkpoint(model: Model, path):
    """Write a one-line JSON header plus little-endian float32 block stream.

    Blocks follow the manifest order recorded in the header: frozen embed
    matrix first (when present), then trainable blocks in embed/body/decoder
    order.
    """
    blocks = []
    payload = []
    for name, trainable in _block_manifest(model):
        arr = model.params[name] if trainable else model.frozen[name]
        blocks.append({"name": name, "shape": list(arr.shape), "trainable": trainable})
        payload.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "blocks": blocks,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path) -> Model:
    """Read a checkpoint written by save_checkpoint; values come back float32-rounded."""
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"bad header: {e}") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown format {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {header.get('version')!r}")
    try:
        spec = ModelSpec(**header["spec"])
    except (TypeError, KeyError, ModelConfigError) as e:
        raise CheckpointError(f"bad spec in header: {e}") from None

    stream = raw[nl + 1:]
    expected = sum(int(np.prod(b["shape"])) for b in header["blocks"]) * 4
    if len(stream) != expected:
        raise CheckpointError(f"parameter stream has {len(stream)} bytes, expected {expected}")
    params: dict[str, np.ndarray] = {}
    frozen: dict[str, np.ndarray] = {}
    off = 0
    for b in header["blocks"]:
        shape = tuple(int(s) for s in b["shape"])
        n = int(np.prod(shape))
        arr = np.frombuffer(stream, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(shape)
        off += n * 4
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"non-finite values in block {b['name']!r}")
        (params if b["trainable"] else frozen)[b["name"]] = arr
    model = Model(spec, params, frozen)
    _check_block_layout(model)
    return model


def _check_block_layout(model: Model):
    """Cross-check loaded block names/shapes against what the spec implies."""
    ref = init_model(model.spec)
    for src, dst in ((ref.params, model.params), (ref.frozen, model.frozen)):
        if list(src) != list(dst):
            raise CheckpointError(f"block names {list(dst)} do not match spec layout {list(src)}")
        for k in src:
            if src[k].shape != dst[k].shape:
                raise CheckpointError(f"block {k!r} has shape {dst[k].shape}, expected {src[k].shape}")
