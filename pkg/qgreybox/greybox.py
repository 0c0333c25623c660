"""
Greybox emulator: a transformer blackbox predicts noise operators V_O, fixed
quantum layers turn them into tomography expectations and gate fidelities.

All tensors are float64 / complex128. Only the blackbox (encoder, noise head)
and the refinement heads own parameters; the whitebox layers are
differentiable but parameter-free.
"""

import dataclasses
import typing

import numpy as np
import torch
from torch import nn

from . import qcore
from .control import PulseParams, PulseShapeConfig
from .exceptions import ConfigError

DTYPE = torch.float64
CDTYPE = torch.complex128
NOISE_PARAMS_PER_OBSERVABLE = 5
N_NOISE_PARAMS = 3 * NOISE_PARAMS_PER_OBSERVABLE
N_EXPECTATIONS = 18
SMALL_ANGLE_SQ = 1e-8
HEAD_MODES = ("shared", "per_gate")

STATES = torch.as_tensor(qcore.STATES, dtype=CDTYPE)
OBSERVABLES = torch.as_tensor(qcore.OBSERVABLES, dtype=CDTYPE)


@dataclasses.dataclass(frozen=True)
class GreyboxConfig:
    n_tokens: int = 5
    token_features: int = 2
    embed_dim: int = 16
    layers: int = 2
    heads: int = 2
    ff_dim: int = 32
    head_hidden: int = 32
    head_mode: str = "shared"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        widths = ("n_tokens", "embed_dim", "layers", "heads", "ff_dim", "head_hidden",
                  "batch_size")
        for name in widths:
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be at least 1")
        if self.token_features != 2:
            raise ConfigError("Each pulse token carries exactly 2 features (x and y amplitude)")
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"Embedding width {self.embed_dim} is not divisible by {self.heads} heads"
            )
        if self.head_mode not in HEAD_MODES:
            raise ConfigError(f"Unknown head mode {self.head_mode!r}, expected one of {HEAD_MODES}")
        if self.epochs < 0:
            raise ConfigError("model.epochs must not be negative")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def su2_step(hx, hy, hz, dt):
    """Differentiable exp(-i (hx X + hy Y + hz Z) dt), smooth through |h| = 0."""
    theta_sq = (hx * hx + hy * hy + hz * hz) * (dt * dt)
    small = theta_sq < SMALL_ANGLE_SQ
    theta = torch.sqrt(torch.where(small, torch.ones_like(theta_sq), theta_sq))
    cos = torch.where(small, 1 - theta_sq / 2 + theta_sq ** 2 / 24, torch.cos(theta))
    sinc = torch.where(small, 1 - theta_sq / 6 + theta_sq ** 2 / 120, torch.sin(theta) / theta)
    s = dt * sinc

    top = torch.stack([torch.complex(cos, -s * hz), torch.complex(-s * hy, -s * hx)], dim=-1)
    bottom = torch.stack([torch.complex(s * hy, -s * hx), torch.complex(cos, s * hz)], dim=-1)
    return torch.stack([top, bottom], dim=-2)


def ordered_product(steps):
    while steps.shape[-3] > 1:
        count = steps.shape[-3]
        even = count - count % 2
        paired = steps[..., 1:even:2, :, :] @ steps[..., 0:even:2, :, :]
        if count % 2:
            paired = torch.cat([paired, steps[..., even:, :, :]], dim=-3)
        steps = paired
    return steps[..., 0, :, :]


def dagger(op):
    return op.conj().transpose(-1, -2)


def decode_noise_operators(noise_params):
    """(..., 15) -> V_O of shape (..., 3, 2, 2) for O = X, Y, Z.

    Per observable: three angles give Q = exp(-i a.sigma), two parameters d
    give eigenvalues 1 - 2 tanh|d| in (-1, 1]. Zero parameters decode to the
    identity; |d| takes the d >= 0 branch at zero so the gradient there is
    not zero.
    """
    p = noise_params.reshape(*noise_params.shape[:-1], 3, NOISE_PARAMS_PER_OBSERVABLE)
    q = su2_step(p[..., 0], p[..., 1], p[..., 2], 1.0)
    d = p[..., 3:5]
    eigenvalues = 1 - 2 * torch.tanh(torch.where(d >= 0, d, -d))
    diagonal = torch.diag_embed(eigenvalues.to(CDTYPE))
    return q @ diagonal @ dagger(q)


def control_propagator(amplitudes, basis, dt):
    """Noiseless U_c(T) for amplitudes (B, 2, n) on a (n, M) Gaussian basis."""
    fields = amplitudes @ basis
    fx, fy = fields[..., 0, :], fields[..., 1, :]
    return ordered_product(su2_step(fx, fy, torch.zeros_like(fx), dt))


def whitebox_expectations(amplitudes, noise_ops, basis, dt):
    """Re Tr(U_c rho U_c^dagger O V_O) for the six states and three observables.

    The real part is the expectation of the Hermitian part (O V + V O) / 2,
    bounded by the spectral norm of V_O.
    """
    unitary = control_propagator(amplitudes, basis, dt)[..., None, :, :]
    rho = unitary @ STATES @ dagger(unitary)
    weighted = OBSERVABLES @ noise_ops
    return torch.einsum("...oij,...sji->...so", weighted, rho).real


def ptm_from_expectations(expectations):
    e = torch.clamp(expectations, -1.0, 1.0)
    plus, minus = e[..., 0::2, :], e[..., 1::2, :]
    block = (plus - minus).transpose(-1, -2) / 2
    column = (plus[..., 2, :] + minus[..., 2, :]) / 2
    lower = torch.cat([column[..., None], block], dim=-1)
    top = torch.zeros(lower.shape[:-2] + (1, 4), dtype=lower.dtype)
    top[..., 0, 0] = 1.0
    return torch.cat([top, lower], dim=-2)


def avg_gate_fidelity(ptm, target_ptm):
    return (2 * (ptm * target_ptm).sum(dim=(-1, -2)) / 4 + 1) / 3


class RefineHead(nn.Module):
    """Residual head e + (1 - e^2) tanh(r(e)) / 2, bounded to [-1, 1].

    The output layer starts at zero, so a fresh head is the identity map.
    """

    def __init__(self, hidden):
        super().__init__()
        self.hidden = nn.Linear(N_EXPECTATIONS, hidden, dtype=DTYPE)
        self.out = nn.Linear(hidden, N_EXPECTATIONS, dtype=DTYPE)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, expectations):
        e = torch.clamp(expectations, -1.0, 1.0)
        residual = self.out(torch.tanh(self.hidden(e)))
        return e + 0.5 * (1 - e * e) * torch.tanh(residual)


class Blackbox(nn.Module):
    """Transformer encoder over the pulse tokens (A_x,k, A_y,k)."""

    def __init__(self, cfg: GreyboxConfig):
        super().__init__()
        self.embed = nn.Linear(cfg.token_features, cfg.embed_dim, dtype=DTYPE)
        self.position = nn.Parameter(0.02 * torch.randn(cfg.n_tokens, cfg.embed_dim, dtype=DTYPE))
        layer = nn.TransformerEncoderLayer(
            cfg.embed_dim, cfg.heads, dim_feedforward=cfg.ff_dim, dropout=0.0,
            batch_first=True, dtype=DTYPE,
        )
        self.encoder = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.head = nn.Linear(cfg.embed_dim, N_NOISE_PARAMS, dtype=DTYPE)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, tokens):
        x = self.embed(tokens) + self.position
        x = self.encoder(x)
        return self.head(x.mean(dim=-2))


class GreyboxModel(nn.Module):
    def __init__(self, cfg: GreyboxConfig, shape: PulseShapeConfig,
                 gates: typing.Sequence[qcore.GateTarget]):
        super().__init__()
        if cfg.n_tokens != shape.n_pulses:
            raise ConfigError(
                f"Model expects {cfg.n_tokens} pulse tokens, shapes define {shape.n_pulses}"
            )
        if not gates:
            raise ConfigError("Model needs at least one gate target")
        self.cfg = cfg
        self.shape = shape
        self.gates = tuple(gates)

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.blackbox = Blackbox(cfg)
            if cfg.head_mode == "shared":
                self.refine = RefineHead(cfg.head_hidden)
            else:
                self.refine = nn.ModuleList(RefineHead(cfg.head_hidden) for _ in self.gates)

        self.register_buffer("basis", torch.as_tensor(np.array(shape.basis), dtype=DTYPE),
                             persistent=False)
        self.register_buffer(
            "targets", torch.as_tensor(np.stack([g.ptm for g in self.gates]), dtype=DTYPE),
            persistent=False,
        )
        # dropout is zero, so training mode is used throughout; it also keeps
        # the fused inference kernels of the encoder off
        self.train()

    @property
    def dt(self):
        return self.shape.grid.dt

    def gate_index(self, gate) -> int:
        for i, target in enumerate(self.gates):
            if target.gate == gate:
                return i
        raise ConfigError(f"Gate {gate.value} is not part of this model")

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def noise_params(self, amplitudes):
        tokens = amplitudes.transpose(-1, -2) / self.shape.a_max
        return self.blackbox(tokens)

    def expectations(self, amplitudes):
        noise_ops = decode_noise_operators(self.noise_params(amplitudes))
        return whitebox_expectations(amplitudes, noise_ops, self.basis, self.dt)

    def refine_expectations(self, expectations, head=None):
        """(B, 6, 3) -> (B, 6, 3) through the shared head or the per-gate head `head`."""
        flat = expectations.reshape(*expectations.shape[:-2], N_EXPECTATIONS)
        module = self.refine if head is None else self.refine[head]
        return module(flat).reshape(expectations.shape)

    def forward(self, amplitudes):
        """Predicted gate fidelities, shape (B, len(gates)), clamped to [0, 1]."""
        e = self.expectations(amplitudes)
        if self.cfg.head_mode == "shared":
            ptm = ptm_from_expectations(self.refine_expectations(e))
            fidelities = avg_gate_fidelity(ptm[..., None, :, :], self.targets)
        else:
            fidelities = torch.stack([
                avg_gate_fidelity(ptm_from_expectations(self.refine_expectations(e, i)),
                                  self.targets[i])
                for i in range(len(self.gates))
            ], dim=-1)
        return torch.clamp(fidelities, 0.0, 1.0)

    def predict(self, params: typing.Sequence[PulseParams]) -> np.ndarray:
        with torch.no_grad():
            return self(as_amplitudes(params)).numpy()


def as_amplitudes(params: typing.Sequence[PulseParams]):
    return torch.as_tensor(np.stack([p.as_array() for p in params]), dtype=DTYPE)


def blackbox_forward(p: PulseParams, model: GreyboxModel) -> np.ndarray:
    with torch.no_grad():
        return model.noise_params(as_amplitudes([p]))[0].numpy()


def evaluate_whitebox(p: PulseParams, noise_ops, cfg: PulseShapeConfig) -> np.ndarray:
    """Whitebox expectations for one pulse set and given V_O (numpy in, numpy out)."""
    basis = torch.as_tensor(np.array(cfg.basis), dtype=DTYPE)
    ops = torch.as_tensor(np.asarray(noise_ops), dtype=CDTYPE)
    with torch.no_grad():
        e = whitebox_expectations(as_amplitudes([p]), ops[None], basis, cfg.grid.dt)
    return e[0].numpy()


def greybox_forward(p: PulseParams, model: GreyboxModel) -> np.ndarray:
    return model.predict([p])[0]
