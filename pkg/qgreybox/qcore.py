"""
Single-qubit linear algebra shared by the simulator and the greybox model.

Operators are plain numpy arrays of shape (..., 2, 2) (complex128); leading
axes are batch axes. Channels are represented by their Pauli transfer matrix
R[i][j] = 1/2 Tr(s_i L(s_j)) with s_0 = I.
"""

import dataclasses
import threading
import typing

import numpy as np

from .exceptions import NumericError
from .labels import Gate
from .logging import logger

UNITARY_ATOL = 1e-12
HERMITIAN_ATOL = 1e-12
IMAG_DISCARD = 1e-10
IMAG_FAIL = 1e-8
EXPECTATION_SLACK = 1e-6

PAULI = {
    "I": np.array([[1, 0], [0, 1]], dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}
for _matrix in PAULI.values():
    _matrix.flags.writeable = False

OBSERVABLES = np.stack([PAULI["X"], PAULI["Y"], PAULI["Z"]])
OBSERVABLE_LABELS = ("X", "Y", "Z")

# tomography input states, ordered (x+, x-, y+, y-, z+, z-)
STATE_LABELS = ("x+", "x-", "y+", "y-", "z+", "z-")
STATES = np.stack([
    (PAULI["I"] + sign * OBSERVABLES[axis]) / 2
    for axis in range(3)
    for sign in (1, -1)
])
OBSERVABLES.flags.writeable = False
STATES.flags.writeable = False


def pauli(axis: str) -> np.ndarray:
    try:
        return PAULI[axis.upper()]
    except KeyError:
        raise ValueError(f"Not a Pauli axis: {axis}") from None


def dagger(op: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(op, -1, -2))


def is_unitary(op: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    return bool(np.allclose(op @ dagger(op), PAULI["I"], rtol=0, atol=atol))


def is_hermitian(op: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    return bool(np.allclose(op, dagger(op), rtol=0, atol=atol))


def su2_step(hx, hy, hz, dt: float) -> np.ndarray:
    """Propagator exp(-i (hx X + hy Y + hz Z) dt) in closed axis-angle form.

    The field components broadcast against each other; the result has the
    broadcast shape followed by (2, 2).
    """
    hx, hy, hz = np.broadcast_arrays(
        np.asarray(hx, dtype=float), np.asarray(hy, dtype=float), np.asarray(hz, dtype=float)
    )
    theta = np.sqrt(hx * hx + hy * hy + hz * hz) * dt
    cos = np.cos(theta)
    # sin(theta) / |h|, finite at |h| = 0
    sin_over_h = dt * np.sinc(theta / np.pi)

    out = np.empty(hx.shape + (2, 2), dtype=np.complex128)
    out[..., 0, 0] = cos - 1j * sin_over_h * hz
    out[..., 0, 1] = -1j * sin_over_h * (hx - 1j * hy)
    out[..., 1, 0] = -1j * sin_over_h * (hx + 1j * hy)
    out[..., 1, 1] = cos + 1j * sin_over_h * hz
    return out


def ordered_product(steps: np.ndarray) -> np.ndarray:
    """Time-ordered product S[M-1] ... S[1] S[0] over axis -3.

    Pairwise (tree) reduction, so a batch of realizations is multiplied with
    log2(M) vectorized matmuls instead of M.
    """
    if steps.shape[-3] == 0:
        raise ValueError("No steps to multiply")
    while steps.shape[-3] > 1:
        count = steps.shape[-3]
        even = count - count % 2
        paired = steps[..., 1:even:2, :, :] @ steps[..., 0:even:2, :, :]
        if count % 2:
            paired = np.concatenate([paired, steps[..., even:, :, :]], axis=-3)
        steps = paired
    return steps[..., 0, :, :]


def expectation(rho: np.ndarray, unitary: np.ndarray, observable: np.ndarray) -> float:
    value = np.trace(observable @ unitary @ rho @ dagger(unitary))
    if abs(value.imag) > IMAG_FAIL:
        raise NumericError(
            "Expectation has imaginary residue {:.3e}; non-Hermitian input?".format(value.imag)
        )
    return float(value.real)


def tomography_expectations(unitary: np.ndarray) -> np.ndarray:
    """Exact expectations of the three Pauli observables for the six input states.

    Accepts unitaries of shape (..., 2, 2) and returns (..., 6, 3) indexed
    [state, observable].
    """
    u = np.asarray(unitary)[..., None, :, :]
    rho_out = u @ STATES @ dagger(u)
    values = np.einsum("oij,...sji->...so", OBSERVABLES, rho_out)
    residue = np.max(np.abs(values.imag), initial=0.0)
    if residue > IMAG_FAIL:
        raise NumericError(
            "Expectation has imaginary residue {:.3e}; non-unitary input?".format(residue)
        )
    return values.real


class _ClampCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n):
        with self._lock:
            self.count += n


clamp_warnings = _ClampCounter()


def ptm_from_expectations(expectations: np.ndarray) -> np.ndarray:
    """Rebuild the Pauli transfer matrix from six-state tomography data.

    R[i][j] = (e[j+, i] - e[j-, i]) / 2 for i, j >= 1 and the non-unital
    column R[i][0] = (e[z+, i] + e[z-, i]) / 2. Batched over leading axes.
    """
    e = np.asarray(expectations, dtype=float)
    if e.shape[-2:] != (6, 3):
        raise ValueError(f"Expected (..., 6, 3) expectations, got {e.shape}")

    outside = int(np.count_nonzero(np.abs(e) > 1 + EXPECTATION_SLACK))
    if outside:
        clamp_warnings.add(outside)
        logger.warning(f"{outside} expectation value(s) outside [-1, 1] clamped")
    e = np.clip(e, -1.0, 1.0)

    plus = e[..., 0::2, :]
    minus = e[..., 1::2, :]
    ptm = np.zeros(e.shape[:-2] + (4, 4))
    ptm[..., 0, 0] = 1.0
    ptm[..., 1:, 1:] = np.swapaxes(plus - minus, -1, -2) / 2
    ptm[..., 1:, 0] = (plus[..., 2, :] + minus[..., 2, :]) / 2
    return ptm


def ptm_of_unitary(unitary: np.ndarray) -> np.ndarray:
    """Analytic PTM of U, R[i][j] = 1/2 Tr(s_i U s_j U^dagger)."""
    basis = np.stack([PAULI[a] for a in "IXYZ"])
    u = np.asarray(unitary)[..., None, :, :]
    images = u @ basis @ dagger(u)
    ptm = np.einsum("iab,...jba->...ij", basis, images) / 2
    return ptm.real


def process_fidelity(ptm: np.ndarray, target_ptm: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...ij->...", target_ptm, ptm) / 4


def avg_gate_fidelity(ptm: np.ndarray, target: typing.Union["GateTarget", np.ndarray]) -> np.ndarray:
    """Average gate fidelity (d F_pro + 1) / (d + 1) with d = 2."""
    target_ptm = target.ptm if isinstance(target, GateTarget) else target
    return (2 * process_fidelity(ptm, target_ptm) + 1) / 3


def rotation(axis: str, angle: float) -> np.ndarray:
    return np.cos(angle / 2) * PAULI["I"] - 1j * np.sin(angle / 2) * pauli(axis)


GATE_UNITARIES = {
    Gate.I: PAULI["I"],
    Gate.RX90: rotation("X", np.pi / 2),
    Gate.RY90: rotation("Y", np.pi / 2),
    Gate.RX180: rotation("X", np.pi),
    Gate.RY180: rotation("Y", np.pi),
    Gate.H: (PAULI["X"] + PAULI["Z"]) / np.sqrt(2),
}


@dataclasses.dataclass(frozen=True, eq=False)
class GateTarget:
    gate: Gate
    unitary: np.ndarray
    ptm: np.ndarray

    @property
    def label(self):
        return self.gate.value

    @classmethod
    def from_gate(cls, gate: Gate) -> "GateTarget":
        unitary = GATE_UNITARIES[gate]
        ptm = ptm_of_unitary(unitary)
        ptm.flags.writeable = False
        return cls(gate, unitary, ptm)


def gate_targets(gates: typing.Iterable[Gate]) -> typing.Tuple[GateTarget, ...]:
    return tuple(GateTarget.from_gate(gate) for gate in gates)
