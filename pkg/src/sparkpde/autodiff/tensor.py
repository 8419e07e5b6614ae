"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation in this package is built from the primitives
here. Recording is explicit: operations executed inside a ``with Tape():``
block append their node to that tape; outside a tape they are plain numpy
computations (used for frozen models and data generation).

``backward`` replays the tape once, in reverse recording order. Recording
order is a topological order by construction (an op can only consume already
created tensors), so each node's adjoint is complete when visited and every
node is visited exactly once. Gradients of parameters never touched by the
tape are exactly zero.

Complex quantities (spectra, spectral weights) are represented as explicit
real/imaginary tensor pairs; ``fft2``/``ifft2`` follow the unnormalized
forward / 1/(H*W) inverse convention.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse as _sparse
from scipy.special import erf as _erf

from ..errors import ContractViolation, NumericError

Array = np.ndarray

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_ACTIVE_TAPE: "Tape | None" = None


def _asarray(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array, optionally recorded on the active tape.

    ``_vjp`` maps the output cotangent to a tuple of cotangents aligned with
    ``_parents``; entries may be None for non-differentiable parents.
    """

    __slots__ = ("data", "requires_grad", "name", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _asarray(data)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], tuple] | None = None
        self._op: str = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, op={self._op}{label})"

    # -- arithmetic sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation("item() requires a scalar tensor")
        return float(self.data.reshape(()))


def parameter(data, name: str) -> Tensor:
    """A named trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


class Tape:
    """Ordered record of primitive operations for one backward pass."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._previous = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._previous

    def __len__(self) -> int:
        return len(self._nodes)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(out: Tensor, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    """Attach provenance to ``out`` if recording is on and any parent needs grads."""
    tape = _ACTIVE_TAPE
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._op = op
        tape._nodes.append(out)
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise primitives ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def vjp(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _record(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def vjp(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _record(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _record(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data)

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _record(out, (a, b), vjp, "div")


def square(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data * a.data)

    def vjp(g):
        return (2.0 * a.data * g,)

    return _record(out, (a,), vjp, "square")


def gelu(a) -> Tensor:
    """Exact (erf-form) GeLU."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out = Tensor(a.data * cdf)

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)

    return _record(out, (a,), vjp, "gelu")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return _record(out, (a,), vjp, "tanh")


def stop_gradient(a) -> Tensor:
    """Identity forward; blocks all gradient flow backward."""
    a = _as_tensor(a)
    return Tensor(a.data)


# -- reductions and shape ops --------------------------------------------------


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), vjp, "sum")


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def vjp(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), vjp, "reshape")


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes))
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _record(out, (a,), vjp, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(tensors)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return _record(out, tuple(tensors), vjp, "concat")


def gather_rows(a, indices: Array) -> Tensor:
    """Select rows along axis 0; repeated indices accumulate in backward."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(a.data[idx])

    def vjp(g):
        grad = np.zeros(a.shape, dtype=np.float64)
        np.add.at(grad, idx, g)
        return (grad,)

    return _record(out, (a,), vjp, "gather_rows")


def scatter_rows(a, indices: Array, num_rows: int) -> Tensor:
    """Place rows of ``a`` at unique ``indices`` in a zero tensor of ``num_rows`` rows."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    data = np.zeros((num_rows,) + a.shape[1:], dtype=np.float64)
    data[idx] = a.data
    out = Tensor(data)

    def vjp(g):
        return (g[idx],)

    return _record(out, (a,), vjp, "scatter_rows")


# -- linear algebra -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation("matmul requires tensors with ndim >= 2")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _record(out, (a, b), vjp, "matmul")


def sparse_matmul(matrix: _sparse.csr_matrix, x, matrix_t: _sparse.csr_matrix | None = None) -> Tensor:
    """``matrix @ x`` for a constant sparse matrix; x is (N, ...) flattened to 2-D."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ContractViolation("sparse_matmul expects a 2-D dense operand")
    mt = matrix_t if matrix_t is not None else matrix.T.tocsr()
    out = Tensor(matrix @ x.data)

    def vjp(g):
        return (mt @ g,)

    return _record(out, (x,), vjp, "sparse_matmul")


# -- Fourier transforms ----------------------------------------------------------


def fft2(real, imag) -> tuple[Tensor, Tensor]:
    """2-D DFT over the last two axes; unnormalized forward convention.

    Input and output are explicit (real, imag) pairs of equal shape.
    """
    real, imag = _as_tensor(real), _as_tensor(imag)
    if real.shape != imag.shape:
        raise ContractViolation("fft2: real/imag shape mismatch")
    spectrum = np.fft.fft2(real.data + 1j * imag.data, axes=(-2, -1))
    out_r = Tensor(np.ascontiguousarray(spectrum.real))
    out_i = Tensor(np.ascontiguousarray(spectrum.imag))

    def vjp_r(g):
        G = np.fft.fft2(g, axes=(-2, -1))
        return (np.ascontiguousarray(G.real), -np.ascontiguousarray(G.imag))

    def vjp_i(g):
        G = np.fft.fft2(g, axes=(-2, -1))
        return (np.ascontiguousarray(G.imag), np.ascontiguousarray(G.real))

    _record(out_r, (real, imag), vjp_r, "fft2.real")
    _record(out_i, (real, imag), vjp_i, "fft2.imag")
    return out_r, out_i


def ifft2(real, imag) -> tuple[Tensor, Tensor]:
    """Inverse 2-D DFT over the last two axes, scaled by 1/(H*W)."""
    real, imag = _as_tensor(real), _as_tensor(imag)
    if real.shape != imag.shape:
        raise ContractViolation("ifft2: real/imag shape mismatch")
    field = np.fft.ifft2(real.data + 1j * imag.data, axes=(-2, -1))
    out_r = Tensor(np.ascontiguousarray(field.real))
    out_i = Tensor(np.ascontiguousarray(field.imag))

    def vjp_r(g):
        G = np.fft.ifft2(g, axes=(-2, -1))
        return (np.ascontiguousarray(G.real), -np.ascontiguousarray(G.imag))

    def vjp_i(g):
        G = np.fft.ifft2(g, axes=(-2, -1))
        return (np.ascontiguousarray(G.imag), np.ascontiguousarray(G.real))

    _record(out_r, (real, imag), vjp_r, "ifft2.real")
    _record(out_i, (real, imag), vjp_i, "ifft2.imag")
    return out_r, out_i


def spectral_channel_mix(
    x,
    w_real,
    w_imag,
    mode_idx: Array,
    height: int,
    width: int,
    adjacency: _sparse.csr_matrix | None = None,
    adjacency_t: _sparse.csr_matrix | None = None,
    adjacency_rows: _sparse.csr_matrix | None = None,
    adjacency_rows_t: _sparse.csr_matrix | None = None,
) -> Tensor:
    """Fused spectral branch: real(ifft2(trunc(A @ fft2(x)) @ W)).

    x: (..., C_in, H, W). w_real/w_imag: (K, C_in, C_out) per retained mode.
    ``mode_idx`` holds K unique flat spatial indices of retained modes; all
    other modes are zeroed. ``adjacency`` optionally mixes spectral
    coefficients across grid nodes before the per-mode channel mixing;
    passing the pre-sliced ``adjacency_rows`` = A[mode_idx, :] (with its
    transpose) computes the same values while skipping the discarded rows.

    One tape node: keeps memory per evaluation at O(K) instead of storing
    every full-spectrum intermediate of the composed primitive chain.
    """
    x, w_real, w_imag = _as_tensor(x), _as_tensor(w_real), _as_tensor(w_imag)
    idx = np.asarray(mode_idx, dtype=np.int64)
    n_nodes = height * width
    lead = x.shape[:-3]
    c_in = x.shape[-3]
    if x.shape[-2:] != (height, width):
        raise ContractViolation("spectral_channel_mix: spatial shape mismatch")
    if w_real.ndim != 3 or w_real.shape[:2] != (len(idx), c_in) or w_imag.shape != w_real.shape:
        raise ContractViolation("spectral_channel_mix: weight shape mismatch")
    c_out = w_real.shape[-1]
    batch = int(np.prod(lead)) if lead else 1

    xd = x.data.reshape(batch, c_in, height, width)
    spectrum = np.fft.fft2(xd, axes=(-2, -1))
    nodes = spectrum.reshape(batch * c_in, n_nodes).T  # (N, B*C_in)
    if adjacency_rows is not None:
        picked = adjacency_rows @ nodes.real + 1j * (adjacency_rows @ nodes.imag)
    elif adjacency is not None:
        mixed_nodes = adjacency @ nodes.real + 1j * (adjacency @ nodes.imag)
        picked = mixed_nodes[idx]
    else:
        picked = nodes[idx]
    trunc = picked.reshape(len(idx), batch, c_in)  # saved for grad_w
    weights = w_real.data + 1j * w_imag.data
    mixed = trunc @ weights  # (K, B, C_out)
    full = np.zeros((n_nodes, batch * c_out), dtype=np.complex128)
    full[idx] = mixed.reshape(len(idx), batch * c_out)
    out_spec = full.T.reshape(batch, c_out, height, width)
    out_data = np.fft.ifft2(out_spec, axes=(-2, -1)).real
    out = Tensor(np.ascontiguousarray(out_data.reshape(lead + (c_out, height, width))))

    adj_t = adjacency_t
    if adjacency is not None and adjacency_rows is None and adj_t is None:
        adj_t = adjacency.T.tocsr()

    def vjp(g):
        gd = g.reshape(batch, c_out, height, width)
        # real() of ifft2: cotangent of the complex spectrum is conj(ifft2(g)).
        g_full = np.conj(np.fft.ifft2(gd, axes=(-2, -1)))
        g_mixed = g_full.reshape(batch * c_out, n_nodes).T[idx]
        g_mixed = g_mixed.reshape(len(idx), batch, c_out)
        g_w = np.conj(trunc).swapaxes(-1, -2) @ g_mixed  # (K, C_in, C_out)
        g_trunc = g_mixed @ np.conj(weights).swapaxes(-1, -2)  # (K, B, C_in)
        g_flat = g_trunc.reshape(len(idx), batch * c_in)
        if adjacency_rows is not None:
            g_nodes = adjacency_rows_t @ g_flat.real + 1j * (adjacency_rows_t @ g_flat.imag)
        else:
            g_nodes = np.zeros((n_nodes, batch * c_in), dtype=np.complex128)
            g_nodes[idx] = g_flat
            if adjacency is not None:
                g_nodes = adj_t @ g_nodes.real + 1j * (adj_t @ g_nodes.imag)
        g_spec = g_nodes.T.reshape(batch, c_in, height, width)
        # fft2 of a real input: cotangent is real(fft2(conj(g_spec))).
        g_x = np.fft.fft2(np.conj(g_spec), axes=(-2, -1)).real
        return (
            np.ascontiguousarray(g_x.reshape(x.shape)),
            np.ascontiguousarray(g_w.real),
            np.ascontiguousarray(g_w.imag),
        )

    return _record(out, (x, w_real, w_imag), vjp, "spectral_channel_mix")


# -- backward pass ----------------------------------------------------------------


def backward(
    loss: Tensor,
    tape: Tape,
    params: Iterable[Tensor] | None = None,
) -> dict[str, Array]:
    """Accumulate gradients of ``loss`` through ``tape``.

    Returns a map from parameter name to gradient for ``params`` (zeros for
    parameters the loss does not reach). With ``params=None``, returns
    gradients for every named leaf parameter encountered on the tape.
    """
    if loss.data.size != 1:
        raise ContractViolation(
            f"backward expects a scalar loss, got shape {loss.shape}"
        )
    if not np.isfinite(loss.data):
        raise NumericError("backward called on a non-finite loss")

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node), None)
        if g is None or node._vjp is None:
            continue
        contributions = node._vjp(g)
        for parent, contrib in zip(node._parents, contributions):
            if contrib is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(contrib)):
                raise NumericError(f"non-finite gradient in backward of '{node._op}'")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib

    if params is None:
        named = {}
        seen = set()
        for node in tape._nodes:
            for parent in node._parents:
                if parent.name and parent._vjp is None and id(parent) not in seen:
                    seen.add(id(parent))
                    named[parent.name] = grads.get(
                        id(parent), np.zeros(parent.shape, dtype=np.float64)
                    )
        return named

    result = {}
    for p in params:
        if p.name is None:
            raise ContractViolation("parameters passed to backward must be named")
        result[p.name] = grads.get(id(p), np.zeros(p.shape, dtype=np.float64))
    return result
