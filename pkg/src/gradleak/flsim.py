"""Miniature federated-learning simulator for first-layer gradient leakage.

Models are plain ReLU MLPs in float64.  The first-layer weight gradient of
a mini-batch factors exactly as G_w = (1/B) (L . R) X, with L the loss
partials w.r.t. the first-layer outputs and R the binary ReLU activation
mask; this module computes the factors analytically, quantizes them, and
packages the result as hidden-subset-sum instances where the mask plays
the hidden weight matrix and the encoded inputs play the hidden data.

Two losses are provided: ``cross_entropy`` (softmax over the final layer)
and ``sum_of_outputs`` (sum of first-layer activations), the latter making
L identically one so the idealized instance equals the true scaled
gradient bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoActiveNeuron, Overflow, RankDeficientMask
from .hssp import HsspInstance, PlantedInstance, _find_unit_pivot_rows
from .intmat import IntMatrix, Modulus, random_prime_bits
from .lattice import rank_exact

LOSSES = ("cross_entropy", "sum_of_outputs")


@dataclass
class MlpModel:
    """Fully-connected ReLU network; weights[l] has shape (out, in)."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def first_layer_width(self) -> int:
        return self.layer_sizes[1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


@dataclass(frozen=True)
class Batch:
    """A mini-batch: x has shape (B, u); labels are class indices."""

    x: np.ndarray
    labels: tuple[int, ...]

    @property
    def size(self) -> int:
        return self.x.shape[0]


@dataclass
class GradientBundle:
    """First-layer observables plus the ground-truth factors."""

    g_w: np.ndarray  # (M, u) averaged weight gradient
    g_b: np.ndarray  # (M,)   averaged bias gradient
    l_factor: np.ndarray  # (M, B) dL/dy for the first-layer outputs
    r_mask: np.ndarray  # (M, B) binary activation mask
    y_pre: np.ndarray  # (M, B) pre-activations
    x: np.ndarray  # (B, u) the batch inputs (ground truth for planting)


@dataclass(frozen=True)
class Encoding:
    """Fixed-point encoding: value v maps to round(scale * v) mod q."""

    scale: int
    q: Modulus

    def __post_init__(self) -> None:
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ValueError("scale must be a positive power of two")


def mlp_init(layer_sizes: tuple[int, ...] | list[int], rng_seed: int = 0) -> MlpModel:
    """Deterministic uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and one layer")
    rng = np.random.default_rng(rng_seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpModel(sizes, weights, biases)


def _forward(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    """Pre-activations per layer; ReLU applied between layers, none after the last."""
    pre = []
    act = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = act @ w.T + b
        pre.append(z)
        act = np.maximum(z, 0.0) if l < last else z
    return pre


def _loss_and_delta(z_out: np.ndarray, labels: tuple[int, ...], loss: str) -> tuple[float, np.ndarray]:
    """Total batch loss and dL/dz for the final layer (sum over samples)."""
    if loss == "cross_entropy":
        shifted = z_out - z_out.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        soft = expz / expz.sum(axis=1, keepdims=True)
        idx = np.arange(z_out.shape[0])
        lab = np.asarray(labels, dtype=int)
        total = float(-np.log(soft[idx, lab] + 1e-300).sum())
        delta = soft.copy()
        delta[idx, lab] -= 1.0
        return total, delta
    raise ValueError(f"unknown loss {loss!r}")


def model_gradients(
    model: MlpModel, batch: Batch, loss: str = "cross_entropy"
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Mean-loss gradients for every layer plus dL/dy of the first layer.

    Returns (weight_grads, bias_grads, dl_dy1) where dl_dy1 is the (B, M)
    matrix of partials w.r.t. the first layer's post-activation outputs and
    the gradients are averages over the batch.
    """
    if loss not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}")
    x = batch.x
    bsz = batch.size
    pre = _forward(model, x)
    acts = [x]
    last = len(model.weights) - 1
    for l, z in enumerate(pre):
        acts.append(np.maximum(z, 0.0) if l < last else z)
    if loss == "sum_of_outputs":
        # loss = sum of first-layer activations: dL/dy1 = 1 everywhere
        dl_dy1 = np.ones((bsz, model.first_layer_width))
        delta1 = dl_dy1 * (pre[0] > 0)
        w_grads = [np.zeros_like(w) for w in model.weights]
        b_grads = [np.zeros_like(b) for b in model.biases]
        w_grads[0] = delta1.T @ x / bsz
        b_grads[0] = delta1.sum(axis=0) / bsz
        return w_grads, b_grads, dl_dy1
    if last < 1:
        raise ValueError("cross-entropy factorization needs a hidden first layer")
    _, delta = _loss_and_delta(pre[-1], batch.labels, loss)
    w_grads = [np.zeros_like(w) for w in model.weights]
    b_grads = [np.zeros_like(b) for b in model.biases]
    dl_dy1 = None
    for l in range(last, -1, -1):
        w_grads[l] = delta.T @ acts[l] / bsz
        b_grads[l] = delta.sum(axis=0) / bsz
        if l > 0:
            dl_dact = delta @ model.weights[l]
            if l == 1:
                dl_dy1 = dl_dact.copy()
            delta = dl_dact * (pre[l - 1] > 0)
    return w_grads, b_grads, dl_dy1


def batch_loss(model: MlpModel, batch: Batch, loss: str = "cross_entropy") -> float:
    """Mean loss over the batch (the quantity whose gradient is shared)."""
    pre = _forward(model, batch.x)
    if loss == "sum_of_outputs":
        return float(np.maximum(pre[0], 0.0).sum()) / batch.size
    total, _ = _loss_and_delta(pre[-1], batch.labels, loss)
    return total / batch.size


def first_layer_grads(model: MlpModel, batch: Batch, loss: str = "cross_entropy") -> GradientBundle:
    """Analytic first-layer gradients with their exact factorization."""
    if batch.x.shape[1] != model.input_dim:
        raise ValueError("batch dimension disagrees with the model input size")
    w_grads, b_grads, dl_dy1 = model_gradients(model, batch, loss)
    z1 = batch.x @ model.weights[0].T + model.biases[0]
    r_mask = (z1 > 0).astype(np.int64)
    return GradientBundle(
        g_w=w_grads[0],
        g_b=b_grads[0],
        l_factor=dl_dy1.T,
        r_mask=r_mask.T,
        y_pre=z1.T,
        x=batch.x,
    )


def single_sample_reconstruct(bundle: GradientBundle) -> np.ndarray:
    """Closed-form input recovery for B = 1: x = g_w[m] / g_b[m].

    Uses the first neuron with a nonzero bias gradient; raises
    NoActiveNeuron when every neuron is dead.
    """
    if bundle.x.shape[0] != 1:
        raise ValueError("closed form requires a single-sample batch")
    for m in range(bundle.g_b.shape[0]):
        if bundle.g_b[m] != 0.0:
            return bundle.g_w[m] / bundle.g_b[m]
    raise NoActiveNeuron("all first-layer bias gradients vanish")


@dataclass
class AggregateBundle:
    """Average of per-client bundles plus the stacked exact factors."""

    g_w: np.ndarray
    g_b: np.ndarray
    d_stack: np.ndarray  # (M, N*B) horizontal concat of the clients' L.R
    x_stack: np.ndarray  # (N*B, u) vertical concat of the clients' inputs
    client_bundles: list[GradientBundle] = field(default_factory=list)


def fl_round(client_batches: list[Batch], model: MlpModel, loss: str = "cross_entropy") -> AggregateBundle:
    """One aggregation round: arithmetic mean of per-client first-layer grads."""
    if not client_batches:
        raise ValueError("need at least one client")
    bundles = [first_layer_grads(model, b, loss) for b in client_batches]
    g_w = sum(b.g_w for b in bundles) / len(bundles)
    g_b = sum(b.g_b for b in bundles) / len(bundles)
    d_stack = np.concatenate([b.l_factor * b.r_mask for b in bundles], axis=1)
    x_stack = np.concatenate([b.x for b in bundles], axis=0)
    return AggregateBundle(g_w=g_w, g_b=g_b, d_stack=d_stack, x_stack=x_stack, client_bundles=bundles)


def weight_sharing_round(
    model: MlpModel, client_batches: list[Batch], eta: float, loss: str = "cross_entropy"
) -> MlpModel:
    """Average of per-client single-step local updates.

    With one local step this coincides exactly with a global gradient step,
    which is why weight sharing leaks the same information as gradient
    sharing.
    """
    n = len(client_batches)
    if n < 1:
        raise ValueError("need at least one client")
    acc_w = [np.zeros_like(w) for w in model.weights]
    acc_b = [np.zeros_like(b) for b in model.biases]
    for batch in client_batches:
        w_grads, b_grads, _ = model_gradients(model, batch, loss)
        for l in range(len(acc_w)):
            acc_w[l] += model.weights[l] - eta * w_grads[l]
            acc_b[l] += model.biases[l] - eta * b_grads[l]
    out = model.copy()
    out.weights = [w / n for w in acc_w]
    out.biases = [b / n for b in acc_b]
    return out


def sgd_steps(
    model: MlpModel, batches: list[Batch], eta: float = 0.03, loss: str = "cross_entropy"
) -> MlpModel:
    """Plain SGD over the given batches; used to age models for attacks."""
    out = model.copy()
    for batch in batches:
        w_grads, b_grads, _ = model_gradients(out, batch, loss)
        for l in range(len(out.weights)):
            out.weights[l] = out.weights[l] - eta * w_grads[l]
            out.biases[l] = out.biases[l] - eta * b_grads[l]
    return out


# ---------------------------------------------------------------------------
# fixed-point encoding


def encode_real(mat: np.ndarray, enc: Encoding) -> IntMatrix:
    """round(scale * v) mod q, elementwise; raises Overflow out of range."""
    q = enc.q.q
    arr = np.atleast_2d(np.asarray(mat, dtype=float))
    if np.any(np.abs(arr) >= q / (2 * enc.scale)):
        raise Overflow("value outside the representable range of the encoding")
    if np.any(np.abs(arr) * enc.scale >= 2**52):
        raise Overflow("scaled value too large for exact float64 rounding")
    scaled = np.rint(arr * enc.scale).astype(object)
    return IntMatrix.from_rows([[int(v) % q for v in row] for row in scaled])


def decode_int(mat: IntMatrix, enc: Encoding) -> np.ndarray:
    """Back to reals via the symmetric representative; exact on grid points."""
    q = enc.q.q
    half = q // 2
    out = np.empty((mat.rows, mat.cols), dtype=float)
    for i, row in enumerate(mat.data):
        for j, v in enumerate(row):
            out[i, j] = (v - q if v > half else v) / enc.scale
    return out


def fl_q_bits(
    m_sub: int,
    hidden: int,
    dim: int,
    scale: int = 256,
    max_mag: float = 1.0,
    iota: float = 0.035,
    margin: int = 24,
) -> int:
    """Modulus size for gradient-derived instances attacked on m_sub rows.

    Two constraints: the modular product must equal the integer product
    (no wraparound), and the short vectors of the reduced mod-q orthogonal
    basis must be forced into the mask's orthogonal lattice.  Encoded data
    is bounded by scale*max_mag, which makes the second bound far smaller
    than for worst-case uniform instances.
    """
    enc_mag = max(2.0, scale * max_mag)
    wrap = math.log2(2 * enc_mag * hidden * dim) + 2
    gap = iota * m_sub + math.log2(m_sub) + math.log2(enc_mag * math.sqrt(hidden))
    return max(16, math.ceil(max(wrap, gap + margin)))


def default_encoding(
    m_sub: int,
    hidden: int,
    dim: int,
    scale: int = 256,
    max_mag: float = 1.0,
    rng_seed: int = 0,
    q_bits: int | None = None,
) -> Encoding:
    """Encoding with a prime modulus sized by :func:`fl_q_bits`."""
    import random as _random

    bits = q_bits if q_bits is not None else fl_q_bits(m_sub, hidden, dim, scale, max_mag)
    q = random_prime_bits(bits, _random.Random(rng_seed))
    return Encoding(scale=scale, q=Modulus(q))


# ---------------------------------------------------------------------------
# instance construction


def binary_regime_instance(bundle: GradientBundle, enc: Encoding) -> tuple[HsspInstance, PlantedInstance]:
    """Idealized observable H = R X_enc mod q (the scaled gradient under L = 1).

    The ReLU mask is the hidden weight matrix and the encoded batch the
    hidden data.  Raises RankDeficientMask when the mask has rank below the
    batch size or no invertible B x B submatrix mod q.
    """
    r_rows = [[int(v) for v in row] for row in bundle.r_mask]
    bsz = bundle.x.shape[0]
    q = enc.q.q
    if rank_exact(r_rows) != bsz or _find_unit_pivot_rows(r_rows, q, bsz) is None:
        raise RankDeficientMask(f"activation mask does not have full rank {bsz} mod q")
    _check_headroom(bundle.x, bsz, enc)
    x_enc = encode_real(bundle.x, enc)
    a = IntMatrix.from_rows(r_rows)
    h = (a * x_enc).mod(q)
    inst = HsspInstance(enc.q, h, a.rows, bsz, x_enc.cols)
    return inst, PlantedInstance(inst, a, x_enc)


def secure_aggregate_instance(
    bundles: list[GradientBundle], enc: Encoding
) -> tuple[HsspInstance, PlantedInstance]:
    """Defense-side observable: masks concatenate, hidden rank becomes N*B."""
    if not bundles:
        raise ValueError("need at least one client bundle")
    r_rows = [
        [int(v) for v in row]
        for row in np.concatenate([b.r_mask for b in bundles], axis=1)
    ]
    x_all = np.concatenate([b.x for b in bundles], axis=0)
    nb = x_all.shape[0]
    q = enc.q.q
    if rank_exact(r_rows) != nb or _find_unit_pivot_rows(r_rows, q, nb) is None:
        raise RankDeficientMask(f"stacked mask does not have full rank {nb} mod q")
    _check_headroom(x_all, nb, enc)
    x_enc = encode_real(x_all, enc)
    a = IntMatrix.from_rows(r_rows)
    h = (a * x_enc).mod(q)
    inst = HsspInstance(enc.q, h, a.rows, nb, x_enc.cols)
    return inst, PlantedInstance(inst, a, x_enc)


def _check_headroom(x: np.ndarray, hidden: int, enc: Encoding) -> None:
    max_mag = float(np.abs(x).max()) if x.size else 0.0
    if enc.q.q <= 2 * enc.scale * max(max_mag, 1e-9) * hidden * x.shape[1]:
        raise Overflow("modulus too small for wrap-free products at this batch size")
