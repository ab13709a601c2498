"""Coordinate-MLP neural field with hand-written forward and backward passes.

The network maps lattice coordinates in [-1, 1]^2 to field values: a frozen
Fourier feature embedding gamma(x) = [sin(2 pi B x), cos(2 pi B x)] with
B ~ N(0, sigma_f^2), followed by hidden blocks of LayerNorm -> affine -> SiLU
and a plain linear head. Training uses decoupled-weight-decay adaptive moment
estimation with a cosine-annealed learning rate.

Residual updates come in two flavors: full fine-tuning (store the weight
delta) and low-rank adapters (store factor pairs B A added to the hidden
affine weights; the head and the embedding stay frozen in adapter mode, since
the rank budget r <= min(n, k)/2 cannot be met by the 1 x d head). Adapters
are zero-initialized on the up factor so a fresh adapter leaves the forward
pass bit-identical, and merge simply folds B A into the base weights.

All math runs in float64; storage precision is the codec's concern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from .grid import CoordinateLattice, ShapeMismatchError, Snapshot, make_lattice

LN_EPS = 1e-5
DIVERGENCE_LOSS = 1e6
FORWARD_CHUNK = 16384
FULL_BATCH_LIMIT = 4096  # grids up to 64^2 train full-batch for determinism


class NumericInstabilityError(FloatingPointError):
    """A forward pass produced non-finite values; carries the failing layer."""

    def __init__(self, layer: int | str):
        super().__init__(f"non-finite activations at layer {layer}")
        self.layer = layer


class TrainingDivergedError(RuntimeError):
    """Training loss exceeded the divergence limit; carries the loss history."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = list(history)


class TrainMode(Enum):
    SCRATCH = "scratch"
    FULL_FT = "full"
    LORA = "lora"


@dataclass(frozen=True)
class NfArchitecture:
    """Shape of the coordinate MLP (defaults follow the 256 x 6 base model)."""

    hidden_dim: int = 256
    n_layers: int = 6
    ffm_dim: int = 256
    ffm_frequency: float = 7.0
    in_dim: int = 2
    out_dim: int = 1

    def __post_init__(self) -> None:
        if min(self.hidden_dim, self.n_layers, self.ffm_dim, self.in_dim, self.out_dim) < 1:
            raise ValueError("all architecture dimensions must be >= 1")
        if self.ffm_frequency <= 0:
            raise ValueError("ffm_frequency must be positive")
        if self.ffm_dim % 2 != 0:
            raise ValueError("ffm_dim must be even (sin/cos pairs)")

    def hidden_shapes(self) -> list[tuple[int, int]]:
        """(n, k) of each hidden affine layer: first maps the embedding."""
        shapes = [(self.hidden_dim, self.ffm_dim)]
        shapes += [(self.hidden_dim, self.hidden_dim)] * (self.n_layers - 1)
        return shapes

    def param_count(self) -> int:
        total = (self.ffm_dim // 2) * self.in_dim
        for n, k in self.hidden_shapes():
            total += 2 * k + n * k + n  # LayerNorm gain/shift + affine
        total += self.out_dim * self.hidden_dim + self.out_dim
        return total


@dataclass
class LayerParams:
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class NeuralFieldParams:
    """All weights of the coordinate MLP. The FFM matrix is frozen after init."""

    arch: NfArchitecture
    ffm: np.ndarray
    layers: list[LayerParams]
    head_weight: np.ndarray
    head_bias: np.ndarray

    def copy(self) -> "NeuralFieldParams":
        return NeuralFieldParams(
            arch=self.arch,
            ffm=self.ffm.copy(),
            layers=[
                LayerParams(l.ln_gain.copy(), l.ln_bias.copy(), l.weight.copy(), l.bias.copy())
                for l in self.layers
            ],
            head_weight=self.head_weight.copy(),
            head_bias=self.head_bias.copy(),
        )

    def astype(self, dtype) -> "NeuralFieldParams":
        return map_params(lambda a: a.astype(dtype), self)

    def flat_arrays(self) -> list[np.ndarray]:
        """Arrays in the documented serialization order."""
        out = [self.ffm]
        for l in self.layers:
            out.extend([l.ln_gain, l.ln_bias, l.weight, l.bias])
        out.extend([self.head_weight, self.head_bias])
        return out

    def param_count(self) -> int:
        return int(sum(a.size for a in self.flat_arrays()))


def map_params(fn, *params: NeuralFieldParams) -> NeuralFieldParams:
    """Apply ``fn`` to corresponding arrays of one or more parameter sets."""
    first = params[0]
    return NeuralFieldParams(
        arch=first.arch,
        ffm=fn(*[p.ffm for p in params]),
        layers=[
            LayerParams(
                ln_gain=fn(*[p.layers[i].ln_gain for p in params]),
                ln_bias=fn(*[p.layers[i].ln_bias for p in params]),
                weight=fn(*[p.layers[i].weight for p in params]),
                bias=fn(*[p.layers[i].bias for p in params]),
            )
            for i in range(len(first.layers))
        ],
        head_weight=fn(*[p.head_weight for p in params]),
        head_bias=fn(*[p.head_bias for p in params]),
    )


@dataclass
class LoraAdapter:
    """Rank-r factor pairs for the hidden affine layers (delta W = up @ down)."""

    arch: NfArchitecture
    rank: int
    down: list[np.ndarray]  # A_l, shape (r, k)
    up: list[np.ndarray]  # B_l, shape (n, r), zero-initialized

    @property
    def target_layers(self) -> tuple[int, ...]:
        return tuple(range(self.arch.n_layers))

    def flat_arrays(self) -> list[np.ndarray]:
        out = []
        for a, b in zip(self.down, self.up):
            out.extend([a, b])
        return out

    def param_count(self) -> int:
        return int(sum(a.size for a in self.flat_arrays()))

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(
            arch=self.arch,
            rank=self.rank,
            down=[a.copy() for a in self.down],
            up=[b.copy() for b in self.up],
        )


def adapter_param_count(arch: NfArchitecture, rank: int) -> int:
    """r (n + k) summed over the adapted (hidden affine) layers."""
    return sum(rank * (n + k) for n, k in arch.hidden_shapes())


def max_adapter_rank(arch: NfArchitecture) -> int:
    """Largest rank satisfying r <= min(n, k)/2 on every adapted layer."""
    return min(min(n, k) for n, k in arch.hidden_shapes()) // 2


@dataclass
class TrainConfig:
    """One snapshot's training recipe."""

    mode: TrainMode = TrainMode.FULL_FT
    epochs: int = 200
    batch_size: int = FULL_BATCH_LIMIT
    lr_initial: float = 1e-3
    lr_final: float = 1e-5
    weight_decay: float = 1e-6
    seed: int = 0
    lora_rank: int = 8
    target_mse: float | None = None  # optional early stop once reached

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (self.lr_initial >= self.lr_final > 0):
            raise ValueError("learning rates must satisfy lr_initial >= lr_final > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")


def init_params(arch: NfArchitecture, seed: int) -> NeuralFieldParams:
    """Deterministic initialization: FFM ~ N(0, sigma_f^2), affine fan-in uniform."""
    rng = np.random.Generator(np.random.PCG64(seed))
    ffm = rng.normal(0.0, arch.ffm_frequency, size=(arch.ffm_dim // 2, arch.in_dim))
    layers = []
    for n, k in arch.hidden_shapes():
        bound = 1.0 / math.sqrt(k)
        layers.append(
            LayerParams(
                ln_gain=np.ones(k),
                ln_bias=np.zeros(k),
                weight=rng.uniform(-bound, bound, size=(n, k)),
                bias=rng.uniform(-bound, bound, size=n),
            )
        )
    bound = 1.0 / math.sqrt(arch.hidden_dim)
    head_weight = rng.uniform(-bound, bound, size=(arch.out_dim, arch.hidden_dim))
    head_bias = rng.uniform(-bound, bound, size=arch.out_dim)
    return NeuralFieldParams(
        arch=arch, ffm=ffm, layers=layers, head_weight=head_weight, head_bias=head_bias
    )


def init_adapter(arch: NfArchitecture, rank: int, seed: int) -> LoraAdapter:
    """Fresh adapter: fan-in uniform down factors, zero up factors (delta W = 0)."""
    limit = max_adapter_rank(arch)
    if not (1 <= rank <= limit):
        raise ValueError(f"adapter rank must satisfy 1 <= r <= {limit}, got {rank}")
    rng = np.random.Generator(np.random.PCG64(seed))
    down, up = [], []
    for n, k in arch.hidden_shapes():
        bound = 1.0 / math.sqrt(k)
        down.append(rng.uniform(-bound, bound, size=(rank, k)))
        up.append(np.zeros((n, rank)))
    return LoraAdapter(arch=arch, rank=rank, down=down, up=up)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Clipping keeps exp() finite; sigmoid saturates to ~1e-27 beyond +-60.
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _embed(params: NeuralFieldParams, coords: np.ndarray) -> np.ndarray:
    """Frozen Fourier feature embedding [sin(2 pi B x), cos(2 pi B x)]."""
    x = np.asarray(coords, dtype=np.float64)
    z = 2.0 * np.pi * (x @ np.asarray(params.ffm, dtype=np.float64).T)
    return np.concatenate([np.sin(z), np.cos(z)], axis=1)


def _forward_cached(
    params: NeuralFieldParams,
    coords: np.ndarray,
    adapter: LoraAdapter | None,
    embed: np.ndarray | None = None,
) -> tuple[np.ndarray, list[dict], np.ndarray]:
    h = _embed(params, coords) if embed is None else embed
    caches: list[dict] = []
    for l, lp in enumerate(params.layers):
        mu = h.mean(axis=1, keepdims=True)
        xc = h - mu
        var = np.mean(xc * xc, axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        xhat = xc * inv
        u = xhat * lp.ln_gain + lp.ln_bias
        a = u @ np.asarray(lp.weight, dtype=np.float64).T + lp.bias
        p = None
        if adapter is not None:
            p = u @ adapter.down[l].T
            a = a + p @ adapter.up[l].T
        if not np.all(np.isfinite(a)):
            raise NumericInstabilityError(l)
        s = _sigmoid(a)
        caches.append({"xhat": xhat, "inv": inv, "u": u, "a": a, "s": s, "p": p})
        h = a * s
    y = h @ np.asarray(params.head_weight, dtype=np.float64).T + params.head_bias
    if not np.all(np.isfinite(y)):
        raise NumericInstabilityError("head")
    return y, caches, h


def forward(
    params: NeuralFieldParams,
    coords: np.ndarray,
    adapter: LoraAdapter | None = None,
) -> np.ndarray:
    """Evaluate the field at a batch of (x, y) coordinates in [-1, 1]^2."""
    y, _, _ = _forward_cached(params, coords, adapter)
    return y


def _backward(
    params: NeuralFieldParams,
    adapter: LoraAdapter | None,
    caches: list[dict],
    h_last: np.ndarray,
    dy: np.ndarray,
) -> dict[tuple, np.ndarray]:
    """Reverse-mode gradients for the trainable set.

    Full mode trains every layer parameter plus the head; adapter mode trains
    only the factor pairs. The FFM matrix is frozen always.
    """
    grads: dict[tuple, np.ndarray] = {}
    lora = adapter is not None
    if not lora:
        grads[("head", "weight")] = dy.T @ h_last
        grads[("head", "bias")] = dy.sum(axis=0)
    dh = dy @ np.asarray(params.head_weight, dtype=np.float64)
    for l in reversed(range(len(params.layers))):
        lp = params.layers[l]
        c = caches[l]
        a, s, u, xhat, inv = c["a"], c["s"], c["u"], c["xhat"], c["inv"]
        da = dh * (s * (1.0 + a * (1.0 - s)))
        du = da @ np.asarray(lp.weight, dtype=np.float64)
        if lora:
            grads[("up", l)] = da.T @ c["p"]
            dp = da @ adapter.up[l]
            grads[("down", l)] = dp.T @ u
            du = du + dp @ adapter.down[l]
        else:
            grads[("layer", l, "weight")] = da.T @ u
            grads[("layer", l, "bias")] = da.sum(axis=0)
            grads[("layer", l, "ln_gain")] = (du * xhat).sum(axis=0)
            grads[("layer", l, "ln_bias")] = du.sum(axis=0)
        dxhat = du * lp.ln_gain
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dh = (dxhat - m1 - xhat * m2) * inv
    return grads


def loss_and_grads(
    params: NeuralFieldParams,
    snapshot: Snapshot,
    lattice: CoordinateLattice,
    batch: np.ndarray,
    adapter: LoraAdapter | None = None,
    _embed_rows: np.ndarray | None = None,
) -> tuple[float, dict[tuple, np.ndarray]]:
    """Mean-squared error over a batch of lattice points plus exact gradients."""
    coords = lattice.points[batch]
    targets = np.asarray(snapshot.values, dtype=np.float64).ravel()[batch][:, None]
    y, caches, h_last = _forward_cached(params, coords, adapter, embed=_embed_rows)
    err = y - targets
    mse = float(np.mean(err * err))
    dy = (2.0 / err.size) * err
    return mse, _backward(params, adapter, caches, h_last, dy)


def _trainables(
    params: NeuralFieldParams, adapter: LoraAdapter | None
) -> list[tuple[tuple, np.ndarray, bool]]:
    """(key, array, decays) triples; weight decay applies to matrices only."""
    if adapter is not None:
        out = []
        for l in range(len(adapter.down)):
            out.append((("down", l), adapter.down[l], True))
            out.append((("up", l), adapter.up[l], True))
        return out
    out = []
    for l, lp in enumerate(params.layers):
        out.append((("layer", l, "ln_gain"), lp.ln_gain, False))
        out.append((("layer", l, "ln_bias"), lp.ln_bias, False))
        out.append((("layer", l, "weight"), lp.weight, True))
        out.append((("layer", l, "bias"), lp.bias, False))
    out.append((("head", "weight"), params.head_weight, True))
    out.append((("head", "bias"), params.head_bias, False))
    return out


class _AdamW:
    """Adaptive moment estimation with decoupled weight decay (in-place updates)."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[tuple, np.ndarray] = {}
        self.v: dict[tuple, np.ndarray] = {}
        self.t = 0

    def step(
        self,
        trainables: list[tuple[tuple, np.ndarray, bool]],
        grads: dict[tuple, np.ndarray],
        lr: float,
        weight_decay: float,
    ) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, tensor, decays in trainables:
            g = grads[key]
            m = self.m.setdefault(key, np.zeros_like(tensor))
            v = self.v.setdefault(key, np.zeros_like(tensor))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if decays and weight_decay > 0:
                update = update + weight_decay * tensor
            tensor -= lr * update


def cosine_lr(cfg: TrainConfig, epoch: int) -> float:
    """Cosine annealing from lr_initial to lr_final over cfg.epochs epochs."""
    if cfg.epochs == 1:
        return cfg.lr_initial
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr_initial - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


def evaluate_mse(
    params: NeuralFieldParams,
    snapshot: Snapshot,
    lattice: CoordinateLattice,
    adapter: LoraAdapter | None = None,
    _embed_all: np.ndarray | None = None,
) -> float:
    """Full-grid MSE, evaluated in fixed-size chunks."""
    targets = np.asarray(snapshot.values, dtype=np.float64).ravel()
    total = 0.0
    n = len(lattice)
    for start in range(0, n, FORWARD_CHUNK):
        sl = slice(start, min(start + FORWARD_CHUNK, n))
        rows = None if _embed_all is None else _embed_all[sl]
        y = _forward_cached(params, lattice.points[sl], adapter, embed=rows)[0][:, 0]
        diff = y - targets[sl]
        total += float(np.sum(diff * diff))
    return total / n


@dataclass
class TrainResult:
    """Outcome of one snapshot's training: new weights or an adapter, plus history."""

    params: NeuralFieldParams | None
    adapter: LoraAdapter | None
    history: list[float] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def train(params_in: NeuralFieldParams, snapshot: Snapshot, cfg: TrainConfig) -> TrainResult:
    """Fit the field to one snapshot.

    Scratch re-initializes from cfg.seed (params_in supplies the
    architecture); FULL_FT continues from params_in; LORA freezes params_in
    and trains a fresh adapter. ``history`` holds the full-grid MSE after
    each epoch. Raises TrainingDivergedError when the loss explodes.
    """
    arch = params_in.arch
    if cfg.mode is TrainMode.SCRATCH:
        params = init_params(arch, cfg.seed)
        adapter = None
    elif cfg.mode is TrainMode.FULL_FT:
        params = params_in.copy().astype(np.float64)
        adapter = None
    else:
        params = params_in.copy().astype(np.float64)
        adapter = init_adapter(arch, cfg.lora_rank, cfg.seed)
    lattice = make_lattice(snapshot.shape)
    n = len(lattice)
    trainables = _trainables(params, adapter)
    opt = _AdamW()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    history: list[float] = []
    # The embedding matrix is frozen, so the lattice features never change.
    embed_all = _embed(params, lattice.points)

    def _check(loss: float) -> None:
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise TrainingDivergedError(f"training diverged (loss={loss})", history)

    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg, epoch)
        if n <= cfg.batch_size:
            batches = [np.arange(n)]
        else:
            perm = rng.permutation(n)
            batches = [perm[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        try:
            for batch in batches:
                mse, grads = loss_and_grads(
                    params, snapshot, lattice, batch, adapter, _embed_rows=embed_all[batch]
                )
                _check(mse)
                opt.step(trainables, grads, lr, cfg.weight_decay)
            epoch_mse = evaluate_mse(params, snapshot, lattice, adapter, _embed_all=embed_all)
        except NumericInstabilityError as exc:
            raise TrainingDivergedError(f"training diverged ({exc})", history) from exc
        _check(epoch_mse)
        history.append(epoch_mse)
        if cfg.target_mse is not None and epoch_mse <= cfg.target_mse:
            break
    if cfg.mode is TrainMode.LORA:
        return TrainResult(params=None, adapter=adapter, history=history)
    return TrainResult(params=params, adapter=None, history=history)


def merge_adapter(params: NeuralFieldParams, adapter: LoraAdapter) -> NeuralFieldParams:
    """Fold the adapter into the base weights: W_l <- W_l + up_l @ down_l.

    Merging is additive, not idempotent: merging the same adapter twice adds
    2 B A. Forward of the merged weights matches forward(params, adapter).
    """
    if len(adapter.down) != len(params.layers):
        raise ShapeMismatchError("adapter does not cover the network's hidden layers")
    merged = params.copy()
    for l, lp in enumerate(merged.layers):
        delta = adapter.up[l].astype(np.float64) @ adapter.down[l].astype(np.float64)
        if delta.shape != lp.weight.shape:
            raise ShapeMismatchError(
                f"adapter shape {delta.shape} does not match layer {l} weight {lp.weight.shape}"
            )
        lp.weight = lp.weight + delta
    return merged


def reconstruct(
    params: NeuralFieldParams,
    lattice: CoordinateLattice,
    shape: tuple[int, int],
    adapter: LoraAdapter | None = None,
    domain: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0),
    timestep_index: int = 0,
    time: float = 0.0,
) -> Snapshot:
    """Query the field at every lattice point and assemble a snapshot."""
    if lattice.source_shape != tuple(shape):
        raise ShapeMismatchError(
            f"lattice shape {lattice.source_shape} does not match requested {tuple(shape)}"
        )
    n = len(lattice)
    values = np.empty(n, dtype=np.float64)
    for start in range(0, n, FORWARD_CHUNK):
        sl = slice(start, min(start + FORWARD_CHUNK, n))
        values[sl] = forward(params, lattice.points[sl], adapter)[:, 0]
    return Snapshot(
        values=values.reshape(shape).astype(np.float32),
        domain=domain,
        timestep_index=timestep_index,
        time=time,
    )
