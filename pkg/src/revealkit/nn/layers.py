"""Dense layers, GRU cell, MLP with dropout, and their parameter containers.

Parameter containers are dataclasses whose array fields may hold either
plain ndarrays or :class:`~revealkit.nn.autodiff.Var` leaves, so the same
forward code serves inference and training.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Var


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


class ParamContainer:
    """Mixin giving dataclass parameter sets a flat name -> array view."""

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (np.ndarray, Var)):
                out[f.name] = ad.value(v)
        return out

    def replace_tensors(self, tensors: dict):
        kwargs = {f.name: tensors.get(f.name, getattr(self, f.name)) for f in fields(self)}
        return type(self)(**kwargs)

    def as_vars(self):
        """Copy with every array replaced by a gradient-tracking leaf."""
        return self.replace_tensors({k: Var(v, requires_grad=True) for k, v in self.tensors().items()})


@dataclass
class GruParams(ParamContainer):
    Wz: np.ndarray
    Wr: np.ndarray
    Wh: np.ndarray
    Uz: np.ndarray
    Ur: np.ndarray
    Uh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray

    @property
    def hidden(self) -> int:
        return ad.value(self.Uz).shape[0]

    @property
    def input_dim(self) -> int:
        return ad.value(self.Wz).shape[1]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "GruParams":
        return cls(
            Wz=xavier_uniform(rng, hidden, input_dim),
            Wr=xavier_uniform(rng, hidden, input_dim),
            Wh=xavier_uniform(rng, hidden, input_dim),
            Uz=xavier_uniform(rng, hidden, hidden),
            Ur=xavier_uniform(rng, hidden, hidden),
            Uh=xavier_uniform(rng, hidden, hidden),
            bz=np.zeros(hidden), br=np.zeros(hidden), bh=np.zeros(hidden),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden: int) -> "GruParams":
        z = np.zeros
        return cls(z((hidden, input_dim)), z((hidden, input_dim)), z((hidden, input_dim)),
                   z((hidden, hidden)), z((hidden, hidden)), z((hidden, hidden)),
                   z(hidden), z(hidden), z(hidden))


def gru_cell(h, m, params: GruParams) -> Var:
    """One GRU update of state ``h`` driven by input ``m``.

    Uses the Cho et al. gate convention::

        z  = sigmoid(Wz m + Uz h + bz)
        r  = sigmoid(Wr m + Ur h + br)
        h~ = tanh(Wh m + Uh (r * h) + bh)
        h' = (1 - z) * h + z * h~

    ``h`` and ``m`` may be single vectors or row batches.
    """
    hv, mv = ad.as_var(h), ad.as_var(m)
    squeeze = hv.data.ndim == 1
    if squeeze:
        hv, mv = ad.reshape(hv, (1, -1)), ad.reshape(mv, (1, -1))
    H, I = params.hidden, params.input_dim
    if hv.shape[1] != H:
        raise ValueError(f"GRU state has dimension {hv.shape[1]}, expected {H}")
    if mv.shape[1] != I:
        raise ValueError(f"GRU input has dimension {mv.shape[1]}, expected {I}")
    if hv.shape[0] != mv.shape[0]:
        raise ValueError("GRU state and input batch sizes differ")
    p = params
    z = ad.sigmoid(ad.linear(mv, p.Wz, p.bz) + ad.linear(hv, p.Uz))
    r = ad.sigmoid(ad.linear(mv, p.Wr, p.br) + ad.linear(hv, p.Ur))
    cand = ad.tanh(ad.linear(mv, p.Wh, p.bh) + ad.linear(r * hv, p.Uh))
    out = hv + z * (cand - hv)
    if squeeze:
        out = ad.reshape(out, (-1,))
    return out


@dataclass
class MlpParams(ParamContainer):
    """Three ReLU hidden layers plus a 2-way output layer.

    Weights are stored [out, in]. ``dropout`` is the drop probability applied
    to hidden activations during training.
    """

    W0: np.ndarray
    b0: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    dropout: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def input_dim(self) -> int:
        return ad.value(self.W0).shape[1]

    @property
    def sizes(self) -> list[int]:
        return [ad.value(self.W0).shape[1]] + [ad.value(getattr(self, f"W{i}")).shape[0] for i in range(4)]

    @classmethod
    def init(cls, input_dim: int, rng: np.random.Generator,
             hidden: tuple[int, ...] = (256, 128, 256), n_out: int = 2,
             dropout: float = 0.2) -> "MlpParams":
        if len(hidden) != 3:
            raise ValueError("exactly three hidden layers are supported")
        dims = [input_dim, *hidden, n_out]
        kw = {}
        for i in range(4):
            kw[f"W{i}"] = xavier_uniform(rng, dims[i + 1], dims[i])
            kw[f"b{i}"] = np.zeros(dims[i + 1])
        return cls(**kw, dropout=dropout)

    @classmethod
    def zeros(cls, input_dim: int, hidden: tuple[int, ...] = (256, 128, 256),
              n_out: int = 2, dropout: float = 0.2) -> "MlpParams":
        dims = [input_dim, *hidden, n_out]
        kw = {}
        for i in range(4):
            kw[f"W{i}"] = np.zeros((dims[i + 1], dims[i]))
            kw[f"b{i}"] = np.zeros(dims[i + 1])
        return cls(**kw, dropout=dropout)


def dropout_mask(shape: tuple[int, ...], p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by 1/(1-p)."""
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def mlp_forward(x, params: MlpParams, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Var, Var]:
    """Return ``(latent, logits)`` for a vector or row batch ``x``.

    ``latent`` is the (post-dropout) output of the last hidden layer, the
    vector that feeds the output layer.
    """
    xv = ad.as_var(x)
    squeeze = xv.data.ndim == 1
    if squeeze:
        xv = ad.reshape(xv, (1, -1))
    if xv.shape[1] != params.input_dim:
        raise ValueError(f"MLP input has dimension {xv.shape[1]}, expected {params.input_dim}")
    drop = training and params.dropout > 0.0
    if drop and rng is None:
        raise ValueError("training with dropout needs an rng")
    a = xv
    for i in range(3):
        a = ad.relu(ad.linear(a, getattr(params, f"W{i}"), getattr(params, f"b{i}")))
        if drop:
            a = a * dropout_mask(a.shape, params.dropout, rng)
    logits = ad.linear(a, params.W3, params.b3)
    if squeeze:
        return ad.reshape(a, (-1,)), ad.reshape(logits, (-1,))
    return a, logits
