"""
🧮 ALIGNED SAE LAB - NUMÉRICA
============================
Álgebra linear densa em float64, RNG determinístico (Philox) e a regra de atualização do Adam
"""

from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from config import Config
from exceptions import DimensionError, NumericalError, shape_of

# Matrix = ndarray float64 2-D, row-major
Matrix = np.ndarray


def as_matrix(data, name: str = "matrix") -> Matrix:
    """Converte para matriz float64 2-D C-contígua, rejeitando NaN/Inf"""
    array = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2:
        raise DimensionError(f"❌ {name} deve ser 2-D, recebido ndim={array.ndim}")
    ensure_finite(array, name)
    return array


def ensure_finite(array: np.ndarray, name: str, step=None) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericalError("❌ Valor não finito detectado", tensor=name, step=step)
    return array


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Produto matricial com acumulação em 64 bits"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("❌ matmul com formas incompatíveis", shape_of(a), shape_of(b))
    return a @ b


def column_norms(m: Matrix) -> np.ndarray:
    """Norma euclidiana de cada coluna"""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"❌ column_norms espera matriz 2-D, recebido ndim={m.ndim}")
    return np.sqrt(np.einsum("ij,ij->j", m, m))


def cosine_similarity(u, v) -> float:
    """u·v / (‖u‖‖v‖); 0 se alguma norma < 1e-12"""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError("❌ cosine_similarity com comprimentos diferentes", u.shape, v.shape)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < Config.COSINE_EPS or nv < Config.COSINE_EPS:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


class RngStream:
    """Gerador contador (Philox-4x64) semeado por (seed, stream)

    Mesma semente => mesma sequência em qualquer plataforma. O argumento
    `stream` separa fluxos independentes (init, batches, dados) da mesma semente.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        sequence = np.random.SeedSequence([self.seed & (2**64 - 1), self.stream])
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._generator.normal(0.0, scale, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator.uniform(low, high, size=shape)

    def bernoulli(self, shape, prob: float) -> np.ndarray:
        return self._generator.random(size=shape) < prob

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._generator.integers(low, high, size=size)


@dataclass(frozen=True)
class AdamState:
    """Momentos do Adam para um tensor"""
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    beta1: float = Config.ADAM_BETA1
    beta2: float = Config.ADAM_BETA2
    eps: float = Config.ADAM_EPS

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64), **hyper)


def adam_update(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float,
                name: str = "param") -> Tuple[np.ndarray, AdamState]:
    """Um passo do Adam com correção de viés; retorna (params, estado) novos"""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape or state.first_moment.shape != params.shape:
        raise DimensionError(f"❌ Adam: formas incompatíveis para {name}", params.shape, grads.shape)
    step = state.step + 1
    ensure_finite(grads, f"grad[{name}]", step=step)

    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, first_moment=m, second_moment=v, step=step)
