"""
🧠 ALIGNED SAE LAB - MODELO SAE
==============================
Parametrização do SAE (standard / aligned / tied), forward para ReLU, TopK e BatchTopK
e penalidades de esparsidade ponderadas pela norma do decoder
"""

from dataclasses import dataclass, field, replace
from typing import Dict, NamedTuple, Optional

import numpy as np

from config import Config
from exceptions import ConfigError, DegenerateColumnError, DimensionError, shape_of
from numerics import Matrix, as_matrix, column_norms, matmul

ENCODER_MODES = ("standard", "aligned", "tied")
ACTIVATIONS = ("relu", "topk", "batchtopk")
PENALTIES = ("l1_weighted", "lp_annealed")


@dataclass(frozen=True)
class SaeVariant:
    """Arquitetura: modo do encoder, ativação e penalidade"""
    encoder_mode: str = "aligned"
    activation: str = "relu"
    k: Optional[int] = None
    penalty: str = "l1_weighted"
    p_start: float = 1.0
    p_end: float = 1.0
    anneal_steps: int = 0

    def validate(self, m: int) -> "SaeVariant":
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"❌ encoder_mode desconhecido: {self.encoder_mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"❌ activation desconhecida: {self.activation!r}")
        if self.penalty not in PENALTIES:
            raise ConfigError(f"❌ penalty desconhecida: {self.penalty!r}")
        if self.is_structural and (self.k is None or not 1 <= self.k <= m):
            raise ConfigError(f"❌ k={self.k} fora de [1, {m}] para {self.activation}")
        if not 0.0 < self.p_end <= self.p_start <= 1.0:
            raise ConfigError(f"❌ exige 0 < p_end <= p_start <= 1 (p_start={self.p_start}, p_end={self.p_end})")
        if self.anneal_steps < 0:
            raise ConfigError("❌ anneal_steps deve ser >= 0")
        return self

    @property
    def is_structural(self) -> bool:
        """TopK/BatchTopK: esparsidade estrutural, sem penalidade"""
        return self.activation in ("topk", "batchtopk")

    @property
    def label(self) -> str:
        act = self.activation if self.k is None else f"{self.activation}{self.k}"
        return f"{self.encoder_mode}/{act}/{self.penalty}"

    def to_dict(self) -> Dict:
        return {
            "encoder_mode": self.encoder_mode,
            "activation": self.activation,
            "k": self.k,
            "penalty": self.penalty,
            "p_start": self.p_start,
            "p_end": self.p_end,
            "anneal_steps": self.anneal_steps,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SaeVariant":
        return cls(**data)


@dataclass
class SaeParams:
    """Tensores livres do SAE; o encoder efetivo é sempre derivado"""
    w_dec: Matrix  # n×m
    b_enc: np.ndarray  # m
    b_dec: np.ndarray  # n
    variant: SaeVariant
    a_free: Optional[Matrix] = None  # m×(n−1), só aligned
    w_enc_raw: Optional[Matrix] = None  # m×n, só standard

    def __post_init__(self):
        n, m = self.w_dec.shape
        mode = self.variant.encoder_mode
        if mode == "aligned":
            if self.a_free is None or self.w_enc_raw is not None:
                raise ConfigError("❌ modo aligned exige apenas a_free")
            if self.a_free.shape != (m, n - 1):
                raise DimensionError("❌ a_free deve ser m×(n−1)", self.a_free.shape, (m, n - 1))
        elif mode == "standard":
            if self.w_enc_raw is None or self.a_free is not None:
                raise ConfigError("❌ modo standard exige apenas w_enc_raw")
            if self.w_enc_raw.shape != (m, n):
                raise DimensionError("❌ w_enc_raw deve ser m×n", self.w_enc_raw.shape, (m, n))
        elif self.a_free is not None or self.w_enc_raw is not None:
            raise ConfigError("❌ modo tied não guarda encoder")
        if self.b_enc.shape != (m,) or self.b_dec.shape != (n,):
            raise DimensionError("❌ vieses com forma errada", self.b_enc.shape + self.b_dec.shape, (m, n))

    @property
    def n(self) -> int:
        return int(self.w_dec.shape[0])

    @property
    def m(self) -> int:
        return int(self.w_dec.shape[1])

    def free_tensors(self) -> Dict[str, np.ndarray]:
        """Tensores treináveis em ordem estável"""
        tensors: Dict[str, np.ndarray] = {}
        if self.a_free is not None:
            tensors["a_free"] = self.a_free
        if self.w_enc_raw is not None:
            tensors["w_enc_raw"] = self.w_enc_raw
        tensors["w_dec"] = self.w_dec
        tensors["b_enc"] = self.b_enc
        tensors["b_dec"] = self.b_dec
        return tensors

    def with_tensors(self, tensors: Dict[str, np.ndarray]) -> "SaeParams":
        return replace(self, **{name: np.array(value, dtype=np.float64) for name, value in tensors.items()})

    def copy(self) -> "SaeParams":
        return self.with_tensors(self.free_tensors())

    @property
    def trainable_encoder_count(self) -> int:
        if self.a_free is not None:
            return int(self.a_free.size)
        if self.w_enc_raw is not None:
            return int(self.w_enc_raw.size)
        return 0


@dataclass
class ForwardOutput:
    """Ativações e reconstrução de um batch"""
    features: Matrix  # batch×m
    reconstruction: Matrix  # batch×n
    pre_activations: Matrix  # batch×m
    active: np.ndarray = field(repr=False, default=None)  # máscara do suporte de features


class LossBreakdown(NamedTuple):
    loss: float
    recon_term: float
    penalty_term: float


# ==========================================
# ENCODER
# ==========================================

def _check_decoder_norms(w_dec: Matrix) -> np.ndarray:
    norms_sq = np.einsum("ij,ij->j", w_dec, w_dec)
    bad = np.flatnonzero(np.sqrt(norms_sq) < Config.EPS_DEC)
    if bad.size:
        index = int(bad[0])
        raise DegenerateColumnError(index, float(np.sqrt(norms_sq[index])), Config.EPS_DEC)
    return norms_sq


def _check_aligned_shapes(a_free: Matrix, w_dec: Matrix):
    n, m = w_dec.shape
    if a_free.shape != (m, n - 1):
        raise DimensionError("❌ a_free deve ser m×(n−1) para o decoder dado", a_free.shape, (m, n - 1))


def pad_free_rows(a_free: Matrix) -> Matrix:
    """Anexa o último elemento fixo em zero a cada linha de a_free"""
    return np.concatenate([a_free, np.zeros((a_free.shape[0], 1))], axis=1)


def build_encoder(a_free: Matrix, w_dec: Matrix) -> Matrix:
    """Projeta cada linha de A no hiperplano {v : v·W_dec[:, i] = 1}"""
    a_free = np.asarray(a_free, dtype=np.float64)
    w_dec = np.asarray(w_dec, dtype=np.float64)
    _check_aligned_shapes(a_free, w_dec)
    norms_sq = _check_decoder_norms(w_dec)

    rows = pad_free_rows(a_free)
    u = w_dec.T
    alpha = (1.0 - np.einsum("ij,ij->i", rows, u)) / norms_sq
    return rows + alpha[:, None] * u


def build_encoder_pseudoinverse(a_free: Matrix, w_dec: Matrix) -> Matrix:
    """Oráculo independente: v = (uᵀ)⁺ + (I − (uᵀ)⁺uᵀ) z, linha a linha"""
    a_free = np.asarray(a_free, dtype=np.float64)
    w_dec = np.asarray(w_dec, dtype=np.float64)
    _check_aligned_shapes(a_free, w_dec)
    _check_decoder_norms(w_dec)

    n, m = w_dec.shape
    rows = pad_free_rows(a_free)
    encoder = np.empty((m, n))
    for i in range(m):
        u_row = w_dec[:, i].reshape(1, n)
        pinv = np.linalg.pinv(u_row)  # n×1
        null_projector = np.eye(n) - pinv @ u_row
        encoder[i] = pinv.ravel() + null_projector @ rows[i]
    return encoder


def effective_encoder(params: SaeParams) -> Matrix:
    mode = params.variant.encoder_mode
    if mode == "standard":
        return params.w_enc_raw
    if mode == "aligned":
        return build_encoder(params.a_free, params.w_dec)
    return params.w_dec.T.copy()


# ==========================================
# FORWARD
# ==========================================

def activation_mask(z: Matrix, variant: SaeVariant) -> np.ndarray:
    """Suporte das features: entradas mantidas pela seleção e positivas"""
    positive = z > 0.0
    if variant.activation == "relu":
        return positive

    batch, m = z.shape
    kept = np.zeros(z.shape, dtype=bool)
    if variant.activation == "topk":
        k = min(variant.k, m)
        # argsort estável em −z: empates vão para o menor índice
        order = np.argsort(-z, axis=1, kind="stable")[:, :k]
        np.put_along_axis(kept, order, True, axis=1)
    else:
        flat = z.ravel()
        budget = min(variant.k * batch, flat.size)
        order = np.argsort(-flat, kind="stable")[:budget]
        kept.ravel()[order] = True
    return kept & positive


def forward(params: SaeParams, x: Matrix, encoder: Optional[Matrix] = None) -> ForwardOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.n:
        raise DimensionError(f"❌ forward: x deve ter {params.n} colunas", shape_of(x), ("batch", params.n))

    if encoder is None:
        encoder = effective_encoder(params)
    z = matmul(x, encoder.T) + params.b_enc
    active = activation_mask(z, params.variant)
    features = np.where(active, z, 0.0)
    reconstruction = matmul(features, params.w_dec.T) + params.b_dec
    return ForwardOutput(features=features, reconstruction=reconstruction, pre_activations=z, active=active)


# ==========================================
# PERDAS
# ==========================================

def sparsity_penalty(out: ForwardOutput, w_dec: Matrix, variant: SaeVariant, p_current: float) -> float:
    """Penalidade média no batch: Σᵢ fᵢ‖W_dec[:, i]‖ (ou sua potência p)"""
    if variant.is_structural:
        return 0.0
    batch = out.features.shape[0]
    if batch == 0:
        return 0.0
    weighted = out.features * column_norms(w_dec)
    if variant.penalty == "l1_weighted":
        return float(weighted.sum() / batch)
    if not 0.0 < p_current <= 1.0:
        raise ConfigError(f"❌ p_current={p_current} fora de (0, 1]")
    return float(np.power(weighted, p_current).sum() / batch)


def recon_error(x: Matrix, reconstruction: Matrix) -> float:
    """Média no batch do erro quadrático somado nas coordenadas"""
    diff = reconstruction - x
    return float(np.einsum("ij,ij->", diff, diff) / max(x.shape[0], 1))


def total_loss(params: SaeParams, x: Matrix, lam: float, p_current: float = 1.0) -> LossBreakdown:
    if lam < 0:
        raise ConfigError(f"❌ λ deve ser >= 0, recebido {lam}")
    x = np.asarray(x, dtype=np.float64)
    out = forward(params, x)
    recon = recon_error(x, out.reconstruction)
    penalty = sparsity_penalty(out, params.w_dec, params.variant, p_current)
    return LossBreakdown(recon + lam * penalty, recon, penalty)


def alignment_scores(params: SaeParams) -> np.ndarray:
    """aᵢ = W_enc[i, :] · W_dec[:, i]"""
    encoder = effective_encoder(params)
    return np.einsum("ij,ji->i", encoder, params.w_dec)


def make_params(variant: SaeVariant, w_dec, b_enc=None, b_dec=None, a_free=None, w_enc_raw=None) -> SaeParams:
    """Construtor conveniente com validação de variante e conversão para float64"""
    w_dec = as_matrix(w_dec, "w_dec")
    n, m = w_dec.shape
    variant.validate(m)
    return SaeParams(
        w_dec=w_dec,
        b_enc=np.zeros(m) if b_enc is None else np.asarray(b_enc, dtype=np.float64).reshape(m),
        b_dec=np.zeros(n) if b_dec is None else np.asarray(b_dec, dtype=np.float64).reshape(n),
        variant=variant,
        a_free=None if a_free is None else np.asarray(a_free, dtype=np.float64).reshape(m, n - 1),
        w_enc_raw=None if w_enc_raw is None else as_matrix(w_enc_raw, "w_enc_raw"),
    )
