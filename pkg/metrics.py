"""
📊 ALIGNED SAE LAB - MÉTRICAS
============================
Variância explicada, CE recuperado, L0, features mortas, similaridade máxima de cosseno (MMCS),
recuperação de verdade-terreno e histogramas do alignment score
"""

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.stats import pearsonr

from config import Config
from exceptions import (ConfigError, DegenerateDenominatorError, DegenerateVarianceError, DimensionError,
                        shape_of)
from logging_system import LogCategory, log_debug
from numerics import Matrix
from sae_model import SaeParams, alignment_scores, effective_encoder, forward, sparsity_penalty

VARIANCE_EPS = 1e-12
NEAR_ONE_BAND = (0.9, 1.1)
NEAR_ZERO_BAND = (-0.2, 0.2)
EVAL_CHUNK_ROWS = 8192


@dataclass
class MetricsRecord:
    """Uma linha de metrics.jsonl"""
    step: int
    recon_loss: float
    penalty: float
    explained_variance: Optional[float]
    l0_mean: float
    dead_fraction_eval: float
    alive_fraction: float
    alignment_mean: float
    alignment_min: float
    alignment_max: float
    alignment_frac_near_one: float
    alignment_frac_near_zero: float
    dead_fraction_train: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        """JSON estrito (sem NaN/Infinity), chaves ordenadas"""
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricsRecord":
        known = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in data.items() if key in known})


@dataclass
class Histogram:
    """Bins uniformes: edges tem bins+1 entradas estritamente crescentes"""
    edges: np.ndarray
    counts: np.ndarray

    @property
    def bins(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin_left": self.edges[:-1], "count": self.counts.astype(np.int64)})

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, lineterminator="\n")


# ==========================================
# FÓRMULAS
# ==========================================

def explained_variance(x: Matrix, x_hat: Matrix) -> float:
    """1 − Σ‖x − x̂‖² / Σ‖x − μ‖², μ = média de x"""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape or x.ndim != 2:
        raise DimensionError("❌ explained_variance com formas incompatíveis", shape_of(x), shape_of(x_hat))
    if x.shape[0] < 2:
        raise DegenerateVarianceError(f"❌ variância explicada exige >= 2 amostras, recebido {x.shape[0]}")

    mu = np.mean(x, axis=0)
    residual = x - x_hat
    centered = x - mu
    denominator = float(np.einsum("ij,ij->", centered, centered))
    if denominator < VARIANCE_EPS:
        raise DegenerateVarianceError(f"❌ dados constantes: variância total {denominator:.3e}")
    return 1.0 - float(np.einsum("ij,ij->", residual, residual)) / denominator


def ce_recovered(h_orig: float, h_star: float, h_zero: float) -> float:
    """(H* − H₀) / (H_orig − H₀)"""
    if h_orig == h_zero:
        raise DegenerateDenominatorError(f"❌ h_orig == h_zero ({h_orig}): CE recuperado indefinido")
    return (h_star - h_zero) / (h_orig - h_zero)


def l0_mean(features: Matrix) -> float:
    features = np.asarray(features)
    if features.shape[0] == 0:
        return 0.0
    return float(np.count_nonzero(features > 0.0) / features.shape[0])


def dead_fraction_eval(features: Matrix) -> float:
    """Fração das m features sem nenhuma ativação em todo o conjunto de avaliação"""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DimensionError("❌ dead_fraction_eval exige conjunto de avaliação não vazio", shape_of(features),
                             ("samples>0", "m"))
    fired = np.any(features > 0.0, axis=0)
    return float(1.0 - fired.mean())


def _unit_columns(d: Matrix) -> Matrix:
    norms = np.linalg.norm(d, axis=0)
    safe = np.where(norms < Config.COSINE_EPS, 1.0, norms)
    return np.where(norms < Config.COSINE_EPS, 0.0, d / safe)


def max_cos_per_feature(d1: Matrix, d2: Matrix) -> np.ndarray:
    """Para cada coluna de d1, o maior cosseno com alguma coluna de d2"""
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    if d1.ndim != 2 or d2.ndim != 2 or d1.shape[0] != d2.shape[0]:
        raise DimensionError("❌ dicionários com n diferente", shape_of(d1), shape_of(d2))
    if d2.shape[1] == 0:
        raise DimensionError("❌ dicionário de referência vazio", shape_of(d1), shape_of(d2))
    cosines = np.clip(_unit_columns(d1).T @ _unit_columns(d2), -1.0, 1.0)
    return cosines.max(axis=1)


def mmcs(d1: Matrix, d2: Matrix) -> float:
    """Média de max_cos_per_feature; d1 é o dicionário de consulta"""
    scores = max_cos_per_feature(d1, d2)
    return float(scores.mean()) if scores.size else 0.0


def symmetric_mmcs(d1: Matrix, d2: Matrix) -> float:
    return 0.5 * (mmcs(d1, d2) + mmcs(d2, d1))


def ground_truth_recovery(decoder: Matrix, g: Matrix) -> float:
    """MMCS com a verdade-terreno como consulta"""
    return mmcs(g, decoder)


def alignment_histogram(scores, bins: int, value_range: Tuple[float, float]) -> Histogram:
    """Contagens em bins uniformes; valores fora do intervalo vão para os bins das pontas"""
    lo, hi = float(value_range[0]), float(value_range[1])
    if bins < 1:
        raise ConfigError(f"❌ bins deve ser >= 1, recebido {bins}")
    if not lo < hi:
        raise ConfigError(f"❌ intervalo inválido [{lo}, {hi}]")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    edges = np.linspace(lo, hi, bins + 1)
    index = np.floor((scores - lo) / (hi - lo) * bins)
    index = np.clip(index, 0, bins - 1).astype(np.int64)
    counts = np.bincount(index, minlength=bins)
    return Histogram(edges=edges, counts=counts)


def alignment_summary(scores) -> Dict[str, float]:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return {"mean": math.nan, "min": math.nan, "max": math.nan, "frac_near_one": 0.0, "frac_near_zero": 0.0}
    return {
        "mean": float(scores.mean()),
        "min": float(scores.min()),
        "max": float(scores.max()),
        "frac_near_one": float(np.mean((scores >= NEAR_ONE_BAND[0]) & (scores <= NEAR_ONE_BAND[1]))),
        "frac_near_zero": float(np.mean((scores >= NEAR_ZERO_BAND[0]) & (scores <= NEAR_ZERO_BAND[1]))),
    }


def alignment_mcs_correlation(params: SaeParams, reference_decoder: Matrix) -> Tuple[float, float]:
    """Pearson entre alignment score e similaridade máxima com um dicionário de referência"""
    scores = alignment_scores(params)
    similarity = max_cos_per_feature(params.w_dec, reference_decoder)
    if scores.size < 2:
        raise DegenerateVarianceError("❌ correlação exige pelo menos 2 features")
    if np.ptp(scores) < VARIANCE_EPS or np.ptp(similarity) < VARIANCE_EPS:
        raise DegenerateVarianceError("❌ alignment scores ou similaridades constantes: correlação indefinida")
    result = pearsonr(scores, similarity)
    return float(result[0]), float(result[1])


def mmcs_trajectory(snapshots_a: Mapping[int, Matrix], snapshots_b: Mapping[int, Matrix]) -> List[Tuple[int, float]]:
    """MMCS simétrico entre duas execuções nos passos que ambas registraram"""
    common = sorted(set(snapshots_a) & set(snapshots_b))
    return [(step, symmetric_mmcs(snapshots_a[step], snapshots_b[step])) for step in common]


# ==========================================
# AVALIAÇÃO COMPLETA
# ==========================================

def evaluate(params: SaeParams, x: Matrix, step: int = 0, p_current: float = 1.0,
             dead_fraction_train: Optional[float] = None, chunk_rows: int = EVAL_CHUNK_ROWS) -> MetricsRecord:
    """Forward no conjunto inteiro (em blocos) e todas as métricas do registro"""
    x = np.asarray(x, dtype=np.float64)
    samples = x.shape[0]
    if samples == 0:
        raise DimensionError("❌ avaliação exige pelo menos uma amostra", shape_of(x), ("samples>0", params.n))

    encoder = effective_encoder(params)
    squared_error = 0.0
    penalty_sum = 0.0
    active_total = 0
    fired = np.zeros(params.m, dtype=bool)
    for start in range(0, samples, chunk_rows):
        chunk = x[start:start + chunk_rows]
        out = forward(params, chunk, encoder=encoder)
        diff = out.reconstruction - chunk
        squared_error += float(np.einsum("ij,ij->", diff, diff))
        penalty_sum += sparsity_penalty(out, params.w_dec, params.variant, p_current) * chunk.shape[0]
        positive = out.features > 0.0
        active_total += int(np.count_nonzero(positive))
        fired |= positive.any(axis=0)

    ev: Optional[float] = None
    centered = x - np.mean(x, axis=0)
    denominator = float(np.einsum("ij,ij->", centered, centered))
    if samples >= 2 and denominator >= VARIANCE_EPS:
        ev = 1.0 - squared_error / denominator
    else:
        log_debug(LogCategory.METRICS, "Variância explicada indefinida (dados degenerados)", samples=samples)

    dead = float(1.0 - fired.mean())
    summary = alignment_summary(alignment_scores(params))
    return MetricsRecord(
        step=int(step),
        recon_loss=squared_error / samples,
        penalty=penalty_sum / samples,
        explained_variance=ev,
        l0_mean=active_total / samples,
        dead_fraction_eval=dead,
        alive_fraction=1.0 - dead,
        alignment_mean=summary["mean"],
        alignment_min=summary["min"],
        alignment_max=summary["max"],
        alignment_frac_near_one=summary["frac_near_one"],
        alignment_frac_near_zero=summary["frac_near_zero"],
        dead_fraction_train=dead_fraction_train,
    )
