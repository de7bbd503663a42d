"""
📦 ALIGNED SAE LAB - DADOS DE ATIVAÇÃO
=====================================
Gerador sintético de superposição com verdade-terreno conhecida, formato binário SAEA
para ativações capturadas externamente e iterador de batches semeado
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.stats import binom

from exceptions import BadMagicError, ConfigError, DimensionError, FileFormatError
from logging_system import LogCategory, log_debug, log_info
from numerics import Matrix, RngStream, as_matrix
from tensor_io import BinaryReader, write_f32, write_u8, write_u32, write_u64

ACTIVATION_MAGIC = b"SAEA"
GROUND_TRUTH_MAGIC = b"GTRU"
ACTIVATION_VERSION = 1
DTYPE_F32 = 0

# fluxos do RngStream derivados da mesma semente
DATA_STREAM = 0
BATCH_STREAM = 2


@dataclass(frozen=True)
class SyntheticSpec:
    """Parâmetros do gerador: x = G·c + ε com cᵢ = Bernoulli(ρ)·Uniform(0, 1]"""
    n: int
    m_true: int
    fire_prob: float
    samples: int
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        if self.n <= 0 or self.m_true <= 0:
            raise ConfigError(f"❌ n e m_true devem ser > 0 (n={self.n}, m_true={self.m_true})")
        if self.samples < 0:
            raise ConfigError(f"❌ samples deve ser >= 0, recebido {self.samples}")
        # ρ=0 é aceito como caso degenerado (só ruído)
        if not 0.0 <= self.fire_prob < 1.0:
            raise ConfigError(f"❌ rho deve estar em [0, 1), recebido {self.fire_prob}")
        if self.noise_sigma < 0:
            raise ConfigError(f"❌ noise_sigma deve ser >= 0, recebido {self.noise_sigma}")
        return self

    @property
    def expected_l0(self) -> float:
        return self.fire_prob * self.m_true


@dataclass(frozen=True)
class GroundTruth:
    """Dicionário G (n×m_true, colunas unitárias) e coeficientes esparsos (samples×m_true)"""
    dictionary: Matrix
    coefficients: sparse.csr_matrix


@dataclass(frozen=True)
class ActivationSet:
    """Matriz de ativações samples×n, imutável, com verdade-terreno opcional"""
    data: Matrix
    ground_truth: Optional[GroundTruth] = None

    def __post_init__(self):
        self.data.setflags(write=False)

    @property
    def samples(self) -> int:
        return int(self.data.shape[0])

    @property
    def n(self) -> int:
        return int(self.data.shape[1])

    def check_dim(self, n: int, where: str = "dados"):
        if self.n != n:
            raise DimensionError(f"❌ {where}: dimensão das ativações difere da configuração", (self.samples, self.n),
                                 ("samples", n))


# ==========================================
# GERADOR SINTÉTICO
# ==========================================

def gen_synthetic(spec: SyntheticSpec) -> ActivationSet:
    """Dados de superposição determinísticos na semente"""
    spec.validate()
    rng = RngStream(spec.seed, DATA_STREAM)

    dictionary = rng.normal((spec.n, spec.m_true))
    dictionary /= np.linalg.norm(dictionary, axis=0, keepdims=True)

    fires = rng.bernoulli((spec.samples, spec.m_true), spec.fire_prob)
    magnitudes = 1.0 - rng.uniform((spec.samples, spec.m_true))  # (0, 1]
    coefficients = np.where(fires, magnitudes, 0.0)

    data = coefficients @ dictionary.T
    if spec.noise_sigma > 0:
        data = data + rng.normal(data.shape, spec.noise_sigma)

    log_info(LogCategory.DATA, "🎲 Dados sintéticos gerados",
             samples=spec.samples, n=spec.n, m_true=spec.m_true, expected_l0=spec.expected_l0)
    return ActivationSet(
        data=np.ascontiguousarray(data),
        ground_truth=GroundTruth(dictionary=dictionary, coefficients=sparse.csr_matrix(coefficients)),
    )


def toy_point_set(values: Sequence[float]) -> ActivationSet:
    """Conjunto de uma única amostra (modelo de brinquedo)"""
    return ActivationSet(data=as_matrix([list(values)], "toy_point"))


def active_count_band(spec: SyntheticSpec, sigmas: float = 3.0) -> Tuple[float, float]:
    """Faixa ±σ binomial para a contagem média de features ativas por amostra"""
    trials = spec.samples * spec.m_true
    if trials == 0:
        return 0.0, 0.0
    std = float(binom.std(trials, spec.fire_prob)) / spec.samples
    return spec.expected_l0 - sigmas * std, spec.expected_l0 + sigmas * std


def empirical_active_count(data: ActivationSet) -> float:
    if data.ground_truth is None or data.samples == 0:
        raise ConfigError("❌ conjunto sem verdade-terreno")
    return float(data.ground_truth.coefficients.getnnz() / data.samples)


# ==========================================
# FORMATO SAEA
# ==========================================

def write_activations(data: ActivationSet, path: Path) -> Path:
    """magic, versão u32, samples u64, n u32, dtype u8, payload f32 [, bloco GTRU]"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(ACTIVATION_MAGIC)
        write_u32(handle, ACTIVATION_VERSION)
        write_u64(handle, data.samples)
        write_u32(handle, data.n)
        write_u8(handle, DTYPE_F32)
        write_f32(handle, data.data)

        truth = data.ground_truth
        if truth is not None:
            coo = truth.coefficients.tocoo()
            handle.write(GROUND_TRUTH_MAGIC)
            write_u32(handle, truth.dictionary.shape[1])
            write_f32(handle, truth.dictionary)
            write_u64(handle, coo.nnz)
            handle.write(coo.row.astype("<u8").tobytes())
            handle.write(coo.col.astype("<u4").tobytes())
            write_f32(handle, coo.data)

    log_debug(LogCategory.DATA, f"💾 Ativações salvas em {path}", samples=data.samples, n=data.n)
    return path


def read_activations(path: Path) -> ActivationSet:
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"❌ Arquivo de ativações não encontrado: {path}")
    reader = BinaryReader.open(path)
    reader.expect_magic(ACTIVATION_MAGIC)
    reader.expect_version(ACTIVATION_VERSION)
    samples = reader.read_u64("samples")
    n = reader.read_u32("n")
    dtype = reader.read_u8("dtype")
    if dtype != DTYPE_F32:
        raise FileFormatError(f"❌ dtype {dtype} não suportado em {path}")
    data = reader.read_f32(samples, n, "payload de ativações")

    ground_truth = None
    if not reader.at_end():
        found = reader.read_exact(len(GROUND_TRUTH_MAGIC), "magic da verdade-terreno")
        if found != GROUND_TRUTH_MAGIC:
            raise BadMagicError(str(path), GROUND_TRUTH_MAGIC, found)
        m_true = reader.read_u32("m_true")
        dictionary = reader.read_f32(n, m_true, "dicionário")
        nnz = reader.read_u64("nnz")
        rows = np.frombuffer(reader.read_exact(nnz * 8, "linhas dos coeficientes"), dtype="<u8")
        cols = np.frombuffer(reader.read_exact(nnz * 4, "colunas dos coeficientes"), dtype="<u4")
        values = reader.read_f32(1, nnz, "valores dos coeficientes").ravel()
        coefficients = sparse.csr_matrix((values, (rows.astype(np.int64), cols.astype(np.int64))),
                                         shape=(samples, m_true))
        ground_truth = GroundTruth(dictionary=dictionary, coefficients=coefficients)

    if not reader.at_end():
        raise FileFormatError(f"❌ {reader.remaining} bytes inesperados no fim de {path}")

    log_debug(LogCategory.DATA, f"📂 Ativações lidas de {path}", samples=samples, n=n)
    return ActivationSet(data=data, ground_truth=ground_truth)


# ==========================================
# BATCHES
# ==========================================

def batch_iter(data: ActivationSet, batch_size: int, seed: int) -> Iterator[Matrix]:
    """Fluxo infinito de batches: uma permutação semeada por época, cada amostra uma vez por época

    O último batch de uma época pode ser menor quando batch_size não divide samples.
    """
    if batch_size <= 0:
        raise ConfigError(f"❌ batch_size deve ser > 0, recebido {batch_size}")
    if batch_size > data.samples:
        raise ConfigError(f"❌ batch_size={batch_size} maior que o número de amostras ({data.samples})")

    rng = RngStream(seed, BATCH_STREAM)
    while True:
        order = rng.permutation(data.samples)
        for start in range(0, data.samples, batch_size):
            yield data.data[order[start:start + batch_size]]
