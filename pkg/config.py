"""
🎯 ALIGNED SAE LAB - CONFIGURAÇÕES
=================================
Configurações centralizadas do laboratório e schema das execuções (RunConfig)
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from exceptions import ConfigError

# Carrega variáveis de ambiente
load_dotenv()


class Config:
    """Configurações principais do sistema"""

    # ==========================================
    # PATHS
    # ==========================================
    BASE_DIR = Path(__file__).parent
    CONFIG_DIR = BASE_DIR / "config"
    RUNS_DIR = Path(os.getenv("SAE_RUNS_DIR", str(BASE_DIR / "runs")))
    LOG_DIR = os.getenv("SAE_LOG_DIR") or None

    # ==========================================
    # NUMERICS
    # ==========================================
    STORAGE_DTYPE = "<f4"  # little-endian float32 nos arquivos
    COMPUTE_DTYPE = "float64"
    EPS_DEC = 1e-8  # norma mínima de coluna do decoder no modo aligned
    COSINE_EPS = 1e-12
    CONSTRAINT_TOLERANCE = 1e-6  # deriva máxima aceita (armazenamento 32 bits)

    # ==========================================
    # ADAM
    # ==========================================
    ADAM_BETA1 = 0.9
    ADAM_BETA2 = 0.999
    ADAM_EPS = 1e-8

    # ==========================================
    # GRAD CHECK
    # ==========================================
    FD_STEP = 1e-6
    GRAD_CHECK_TOLERANCE = 1e-4
    GRAD_CHECK_FLOOR = 1e-8
    GRAD_CHECK_ATOL = 1e-7  # ruído de arredondamento das diferenças centrais

    # ==========================================
    # SYSTEM
    # ==========================================
    LOG_LEVEL = os.getenv("SAE_LOG_LEVEL", "INFO")

    @classmethod
    def create_directories(cls):
        """Cria diretórios necessários (execuções criam o próprio out_dir)"""
        if cls.LOG_DIR:
            Path(cls.LOG_DIR).mkdir(parents=True, exist_ok=True)

    @classmethod
    def validate_config(cls):
        """Valida configurações essenciais"""
        valid_levels = {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}
        if cls.LOG_LEVEL.upper() not in valid_levels:
            raise ConfigError(f"❌ SAE_LOG_LEVEL inválido: {cls.LOG_LEVEL}")
        return True


# ==========================================
# SCHEMA DE EXECUÇÃO
# ==========================================

class RunConfig(BaseModel):
    """Documento JSON de uma execução: espelha TrainConfig + caminhos + metadados"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # metadados
    name: str = "run"
    data_path: Optional[str] = None
    out_dir: str = str(Config.RUNS_DIR / "run")

    # arquitetura
    n: int = Field(gt=0)
    m: int = Field(gt=0)
    encoder_mode: Literal["standard", "aligned", "tied"] = "aligned"
    activation: Literal["relu", "topk", "batchtopk"] = "relu"
    k: Optional[int] = None
    penalty: Literal["l1_weighted", "lp_annealed"] = "l1_weighted"
    p_start: float = 1.0
    p_end: float = 0.5
    anneal_steps: int = 0
    use_biases: bool = True

    # otimização
    lam: float = Field(default=0.035, ge=0.0)
    lr: float = Field(default=3e-4, gt=0.0)
    total_steps: int = Field(default=10000, ge=0)
    lr_warmup_steps: int = Field(default=1000, ge=0)
    lambda_warmup_steps: int = Field(default=5000, ge=0)
    lr_decay_start_frac: float = 0.8
    batch_size: int = Field(default=2048, gt=0)
    seed: int = 0
    dead_window: int = Field(default=500, gt=0)
    log_every: int = Field(default=100, gt=0)
    snapshot_every: int = Field(default=0, ge=0)

    # sweep
    seeds: List[int] = Field(default_factory=list)
    lambdas: List[float] = Field(default_factory=list)
    include_tied: bool = False

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.activation in ("topk", "batchtopk"):
            if self.k is None or not 1 <= self.k <= self.m:
                raise ValueError(f"k deve estar em [1, m={self.m}] para {self.activation}")
        if not 0.0 < self.p_end <= self.p_start <= 1.0:
            raise ValueError("exige 0 < p_end <= p_start <= 1")
        if not 0.0 < self.lr_decay_start_frac <= 1.0:
            raise ValueError("lr_decay_start_frac deve estar em (0, 1]")
        if any(l < 0 for l in self.lambdas):
            raise ValueError("lambdas devem ser >= 0")
        return self

    def to_train_config(self, **changes):
        """Constrói o TrainConfig do trainer a partir deste documento"""
        from sae_model import SaeVariant
        from trainer import TrainConfig

        values = self.model_dump()
        values.update(changes)
        variant = SaeVariant(
            encoder_mode=values["encoder_mode"],
            activation=values["activation"],
            k=values["k"],
            penalty=values["penalty"],
            p_start=values["p_start"],
            p_end=values["p_end"],
            anneal_steps=values["anneal_steps"],
        )
        return TrainConfig(
            variant=variant,
            n=values["n"],
            m=values["m"],
            lam=values["lam"],
            lr=values["lr"],
            total_steps=values["total_steps"],
            lr_warmup_steps=values["lr_warmup_steps"],
            lambda_warmup_steps=values["lambda_warmup_steps"],
            lr_decay_start_frac=values["lr_decay_start_frac"],
            batch_size=values["batch_size"],
            seed=values["seed"],
            dead_window=values["dead_window"],
            log_every=values["log_every"],
            use_biases=values["use_biases"],
            snapshot_every=values["snapshot_every"],
        )

    def dump(self) -> str:
        """Serialização canônica (idempotente)"""
        return json.dumps(self.model_dump(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        loc = ".".join(str(p) for p in item["loc"]) or "<raiz>"
        parts.append(f"{loc}: {item['msg']}")
    return "; ".join(parts)


def parse_run_config(data: Dict[str, Any], path: Optional[str] = None) -> RunConfig:
    """Valida um dicionário como RunConfig"""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"❌ Configuração inválida: {_format_validation_error(e)}", path=path) from e


def load_run_config(path: Path, overrides: Sequence[str] = ()) -> RunConfig:
    """Carrega RunConfig de arquivo JSON, aplicando overrides key=value"""
    path = Path(path)
    if not path.exists():
        raise ConfigError("❌ Arquivo de configuração não encontrado", path=str(path))

    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"❌ JSON inválido: {e.msg} (coluna {e.colno})", path=str(path), line=e.lineno) from e

    if not isinstance(data, dict):
        raise ConfigError("❌ Configuração deve ser um objeto JSON", path=str(path), line=1)

    data = apply_overrides(data, overrides)
    return parse_run_config(data, path=str(path))


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Aplica pares key=value; valores são lidos como JSON, senão como string"""
    result = dict(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"❌ Override sem '=': {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in RunConfig.model_fields:
            raise ConfigError(f"❌ Chave de override desconhecida: {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        result[key] = value
    return result
