"""
🏋️ ALIGNED SAE LAB - TREINAMENTO
===============================
Loop de treino determinístico: schedules de lr/λ/p, Adam por tensor, rastreio de features mortas,
verificação da restrição de alinhamento e checkpoints binários SAEC
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from activation_data import ActivationSet, batch_iter
from config import Config
from exceptions import ConfigError, ConstraintViolationError, FileFormatError, NumericalError
from grad_engine import backward_with_output
from logging_system import LogCategory, log_debug, log_info, log_performance, log_success
from metrics import MetricsRecord, evaluate
from numerics import AdamState, Matrix, RngStream, adam_update
from sae_model import SaeParams, SaeVariant, alignment_scores, make_params
from tensor_io import BinaryReader, write_blob, write_named_matrix, write_u32

CHECKPOINT_MAGIC = b"SAEC"
CHECKPOINT_VERSION = 1

INIT_STREAM = 1

# linhas usadas nas métricas periódicas; o registro final usa o conjunto inteiro
LOG_EVAL_ROWS = 4096

BIAS_TENSORS = ("b_enc", "b_dec")


@dataclass
class TrainConfig:
    """Hiperparâmetros de uma execução"""
    variant: SaeVariant
    n: int
    m: int
    lam: float
    lr: float = 3e-4
    total_steps: int = 10000
    lr_warmup_steps: int = 1000
    lambda_warmup_steps: int = 5000
    lr_decay_start_frac: float = 0.8
    batch_size: int = 2048
    seed: int = 0
    dead_window: int = 500
    log_every: int = 100
    use_biases: bool = True
    snapshot_every: int = 0

    def validate(self) -> "TrainConfig":
        if self.n <= 0 or self.m <= 0:
            raise ConfigError(f"❌ n e m devem ser > 0 (n={self.n}, m={self.m})")
        self.variant.validate(self.m)
        if self.lam < 0:
            raise ConfigError(f"❌ λ deve ser >= 0, recebido {self.lam}")
        if self.lr <= 0:
            raise ConfigError(f"❌ lr deve ser > 0, recebido {self.lr}")
        if self.total_steps < 0 or self.batch_size <= 0 or self.dead_window <= 0 or self.log_every <= 0:
            raise ConfigError("❌ total_steps >= 0; batch_size, dead_window e log_every > 0")
        if self.total_steps > 0:
            if self.lr_warmup_steps >= self.total_steps or self.lambda_warmup_steps >= self.total_steps:
                raise ConfigError(
                    f"❌ warmups ({self.lr_warmup_steps}, {self.lambda_warmup_steps}) devem ser < total_steps "
                    f"({self.total_steps})"
                )
        if self.lr_warmup_steps < 0 or self.lambda_warmup_steps < 0 or self.snapshot_every < 0:
            raise ConfigError("❌ warmups e snapshot_every devem ser >= 0")
        if not 0.0 < self.lr_decay_start_frac <= 1.0:
            raise ConfigError(f"❌ lr_decay_start_frac deve estar em (0, 1], recebido {self.lr_decay_start_frac}")
        return self

    def to_dict(self) -> Dict:
        return {
            "variant": self.variant.to_dict(),
            "n": self.n,
            "m": self.m,
            "lam": self.lam,
            "lr": self.lr,
            "total_steps": self.total_steps,
            "lr_warmup_steps": self.lr_warmup_steps,
            "lambda_warmup_steps": self.lambda_warmup_steps,
            "lr_decay_start_frac": self.lr_decay_start_frac,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "dead_window": self.dead_window,
            "log_every": self.log_every,
            "use_biases": self.use_biases,
            "snapshot_every": self.snapshot_every,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        values = dict(data)
        values["variant"] = SaeVariant.from_dict(values["variant"])
        return cls(**values)


# ==========================================
# SCHEDULES
# ==========================================

def _check_step(step: int, cfg: TrainConfig):
    if step < 0 or step > cfg.total_steps:
        raise ConfigError(f"❌ step {step} fora de [0, {cfg.total_steps}]")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Warmup linear 0→lr, constante, decaimento linear lr→0 a partir de frac·total_steps"""
    _check_step(step, cfg)
    rate = cfg.lr
    if cfg.lr_warmup_steps > 0:
        rate = min(rate, cfg.lr * step / cfg.lr_warmup_steps)
    decay_start = cfg.lr_decay_start_frac * cfg.total_steps
    if cfg.total_steps > decay_start and step > decay_start:
        rate = min(rate, cfg.lr * (cfg.total_steps - step) / (cfg.total_steps - decay_start))
    return max(rate, 0.0)


def lambda_schedule(step: int, cfg: TrainConfig) -> float:
    """Warmup linear 0→λ, depois constante"""
    _check_step(step, cfg)
    if cfg.lambda_warmup_steps == 0:
        return cfg.lam
    return cfg.lam * min(1.0, step / cfg.lambda_warmup_steps)


def p_schedule(step: int, cfg: TrainConfig) -> float:
    """p_start até o fim do warmup de λ, depois linear até p_end em anneal_steps"""
    variant = cfg.variant
    if variant.penalty != "lp_annealed":
        raise ConfigError(f"❌ p_schedule exige penalty lp_annealed, variante é {variant.penalty}")
    _check_step(step, cfg)
    start = cfg.lambda_warmup_steps
    if step < start:
        return variant.p_start
    if variant.anneal_steps == 0:
        return variant.p_end
    progress = min(1.0, (step - start) / variant.anneal_steps)
    return variant.p_start + progress * (variant.p_end - variant.p_start)


def _current_p(step: int, cfg: TrainConfig) -> float:
    return p_schedule(step, cfg) if cfg.variant.penalty == "lp_annealed" else 1.0


# ==========================================
# FEATURES MORTAS
# ==========================================

@dataclass
class DeadTracker:
    """Último passo em que cada feature disparou"""
    last_active: np.ndarray
    step: int = 0

    @classmethod
    def create(cls, m: int) -> "DeadTracker":
        return cls(last_active=np.zeros(m, dtype=np.int64))


def dead_update(tracker: DeadTracker, features: Matrix) -> DeadTracker:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != tracker.last_active.size:
        raise ConfigError(f"❌ features com {features.shape} não batem com m={tracker.last_active.size}")
    tracker.step += 1
    fired = np.any(features > 0.0, axis=0)
    tracker.last_active[fired] = tracker.step
    return tracker


def dead_fraction_train(tracker: DeadTracker, window: int) -> float:
    """Fração de features silenciosas há >= window passos consecutivos"""
    if tracker.last_active.size == 0:
        return 0.0
    silent = (tracker.step - tracker.last_active) >= window
    return float(silent.mean())


# ==========================================
# INICIALIZAÇÃO
# ==========================================

@dataclass
class Checkpoint:
    """Estado final de uma execução; snapshots ficam só em memória"""
    config: TrainConfig
    params: SaeParams
    step: int
    metrics: Optional[MetricsRecord] = None
    snapshots: Dict[int, Matrix] = field(default_factory=dict, repr=False)


def init_params(cfg: TrainConfig, rng: RngStream, first_batch: Optional[Matrix] = None) -> SaeParams:
    """Decoder gaussiano com colunas unitárias; encoder = decoderᵀ (standard) ou A ~ N(0, 1/n) (aligned)"""
    w_dec = rng.normal((cfg.n, cfg.m))
    w_dec = w_dec / np.linalg.norm(w_dec, axis=0, keepdims=True)

    mode = cfg.variant.encoder_mode
    a_free = rng.normal((cfg.m, cfg.n - 1), 1.0 / np.sqrt(cfg.n)) if mode == "aligned" else None
    w_enc_raw = w_dec.T.copy() if mode == "standard" else None

    b_dec = None
    if cfg.use_biases and first_batch is not None and len(first_batch):
        b_dec = np.asarray(first_batch, dtype=np.float64).mean(axis=0)

    return make_params(cfg.variant, w_dec, b_dec=b_dec, a_free=a_free, w_enc_raw=w_enc_raw)


def _check_constraint(params: SaeParams, step: int) -> float:
    if params.variant.encoder_mode != "aligned":
        return 0.0
    drift = float(np.max(np.abs(alignment_scores(params) - 1.0)))
    if drift > Config.CONSTRAINT_TOLERANCE:
        raise ConstraintViolationError(f"❌ Restrição de alinhamento violada: max|a−1| = {drift:.3e}",
                                       tensor="alignment", step=step)
    return drift


# ==========================================
# LOOP DE TREINO
# ==========================================

def train(cfg: TrainConfig, data: ActivationSet) -> Tuple[Checkpoint, List[MetricsRecord]]:
    """Executa total_steps passos de Adam; retorna o checkpoint final e os registros periódicos"""
    cfg.validate()
    data.check_dim(cfg.n, "train")
    if data.samples < cfg.batch_size:
        raise ConfigError(f"❌ batch_size={cfg.batch_size} maior que o número de amostras ({data.samples})")

    start_time = time.time()
    batches = batch_iter(data, cfg.batch_size, cfg.seed)
    first_batch = next(batches)
    params = init_params(cfg, RngStream(cfg.seed, INIT_STREAM), first_batch)

    trainable = [name for name in params.free_tensors() if cfg.use_biases or name not in BIAS_TENSORS]
    states = {name: AdamState.zeros_like(params.free_tensors()[name]) for name in trainable}
    tracker = DeadTracker.create(cfg.m)
    eval_rows = data.data[:LOG_EVAL_ROWS]

    log_info(LogCategory.TRAIN, f"🚀 Iniciando treino {cfg.variant.label}",
             n=cfg.n, m=cfg.m, lam=cfg.lam, steps=cfg.total_steps, seed=cfg.seed)

    _check_constraint(params, 0)
    log: List[MetricsRecord] = [evaluate(params, eval_rows, step=0, p_current=_current_p(0, cfg))]
    snapshots: Dict[int, Matrix] = {}
    if cfg.snapshot_every:
        snapshots[0] = params.w_dec.copy()

    batch = first_batch
    for step in range(cfg.total_steps):
        if step > 0:
            batch = next(batches)
        lr = lr_schedule(step, cfg)
        lam = lambda_schedule(step, cfg)
        p_current = _current_p(step, cfg)

        try:
            loss, grads, out = backward_with_output(params, batch, lam, p_current)
        except NumericalError as e:
            raise NumericalError(f"❌ Backward falhou: {e}", tensor=e.tensor, step=step) from e
        if not np.isfinite(loss):
            raise NumericalError("❌ Perda não finita", tensor="loss", step=step)

        current = params.free_tensors()
        updated = {}
        for name in trainable:
            updated[name], states[name] = adam_update(states[name], current[name], grads[name], lr, name=name)
        params = params.with_tensors(updated)
        dead_update(tracker, out.features)

        done = step + 1
        if done % cfg.log_every == 0 or done == cfg.total_steps:
            _check_constraint(params, done)
            record = evaluate(params, eval_rows, step=done, p_current=p_current,
                              dead_fraction_train=dead_fraction_train(tracker, cfg.dead_window))
            log.append(record)
            log_info(LogCategory.TRAIN,
                     f"step {done}: loss={loss:.6f} L0={record.l0_mean:.2f} "
                     f"dead={record.dead_fraction_eval:.3f} a_min={record.alignment_min:.6f}",
                     step=done, lr=lr, lam=lam, p=p_current)
        if cfg.snapshot_every and done % cfg.snapshot_every == 0:
            snapshots[done] = params.w_dec.copy()

    final = evaluate(params, data.data, step=cfg.total_steps, p_current=_current_p(cfg.total_steps, cfg),
                     dead_fraction_train=dead_fraction_train(tracker, cfg.dead_window))
    log_performance("train", time.time() - start_time, variant=cfg.variant.label, steps=cfg.total_steps)
    log_success(LogCategory.TRAIN, f"✅ Treino concluído: L0={final.l0_mean:.2f} dead={final.dead_fraction_eval:.3f}")
    return Checkpoint(config=cfg, params=params, step=cfg.total_steps, metrics=final, snapshots=snapshots), log


# ==========================================
# CHECKPOINTS
# ==========================================

def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    """SAEC: magic, versão u32, JSON (config, step, métricas) prefixado, tensores nomeados f32"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "metrics": ckpt.metrics.to_dict() if ckpt.metrics is not None else None,
    }
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        write_u32(handle, CHECKPOINT_VERSION)
        write_blob(handle, json.dumps(header, sort_keys=True, allow_nan=False).encode("utf-8"))
        for name, tensor in ckpt.params.free_tensors().items():
            write_named_matrix(handle, name, tensor)
    log_debug(LogCategory.CHECKPOINT, f"💾 Checkpoint salvo em {path}", step=ckpt.step)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"❌ Checkpoint não encontrado: {path}")
    reader = BinaryReader.open(path)
    reader.expect_magic(CHECKPOINT_MAGIC)
    reader.expect_version(CHECKPOINT_VERSION)
    try:
        header = json.loads(reader.read_blob("configuração").decode("utf-8"))
        cfg = TrainConfig.from_dict(header["config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise FileFormatError(f"❌ Cabeçalho JSON inválido em {path}: {e}") from e

    tensors: Dict[str, np.ndarray] = {}
    while not reader.at_end():
        name, matrix = reader.read_named_matrix()
        tensors[name] = matrix

    expected = {"w_dec", "b_enc", "b_dec"}
    expected.add({"aligned": "a_free", "standard": "w_enc_raw"}.get(cfg.variant.encoder_mode, "w_dec"))
    if set(tensors) != expected:
        raise FileFormatError(f"❌ Tensores {sorted(tensors)} não batem com o esperado {sorted(expected)} em {path}")

    params = make_params(
        cfg.variant,
        tensors["w_dec"],
        b_enc=tensors["b_enc"].ravel(),
        b_dec=tensors["b_dec"].ravel(),
        a_free=tensors.get("a_free"),
        w_enc_raw=tensors.get("w_enc_raw"),
    )
    metrics = MetricsRecord.from_dict(header["metrics"]) if header.get("metrics") else None
    log_debug(LogCategory.CHECKPOINT, f"📂 Checkpoint lido de {path}", step=header.get("step"))
    return Checkpoint(config=cfg, params=params, step=int(header.get("step", 0)), metrics=metrics)
