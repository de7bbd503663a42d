"""
🔁 ALIGNED SAE LAB - MOTOR DE GRADIENTES
=======================================
Gradientes analíticos da perda total (inclusive a regra da cadeia através da projeção
do encoder alinhado) e o oráculo de diferenças finitas centrais
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from config import Config
from exceptions import ConfigError, NumericalError
from numerics import Matrix, RngStream, column_norms, matmul
from sae_model import (ACTIVATIONS, ENCODER_MODES, PENALTIES, ForwardOutput, SaeParams, SaeVariant, effective_encoder,
                       forward, make_params, pad_free_rows, total_loss)


@dataclass
class GradSet:
    """Um gradiente por tensor livre de SaeParams, mesmas formas"""
    tensors: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def max_abs(self) -> float:
        return max((float(np.abs(g).max()) for g in self.tensors.values() if g.size), default=0.0)


@dataclass
class GradCheckReport:
    """Resultado da comparação analítico × diferenças finitas"""
    max_rel_err: float
    worst_tensor: Optional[str]
    worst_index: Optional[Tuple[int, ...]]
    skipped: int
    checked: int
    per_tensor: Dict[str, float] = field(default_factory=dict)

    def passed(self, tolerance: float = Config.GRAD_CHECK_TOLERANCE) -> bool:
        return self.max_rel_err <= tolerance


def _check_finite(name: str, array: np.ndarray):
    if not np.all(np.isfinite(array)):
        raise NumericalError("❌ Intermediário não finito no backward", tensor=name)


def backward(params: SaeParams, x: Matrix, lam: float, p_current: float = 1.0) -> Tuple[float, GradSet]:
    """Perda e gradientes exatos em relação aos tensores livres"""
    loss, grads, _ = backward_with_output(params, x, lam, p_current)
    return loss, grads


def backward_with_output(params: SaeParams, x: Matrix, lam: float,
                         p_current: float = 1.0) -> Tuple[float, GradSet, ForwardOutput]:
    """Como backward, devolvendo também o forward do batch (usado pelo trainer)"""
    if lam < 0:
        raise ConfigError(f"❌ λ deve ser >= 0, recebido {lam}")
    if params.variant.penalty == "lp_annealed" and not 0.0 < p_current <= 1.0:
        raise ConfigError(f"❌ p_current={p_current} fora de (0, 1]")
    x = np.asarray(x, dtype=np.float64)
    variant = params.variant
    batch = max(x.shape[0], 1)
    w_dec = params.w_dec

    encoder = effective_encoder(params)
    out = forward(params, x, encoder=encoder)
    features = out.features

    diff = out.reconstruction - x
    recon = float(np.einsum("ij,ij->", diff, diff) / batch)
    _check_finite("reconstruction", diff)

    g_recon = 2.0 * diff / batch  # ∂L/∂x̂
    g_b_dec = g_recon.sum(axis=0)
    g_w_dec = matmul(g_recon.T, features)
    g_features = matmul(g_recon, w_dec)

    penalty = 0.0
    if not variant.is_structural:
        norms = column_norms(w_dec)
        weighted = features * norms
        if variant.penalty == "l1_weighted":
            penalty = float(weighted.sum() / batch)
            g_features = g_features + lam * norms / batch
            g_norms = lam * features.sum(axis=0) / batch
        else:
            p = p_current
            positive = weighted > 0.0
            safe = np.where(positive, weighted, 1.0)
            penalty = float(np.where(positive, safe ** p, 0.0).sum() / batch)
            # subgradiente 0 onde fᵢ‖dᵢ‖ = 0
            d_weighted = np.where(positive, p * safe ** (p - 1.0), 0.0) * lam / batch
            g_features = g_features + d_weighted * norms
            g_norms = (d_weighted * features).sum(axis=0)
        safe_norms = np.where(norms > 0.0, norms, 1.0)
        g_w_dec = g_w_dec + w_dec * np.where(norms > 0.0, g_norms / safe_norms, 0.0)

    # máscara constante: ReLU com subgradiente 0 em z=0, TopK straight-through
    g_z = np.where(out.active, g_features, 0.0)
    _check_finite("grad_pre_activations", g_z)
    g_b_enc = g_z.sum(axis=0)
    g_encoder = matmul(g_z.T, x)  # m×n

    grads: Dict[str, np.ndarray] = {}
    mode = variant.encoder_mode
    if mode == "standard":
        grads["w_enc_raw"] = g_encoder
    elif mode == "tied":
        g_w_dec = g_w_dec + g_encoder.T
    else:
        g_a_free, g_u = _aligned_chain_rule(params.a_free, w_dec, g_encoder)
        grads["a_free"] = g_a_free
        g_w_dec = g_w_dec + g_u.T

    grads["w_dec"] = g_w_dec
    grads["b_enc"] = g_b_enc
    grads["b_dec"] = g_b_dec

    ordered = {name: grads[name] for name in params.free_tensors()}
    for name, grad in ordered.items():
        _check_finite(f"grad[{name}]", grad)

    loss = recon + lam * penalty
    if not np.isfinite(loss):
        raise NumericalError("❌ Perda não finita", tensor="loss")
    return loss, GradSet(ordered), out


def _aligned_chain_rule(a_free: Matrix, w_dec: Matrix, g_encoder: Matrix) -> Tuple[Matrix, Matrix]:
    """Propaga ∂L/∂W_enc por v = z + α u, α = (1 − z·u)/‖u‖²

    Retorna (∂L/∂a_free, ∂L/∂u por linha). Com s = ‖u‖²:
      ∂L/∂z = g − (g·u/s) u
      ∂L/∂u = α g − (g·u/s) z − 2α (g·u/s) u
    """
    rows = pad_free_rows(a_free)
    u = w_dec.T
    norms_sq = np.einsum("ij,ij->i", u, u)
    alpha = (1.0 - np.einsum("ij,ij->i", rows, u)) / norms_sq
    g_dot_u = np.einsum("ij,ij->i", g_encoder, u) / norms_sq

    g_rows = g_encoder - g_dot_u[:, None] * u
    g_u = alpha[:, None] * g_encoder - g_dot_u[:, None] * rows - (2.0 * alpha * g_dot_u)[:, None] * u
    # última coluna de A é fixa em zero e não recebe gradiente
    return g_rows[:, :-1], g_u


# ==========================================
# ORÁCULO DE DIFERENÇAS FINITAS
# ==========================================

def _central_differences(params: SaeParams, x: Matrix, lam: float, p_current: float,
                         step: float) -> Tuple[GradSet, Dict[str, np.ndarray]]:
    """Diferenças centrais em todos os escalares livres + máscara de instabilidade do suporte"""
    if step <= 0:
        raise ConfigError(f"❌ passo de diferenças finitas deve ser > 0, recebido {step}")
    x = np.asarray(x, dtype=np.float64)
    base_active = forward(params, x).active
    tensors = params.free_tensors()

    numeric: Dict[str, np.ndarray] = {}
    unstable: Dict[str, np.ndarray] = {}
    for name, tensor in tensors.items():
        grad = np.zeros_like(tensor)
        flips = np.zeros(tensor.shape, dtype=bool)
        for index in np.ndindex(*tensor.shape):
            values = []
            for sign in (1.0, -1.0):
                perturbed = tensor.copy()
                perturbed[index] += sign * step
                candidate = params.with_tensors({name: perturbed})
                values.append(total_loss(candidate, x, lam, p_current).loss)
                if not np.array_equal(forward(candidate, x).active, base_active):
                    flips[index] = True
            grad[index] = (values[0] - values[1]) / (2.0 * step)
        numeric[name] = grad
        unstable[name] = flips
    return GradSet(numeric), unstable


def finite_diff_grads(params: SaeParams, x: Matrix, lam: float, p_current: float = 1.0,
                      step: float = Config.FD_STEP) -> GradSet:
    """Gradientes por diferenças centrais: O(P) avaliações da perda"""
    numeric, _ = _central_differences(params, x, lam, p_current, step)
    return numeric


def compare_grads(analytic: GradSet, numeric: GradSet, unstable: Optional[Dict[str, np.ndarray]] = None,
                  floor: float = Config.GRAD_CHECK_FLOOR, atol: float = Config.GRAD_CHECK_ATOL) -> GradCheckReport:
    """Erro relativo |g_a − g_fd| / max(|g_a|, |g_fd|, floor), maximizado elemento a elemento

    Diferenças abaixo de `atol` (ruído de arredondamento do passo de FD) contam como zero.
    """
    worst = (0.0, None, None)
    skipped = 0
    checked = 0
    per_tensor: Dict[str, float] = {}
    for name, g_a in analytic.items():
        g_fd = numeric[name]
        abs_err = np.abs(g_a - g_fd)
        rel = abs_err / np.maximum(np.maximum(np.abs(g_a), np.abs(g_fd)), floor)
        rel = np.where(abs_err <= atol, 0.0, rel)
        if unstable is not None and name in unstable:
            mask = unstable[name]
            skipped += int(mask.sum())
            rel = np.where(mask, 0.0, rel)
            checked += int((~mask).sum())
        else:
            checked += int(rel.size)
        tensor_max = float(rel.max()) if rel.size else 0.0
        per_tensor[name] = tensor_max
        if rel.size and tensor_max > worst[0]:
            index = tuple(int(i) for i in np.unravel_index(int(np.argmax(rel)), rel.shape))
            worst = (tensor_max, name, index)
    return GradCheckReport(
        max_rel_err=worst[0],
        worst_tensor=worst[1],
        worst_index=worst[2],
        skipped=skipped,
        checked=checked,
        per_tensor=per_tensor,
    )


def grad_check(params: SaeParams, x: Matrix, lam: float, p_current: float = 1.0,
               step: float = Config.FD_STEP, grads: Optional[GradSet] = None) -> GradCheckReport:
    """Compara backward com diferenças finitas, pulando índices onde o suporte muda"""
    if grads is None:
        _, grads = backward(params, x, lam, p_current)
    numeric, unstable = _central_differences(params, x, lam, p_current, step)
    return compare_grads(grads, numeric, unstable)


# ==========================================
# INSTÂNCIAS ALEATÓRIAS
# ==========================================

def variant_grid(k: int = 3, p_end: float = 0.5) -> List[SaeVariant]:
    """Todas as combinações modo × ativação × penalidade"""
    grid = []
    for mode in ENCODER_MODES:
        for activation in ACTIVATIONS:
            for penalty in PENALTIES:
                grid.append(SaeVariant(
                    encoder_mode=mode,
                    activation=activation,
                    k=k if activation != "relu" else None,
                    penalty=penalty,
                    p_start=1.0,
                    p_end=p_end if penalty == "lp_annealed" else 1.0,
                ))
    return grid


def random_instance(variant: SaeVariant, rng: RngStream, n: int = 5, m: int = 8,
                    batch: int = 4) -> Tuple[SaeParams, Matrix]:
    """Parâmetros e batch gaussianos para checagem de gradiente"""
    w_dec = rng.normal((n, m))
    a_free = rng.normal((m, n - 1)) if variant.encoder_mode == "aligned" else None
    w_enc_raw = rng.normal((m, n), 1.0 / np.sqrt(n)) if variant.encoder_mode == "standard" else None
    params = make_params(
        variant,
        w_dec,
        b_enc=rng.normal(m, 0.1),
        b_dec=rng.normal(n, 0.1),
        a_free=a_free,
        w_enc_raw=w_enc_raw,
    )
    return params, rng.normal((batch, n))
