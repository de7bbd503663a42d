#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
🚨 ALIGNED SAE LAB - EXCEÇÕES
============================
Hierarquia única de erros do laboratório
"""

from typing import Optional, Sequence, Tuple


class SaeLabError(Exception):
    """Base de todos os erros do laboratório"""


class DimensionError(SaeLabError, ValueError):
    """Formas incompatíveis entre tensores"""

    def __init__(self, message: str, shape_a: Optional[Sequence[int]] = None,
                 shape_b: Optional[Sequence[int]] = None):
        self.shape_a = tuple(shape_a) if shape_a is not None else None
        self.shape_b = tuple(shape_b) if shape_b is not None else None
        if self.shape_a is not None and self.shape_b is not None:
            message = f"{message} ({self.shape_a} vs {self.shape_b})"
        super().__init__(message)


class DegenerateColumnError(SaeLabError, ValueError):
    """Coluna do decoder com norma abaixo de ε_dec"""

    def __init__(self, feature_index: int, norm: float, eps: float):
        self.feature_index = feature_index
        self.norm = norm
        super().__init__(
            f"❌ Coluna degenerada do decoder na feature {feature_index}: "
            f"norma {norm:.3e} < {eps:.0e}"
        )


class DegenerateVarianceError(SaeLabError, ValueError):
    """Dados constantes: variância explicada indefinida"""


class DegenerateDenominatorError(SaeLabError, ValueError):
    """Denominador nulo em razão de métricas"""


class ConfigError(SaeLabError, ValueError):
    """Configuração inválida"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(f"{message}{location}")


class NumericalError(SaeLabError, ArithmeticError):
    """Valor não finito ou deriva numérica"""

    def __init__(self, message: str, tensor: Optional[str] = None, step: Optional[int] = None):
        self.tensor = tensor
        self.step = step
        details = []
        if tensor is not None:
            details.append(f"tensor={tensor}")
        if step is not None:
            details.append(f"step={step}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class ConstraintViolationError(NumericalError):
    """Restrição de alinhamento violada durante o treino"""


class FileFormatError(SaeLabError):
    """Arquivo binário inválido"""


class BadMagicError(FileFormatError):
    def __init__(self, path: str, expected: bytes, found: bytes):
        self.expected = expected
        self.found = found
        super().__init__(
            f"❌ Magic inválido em {path}: esperado {expected.decode('ascii')!r}, encontrado {found!r}"
        )


class VersionMismatchError(FileFormatError):
    def __init__(self, path: str, expected: int, found: int):
        self.expected = expected
        self.found = found
        super().__init__(f"❌ Versão {found} não suportada em {path} (esperado {expected})")


class TruncatedFileError(FileFormatError):
    def __init__(self, path: str, what: str, wanted: int, got: int):
        self.what = what
        super().__init__(
            f"❌ Arquivo truncado {path}: lendo {what}, esperados {wanted} bytes, lidos {got}"
        )


def shape_of(array) -> Tuple[int, ...]:
    """Forma de um array como tupla de ints"""
    return tuple(int(s) for s in getattr(array, "shape", ()))
