"""
💾 ALIGNED SAE LAB - E/S BINÁRIA
===============================
Primitivas little-endian compartilhadas pelos formatos SAEA (ativações) e SAEC (checkpoints)
"""

import struct
from pathlib import Path
from typing import BinaryIO, Tuple

import numpy as np

from config import Config
from exceptions import BadMagicError, TruncatedFileError, VersionMismatchError

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


# ==========================================
# ESCRITA
# ==========================================

def write_u8(handle: BinaryIO, value: int):
    handle.write(_U8.pack(int(value)))


def write_u32(handle: BinaryIO, value: int):
    handle.write(_U32.pack(int(value)))


def write_u64(handle: BinaryIO, value: int):
    handle.write(_U64.pack(int(value)))


def write_blob(handle: BinaryIO, payload: bytes):
    """Bloco prefixado pelo comprimento (u64)"""
    write_u64(handle, len(payload))
    handle.write(payload)


def write_f32(handle: BinaryIO, array: np.ndarray):
    """Payload row-major float32 little-endian"""
    handle.write(np.ascontiguousarray(array, dtype=np.float64).astype(Config.STORAGE_DTYPE).tobytes(order="C"))


def write_named_matrix(handle: BinaryIO, name: str, matrix: np.ndarray):
    """(len(nome) u32, nome, linhas u64, colunas u64, payload f32)"""
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    encoded = name.encode("utf-8")
    write_u32(handle, len(encoded))
    handle.write(encoded)
    write_u64(handle, matrix.shape[0])
    write_u64(handle, matrix.shape[1])
    write_f32(handle, matrix)


# ==========================================
# LEITURA
# ==========================================

class BinaryReader:
    """Cursor sobre o conteúdo de um arquivo; toda leitura curta vira TruncatedFileError"""

    def __init__(self, payload: bytes, path: str):
        self.payload = memoryview(payload)
        self.path = path
        self.offset = 0

    @classmethod
    def open(cls, path: Path) -> "BinaryReader":
        path = Path(path)
        return cls(path.read_bytes(), str(path))

    @property
    def remaining(self) -> int:
        return len(self.payload) - self.offset

    def at_end(self) -> bool:
        return self.remaining == 0

    def read_exact(self, size: int, what: str) -> bytes:
        if size > self.remaining:
            raise TruncatedFileError(self.path, what, size, self.remaining)
        chunk = bytes(self.payload[self.offset:self.offset + size])
        self.offset += size
        return chunk

    def read_u8(self, what: str) -> int:
        return _U8.unpack(self.read_exact(_U8.size, what))[0]

    def read_u32(self, what: str) -> int:
        return _U32.unpack(self.read_exact(_U32.size, what))[0]

    def read_u64(self, what: str) -> int:
        return _U64.unpack(self.read_exact(_U64.size, what))[0]

    def read_blob(self, what: str) -> bytes:
        return self.read_exact(self.read_u64(f"{what} (comprimento)"), what)

    def expect_magic(self, magic: bytes, what: str = "magic"):
        found = self.read_exact(len(magic), what)
        if found != magic:
            raise BadMagicError(self.path, magic, found)

    def expect_version(self, version: int):
        found = self.read_u32("versão")
        if found != version:
            raise VersionMismatchError(self.path, version, found)

    def read_f32(self, rows: int, cols: int, what: str) -> np.ndarray:
        """Matriz rows×cols float32 → float64 (conversão exata)"""
        itemsize = np.dtype(Config.STORAGE_DTYPE).itemsize
        raw = self.read_exact(rows * cols * itemsize, what)
        return np.frombuffer(raw, dtype=Config.STORAGE_DTYPE).astype(np.float64).reshape(rows, cols)

    def read_named_matrix(self) -> Tuple[str, np.ndarray]:
        name_length = self.read_u32("comprimento do nome do tensor")
        name = self.read_exact(name_length, "nome do tensor").decode("utf-8")
        rows = self.read_u64(f"linhas de {name}")
        cols = self.read_u64(f"colunas de {name}")
        return name, self.read_f32(rows, cols, f"payload de {name}")


def to_storage(array: np.ndarray) -> np.ndarray:
    """Arredonda para a precisão de armazenamento (float32) e volta a float64"""
    return np.asarray(array, dtype=np.float64).astype(Config.STORAGE_DTYPE).astype(np.float64)
