#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
📝 ALIGNED SAE LAB - SISTEMA DE LOGS ESTRUTURADO
===============================================
Logging categorizado com loguru: console (stderr), arquivo opcional e buffer para análise
"""

import json
import sys
import threading
import traceback
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional

from loguru import logger
from rich.console import Console
from rich.markup import escape

from config import Config

console = Console(stderr=True)


class LogLevel(Enum):
    """Níveis de log"""
    TRACE = "TRACE"
    DEBUG = "DEBUG"
    INFO = "INFO"
    SUCCESS = "SUCCESS"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class LogCategory(Enum):
    """Categorias de log"""
    SYSTEM = "SYSTEM"
    CONFIG = "CONFIG"
    DATA = "DATA"
    MODEL = "MODEL"
    GRAD = "GRAD"
    TRAIN = "TRAIN"
    METRICS = "METRICS"
    CHECKPOINT = "CHECKPOINT"
    ERROR = "ERROR"
    PERFORMANCE = "PERFORMANCE"


@dataclass
class LogEntry:
    """Entrada de log estruturada"""
    timestamp: str
    level: str
    category: str
    message: str
    module: str
    function: str
    line: int
    extra_data: Dict[str, Any] = field(default_factory=dict)


@dataclass
class LogStats:
    """Estatísticas de logs"""
    total_entries: int = 0
    entries_by_level: Dict[str, int] = field(default_factory=dict)
    entries_by_category: Dict[str, int] = field(default_factory=dict)
    error_rate: float = 0.0


CONSOLE_FORMAT = "{time:HH:mm:ss} | {level: <8} | {extra[category]: <11} | {message}"
FILE_FORMAT = ("{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {extra[category]: <11} | "
               "{module}:{function}:{line} | {message}")

DEFAULT_SINKS: Dict[str, Dict[str, Any]] = {
    "console": {"format": CONSOLE_FORMAT, "colorize": True},
    "file": {"filename": "sae_lab.log", "level": "DEBUG", "format": FILE_FORMAT,
             "rotation": "10 MB", "retention": "30 days", "compression": "zip"},
    "errors": {"filename": "errors.log", "level": "ERROR", "format": FILE_FORMAT,
               "rotation": "1 day", "retention": "90 days", "compression": "zip"},
    "buffer_size": 1000,
}


def load_logging_config(path: Optional[Path] = None) -> Dict[str, Any]:
    """Mescla config/logging_config.json sobre os padrões"""
    path = Path(path) if path else Config.CONFIG_DIR / "logging_config.json"
    merged = {key: (dict(value) if isinstance(value, dict) else value) for key, value in DEFAULT_SINKS.items()}
    if not path.exists():
        return merged
    try:
        loaded = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        console.print(f"[yellow]⚠️ Erro ao carregar {escape(str(path))}: {escape(str(e))}[/yellow]")
        return merged
    for key, value in loaded.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


class StructuredLogger:
    """Sistema de logging estruturado"""

    def __init__(self, level: Optional[str] = None, log_dir: Optional[Path] = None,
                 settings: Optional[Dict[str, Any]] = None):
        self.level = (level or Config.LOG_LEVEL).upper()
        self.log_dir = Path(log_dir) if log_dir else (Path(Config.LOG_DIR) if Config.LOG_DIR else None)
        self.settings = settings or load_logging_config()

        self.stats = LogStats()
        self.log_buffer: Deque[LogEntry] = deque(maxlen=int(self.settings["buffer_size"]))
        self.buffer_lock = threading.Lock()

        self._setup_loguru()

    def _setup_loguru(self):
        """Configura loguru com handlers personalizados"""
        logger.remove()
        logger.configure(extra={"category": LogCategory.SYSTEM.value})

        # Console em stderr: stdout fica livre para JSON/CSV
        console_sink = self.settings["console"]
        logger.add(sys.stderr, level=self.level, format=console_sink["format"],
                   colorize=console_sink.get("colorize", True))

        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            for key in ("file", "errors"):
                sink = dict(self.settings[key])
                filename = sink.pop("filename")
                sink.setdefault("format", FILE_FORMAT)
                logger.add(self.log_dir / filename, **sink)

        # Buffer estruturado para análise
        logger.add(self._buffer_sink, level="DEBUG", format="{message}")

    def _buffer_sink(self, message):
        """Handler que guarda o record estruturado no buffer"""
        record = message.record
        extra = dict(record["extra"])
        category = extra.pop("category", LogCategory.SYSTEM.value)
        entry = LogEntry(
            timestamp=record["time"].strftime("%Y-%m-%d %H:%M:%S"),
            level=record["level"].name,
            category=category,
            message=record["message"],
            module=record["module"],
            function=record["function"],
            line=record["line"],
            extra_data=extra,
        )
        with self.buffer_lock:
            self.log_buffer.append(entry)
            self._update_stats(entry)

    def _update_stats(self, entry: LogEntry):
        """Atualiza estatísticas em tempo real"""
        self.stats.total_entries += 1
        self.stats.entries_by_level[entry.level] = self.stats.entries_by_level.get(entry.level, 0) + 1
        self.stats.entries_by_category[entry.category] = self.stats.entries_by_category.get(entry.category, 0) + 1
        errors = self.stats.entries_by_level.get("ERROR", 0) + self.stats.entries_by_level.get("CRITICAL", 0)
        self.stats.error_rate = errors / self.stats.total_entries * 100

    def log(self, level: LogLevel, category: LogCategory, message: str, **kwargs):
        """Método principal de logging"""
        extra_data = {"category": category.value, **kwargs}
        if level in (LogLevel.ERROR, LogLevel.CRITICAL) and sys.exc_info()[0] is not None:
            extra_data["traceback"] = traceback.format_exc()
        logger.bind(**extra_data).opt(depth=2).log(level.value, message)

    def log_performance(self, operation: str, duration: float, **kwargs):
        """Log específico para performance"""
        self.log(LogLevel.INFO, LogCategory.PERFORMANCE,
                 f"Performance: {operation} levou {duration:.3f}s",
                 operation=operation, duration=duration, **kwargs)

    def log_error(self, error: Exception, context: str = "", **kwargs):
        """Log específico para erros"""
        self.log(LogLevel.ERROR, LogCategory.ERROR,
                 f"Erro em {context}: {error}",
                 error_type=type(error).__name__, error_message=str(error), context=context, **kwargs)

    def get_log_stats(self) -> LogStats:
        return self.stats

    def search_logs(self, query: str = "", category: Optional[str] = None,
                    level: Optional[str] = None) -> List[LogEntry]:
        """Busca logs no buffer com filtros"""
        with self.buffer_lock:
            entries = list(self.log_buffer)
        results = []
        for entry in entries:
            if query and query.lower() not in entry.message.lower():
                continue
            if category and entry.category != category:
                continue
            if level and entry.level != level:
                continue
            results.append(entry)
        return results


_structured_logger: Optional[StructuredLogger] = None
_logger_lock = threading.Lock()


def get_logger() -> StructuredLogger:
    """Retorna a instância (lazy) do logger estruturado"""
    global _structured_logger
    with _logger_lock:
        if _structured_logger is None:
            _structured_logger = StructuredLogger()
        return _structured_logger


def configure_logging(level: Optional[str] = None, log_dir: Optional[Path] = None) -> StructuredLogger:
    """Reconfigura o logger (usado pela CLI com --log-level)"""
    global _structured_logger
    with _logger_lock:
        _structured_logger = StructuredLogger(level=level, log_dir=log_dir)
        return _structured_logger


# Funções de conveniência
def log_info(category: LogCategory, message: str, **kwargs):
    get_logger().log(LogLevel.INFO, category, message, **kwargs)


def log_debug(category: LogCategory, message: str, **kwargs):
    get_logger().log(LogLevel.DEBUG, category, message, **kwargs)


def log_warning(category: LogCategory, message: str, **kwargs):
    get_logger().log(LogLevel.WARNING, category, message, **kwargs)


def log_success(category: LogCategory, message: str, **kwargs):
    get_logger().log(LogLevel.SUCCESS, category, message, **kwargs)


def log_error(category: LogCategory, message: str, error: Optional[Exception] = None, **kwargs):
    if error is not None:
        get_logger().log_error(error, message, **kwargs)
    else:
        get_logger().log(LogLevel.ERROR, category, message, **kwargs)


def log_performance(operation: str, duration: float, **kwargs):
    get_logger().log_performance(operation, duration, **kwargs)
