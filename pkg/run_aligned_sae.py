#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
🚀 ALIGNED SAE LAB - LAUNCHER
============================
Script de execução principal: repassa os argumentos para sae_cli
"""

import sys
from pathlib import Path

# Adiciona diretório atual ao path
sys.path.insert(0, str(Path(__file__).parent))

try:
    from sae_cli import main
except ImportError as e:
    print(f"❌ Erro de importação: {e}", file=sys.stderr)
    print("Execute: pip install -r requirements.txt", file=sys.stderr)
    sys.exit(1)

if __name__ == "__main__":
    sys.exit(main())
