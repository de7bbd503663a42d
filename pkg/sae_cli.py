#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
🧪 ALIGNED SAE LAB - LINHA DE COMANDO
====================================
gen-data, train, eval, compare, align-hist, grad-check, sweep e correlate.
Saídas legíveis por máquina (JSON/CSV) vão para stdout; logs e painéis para stderr.

Códigos de saída: 0 sucesso, 1 uso/configuração, 2 erro de execução ou numérico.
"""

import argparse
import itertools
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from activation_data import SyntheticSpec, gen_synthetic, read_activations, toy_point_set, write_activations
from config import Config, RunConfig, load_run_config
from exceptions import ConfigError, DimensionError, SaeLabError
from grad_engine import grad_check, random_instance, variant_grid
from logging_system import (LogCategory, configure_logging, console, log_error, log_info, log_performance,
                            log_warning)
from metrics import alignment_histogram, alignment_mcs_correlation, evaluate, mmcs, mmcs_trajectory, symmetric_mmcs
from numerics import RngStream
from sae_model import alignment_scores
from trainer import Checkpoint, load_checkpoint, save_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

CHECKPOINT_FILE = "checkpoint.saec"
METRICS_FILE = "metrics.jsonl"
SUMMARY_COLUMNS = ["mode", "lambda", "seed", "L0", "explained_variance", "dead_fraction", "mmcs_vs_other_seed"]


class CliParser(argparse.ArgumentParser):
    """argparse que sinaliza erros de uso como ConfigError (saída 1)"""

    def error(self, message):
        raise ConfigError(f"❌ Uso inválido: {message}")


def _emit(text: str):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    sys.stdout.flush()


def _emit_json(payload: Dict):
    _emit(json.dumps(payload, sort_keys=True, allow_nan=False))


# ==========================================
# gen-data
# ==========================================

def cmd_gen_data(args) -> int:
    if args.toy_point:
        data = toy_point_set(args.toy_point)
        expected_l0 = None
    else:
        missing = [flag for flag, value in (("--n", args.n), ("--m-true", args.m_true), ("--rho", args.rho),
                                            ("--samples", args.samples)) if value is None]
        if missing:
            raise ConfigError(f"❌ gen-data exige {', '.join(missing)} (ou --toy-point)")
        spec = SyntheticSpec(n=args.n, m_true=args.m_true, fire_prob=args.rho, samples=args.samples,
                             noise_sigma=args.noise_sigma, seed=args.seed)
        data = gen_synthetic(spec)
        expected_l0 = spec.expected_l0

    path = write_activations(data, Path(args.out))
    log_info(LogCategory.DATA, f"📦 {data.samples} amostras (n={data.n}) gravadas em {path}")
    _emit_json({"samples": data.samples, "n": data.n, "expected_l0": expected_l0, "path": str(path)})
    return EXIT_OK


# ==========================================
# train
# ==========================================

def _write_metrics(path: Path, records) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(record.to_json() + "\n")
    return path


def run_training(run: RunConfig, out_dir: Path, **changes) -> Checkpoint:
    """Treina um RunConfig e grava checkpoint, metrics.jsonl e config.json em out_dir"""
    if not run.data_path:
        raise ConfigError("❌ data_path ausente (use a chave data_path ou --data)")
    cfg = run.to_train_config(**changes)
    cfg.validate()
    data = read_activations(Path(run.data_path))
    data.check_dim(cfg.n, f"dados {run.data_path}")

    checkpoint, log = train(cfg, data)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(checkpoint, out_dir / CHECKPOINT_FILE)
    _write_metrics(out_dir / METRICS_FILE, log)
    (out_dir / "config.json").write_text(run.model_copy(update=changes).dump(), encoding="utf-8")
    return checkpoint


def cmd_train(args) -> int:
    run = load_run_config(Path(args.config), args.override)
    if args.data:
        run.data_path = args.data
    out_dir = Path(args.out or run.out_dir)
    checkpoint = run_training(run, out_dir)
    console.print(f"✅ [bold green]Checkpoint salvo em {escape(str(out_dir / CHECKPOINT_FILE))}[/bold green]")
    _emit(checkpoint.metrics.to_json())
    return EXIT_OK


# ==========================================
# eval / compare / align-hist / correlate
# ==========================================

def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(Path(args.checkpoint))
    data = read_activations(Path(args.data))
    data.check_dim(checkpoint.params.n, f"eval de {args.checkpoint}")
    record = evaluate(checkpoint.params, data.data, step=checkpoint.step)
    if record.explained_variance is None:
        log_warning(LogCategory.METRICS, "⚠️ Variância explicada indefinida: dados constantes ou amostra única")
    _emit(record.to_json())
    return EXIT_OK


def cmd_compare(args) -> int:
    a = load_checkpoint(Path(args.checkpoint_a)).params
    b = load_checkpoint(Path(args.checkpoint_b)).params
    if a.n != b.n:
        raise DimensionError("❌ compare: checkpoints com n diferente", a.w_dec.shape, b.w_dec.shape)
    forward_score = mmcs(a.w_dec, b.w_dec)
    backward_score = mmcs(b.w_dec, a.w_dec)
    _emit_json({
        "mmcs_a_to_b": forward_score,
        "mmcs_b_to_a": backward_score,
        "mean": 0.5 * (forward_score + backward_score),
    })
    return EXIT_OK


def cmd_align_hist(args) -> int:
    checkpoint = load_checkpoint(Path(args.checkpoint))
    histogram = alignment_histogram(alignment_scores(checkpoint.params), args.bins, tuple(args.range))
    _emit(histogram.to_csv())
    return EXIT_OK


def cmd_correlate(args) -> int:
    params = load_checkpoint(Path(args.checkpoint)).params
    reference = load_checkpoint(Path(args.reference)).params
    r, p_value = alignment_mcs_correlation(params, reference.w_dec)
    _emit_json({"pearson_r": r, "p_value": p_value, "features": params.m})
    return EXIT_OK


# ==========================================
# grad-check
# ==========================================

def cmd_grad_check(args) -> int:
    if args.trials < 1:
        raise ConfigError(f"❌ --trials deve ser >= 1, recebido {args.trials}")

    rng = RngStream(args.seed)
    grid = variant_grid(k=args.k)
    worst: Dict[str, float] = {}
    skipped = 0
    start_time = time.time()
    for trial in range(args.trials):
        variant = grid[trial % len(grid)]
        params, x = random_instance(variant, rng, n=args.n, m=args.m, batch=args.batch)
        report = grad_check(params, x, args.lam, args.p)
        worst[variant.label] = max(worst.get(variant.label, 0.0), report.max_rel_err)
        skipped += report.skipped
        if not report.passed():
            log_warning(LogCategory.GRAD, f"⚠️ {variant.label}: erro {report.max_rel_err:.3e} em "
                                          f"{report.worst_tensor}{report.worst_index}")
    log_performance("grad_check", time.time() - start_time, trials=args.trials)

    passed = all(err <= Config.GRAD_CHECK_TOLERANCE for err in worst.values())
    table = Table(title="🔁 Checagem de gradientes")
    table.add_column("Variante", style="cyan")
    table.add_column("Pior erro relativo", style="green")
    for label, err in sorted(worst.items()):
        style = "green" if err <= Config.GRAD_CHECK_TOLERANCE else "red"
        table.add_row(label, f"[{style}]{err:.3e}[/{style}]")
    console.print(table)

    _emit_json({
        "passed": passed,
        "trials": args.trials,
        "tolerance": Config.GRAD_CHECK_TOLERANCE,
        "skipped_indices": skipped,
        "worst_per_variant": dict(sorted(worst.items())),
    })
    return EXIT_OK if passed else EXIT_RUNTIME


# ==========================================
# sweep
# ==========================================

def _run_label(mode: str, lam: float, seed: int) -> str:
    return f"{mode}_lam{lam:g}_seed{seed}"


def run_sweep(run: RunConfig, lambdas: Sequence[float], seeds: Sequence[int], out_dir: Path) -> pd.DataFrame:
    """Produto cartesiano modo × λ × semente; falhas são registradas e o sweep continua"""
    if not lambdas or not seeds:
        raise ConfigError("❌ sweep exige pelo menos um λ e uma semente")
    if any(lam < 0 for lam in lambdas):
        raise ConfigError(f"❌ λ deve ser >= 0: {list(lambdas)}")
    modes = ["standard", "aligned"] + (["tied"] if run.include_tied else [])

    completed: Dict[tuple, Checkpoint] = {}
    failures: List[Dict] = []
    start_time = time.time()
    for mode, lam, seed in itertools.product(modes, lambdas, seeds):
        label = _run_label(mode, lam, seed)
        try:
            checkpoint = run_training(run, out_dir / label, encoder_mode=mode, lam=lam, seed=seed)
            completed[(mode, lam, seed)] = checkpoint
        except (SaeLabError, OSError) as e:
            log_error(LogCategory.TRAIN, f"❌ Execução {label} falhou: {e}")
            failures.append({"mode": mode, "lambda": lam, "seed": seed, "error": str(e)})

    rows = []
    for (mode, lam, seed), checkpoint in completed.items():
        partners = [other for (m, l, s), other in completed.items() if m == mode and l == lam and s != seed]
        stability = (sum(symmetric_mmcs(checkpoint.params.w_dec, other.params.w_dec) for other in partners)
                     / len(partners)) if partners else None
        metrics = checkpoint.metrics
        rows.append({
            "mode": mode,
            "lambda": lam,
            "seed": seed,
            "L0": metrics.l0_mean,
            "explained_variance": metrics.explained_variance,
            "dead_fraction": metrics.dead_fraction_eval,
            "mmcs_vs_other_seed": stability,
        })

    summary = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary.to_csv(out_dir / "summary.csv", index=False, lineterminator="\n")
    if failures:
        pd.DataFrame(failures).to_csv(out_dir / "failures.csv", index=False, lineterminator="\n")

    if run.snapshot_every:
        trajectories = []
        for mode, lam in itertools.product(modes, lambdas):
            group = [seed for (m, l, seed) in completed if m == mode and l == lam]
            for seed_a, seed_b in itertools.combinations(group, 2):
                for step, score in mmcs_trajectory(completed[(mode, lam, seed_a)].snapshots,
                                                   completed[(mode, lam, seed_b)].snapshots):
                    trajectories.append({"mode": mode, "lambda": lam, "seed_a": seed_a, "seed_b": seed_b,
                                         "step": step, "mmcs": score})
        pd.DataFrame(trajectories, columns=["mode", "lambda", "seed_a", "seed_b", "step", "mmcs"]).to_csv(
            out_dir / "stability.csv", index=False, lineterminator="\n")

    log_performance("sweep", time.time() - start_time, runs=len(completed), failures=len(failures))
    return summary


def cmd_sweep(args) -> int:
    run = load_run_config(Path(args.config), args.override)
    if args.data:
        run.data_path = args.data
    lambdas = args.lambdas or run.lambdas or [run.lam]
    seeds = args.seeds or run.seeds or [run.seed]
    out_dir = Path(args.out or run.out_dir)

    summary = run_sweep(run, lambdas, seeds, out_dir)
    table = Table(title="📊 Sweep")
    for column in SUMMARY_COLUMNS:
        table.add_column(column)
    for row in summary.itertuples(index=False):
        table.add_row(*[str(value) for value in row])
    console.print(table)
    _emit(summary.to_csv(index=False, lineterminator="\n"))
    return EXIT_OK


# ==========================================
# PARSER
# ==========================================

def build_parser() -> CliParser:
    parser = CliParser(prog="sae_cli", description="Aligned SAE Lab - treino e avaliação de SAEs alinhados")
    parser.add_argument("--log-level", default=None, help="Nível de log (padrão: SAE_LOG_LEVEL)")
    parser.add_argument("--log-dir", default=None, help="Diretório para arquivos de log")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="Gera ativações sintéticas (SAEA)")
    gen.add_argument("--n", type=int)
    gen.add_argument("--m-true", type=int)
    gen.add_argument("--rho", type=float)
    gen.add_argument("--samples", type=int)
    gen.add_argument("--noise-sigma", type=float, default=0.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--toy-point", type=float, nargs="+", help="Uma única amostra (modelo de brinquedo)")
    gen.add_argument("--out", required=True)
    gen.set_defaults(handler=cmd_gen_data)

    trn = commands.add_parser("train", help="Treina a partir de um RunConfig JSON")
    trn.add_argument("config")
    trn.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    trn.add_argument("--data")
    trn.add_argument("--out")
    trn.set_defaults(handler=cmd_train)

    evl = commands.add_parser("eval", help="Avalia um checkpoint em um conjunto de ativações")
    evl.add_argument("checkpoint")
    evl.add_argument("data")
    evl.set_defaults(handler=cmd_eval)

    cmp_ = commands.add_parser("compare", help="MMCS entre dois checkpoints")
    cmp_.add_argument("checkpoint_a")
    cmp_.add_argument("checkpoint_b")
    cmp_.set_defaults(handler=cmd_compare)

    hist = commands.add_parser("align-hist", help="Histograma dos alignment scores (CSV)")
    hist.add_argument("checkpoint")
    hist.add_argument("--bins", type=int, default=20)
    hist.add_argument("--range", type=float, nargs=2, default=[-0.5, 1.5], metavar=("LO", "HI"))
    hist.set_defaults(handler=cmd_align_hist)

    grad = commands.add_parser("grad-check", help="Backward vs diferenças finitas")
    grad.add_argument("--trials", type=int, default=36)
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--n", type=int, default=5)
    grad.add_argument("--m", type=int, default=8)
    grad.add_argument("--batch", type=int, default=4)
    grad.add_argument("--k", type=int, default=3)
    grad.add_argument("--lam", type=float, default=0.1)
    grad.add_argument("--p", type=float, default=0.7)
    grad.set_defaults(handler=cmd_grad_check)

    swp = commands.add_parser("sweep", help="standard × aligned (× tied) sobre λ e sementes")
    swp.add_argument("config")
    swp.add_argument("--lambdas", type=float, nargs="+")
    swp.add_argument("--seeds", type=int, nargs="+")
    swp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    swp.add_argument("--data")
    swp.add_argument("--out")
    swp.set_defaults(handler=cmd_sweep)

    cor = commands.add_parser("correlate", help="Pearson entre alignment score e MCS com um dicionário de referência")
    cor.add_argument("checkpoint")
    cor.add_argument("reference")
    cor.set_defaults(handler=cmd_correlate)

    return parser


def _report(error: Exception, title: str):
    console.print(Panel.fit(f"[bold red]{escape(str(error))}[/bold red]", title=escape(title), border_style="red"))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Ponto de entrada; devolve o código de saída"""
    args = None
    try:
        Config.validate_config()
        Config.create_directories()
        args = build_parser().parse_args(argv)
        if args.log_level or args.log_dir:
            configure_logging(args.log_level, Path(args.log_dir) if args.log_dir else None)
        return args.handler(args)
    except ConfigError as e:
        log_error(LogCategory.CONFIG, str(e))
        _report(e, "Erro de configuração")
        return EXIT_USAGE
    except (SaeLabError, OSError) as e:
        log_error(LogCategory.ERROR, f"sae_cli {getattr(args, 'command', '')}".strip(), error=e)
        _report(e, type(e).__name__)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
