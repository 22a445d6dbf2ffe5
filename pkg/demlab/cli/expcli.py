"""
CLI de demlab
Cada subcomando enlaza una capacidad de la librería y emite un reporte por stdout
"""

import argparse
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from demlab import __version__
from demlab.cli import io
from demlab.core.config import settings
from demlab.core.exceptions import DemlabError, InputValidationError, NumericalError
from demlab.core.logging import ComputationLogger, DataLogger, configure_logging, get_logger, log_startup_info
from demlab.schemas.clustering import BootstrapMode
from demlab.schemas.common import Alternative, ErrorReport, Report, build_model
from demlab.schemas.rulu import RuluParams, ValueFamily
from demlab.schemas.sequential import Monitor
from demlab.services.clusterse_service import clusterse_service
from demlab.services.pse_service import SETUP_IDS, pse_service
from demlab.services.rulu_service import SWEEP_AXES, rulu_service
from demlab.services.seqkit_service import seqkit_service
from demlab.services.simlab_service import child_seeds, resolve_seed
from demlab.services.testkit_service import testkit_service

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

TESTS = ("practical", "welch", "z", "mann_whitney")


def _floats(text: str) -> List[float]:
    """Lista separada por comas"""
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from e


class _Parser(argparse.ArgumentParser):
    """Los errores de uso salen por stderr con código 2"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# =============================================================================
# CONSTRUCCIÓN DE PARÁMETROS
# =============================================================================

def _rulu_params(args: argparse.Namespace) -> RuluParams:
    return build_model(
        RuluParams,
        n_items=args.n, capacity=args.m, mean_value=args.mu_v, mean_noise=args.mu_noise,
        var_value=args.sigma_v ** 2, var_noise_high=args.sigma1 ** 2, var_noise_low=args.sigma2 ** 2,
        value_family=args.family, dof=args.dof,
        quantile_correction=settings.QUANTILE_CORRECTION if args.c is None else args.c
    )


def _scenario(args: argparse.Namespace):
    return io.read_scenario(args.scenario, {"alpha": args.alpha, "power": args.power})


def _replay_config(args: argparse.Namespace, experiments) -> Any:
    overrides: Dict[str, Any] = {
        "alpha": args.alpha, "theta0": args.theta0, "tau2": args.tau2,
        "bayes_threshold": getattr(args, "threshold", None),
    }
    if args.estimate_hyperparams:
        finals = [seqkit_service.final_summary(series) for series in experiments]
        hyper = seqkit_service.estimate_hyperparams(finals)
        if not hyper.degenerate:
            overrides.update({"v2": hyper.v2_hat, "tau2_scale": hyper.tau2_scale_hat})
    return seqkit_service.default_config(**overrides)


# =============================================================================
# SUBCOMANDOS
# =============================================================================

def cmd_rulu_value(args: argparse.Namespace) -> Any:
    return rulu_service.value_report(_rulu_params(args), risk_free=args.risk_free, fit_method=args.fit)


def cmd_rulu_verify(args: argparse.Namespace) -> Any:
    return rulu_service.verify(
        args.trials, runs=args.runs, resamples=args.resamples, seed=args.seed,
        max_log_n=args.max_log_n, workers=args.workers
    )


def cmd_rulu_sweep(args: argparse.Namespace) -> Any:
    return rulu_service.gain_sweep(
        _rulu_params(args), args.over, args.values, runs=args.runs, seed=args.seed, workers=args.workers
    )


def cmd_rulu_coincidence(args: argparse.Namespace) -> Any:
    params = _rulu_params(args)
    matrix, degenerate = rulu_service.rank_coincidence_matrix(params, balanced=args.balanced, fit_method=args.fit)
    points = [
        {"r": r + 1, "s": s + 1, "p": float(matrix[r, s])}
        for r in range(matrix.shape[0]) for s in range(matrix.shape[1])
    ]
    result: Dict[str, Any] = {"degenerate_rows": degenerate, "points": points}
    if args.empirical_runs:
        empirical = rulu_service.empirical_rank_coincidence(params, args.empirical_runs, args.seed, args.workers)
        result["mean_kl_divergence"] = rulu_service.mean_kl_divergence(matrix, empirical)
    return result


def cmd_power(args: argparse.Namespace) -> Any:
    power = testkit_service.power(
        args.theta, args.theta0, args.var_a, args.var_b, args.n, args.m,
        alpha=args.alpha, alternative=args.alternative, approx=args.approx
    )
    return {"power": power, "theta": args.theta, "theta0": args.theta0, "n": args.n, "m": args.m}


def cmd_samplesize(args: argparse.Namespace) -> Any:
    return testkit_service.required_sample_size(
        args.theta, args.theta0, args.var_a, args.var_b, alpha=args.alpha,
        power_target=args.power, alternative=args.alternative, allocation_ratio=args.ratio
    )


def cmd_mde(args: argparse.Namespace) -> Any:
    mde = testkit_service.mde(
        args.var_a, args.var_b, args.n, args.m, alpha=args.alpha,
        power_target=args.power, alternative=args.alternative
    )
    return {"mde": mde, "n": args.n, "m": args.m}


def cmd_test(args: argparse.Namespace) -> Any:
    table = io.read_responses_csv(args.input)
    groups = table.groups
    group_a = args.group_a or (groups[0] if groups else None)
    group_b = args.group_b or (groups[1] if len(groups) > 1 else None)
    if group_a is None or group_b is None or group_a not in groups or group_b not in groups:
        raise InputValidationError(
            "two-sample tests need two groups present in the file",
            details={"groups": groups, "group_a": group_a, "group_b": group_b}
        )

    if args.test == "mann_whitney":
        return testkit_service.mann_whitney_u(
            table.values(group_a), table.values(group_b),
            alternative=args.alternative, alpha=args.alpha, exact=args.exact
        )
    a, b = table.summary(group_a), table.summary(group_b)
    if args.test == "z":
        return testkit_service.z_test(a, b, args.delta0, alternative=args.alternative, alpha=args.alpha)
    return testkit_service.welch_t_test(
        a, b, args.delta0, alternative=args.alternative, alpha=args.alpha, practical=args.test == "practical"
    )


def cmd_srm(args: argparse.Namespace) -> Any:
    return testkit_service.chi2_gof(args.counts, args.ratios, alpha=args.alpha)


def _replays(args: argparse.Namespace, monitor: Monitor) -> Any:
    experiments = io.pair_experiments(io.read_checkpoint_csv(args.input))
    config = _replay_config(args, experiments)
    return seqkit_service.replay_all(experiments, monitor, config, workers=args.workers)


def cmd_msprt_replay(args: argparse.Namespace) -> Any:
    return _replays(args, Monitor.MSPRT)


def cmd_bayes_replay(args: argparse.Namespace) -> Any:
    return _replays(args, Monitor.BAYES)


def cmd_confusion(args: argparse.Namespace) -> Any:
    experiments = io.read_checkpoint_dir(args.dir)
    config = _replay_config(args, experiments)
    monitor = Monitor(args.monitor)
    replays = seqkit_service.replay_all(experiments, monitor, config, workers=args.workers)
    references = seqkit_service.replay_all(experiments, Monitor.FIXED_T, config, workers=args.workers)
    return seqkit_service.confusion_matrix(replays, references)


def cmd_bootstrap_se(args: argparse.Namespace) -> Any:
    totals = clusterse_service.accumulate(lambda: io.iter_transaction_chunks(args.input, args.chunksize))
    DataLogger.log_ingestion(str(args.input), "transactions", totals.n_rows)
    return clusterse_service.estimate(totals, BootstrapMode(args.mode), b=args.b, seed=args.seed, workers=args.workers)


def cmd_pse_eval(args: argparse.Namespace) -> Any:
    scenario = _scenario(args)
    if args.setup:
        return pse_service.evaluate_setup(args.setup, scenario)
    return pse_service.evaluate_all(scenario)


def cmd_pse_compare(args: argparse.Namespace) -> Any:
    scenario = _scenario(args)
    return pse_service.compare(
        pse_service.evaluate_setup(args.a, scenario), pse_service.evaluate_setup(args.b, scenario)
    )


def cmd_pse_advise(args: argparse.Namespace) -> Any:
    return pse_service.advise(_scenario(args))


def cmd_pse_verify(args: argparse.Namespace) -> Any:
    mde_setups = () if args.no_mde else SETUP_IDS
    if args.scenario:
        return pse_service.verify_scenario(
            _scenario(args), runs=args.runs, seed=args.seed, resamples=args.resamples,
            mde_setups=mde_setups, budget=args.budget, workers=args.workers
        )
    if not args.random:
        raise InputValidationError("pse-verify needs --scenario or --random")

    scenario_seed, run_seed = child_seeds(resolve_seed(args.seed), 2)
    rng = np.random.default_rng(scenario_seed)
    reports = []
    for index, seed in enumerate(child_seeds(run_seed, args.random)):
        scenario = pse_service.random_scenario(
            rng, alpha=args.alpha or settings.DEFAULT_ALPHA, power=args.power or settings.DEFAULT_POWER
        )
        report = pse_service.verify_scenario(
            scenario, runs=args.runs, seed=seed, resamples=args.resamples,
            mde_setups=mde_setups, budget=args.budget, workers=args.workers
        )
        for setup in report.setups:
            reports.append({"scenario": index, **setup.model_dump()})
    return reports


# =============================================================================
# PARSER
# =============================================================================

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=io.OUTPUT_FORMATS, default="json", help="Formato de salida")
    parser.add_argument("--seed", type=int, default=None, help="Semilla (sobrescribe DEMLAB_SEED)")
    parser.add_argument("--workers", type=int, default=None, help="Workers para simulaciones")


def _add_rulu(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, required=True, help="Número de propuestas N")
    parser.add_argument("--m", type=int, required=True, help="Propuestas seleccionadas M")
    parser.add_argument("--mu-v", type=float, default=0.0)
    parser.add_argument("--mu-noise", type=float, default=0.0)
    parser.add_argument("--sigma-v", type=float, required=True, help="Desviación del valor real")
    parser.add_argument("--sigma1", type=float, required=True, help="Desviación del ruido alto")
    parser.add_argument("--sigma2", type=float, required=True, help="Desviación del ruido bajo")
    parser.add_argument("--family", choices=[f.value for f in ValueFamily], default=ValueFamily.NORMAL.value)
    parser.add_argument("--dof", type=float, default=None)
    parser.add_argument("--c", type=float, default=None, help="Corrección de cuantiles")
    parser.add_argument("--fit", choices=("owen", "taylor"), default="owen")


def _add_design(parser: argparse.ArgumentParser, sizes: bool = True) -> None:
    parser.add_argument("--var-a", type=float, required=True)
    parser.add_argument("--var-b", type=float, required=True)
    if sizes:
        parser.add_argument("--n", type=float, required=True)
        parser.add_argument("--m", type=float, required=True)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument(
        "--alternative", choices=[a.value for a in Alternative], default=Alternative.TWO_SIDED.value
    )


def _add_replay(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--theta0", type=float, default=None)
    parser.add_argument("--tau2", type=float, default=None, help="τ² fijo del mSPRT")
    parser.add_argument("--estimate-hyperparams", action="store_true")


def _add_scenario(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--scenario", required=required, help="Archivo KEY=VALUE del escenario")
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--power", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="demlab", description="Estadística para experimentación digital")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        _add_common(sub)
        sub.set_defaults(handler=handler)
        return sub

    sub = command("rulu-value", cmd_rulu_value, "E(D), Var(D), Sharpe y ganancia relativa")
    _add_rulu(sub)
    sub.add_argument("--risk-free", type=float, default=0.0)

    sub = command("rulu-verify", cmd_rulu_verify, "Calibración Monte Carlo con parámetros aleatorios")
    sub.add_argument("--trials", type=int, default=300)
    sub.add_argument("--runs", type=int, default=None)
    sub.add_argument("--resamples", type=int, default=None)
    sub.add_argument("--max-log-n", type=float, default=3.0)

    sub = command("rulu-sweep", cmd_rulu_sweep, "Barrido de E(D) y Var(D)")
    _add_rulu(sub)
    sub.add_argument("--over", choices=SWEEP_AXES, required=True)
    sub.add_argument("--values", type=_floats, required=True)
    sub.add_argument("--runs", type=int, default=0)

    sub = command("rulu-coincidence", cmd_rulu_coincidence, "Matriz de coincidencia de rangos")
    _add_rulu(sub)
    sub.add_argument("--balanced", action="store_true")
    sub.add_argument("--empirical-runs", type=int, default=0)

    sub = command("power", cmd_power, "Potencia del test z")
    sub.add_argument("--theta", type=float, required=True)
    sub.add_argument("--theta0", type=float, default=0.0)
    _add_design(sub)
    sub.add_argument("--approx", action="store_true")

    sub = command("samplesize", cmd_samplesize, "Tamaño de muestra requerido")
    sub.add_argument("--theta", type=float, required=True)
    sub.add_argument("--theta0", type=float, default=0.0)
    _add_design(sub, sizes=False)
    sub.add_argument("--power", type=float, default=None)
    sub.add_argument("--ratio", type=float, default=1.0, help="Asignación m/n")

    sub = command("mde", cmd_mde, "Efecto mínimo detectable")
    _add_design(sub)
    sub.add_argument("--power", type=float, default=None)

    sub = command("test", cmd_test, "Test de dos muestras sobre un CSV de respuestas")
    sub.add_argument("--input", required=True)
    sub.add_argument("--test", choices=TESTS, default="practical")
    sub.add_argument("--group-a", default=None)
    sub.add_argument("--group-b", default=None)
    sub.add_argument("--delta0", type=float, default=0.0)
    sub.add_argument("--alpha", type=float, default=None)
    sub.add_argument(
        "--alternative", choices=[a.value for a in Alternative], default=Alternative.TWO_SIDED.value
    )
    sub.add_argument("--exact", action="store_true", help="Mann-Whitney exacto (n + m <= 20)")

    sub = command("srm", cmd_srm, "Chequeo de desbalance de muestra")
    sub.add_argument("--counts", type=_floats, required=True)
    sub.add_argument("--ratios", type=_floats, required=True)
    sub.add_argument("--alpha", type=float, default=None)

    sub = command("msprt-replay", cmd_msprt_replay, "Replay mSPRT de un CSV de checkpoints")
    sub.add_argument("--input", required=True)
    _add_replay(sub)

    sub = command("bayes-replay", cmd_bayes_replay, "Replay bayesiano de un CSV de checkpoints")
    sub.add_argument("--input", required=True)
    _add_replay(sub)
    sub.add_argument("--threshold", type=float, default=None, help="Umbral de P(H0|datos)")

    sub = command("confusion", cmd_confusion, "Matriz de confusión contra el t de horizonte fijo")
    sub.add_argument("--dir", required=True)
    sub.add_argument("--monitor", choices=(Monitor.MSPRT.value, Monitor.BAYES.value), default=Monitor.MSPRT.value)
    _add_replay(sub)
    sub.add_argument("--threshold", type=float, default=None)

    sub = command("bootstrap-se", cmd_bootstrap_se, "SE bootstrap Poisson de un CSV de transacciones")
    sub.add_argument("--input", required=True)
    sub.add_argument("--mode", choices=[m.value for m in BootstrapMode], default=BootstrapMode.ONEWAY.value)
    sub.add_argument("--b", type=int, default=None)
    sub.add_argument(
        "--chunksize", type=int, default=io.DEFAULT_CHUNK_SIZE, help="Filas por trozo al leer el CSV en dos pasadas"
    )

    sub = command("pse-eval", cmd_pse_eval, "Efecto real y MDE por setup")
    _add_scenario(sub)
    sub.add_argument("--setup", type=int, choices=SETUP_IDS, default=None)

    sub = command("pse-compare", cmd_pse_compare, "Comparar dos setups")
    _add_scenario(sub)
    sub.add_argument("--a", type=int, choices=SETUP_IDS, required=True)
    sub.add_argument("--b", type=int, choices=SETUP_IDS, required=True)

    sub = command("pse-advise", cmd_pse_advise, "Reglas de dilución y control dual")
    _add_scenario(sub)

    sub = command("pse-verify", cmd_pse_verify, "Verificación Monte Carlo de los setups")
    _add_scenario(sub, required=False)
    sub.add_argument("--random", type=int, default=0, help="Número de escenarios aleatorios")
    sub.add_argument("--runs", type=int, default=None)
    sub.add_argument("--resamples", type=int, default=None)
    sub.add_argument("--budget", type=int, default=None, help="Pasos de bisección")
    sub.add_argument("--no-mde", action="store_true")

    return parser


# =============================================================================
# ENTRADA
# =============================================================================

def _emit_error(error: DemlabError) -> int:
    report = ErrorReport(**error.to_dict())
    print(io.dump_json(report.model_dump(by_alias=True)))
    return error.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Punto de entrada; devuelve el código de salida"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    configure_logging()
    log_startup_info(args.command)

    try:
        result = args.handler(args)
    except DemlabError as e:
        ComputationLogger.log_error(args.command, e)
        return _emit_error(e)
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        ComputationLogger.log_error(args.command, e)
        return _emit_error(NumericalError(f"numerical failure: {e}"))

    logger.debug("command_finished", command=args.command, output_format=args.format)
    if args.format == "json":
        print(io.dump_json(Report(command=args.command, result=io.to_plain(result)).model_dump(by_alias=True)))
    else:
        print(io.render_result(result, args.format), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
