import argparse
import json
import logging
import sys
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

from dotenv import load_dotenv

from padic_polar.building import (
    LatticeClass,
    SigmaApartmentRef,
    distance,
    distance_to_sigma_apartment,
    quasi_density_experiment,
    relative_position,
)
from padic_polar.config import MAX_PRECISION, MIN_PRECISION, Settings
from padic_polar.errors import (
    ConfigError,
    InsufficientPrecision,
    InternalInvariantViolation,
    PadicPolarError,
)
from padic_polar.padic import PrimeContext
from padic_polar.plinalg import PMatrix, smith_cartan
from padic_polar.polar import KAHWitness, SymmetricSpaceContext, kah_decompose, verify_witness
from padic_polar.quadform import QuadraticForm, square_class_split
from padic_polar.retry import configure_logging, execute_with_precision

# Load environment variables
load_dotenv()

logger = logging.getLogger("padic_polar.cli")

COMMANDS = ("diagonalize", "cartan", "kah", "classify", "distance", "experiment")
FORMATS = ("json", "csv", "pretty")

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_PRECISION_EXHAUSTED = 3
EXIT_INTERNAL = 4


@dataclass
class RunConfig:
    command: str
    p: int
    n: Optional[int] = None
    precision: int = 64
    max_precision: int = MAX_PRECISION
    seed: Optional[int] = None
    val_bound: int = 3
    samples: int = 100
    input_path: Optional[str] = None
    matrix: Optional[str] = None
    fmt: str = "json"
    jobs: int = 1
    verify: bool = False
    reverse: bool = False
    q0: Optional[List[str]] = None
    tolerance: int = 12

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not MIN_PRECISION <= self.precision <= MAX_PRECISION:
            raise ConfigError(f"--precision must lie in [{MIN_PRECISION}, {MAX_PRECISION}]")
        if self.max_precision < self.precision:
            self.max_precision = self.precision
        if self.fmt not in FORMATS:
            raise ConfigError(f"--format must be one of {', '.join(FORMATS)}")
        if self.fmt == "csv" and self.command != "experiment":
            raise ConfigError("csv output is only available for experiment")
        if self.command == "experiment":
            if self.seed is None:
                raise ConfigError("experiment needs --seed")
            if self.n is None:
                raise ConfigError("experiment needs --n")
            if self.samples < 0 or self.val_bound < 0:
                raise ConfigError("--samples and --val-bound must be non-negative")
        elif self.matrix is None and self.input_path is None:
            raise ConfigError(f"{self.command} needs --matrix or --input")
        if self.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        # raises InvalidPrime for even or composite p
        self.context()

    def context(self) -> PrimeContext:
        return PrimeContext(self.p, self.precision, self.max_precision)


@dataclass
class CommandResult:
    data: Dict
    pretty: str = ""
    csv: Optional[str] = None
    working_precision: int = 0
    retries: int = 0
    exit_code: int = EXIT_OK


def load_document(config: RunConfig):
    if config.matrix is not None:
        return json.loads(config.matrix)
    if config.input_path == "-":
        return json.load(sys.stdin)
    with open(config.input_path, "r", encoding="utf-8") as f:
        return json.load(f)


def _unwrap(doc):
    """Accept a previous envelope ({status, data, meta}) as input"""
    if isinstance(doc, dict) and "data" in doc and "status" in doc:
        return doc["data"]
    return doc


def _gram_document(doc):
    doc = _unwrap(doc)
    if isinstance(doc, dict) and "gram" in doc:
        return doc["gram"]
    return doc


def _symmetric_space(config: RunConfig, ctx: PrimeContext, n: int) -> SymmetricSpaceContext:
    if config.q0:
        if len(config.q0) != n:
            raise ConfigError(f"--q0 has {len(config.q0)} entries, expected {n}")
        return SymmetricSpaceContext.from_diagonal(ctx, config.q0)
    return SymmetricSpaceContext.standard(ctx, n)


def cmd_diagonalize(config: RunConfig, doc) -> CommandResult:
    def step(ctx):
        q = QuadraticForm(PMatrix.from_json(_gram_document(doc), ctx))
        return q, q.diagonalization

    run = execute_with_precision(step, config.context(), "diagonalize")
    q, diag = run.result
    data = {
        "U": diag.U.to_json(),
        "D": [c.to_json() for c in diag.values],
        "invariants": q.invariants.to_json(),
    }
    pretty = "U =\n" + diag.U.to_text() + "\nD = " + ", ".join(c.to_text() for c in diag.values)
    return CommandResult(data, pretty, working_precision=run.precision, retries=run.retries)


def cmd_cartan(config: RunConfig, doc) -> CommandResult:
    def step(ctx):
        return smith_cartan(PMatrix.from_json(_unwrap(doc), ctx), reverse=config.reverse)

    run = execute_with_precision(step, config.context(), "cartan")
    factors = run.result
    data = factors.to_json()
    data["reverse"] = config.reverse
    pretty = ("k1 =\n" + factors.k1.to_text() + f"\nexponents = {list(factors.exponents)}\nk2 =\n"
              + factors.k2.to_text())
    return CommandResult(data, pretty, working_precision=run.precision, retries=run.retries)


def cmd_classify(config: RunConfig, doc) -> CommandResult:
    def step(ctx):
        q = QuadraticForm(PMatrix.from_json(_gram_document(doc), ctx))
        return q, square_class_split(q.diagonalization.values)

    run = execute_with_precision(step, config.context(), "classify")
    q, split = run.result
    labels = [c.label for c in split.classes]
    data = {"invariants": q.invariants.to_json(), "classes": labels}
    pretty = (f"dim = {q.dim}\ndisc = {q.disc}\nhasse = {q.hasse:+d}\n"
              f"classes = ({', '.join(labels)})")
    return CommandResult(data, pretty, working_precision=run.precision, retries=run.retries)


def _verify_kah(config: RunConfig, doc) -> CommandResult:
    doc = _unwrap(doc)
    if not isinstance(doc, dict) or "g" not in doc or "witness" not in doc:
        raise ConfigError("--verify expects a kah document with 'g' and 'witness'")
    ctx = config.context()
    g = PMatrix.from_json(doc["g"], ctx)
    witness = KAHWitness.from_json(doc["witness"], ctx)
    ssc = _symmetric_space(config, ctx, g.rows)
    report = verify_witness(g, witness, ssc, config.tolerance)
    data = {"verified": report.passed, "checks": report.to_json()["checks"]}
    pretty = "\n".join(f"{name}: {'pass' if c.passed else 'FAIL'} ({c.error_valuation})"
                       for name, c in report.checks.items())
    exit_code = EXIT_OK if report.passed else EXIT_INVALID_INPUT
    return CommandResult(data, pretty, working_precision=ctx.default_precision, exit_code=exit_code)


def cmd_kah(config: RunConfig, doc) -> CommandResult:
    if config.verify:
        return _verify_kah(config, doc)

    def step(ctx):
        g = PMatrix.from_json(_unwrap(doc), ctx)
        ssc = _symmetric_space(config, ctx, g.rows)
        witness = kah_decompose(g, ssc, config.tolerance)
        return g, witness, verify_witness(g, witness, ssc, config.tolerance)

    run = execute_with_precision(step, config.context(), "kah")
    g, witness, report = run.result
    witness_doc = witness.to_json()
    witness_doc["checks"] = report.to_json()["checks"]
    data = {"g": g.to_json(), "witness": witness_doc}
    pretty = "\n".join([
        "k =", witness.k.to_text(),
        "s = (" + ", ".join(c.label for c in witness.s) + ")",
        "a =", witness.a.to_text(),
        "h =", witness.h.to_text(),
    ])
    return CommandResult(data, pretty, working_precision=witness.working_precision,
                         retries=run.retries + witness.retries)


def cmd_distance(config: RunConfig, doc) -> CommandResult:
    doc = _unwrap(doc)
    if not isinstance(doc, dict) or "x" not in doc:
        raise ConfigError("distance expects {\"x\": generators, \"y\": generators} or {\"x\": ..., \"apartment\": \"standard\"}")

    def step(ctx):
        x = LatticeClass.from_generators(PMatrix.from_json(doc["x"], ctx))
        if doc.get("apartment") == "standard":
            apt = SigmaApartmentRef.standard(_symmetric_space(config, ctx, x.n))
            return {"x": x.to_json(), "apartment": "standard",
                    "distance": distance_to_sigma_apartment(x, apt)}
        if "y" not in doc:
            raise ConfigError("distance needs 'y' or 'apartment'")
        y = LatticeClass.from_generators(PMatrix.from_json(doc["y"], ctx))
        return {"x": x.to_json(), "y": y.to_json(),
                "relative_position": list(relative_position(x, y)), "distance": distance(x, y)}

    run = execute_with_precision(step, config.context(), "distance")
    data = run.result
    pretty = f"distance = {data['distance']:.12g}"
    if "relative_position" in data:
        pretty += f"\nrelative position = {data['relative_position']}"
    return CommandResult(data, pretty, working_precision=run.precision, retries=run.retries)


def cmd_experiment(config: RunConfig, doc) -> CommandResult:
    ctx = config.context()
    ssc = _symmetric_space(config, ctx, config.n)
    report = quasi_density_experiment(ssc, config.samples, config.val_bound, config.seed,
                                      jobs=config.jobs, tolerance=config.tolerance)
    data = report.to_json()
    pretty = "\n".join([
        f"p = {report.p}, n = {report.n}, V = {report.val_bound}, samples = {len(report.results)}",
        f"C_emp = {data['C_emp']:.12g} (chamber diameter {data['chamber_diameter']:.12g})",
    ] + [f"{label}: {entry['count']} samples, max displacement {entry['max_disp']:.12g}"
         for label, entry in data["per_class"].items()])
    return CommandResult(data, pretty, csv=report.to_csv(), working_precision=ctx.default_precision)


HANDLERS: Dict[str, Callable[[RunConfig, object], CommandResult]] = {
    "diagonalize": cmd_diagonalize,
    "cartan": cmd_cartan,
    "kah": cmd_kah,
    "classify": cmd_classify,
    "distance": cmd_distance,
    "experiment": cmd_experiment,
}


def _render(config: RunConfig, result) -> str:
    if config.fmt == "csv":
        return result.csv
    if config.fmt == "pretty":
        return result.pretty + "\n"
    envelope = {
        "status": "success" if result.exit_code == EXIT_OK else "error",
        "data": result.data,
        "meta": {
            "command": config.command,
            "p": config.p,
            "requested_precision": config.precision,
            "working_precision": result.working_precision,
            "retries": result.retries,
        },
    }
    return json.dumps(envelope, sort_keys=True, indent=2) + "\n"


def run(config: RunConfig):
    """
    Execute one command. Returns (exit status, rendered output); errors are
    rendered as {"status": "error", "message": ...} documents.
    """
    try:
        config.validate()
        doc = None if config.command == "experiment" else load_document(config)
        result = HANDLERS[config.command](config, doc)
        return result.exit_code, _render(config, result)
    except InsufficientPrecision as e:
        return EXIT_PRECISION_EXHAUSTED, _render_error(str(e))
    except InternalInvariantViolation as e:
        logger.error("internal invariant violated: %s", e)
        return EXIT_INTERNAL, _render_error(str(e))
    except (PadicPolarError, ValueError, KeyError, TypeError, OSError) as e:
        return EXIT_INVALID_INPUT, _render_error(str(e) or e.__class__.__name__)


def _render_error(message: str) -> str:
    return json.dumps({"status": "error", "message": message}, sort_keys=True, indent=2) + "\n"


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--p", type=int, required=True, help="odd prime")
    common.add_argument("--n", type=int, help="dimension (experiment)")
    common.add_argument("--precision", type=int, default=settings.precision)
    common.add_argument("--max-precision", type=int, default=settings.max_precision)
    common.add_argument("--seed", type=int)
    common.add_argument("--val-bound", type=int, default=3)
    common.add_argument("--samples", type=int, default=100)
    common.add_argument("--format", dest="fmt", choices=FORMATS, default="json")
    common.add_argument("--jobs", type=int, default=settings.jobs)
    common.add_argument("--verify", action="store_true", help="re-verify a kah document")
    common.add_argument("--input", dest="input_path", help="JSON document path, or - for stdin")
    common.add_argument("--matrix", help="inline JSON matrix, entries as 'num/den' strings or integers")
    common.add_argument("--reverse", action="store_true", help="non-increasing Cartan exponents")
    common.add_argument("--q0", help="comma separated unit diagonal of q0 (default all ones)")

    parser = argparse.ArgumentParser(description="p-adic polar decompositions of GL(n, Q_p)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        settings = Settings.from_env()
    except ConfigError as e:
        sys.stdout.write(_render_error(str(e)))
        return EXIT_INVALID_INPUT
    args = build_parser(settings).parse_args(argv)
    configure_logging(settings.log_level, settings.history_dir, args.command)
    config = RunConfig(
        command=args.command,
        p=args.p,
        n=args.n,
        precision=args.precision,
        max_precision=args.max_precision,
        seed=args.seed,
        val_bound=args.val_bound,
        samples=args.samples,
        input_path=args.input_path,
        matrix=args.matrix,
        fmt=args.fmt,
        jobs=args.jobs,
        verify=args.verify,
        reverse=args.reverse,
        q0=[x.strip() for x in args.q0.split(",")] if args.q0 else None,
        tolerance=settings.kah_tolerance,
    )
    code, output = run(config)
    sys.stdout.write(output)
    return code


if __name__ == "__main__":
    sys.exit(main())
