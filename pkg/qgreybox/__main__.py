import sys

from . import __version__
from .argparser import config_overrides, get_arg_parser
from .config import RunConfig
from .exceptions import ConfigError, DatasetError, NumericError, QGreyboxError
from .logging import logger
from .pipeline import Pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def cmd_spectrum(pipeline, args):
    pipeline.spectrum()


def cmd_gen_data(pipeline, args):
    pipeline.gen_data(force=args.force)


def cmd_train(pipeline, args):
    pipeline.train(args.dataset, resume=args.resume)


def cmd_optimize(pipeline, args):
    gates = None
    if args.all_gates:
        gates = [t.label for t in pipeline.config.gate_targets()]
    pipeline.optimize(args.checkpoint, gates=gates)


def cmd_verify(pipeline, args):
    pipeline.verify(args.pulses, args.checkpoint)


def cmd_sweep(pipeline, args):
    pipeline.sweep(force=args.force)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "optimize": cmd_optimize,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def run(argv=None):
    parser = get_arg_parser()
    args = parser.parse_args(argv)

    logger.set(args.debug, not args.no_color, args.syslog, args.quiet)
    logger.info("qgreybox v{} starting {}...".format(__version__, args.command))

    try:
        config = RunConfig(args.config, config_overrides(args))
        logger.log_config(config)
        COMMANDS[args.command](Pipeline(config), args)
    except ConfigError as exc:
        logger.error(f"Configuration error: {exc}")
        return EXIT_CONFIG
    except NumericError as exc:
        logger.error(f"Numerical failure: {exc}")
        return EXIT_NUMERIC
    except (DatasetError, OSError) as exc:
        logger.error(f"I/O failure: {exc}")
        return EXIT_IO
    except QGreyboxError as exc:
        logger.error(str(exc))
        return EXIT_CONFIG
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
