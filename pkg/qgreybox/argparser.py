import argparse

from . import __version__


def _add_common(parser):
    parser.add_argument(
        "-c", "--config", type=str, default=None,
        help="JSON config file; its values take precedence over the built-in defaults"
    )
    parser.add_argument(
        "-o", "--output", type=str, default=None,
        help="Directory for all produced files. This option takes precedence over"
             " 'output_dir' defined in config file."
    )
    parser.add_argument(
        "--seed", type=int, default=None,
        help="Master seed. This option takes precedence over 'seed' defined in"
             " config file and over the GREYBOX_SEED environment variable."
    )
    parser.add_argument(
        "--threads", type=int, default=None,
        help="Number of worker threads for Monte Carlo evaluation"
    )
    parser.add_argument(
        "--deterministic", action="store_true", default=None,
        help="Run on the calling thread and record zero wall time, so every"
             " output file is byte-reproducible"
    )
    parser.add_argument(
        "--no-deterministic", dest="deterministic", action="store_false", default=None,
        help="Use the --threads worker pool even if the config file sets"
             " 'deterministic'"
    )
    parser.add_argument(
        "--force", action="store_true",
        help="Overwrite existing datasets"
    )
    parser.add_argument(
        "--debug", action="store_true", help="enables debug"
        " printouts"
    )
    parser.add_argument(
        "--no-color", action="store_true", help="disables"
        " colored text output"
    )
    parser.add_argument(
        "--syslog", action="store_true",
        help="Enable log to syslog"
    )
    parser.add_argument(
        "-q", "--quiet", action="store_true", help="Produce no standard (normal "
        "console) output"
    )


def _add_noise(parser):
    parser.add_argument(
        "--noise", type=str, choices=("rtn", "ou"), default=None,
        help="Noise process. This option takes precedence over 'noise.kind'."
    )
    parser.add_argument(
        "--gamma", type=float, default=None,
        help="Noise switching (RTN) or relaxation (OU) rate"
    )
    parser.add_argument(
        "-g", "--coupling", type=float, default=None,
        help="Noise coupling strength g. This option takes precedence over 'noise.g'."
    )


def get_arg_parser():
    parser = argparse.ArgumentParser(
        prog="qgreybox",
        description="Greybox quantum optimal control - noise spectra, synthetic"
        " datasets, emulator training and pulse design for a dephased qubit."
    )
    parser.add_argument(
        "-v", "--version",
        action="version",
        version="%(prog)s {}".format(__version__)
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    spectrum = commands.add_parser(
        "spectrum", help="estimate autocorrelation and power spectrum of the noise"
    )
    _add_common(spectrum)
    _add_noise(spectrum)
    spectrum.add_argument(
        "--trajectories", type=int, default=None,
        help="Number of noise trajectories to average"
    )

    gen_data = commands.add_parser(
        "gen-data", help="generate a labelled dataset with the stochastic simulator"
    )
    _add_common(gen_data)
    _add_noise(gen_data)
    gen_data.add_argument(
        "--realizations", type=int, default=None,
        help="Noise realizations per fidelity label"
    )
    gen_data.add_argument("--n-train", type=int, default=None, help="Training samples")
    gen_data.add_argument("--n-test", type=int, default=None, help="Test samples")

    train = commands.add_parser("train", help="train the greybox emulator on a dataset")
    _add_common(train)
    train.add_argument(
        "-d", "--dataset", type=str, default=None,
        help="Dataset directory (default: <output>/dataset)"
    )
    train.add_argument("--epochs", type=int, default=None, help="Number of epochs")
    train.add_argument(
        "--resume", type=str, default=None,
        help="Checkpoint to continue training from"
    )

    optimize = commands.add_parser(
        "optimize", help="design pulses through the trained emulator"
    )
    _add_common(optimize)
    _add_noise(optimize)
    optimize.add_argument(
        "-m", "--checkpoint", type=str, default=None,
        help="Model checkpoint (default: <output>/checkpoint.json)"
    )
    targets = optimize.add_mutually_exclusive_group()
    targets.add_argument(
        "--gate", type=str, default=None,
        help="Target gate label. This option takes precedence over 'optimize.gate'."
    )
    targets.add_argument(
        "--all-gates", action="store_true",
        help="Optimize pulses for every gate of the model"
    )
    optimize.add_argument("--restarts", type=int, default=None, help="Optimizer restarts")
    optimize.add_argument(
        "--iterations", type=int, default=None, help="Iterations per restart"
    )

    verify = commands.add_parser(
        "verify", help="check a pulse file against the stochastic simulator"
    )
    _add_common(verify)
    _add_noise(verify)
    verify.add_argument("pulses", type=str, help="Pulse JSON file")
    verify.add_argument(
        "-m", "--checkpoint", type=str, default=None,
        help="Also report the emulator prediction of this checkpoint"
    )
    verify.add_argument(
        "--realizations", type=int, default=None,
        help="Noise realizations for the verification"
    )

    sweep = commands.add_parser(
        "sweep", help="gen-data, train, optimize and verify for each coupling g"
    )
    _add_common(sweep)
    sweep.add_argument(
        "--g-list", type=float, nargs="+", default=None,
        help="Couplings to sweep. This option takes precedence over 'sweep.g'."
    )

    return parser


def config_overrides(args):
    """Maps parsed flags onto dotted config options; unset flags map to None."""
    options = {
        "output_dir": "output",
        "seed": "seed",
        "threads": "threads",
        "deterministic": "deterministic",
        "noise.kind": "noise",
        "noise.gamma": "gamma",
        "noise.g": "coupling",
        "spectrum.trajectories": "trajectories",
        "dataset.n_train": "n_train",
        "dataset.n_test": "n_test",
        "model.epochs": "epochs",
        "optimize.gate": "gate",
        "optimize.restarts": "restarts",
        "optimize.iterations": "iterations",
        "sweep.g": "g_list",
    }
    overrides = {option: getattr(args, name, None) for option, name in options.items()}
    if args.command == "gen-data":
        overrides["dataset.realizations"] = args.realizations
    elif args.command == "verify":
        overrides["verify.realizations"] = args.realizations
    return overrides
