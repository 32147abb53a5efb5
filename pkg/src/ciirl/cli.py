import argparse
import sys

from .config import THREE_CORRIDOR, load_config, preset_config
from .core.pipeline import PipelineEngine
from .exceptions import CiIrlError
from .utils import configure_logging

COMMANDS = {
    'gen-experts': 'GEN_EXPERTS',
    'train': 'TRAIN',
    'render': 'RENDER',
    'eval': 'EVAL',
    'repro-fig2': 'REPRO_FIG2',
}


def print_table(data):
    """
    Prints a list of dictionaries in a well-formatted table.
    """
    if not data:
        print("(no rows)")
        return

    headers = list(data[0].keys())
    widths = {h: len(h) for h in headers}
    for row in data:
        for h in headers:
            widths[h] = max(widths[h], len(str(row.get(h, ''))))

    print(" | ".join(f"{h:<{widths[h]}}" for h in headers))
    print("-+-".join("-" * widths[h] for h in headers))
    for row in data:
        print(" | ".join(f"{str(row.get(h, '')):<{widths[h]}}" for h in headers))


def build_arg_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help="Experiment configuration (JSON, version 1).")
    common.add_argument('--preset', type=str, default=None,
                        help=f"Built-in configuration used when --config is omitted (default: {THREE_CORRIDOR}).")
    common.add_argument('--seed', type=int, default=None, help="Master seed; overrides the configuration.")
    common.add_argument('--jobs', type=int, default=1, help="Worker processes for parallel steps.")
    common.add_argument('--out', type=str, default=None, help="Output directory; overrides the configuration.")

    arg_parser = argparse.ArgumentParser(
        prog="ciirl", description="Causally invariant inverse reinforcement learning on gridworlds.")
    subparsers = arg_parser.add_subparsers(dest='command', required=True)
    subparsers.add_parser('gen-experts', parents=[common], help="Sample the expert datasets.")
    train = subparsers.add_parser('train', parents=[common], help="Recover a reward from the datasets.")
    train.add_argument('--verify', action='store_true',
                       help="Check the analytic gradient against finite differences first.")
    render = subparsers.add_parser('render', parents=[common], help="Render recovered rewards as PGM and CSV.")
    render.add_argument('labels', nargs='*', help="Method labels to render (default: all trained).")
    evaluate = subparsers.add_parser('eval', parents=[common], help="Transfer evaluation under perturbations.")
    evaluate.add_argument('labels', nargs='*', help="Method labels to evaluate (default: all trained).")
    repro = subparsers.add_parser('repro-fig2', parents=[common],
                                  help="Generate experts, train every panel and render the rewards.")
    repro.add_argument('--verify', action='store_true',
                       help="Check the analytic gradient against finite differences first.")
    return arg_parser


def resolve_config(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset_config(args.preset or THREE_CORRIDOR)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def main(argv=None):
    """
    The main function for the command-line interface.
    """
    args = build_arg_parser().parse_args(argv)
    configure_logging()
    try:
        if args.jobs < 1:
            raise CiIrlError(f"--jobs must be >= 1, got {args.jobs}.")
        engine = PipelineEngine(resolve_config(args), jobs=args.jobs)
        command = {'type': COMMANDS[args.command], 'verify': getattr(args, 'verify', False),
                   'labels': getattr(args, 'labels', None)}
        result = engine.execute(command)
    except (CiIrlError, FileNotFoundError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    if isinstance(result, list):
        print_table(result)
    elif result is not None:
        print(result)
    return 0


if __name__ == '__main__':
    sys.exit(main())
