"""Command line entry points: scenario runner, benchmark harness, network
server, and world mesh export."""

import argparse
import sys
from pathlib import Path

import numpy as np

from .simserver.server import (DEFAULT_HOST, PORT_ENV_VAR, SimServer,
                               default_port)
from .simserver.session import ConfigError

EXIT_CONFIG_ERROR = 2


def _load_scenario_or_exit(path, seed=None, dt=None):
    from dataclasses import replace

    from . import scenario as scenario_mod
    from .simserver.session import SessionConfig
    import yaml
    try:
        sc = scenario_mod.load_scenario(path)
    except FileNotFoundError:
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG_ERROR)
    except yaml.YAMLError as e:
        print(f"error: cannot parse scenario file: {e}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG_ERROR)
    except ConfigError as e:
        print("error: invalid scenario configuration:", file=sys.stderr)
        for field_path, msg in e.errors:
            print(f"  {field_path}: {msg}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG_ERROR)
    if seed is not None or dt is not None:
        world = sc.session.world
        if seed is not None:
            world = replace(world, seed=seed)
        session = SessionConfig(
            world=world, uavs=sc.session.uavs,
            dt=dt if dt is not None else sc.session.dt,
            mode=sc.session.mode,
            realtime_factor=sc.session.realtime_factor,
            spectator=sc.session.spectator)
        sc.session = session
    return sc


def _cmd_run(args):
    from . import scenario as scenario_mod
    sc = _load_scenario_or_exit(args.scenario, seed=args.seed, dt=args.dt)
    status = scenario_mod.run_scenario(sc, args.out)
    if status == scenario_mod.EXIT_DIVERGED:
        print("error: simulation diverged (non-finite state); partial "
              "outputs kept", file=sys.stderr)
    else:
        print(f"scenario '{sc.name}' complete; outputs in {args.out}")
    return status


def _cmd_bench(args):
    from .bench import run_suite
    try:
        text, _ = run_suite(args.suite, json_path=args.output)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    print(text)
    if args.output:
        print(f"machine-readable report written to {args.output}")
    return 0


def _cmd_serve(args):
    server = SimServer(host=args.host, port=args.port)
    print(f"listening on {server.host}:{server.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _cmd_dump_world(args):
    from .worldgen import dump_obj, make_world, update_cells
    sc = _load_scenario_or_exit(args.scenario, seed=args.seed)
    world = make_world(sc.session.world)
    if args.at is not None:
        observers = [np.array(args.at)]
    else:
        observers = [np.asarray(u.initial_position, dtype=float)
                     for u in sc.session.uavs]
    update_cells(world, observers, sc.session.spectator)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as handle:
        dump_obj(world, handle)
    print(f"wrote {len(world.cells)} cells "
          f"({world.n_triangles} triangles) to {out}")
    return 0


def _xyz(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return parts


def build_parser():
    parser = argparse.ArgumentParser(
        prog="skysim",
        description="headless multirotor simulator: scenario runner, "
                    "benchmarks, network server, world export")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("scenario", help="path to a scenario YAML file")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the world seed")
    p_run.add_argument("--dt", type=float, default=None,
                       help="override the physics step")
    p_run.set_defaults(func=_cmd_run)

    p_bench = sub.add_parser("bench", help="run a benchmark suite")
    p_bench.add_argument("suite",
                         choices=["dynamics", "swarm", "lidar", "all"])
    p_bench.add_argument("--output", default=None,
                         help="write machine-readable JSON here")
    p_bench.set_defaults(func=_cmd_bench)

    p_serve = sub.add_parser("serve", help="run the network session server")
    p_serve.add_argument("--host", default=DEFAULT_HOST)
    p_serve.add_argument("--port", type=int, default=default_port(),
                         help=f"TCP port (env {PORT_ENV_VAR})")
    p_serve.set_defaults(func=_cmd_serve)

    p_dump = sub.add_parser("dump-world",
                            help="export active terrain cells as an OBJ mesh")
    p_dump.add_argument("scenario", help="scenario file providing the world")
    p_dump.add_argument("--out", default="world.obj")
    p_dump.add_argument("--at", type=_xyz, default=None,
                        help="observer position x,y,z (default: UAV spawns)")
    p_dump.add_argument("--seed", type=int, default=None)
    p_dump.set_defaults(func=_cmd_dump_world)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
