import argparse
import logging

import numpy as np
from pydantic import ValidationError

from app.config import settings
from app.routers.common import EXIT_OK, add_common_flags, apply_workers, load_config, resolve_out, resolve_seed, usage_failure
from app.services.branching_sim import mean_and_se, simulate
from app.services.exact_flow import run_flow
from app.services.reporting import write_csv
from app.services.scenarios import build_scenario

logger = logging.getLogger("cli.simulate")


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="direct simulation of the branching population")
    add_common_flags(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        seed = resolve_seed(args, config)
        apply_workers(args)
        horizon = config.engine.horizon
        built = build_scenario(config.scenario, horizon)
        result = simulate(
            built.sim,
            horizon,
            config.engine.replicates,
            seed,
            dump=config.output.dump_trajectories,
            max_population=config.engine.max_population or settings.MAX_POPULATION,
        )
        mean, se = mean_and_se(result.stats)
        out = resolve_out(args, config)
        if built.finite:
            labels = built.model.space(0).labels
            exact = np.stack([g.weights for g in run_flow(built.model, horizon).gammas])
            header = ["step", *(f"mean_{x}" for x in labels), *(f"se_{x}" for x in labels), *(f"exact_{x}" for x in labels)]
        else:
            exact = built.sim.mass_oracle(horizon)[:, None]
            header = ["step", "mean_count", "se_count", "exact_count"]
        write_csv(out / "simulate.csv", header, ([n, *mean[n], *se[n], *exact[n]] for n in range(horizon + 1)))
        if config.output.dump_trajectories:
            width = max((row[3].shape[0] for row in result.trajectories), default=1)
            write_csv(
                out / "trajectories.csv",
                ["replicate", "step", "target_id", *(f"state_{k}" for k in range(width))],
                ([r, n, tid, *state] for r, n, tid, state in sorted(result.trajectories, key=lambda t: t[:3])),
            )
    except (ValidationError, ValueError) as e:
        return usage_failure("simulate", e)
    logger.info(f"simulated '{built.name}': {result.replicates} replicates to n={horizon}")
    return EXIT_OK
