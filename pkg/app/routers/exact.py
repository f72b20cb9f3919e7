import argparse
import logging
import math

from pydantic import ValidationError

from app.routers.common import EXIT_OK, add_common_flags, apply_workers, load_config, resolve_out, resolve_seed, usage_failure
from app.services.exact_flow import (
    BranchingModel,
    ConvergenceError,
    FlowTrajectory,
    MissingCertificateError,
    b_constants,
    fixed_point_eta,
    limiting_measures,
    mixing_certificate,
    regime_of,
    run_flow,
    semigroup_of,
)
from app.services.reporting import write_csv
from app.services.scenarios import build_scenario

logger = logging.getLogger("cli.exact")


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("exact", help="exact intensity flow, semigroup table and regime summary")
    add_common_flags(parser)
    parser.set_defaults(handler=run)


def flow_rows(model: BranchingModel, flow: FlowTrajectory):
    d = model.space(0).size
    for n in range(flow.n_max + 1):
        eta = flow.etas[n].weights if flow.etas[n] is not None else [0.0] * d
        yield [n, *flow.gammas[n].weights, flow.masses[n], *eta]


def semigroup_rows(model: BranchingModel, horizon: int):
    sg = semigroup_of(model)
    for n in range(horizon + 1):
        b = b_constants(model, n)
        for p in range(n + 1):
            yield [p, n, sg.q_ratio(p, n), sg.beta(p, n), sg.c(p, n), b[p]]


def regime_rows(model: BranchingModel, mixing_lag: int):
    potential = model.potential(0)
    regime = regime_of(model)
    rows = [["regime", regime or "none"], ["g_minus", potential.g_minus], ["g_plus", potential.g_plus]]
    cert = None
    if model.homogeneous:
        try:
            cert = mixing_certificate(model, mixing_lag)
        except MissingCertificateError as e:
            logger.warning(str(e))
    if regime == "subcritical":
        lim = limiting_measures(model)
        rows.append(["gamma_inf_mass", lim.gamma.mass])
        if lim.eta is not None:
            rows += [[f"eta_inf_{label}", w] for label, w in lim.eta.as_dict().items()]
    elif regime in ("unit-potential", "supercritical"):
        if cert is None:
            logger.warning("no mixing certificate; fixed point and Lyapunov exponent skipped")
        else:
            try:
                fp = fixed_point_eta(model)
            except ConvergenceError as e:
                logger.warning(str(e))
            else:
                rows.append(["lyapunov", fp.lyapunov])
                rows += [[f"eta_inf_{label}", w] for label, w in fp.eta.as_dict().items()]
    if cert is not None:
        rows += [["mixing_k", cert.k], ["epsilon", cert.epsilon], ["delta_k", cert.delta_k], ["q_bound", cert.q_bound]]
    return rows


def run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        resolve_seed(args, config)
        apply_workers(args)
        horizon = config.engine.horizon
        built = build_scenario(config.scenario, horizon)
        model = built.model
        flow = run_flow(model, horizon)
        out = resolve_out(args, config)
        labels = model.space(0).labels
        write_csv(
            out / "flow.csv",
            ["step", *(f"gamma_{x}" for x in labels), "mass", *(f"eta_{x}" for x in labels)],
            flow_rows(model, flow),
        )
        write_csv(out / "semigroup.csv", ["p", "n", "q_pn", "beta_Ppn", "c_pn", "b_pn"], semigroup_rows(model, horizon))
        write_csv(out / "regime.csv", ["quantity", "value"], regime_rows(model, config.verify.mixing_lag))
    except (ValidationError, ValueError) as e:
        return usage_failure("exact", e)
    last = flow.masses[-1]
    logger.info(f"exact flow of '{built.name}' to n={horizon}: gamma_n(1)={last!r}")
    if not math.isfinite(last):
        logger.warning("the mass overflowed; shorten the horizon")
    return EXIT_OK
