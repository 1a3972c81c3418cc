"""Command-line front end: config ingestion, experiment orchestration, and
deterministic CSV/JSON report emission.

Exit codes: 0 success or criterion pass, 1 criterion failure, 2 usage or
configuration error. SNR is accepted in dB and rates in bits on the command
line; everything is converted to linear SNR and nats internally.
"""

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from ._util import db_to_linear, spawn_rng
from .channel import (
    BlockFading,
    ChannelDims,
    CovarianceMatrix,
    CyclicIsi,
    Fast,
    Flat,
    ScatteringSpec,
    TimeFrequency,
    build_covariance,
)
from .codes import Codebook, verify_dmt_criterion, verify_rank_r0
from .precoder import design_tf_shift_precoder, verify_tf_precoder
from .sim import TraceBoundInstance, pep_chernoff, simulate_error_prob, trace_oracle
from .tradeoff import (
    FixedRate,
    ScalingRate,
    SnrPoint,
    estimate_outage,
    jensen_dmt_curve,
)

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description with defaults applied."""

    model: object
    dims: ChannelDims
    snr_db: tuple
    rate_mode: object
    trials: int = 100_000
    master_seed: int = 0
    epsilon: float = 0.1
    output: str = None

    def to_json(self):
        model = self.model
        if isinstance(model, Flat):
            model_doc = {"kind": "flat"}
        elif isinstance(model, Fast):
            model_doc = {"kind": "fast"}
        elif isinstance(model, BlockFading):
            model_doc = {"kind": "block", "num_blocks": model.num_blocks,
                         "block_len": model.block_len}
        elif isinstance(model, CyclicIsi):
            model_doc = {"kind": "isi", "num_taps": model.num_taps,
                         "power_delay_profile": list(model.power_delay_profile)}
        elif isinstance(model, TimeFrequency):
            spec = model.spec
            model_doc = {"kind": "tf", "nu0_t": spec.nu0 * spec.grid_t,
                         "tau0_f": spec.tau0 * spec.grid_f,
                         "num_time": spec.num_time, "num_freq": spec.num_freq}
        else:
            raise ValueError(f"unknown model: {model!r}")
        if isinstance(self.rate_mode, FixedRate):
            rate_doc = {"mode": "fixed", "bits": self.rate_mode.nats / _LN2}
        else:
            rate_doc = {"mode": "scaling", "mux_rate": self.rate_mode.mux_rate}
        doc = {"model": model_doc,
               "dims": {"num_tx": self.dims.num_tx, "num_rx": self.dims.num_rx,
                        "block_len": self.dims.block_len},
               "snr_db": list(self.snr_db), "rate": rate_doc,
               "trials": self.trials, "seed": self.master_seed,
               "epsilon": self.epsilon}
        if self.output:
            doc["output"] = self.output
        return doc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)


class ConfigError(ValueError):
    pass


def _require(doc, key, where):
    if key not in doc:
        raise ConfigError(f"{where}.{key}: missing required field")
    return doc[key]


def _parse_model(doc):
    kind = _require(doc, "kind", "model")
    if kind == "flat":
        return Flat()
    if kind == "fast":
        return Fast()
    if kind == "block":
        return BlockFading(num_blocks=int(_require(doc, "num_blocks", "model")),
                           block_len=int(_require(doc, "block_len", "model")))
    if kind == "isi":
        pdp = _require(doc, "power_delay_profile", "model")
        return CyclicIsi(num_taps=int(_require(doc, "num_taps", "model")),
                         power_delay_profile=tuple(pdp))
    if kind == "tf":
        return TimeFrequency(ScatteringSpec.from_normalized(
            float(_require(doc, "nu0_t", "model")),
            float(_require(doc, "tau0_f", "model")),
            int(_require(doc, "num_time", "model")),
            int(_require(doc, "num_freq", "model"))))
    raise ConfigError(f"model.kind: unknown kind {kind!r}")


def load_config(path):
    """Load and validate an experiment config, applying defaults."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    model = _parse_model(_require(doc, "model", "config"))
    dims_doc = _require(doc, "dims", "config")
    try:
        dims = ChannelDims(num_tx=int(_require(dims_doc, "num_tx", "dims")),
                           num_rx=int(_require(dims_doc, "num_rx", "dims")),
                           block_len=int(_require(dims_doc, "block_len", "dims")))
    except ValueError as exc:
        raise ConfigError(f"dims: {exc}") from exc
    snr_db = tuple(float(v) for v in _require(doc, "snr_db", "config"))
    if list(snr_db) != sorted(snr_db):
        raise ConfigError("snr_db: grid must be ascending")
    rate_doc = _require(doc, "rate", "config")
    mode = _require(rate_doc, "mode", "rate")
    if mode == "fixed":
        rate_mode = FixedRate(nats=float(_require(rate_doc, "bits", "rate")) * _LN2)
    elif mode == "scaling":
        rate_mode = ScalingRate(mux_rate=float(_require(rate_doc, "mux_rate", "rate")))
    else:
        raise ConfigError(f"rate.mode: unknown mode {mode!r}")
    trials = int(doc.get("trials", 100_000))
    if trials <= 0:
        raise ConfigError("trials: must be positive")
    config = ExperimentConfig(model=model, dims=dims, snr_db=snr_db,
                              rate_mode=rate_mode, trials=trials,
                              master_seed=int(doc.get("seed", 0)),
                              epsilon=float(doc.get("epsilon", 0.1)),
                              output=doc.get("output"))
    try:
        build_covariance(config.model, dims.block_len)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    return config


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_report(results, fmt, path=None):
    """Emit a report deterministically: sorted JSON keys, fixed float format.

    CSV input is {"columns": [...], "rows": [[...], ...]}; JSON input is any
    serializable object. Identical inputs produce byte-identical output.
    """
    if fmt == "csv":
        lines = [",".join(results["columns"])]
        for row in results["rows"]:
            lines.append(",".join(_fmt(v) for v in row))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        def default(obj):
            if isinstance(obj, np.ndarray):
                return obj.tolist()
            if isinstance(obj, (np.floating, np.integer)):
                return obj.item()
            if hasattr(obj, "__dict__"):
                return vars(obj)
            raise TypeError(f"not serializable: {type(obj)}")
        text = json.dumps(results, sort_keys=True, indent=2, default=default) + "\n"
    else:
        raise ValueError(f"unknown report format: {fmt!r}")
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def _cmd_dmt_curve(args):
    dims = ChannelDims(num_tx=args.mt, num_rx=args.mr, block_len=max(1, args.rho * args.mt))
    curve = jensen_dmt_curve(args.rho, dims, variant=args.variant)
    report = {"columns": ["r", "d"],
              "rows": [[r, d] for r, d in curve.points]}
    write_report(report, "csv", args.out)
    return 0


def _cmd_outage(args):
    config = load_config(args.config)
    trials = args.trials or config.trials
    seed = config.master_seed if args.seed is None else args.seed
    cov = build_covariance(config.model, config.dims.block_len)
    rows = []
    for snr_db in config.snr_db:
        point = SnrPoint(snr=float(db_to_linear(snr_db)), rate_mode=config.rate_mode)
        est = estimate_outage(cov, config.dims, point, bound=args.bound,
                              trials=trials, master_seed=seed,
                              min_events=args.min_events, workers=args.workers)
        rows.append([snr_db, est.probability, est.ci_low, est.ci_high, est.trials])
    report = {"columns": ["snr_db", "probability", "ci_low", "ci_high", "trials"],
              "rows": rows}
    write_report(report, "csv", args.out or config.output)
    return 0


def _cmd_error_sim(args):
    config = load_config(args.config)
    trials = args.trials or config.trials
    seed = config.master_seed if args.seed is None else args.seed
    cov = build_covariance(config.model, config.dims.block_len)
    with open(args.codebook) as fh:
        book = Codebook.from_json(json.load(fh), num_rx=config.dims.num_rx)
    columns = ["snr_db", "error_rate", "ci_low", "ci_high", "trials"]
    if args.with_outage:
        columns.append("outage_rate")
    rows = []
    for snr_db in config.snr_db:
        snr = float(db_to_linear(snr_db))
        est = simulate_error_prob(cov, config.dims, book, snr=snr, trials=trials,
                                  master_seed=seed, workers=args.workers)
        row = [snr_db, est.error_rate, est.ci_low, est.ci_high, est.trials]
        if args.with_outage:
            point = SnrPoint(snr=snr, rate_mode=config.rate_mode)
            out = estimate_outage(cov, config.dims, point, trials=trials,
                                  master_seed=seed, min_events=None,
                                  workers=args.workers)
            row.append(out.probability)
        rows.append(row)
    write_report({"columns": columns, "rows": rows}, "csv", args.out or config.output)
    return 0


def _cmd_verify_code(args):
    with open(args.cov) as fh:
        cov = CovarianceMatrix.from_json(json.load(fh))
    with open(args.codebook) as fh:
        book = Codebook.from_json(json.load(fh), num_rx=args.mr)
    if args.criterion == "rank":
        result = verify_rank_r0(book, cov)
        report = {"criterion": "rank", "passed": result["passed"],
                  "expected_rank": result["expected_rank"],
                  "failures": result["failures"]}
    else:
        grid = [float(db_to_linear(v)) for v in args.snr_db]
        result = verify_dmt_criterion(lambda snr: book, cov, grid, args.epsilon)
        report = {"criterion": "dmt", "passed": result["passed"],
                  "per_snr": result["per_snr"]}
    write_report(report, "json", args.out)
    return 0 if report["passed"] else 1


def _cmd_design_precoder(args):
    spec = ScatteringSpec.from_normalized(args.nu0_t, args.tau0_f,
                                          args.num_time, args.num_freq)
    try:
        pre = design_tf_shift_precoder(spec, num_tx=args.mt)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    checks = verify_tf_precoder(spec, pre)
    report = pre.to_json()
    report["verification"] = {"rank": checks["circulant"].rank,
                              "expected_rank": checks["circulant"].expected_rank,
                              "sigma0": checks["circulant"].sigma0,
                              "passed": checks["circulant"].passed}
    write_report(report, "json", args.out)
    return 0 if checks["circulant"].passed else 1


def _cmd_pep(args):
    with open(args.cov) as fh:
        cov = CovarianceMatrix.from_json(json.load(fh))
    with open(args.codebook) as fh:
        book = Codebook.from_json(json.load(fh), num_rx=args.mr)
    words = book.words
    rows = []
    for snr_db in args.snr_db:
        snr = float(db_to_linear(snr_db))
        worst = 0.0
        for i in range(len(book)):
            for j in range(i + 1, len(book)):
                bound = pep_chernoff(cov, words[i] - words[j], snr, args.mr)
                worst = max(worst, bound.value)
        rows.append([snr_db, worst])
    write_report({"columns": ["snr_db", "pep_bound"], "rows": rows}, "csv", args.out)
    return 0


def _cmd_oracle_check(args):
    rng = spawn_rng(args.seed)
    if args.what == "theorem4":
        for trial in range(args.instances):
            n = int(rng.integers(1, args.n + 1))
            m = int(rng.integers(1, n + 1))
            inst = TraceBoundInstance(np.sort(rng.uniform(0, 5, m)),
                                      np.sort(rng.uniform(0, 5, n)))
            try:
                trace_oracle(inst, num_random_unitaries=args.unitaries,
                             master_seed=args.seed + trial + 1)
            except RuntimeError as exc:
                print(f"FAIL instance {trial}: {exc}", file=sys.stderr)
                return 1
        print(f"theorem4: {args.instances} instances passed")
        return 0
    if args.what == "identities":
        from .codes import delta_decomposition, effective_difference
        for trial in range(args.instances):
            n = int(rng.integers(2, args.n + 1))
            rho = int(rng.integers(1, n + 1))
            mat = rng.standard_normal((n, rho)) + 1j * rng.standard_normal((n, rho))
            raw = mat @ mat.conj().T
            scale = 1.0 / np.sqrt(np.real(np.diag(raw)))
            cov = CovarianceMatrix.from_entries(raw * np.outer(scale, scale))
            e = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
            delta, _ = delta_decomposition(cov, e)
            lhs = np.linalg.eigvalsh(delta.conj().T @ delta)
            rhs = np.linalg.eigvalsh(effective_difference(cov, e).matrix)
            if not np.allclose(lhs, rhs, atol=1e-10 * max(1.0, rhs[-1])):
                print(f"FAIL instance {trial}: eigen mismatch", file=sys.stderr)
                return 1
        print(f"identities: {args.instances} instances passed")
        return 0
    print(f"error: unknown oracle {args.what!r}", file=sys.stderr)
    return 2


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dmtlab",
        description="Diversity-multiplexing tradeoff toolkit for "
                    "selective-fading MIMO channels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dmt-curve", help="closed-form diversity curve")
    p.add_argument("--mt", type=int, required=True)
    p.add_argument("--mr", type=int, required=True)
    p.add_argument("--rho", type=int, required=True,
                   help="rank of the slot covariance")
    p.add_argument("--variant", choices=["jensen", "independent"], default="jensen")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_dmt_curve)

    p = sub.add_parser("outage", help="Monte-Carlo outage sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--bound", choices=["full", "jensen"], default="full")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--min-events", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_outage)

    p = sub.add_parser("error-sim", help="exhaustive-ML error-rate sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--codebook", required=True,
                   help="codebook JSON; the same words are reused at every grid SNR")
    p.add_argument("--with-outage", action="store_true")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_error_sim)

    p = sub.add_parser(
        "verify-code", help="code design criteria",
        epilog="Zero-entry caveat: the per-slot minimum-entry criterion reads "
               "codeword pairs literally, so a block codebook whose pairs agree "
               "in some slot fails even if each slot is a fine standalone "
               "constellation; treat per-slot constellations as independent "
               "codes if that reading is intended.")
    p.add_argument("--codebook", required=True)
    p.add_argument("--cov", required=True)
    p.add_argument("--mr", type=int, default=1)
    p.add_argument("--criterion", choices=["rank", "dmt"], default="rank")
    p.add_argument("--snr-db", type=float, nargs="*", default=[10.0, 20.0, 30.0])
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_verify_code)

    p = sub.add_parser("design-precoder", help="time-frequency shift precoder")
    p.add_argument("--nu0-t", type=float, required=True, dest="nu0_t")
    p.add_argument("--tau0-f", type=float, required=True, dest="tau0_f")
    p.add_argument("--num-time", type=int, required=True)
    p.add_argument("--num-freq", type=int, required=True)
    p.add_argument("--mt", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_design_precoder)

    p = sub.add_parser("pep", help="worst-pair pairwise error bound sweep")
    p.add_argument("--cov", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--mr", type=int, default=1)
    p.add_argument("--snr-db", type=float, nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_pep)

    p = sub.add_parser("oracle-check", help="brute-force oracle comparisons")
    p.add_argument("--what", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--unitaries", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_oracle_check)

    return parser


def dispatch(argv):
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
