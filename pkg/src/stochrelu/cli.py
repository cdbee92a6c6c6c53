"""Command-line entry points.  Reports are CSV; exit codes are 0 (ok),
2 (usage or configuration) and 3 (protocol abort)."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .circuit import Mode, SignCircuitSpec, Variant, cost, synth
from .faultmodel import CSV_HEADER, EXHAUSTIVE_LIMIT, default_x_grid, validation_rows
from .field import DEFAULT_PRIME, FieldError, FieldParams, encode_array, is_prime
from .garble import garble
from .models import ModelFormatError, gen_model, load_dataset, load_model, make_task, save_dataset, save_model
from .nn import ReluRecord, ShapeError, StochasticReluConfig, infer_stochastic, logits_signed
from .protocol import (
    SessionConfig,
    client_material_bytes,
    client_material_from_bytes,
    exchange_config,
    offline_phase,
    run_client,
    run_server,
    server_material_bytes,
    server_material_from_bytes,
)
from .sharing import ProtocolError
from .transport import Endpoint, FrameType, TransportError, accept, connect

EXIT_USAGE = 2
EXIT_ABORT = 3

BENCH_HEADER = ("variant", "m", "k", "and_count", "xor_count", "est_bytes", "measured_garbled_bytes")
SWEEP_HEADER = ("k", "mode", "fault_rate", "accuracy")


class UsageError(Exception):
    pass


def parse_range(text: str) -> list[int]:
    """``"a..b"`` (inclusive) or a single integer."""
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise UsageError(f"bad range {text!r}; expected a..b") from None
    if lo > hi or lo < 0:
        raise UsageError(f"empty or negative range {text!r}")
    return list(range(lo, hi + 1))


def _params(p: int) -> FieldParams:
    try:
        return FieldParams(p)
    except FieldError as exc:
        raise UsageError(str(exc)) from None


def _writer(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _emit(path, header, rows) -> None:
    fh, close = _writer(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            fh.close()


# -- commands -------------------------------------------------------------------------


def cmd_gen_model(args) -> int:
    model = gen_model(args.layers, args.seed, _params(args.p), args.frac_bits)
    save_model(model, args.out)
    print(f"wrote {args.out}: {len(model.layers)} layers, {model.relu_count} ReLUs")
    return 0


def cmd_gen_task(args) -> int:
    model, x, y = make_task(args.seed, args.n, args.hidden, args.frac_bits, _params(args.p))
    save_model(model, Path(args.out) / "model")
    save_dataset(x, y, Path(args.out) / "data")
    print(f"wrote {args.out}/model and {args.out}/data ({len(y)} samples)")
    return 0


def bench_rows(m_params: FieldParams, ks, mode: Mode):
    m = m_params.m
    specs = [SignCircuitSpec(m, 0, mode, Variant.RELU_FULL), SignCircuitSpec(m, 0, mode, Variant.SIGN_NAIVE)]
    specs += [SignCircuitSpec(m, k, mode, Variant.SIGN_STOCH) for k in ks]
    for spec in specs:
        c = synth(spec, m_params)
        est = cost(c)
        gc, _, _ = garble(c, b"bench")
        yield (spec.variant.value, m, spec.k, est.and_count, est.xor_count, est.estimated_garbled_bytes, len(gc.payload()))


def cmd_bench_gc(args) -> int:
    params = _field_of_width(args.m) if args.p is None else _params(args.p)
    if params.m != args.m:
        raise UsageError(f"p={params.p} has width {params.m}, not {args.m}")
    ks = [k for k in parse_range(args.k) if k < params.m]
    _emit(args.out, BENCH_HEADER, bench_rows(params, ks, Mode(args.mode)))
    return 0


def _field_of_width(m: int) -> FieldParams:
    """Largest prime below ``2^m`` (the default prime for ``m = 31``)."""
    if m == 31:
        return FieldParams(DEFAULT_PRIME)
    if not 3 <= m <= 62:
        raise UsageError(f"unsupported width m={m}")
    n = 2**m - 1
    while not is_prime(n):
        n -= 2
    return FieldParams(n)


def cmd_validate_faults(args) -> int:
    params = _params(args.p)
    if args.exhaustive and params.p > EXHAUSTIVE_LIMIT:
        raise UsageError(f"--exhaustive needs p <= {EXHAUSTIVE_LIMIT}")
    if not 0 <= args.k < params.m:
        raise UsageError(f"k must be in [0, {params.m})")
    modes = [Mode.POS_ZERO, Mode.NEG_PASS] if args.mode == "both" else [Mode(args.mode)]
    xs = default_x_grid(args.k, params, args.points)
    rows = [row for mode in modes for row in validation_rows(xs, args.k, mode, params, args.samples, args.seed, args.exhaustive)]
    _emit(args.out, CSV_HEADER, rows)
    return 0


def sweep_rows(model, x, y, ks, modes, seed: int):
    """Cleartext-simulator sweep; fault rate is over all ReLU activations."""
    xr = encode_array(x, model.params)
    for k in ks:
        for mode in modes:
            record: list[ReluRecord] = []
            out = infer_stochastic(model, xr, StochasticReluConfig(k, mode, seed), record=record)
            faults = sum(int(r.faults.sum()) for r in record)
            total = sum(r.faults.size for r in record)
            pred = logits_signed(out, model.params).reshape(len(y), -1).argmax(axis=1)
            yield (k, mode.value, faults / max(total, 1), float((pred == y).mean()))


def cmd_sweep(args) -> int:
    model = load_model(args.model)
    x, y = load_dataset(args.dataset)
    ks = [k for k in parse_range(args.k_range) if k < model.params.m]
    modes = [Mode.POS_ZERO, Mode.NEG_PASS] if args.mode == "both" else [Mode(args.mode)]
    _emit(args.out, SWEEP_HEADER, sweep_rows(model, x, y, ks, modes, args.seed))
    return 0


def session_config(args, params: FieldParams) -> SessionConfig:
    try:
        return SessionConfig(
            params=params,
            relu=StochasticReluConfig(args.k if args.variant == "sign-stoch" else 0, args.mode, args.seed),
            variant=args.variant,
            rescale=args.rescale,
            client_seed=args.seed,
            server_seed=args.seed + 1,
            dealer_seed=args.seed + 2,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_deal(args) -> int:
    model = load_model(args.model)
    cfg = session_config(args, model.params)
    cm, sm = offline_phase(model, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "client.npz").write_bytes(client_material_bytes(cm))
    (out / "server.npz").write_bytes(server_material_bytes(sm))
    print(f"wrote {out}/client.npz and {out}/server.npz ({sm.gc_count} garbled circuits)")
    return 0


def _summary(result) -> dict:
    t = result.transcript
    return {
        "online_bytes": t.total_bytes("online"),
        "online_rounds": t.rounds("online"),
        "offline_bytes": t.total_bytes("offline"),
        "wall_seconds": round(result.online_seconds, 6),
    }


def cmd_run(args) -> int:
    if args.role == "server":
        if not args.model:
            raise UsageError("--role server needs --model")
        model = load_model(args.model)
        cfg = session_config(args, model.params)
        ep = Endpoint(accept(args.host, args.port, timeout=args.timeout))
        try:
            ep.transcript.phase = "offline"
            exchange_config(ep, cfg)
            if args.dealer_file:
                sm = server_material_from_bytes(Path(args.dealer_file).read_bytes(), synth(cfg.circuit_spec(), cfg.params))
            else:
                cm, sm = offline_phase(model, cfg)
                ep.send(FrameType.OFFLINE_MATERIAL, client_material_bytes(cm))
            result = run_server(ep, model, cfg, sm, handshake=False)
        finally:
            ep.close()
        print(json.dumps({"role": "server", **_summary(result)}))
        return 0

    if not args.input:
        raise UsageError("--role client needs --input")
    x = np.load(args.input)
    params = _params(args.p)
    cfg = session_config(args, params)
    ep = Endpoint(connect(args.host, args.port, timeout=args.timeout))
    try:
        ep.transcript.phase = "offline"
        exchange_config(ep, cfg)
        if args.dealer_file:
            cm = client_material_from_bytes(Path(args.dealer_file).read_bytes())
        else:
            cm = client_material_from_bytes(ep.recv(FrameType.OFFLINE_MATERIAL).payload)
        xr = encode_array(np.asarray(x).reshape(cm.input_shape), params)
        result = run_client(ep, xr, cfg, cm, handshake=False)
    finally:
        ep.close()
    print(json.dumps({"logits": logits_signed(result.logits, params).ravel().tolist()}))
    print(json.dumps({"role": "client", **_summary(result)}))
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochrelu", description="Stochastic ReLU private-inference toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-model", help="write a seeded random model")
    g.add_argument("--layers", required=True, help="e.g. in:1x8x8,conv:4x3/s1/p1,relu,pool:2,flatten,fc:10")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--p", type=int, default=DEFAULT_PRIME)
    g.add_argument("--frac-bits", type=int, default=0)
    g.set_defaults(func=cmd_gen_model)

    g = sub.add_parser("gen-task", help="write the synthetic ring classifier and its test set")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--hidden", type=int, default=64)
    g.add_argument("--frac-bits", type=int, default=8)
    g.add_argument("--p", type=int, default=DEFAULT_PRIME)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_task)

    g = sub.add_parser("bench-gc", help="garbled size per ReLU for each circuit variant")
    g.add_argument("--m", type=int, default=31)
    g.add_argument("--p", type=int, default=None, help="field prime (defaults to the largest below 2^m)")
    g.add_argument("--k", default="0..24")
    g.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.POS_ZERO.value)
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_bench_gc)

    g = sub.add_parser("validate-faults", help="analytic vs empirical fault probability")
    g.add_argument("--p", type=int, default=DEFAULT_PRIME)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--mode", choices=[m.value for m in Mode] + ["both"], default="both")
    g.add_argument("--exhaustive", action="store_true")
    g.add_argument("--samples", type=int, default=100_000)
    g.add_argument("--points", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_validate_faults)

    g = sub.add_parser("sweep", help="accuracy and fault rate against truncated bits (cleartext simulator)")
    g.add_argument("--model", required=True)
    g.add_argument("--dataset", required=True)
    g.add_argument("--k-range", default="0..12")
    g.add_argument("--mode", choices=[m.value for m in Mode] + ["both"], default="both")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_sweep)

    for name, func, help_text in (("run", cmd_run, "run one party over TCP"), ("deal", cmd_deal, "write offline material files")):
        g = sub.add_parser(name, help=help_text)
        g.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.SIGN_STOCH.value)
        g.add_argument("--k", type=int, default=0)
        g.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.POS_ZERO.value)
        g.add_argument("--seed", type=int, default=0)
        g.add_argument("--rescale", choices=["local", "none"], default="local")
        g.add_argument("--model")
        g.set_defaults(func=func)
    run = sub.choices["run"]
    run.add_argument("--role", choices=["server", "client"], required=True)
    run.add_argument("--input", help="client input, signed integers in a .npy file")
    run.add_argument("--host", default="127.0.0.1")
    run.add_argument("--port", type=int, default=7531)
    run.add_argument("--p", type=int, default=DEFAULT_PRIME, help="client field prime")
    run.add_argument("--dealer-file", help="pre-generated material for this party")
    run.add_argument("--timeout", type=float, default=60.0)
    sub.choices["deal"].add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ShapeError, ModelFormatError, FieldError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProtocolError, TransportError, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
