"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import csv
import math
import statistics
import time

import numpy as np

from stochrelu.circuit import Mode, SignCircuitSpec, Variant, assign, bits_to_int, gc_input_values, synth
from stochrelu.cli import main
from stochrelu.faultmodel import (
    conditioned_trunc_count,
    exhaustive_fault_count,
    exhaustive_trunc_count,
    fault_mask,
    monte_carlo_fault_rate,
    p_sign_fault,
)
from stochrelu.field import DEFAULT_PARAMS, FieldParams, decode_array, encode_array
from stochrelu.garble import decode, evaluate, garble
from stochrelu.models import gen_model, load_dataset, load_model, random_inputs
from stochrelu.nn import Model, ReLU, ReluRecord, StochasticReluConfig, infer_plain, infer_stochastic, predict, stochastic_relu_sim
from stochrelu.protocol import SessionConfig, private_inference

from conftest import eval_batch, random_circuit, report, split_bits

P509 = FieldParams(509)
P65521 = FieldParams(65521)
BIG = DEFAULT_PARAMS
THREE_LAYER = "in:1x6x6,conv:2x3/s1/p1,relu,flatten,fc:8,relu,fc:3"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_acceptance_1_untruncated_fault_count_is_exact():
    t0 = time.perf_counter()
    bad = [x for x in range(509) if exhaustive_fault_count(x, 0, Mode.POS_ZERO, P509) != abs(int(decode_array(x, P509)))]
    rng = np.random.default_rng(1)
    spot = [int(v) for v in rng.integers(0, 65521, size=40)] + [1, 65520, P65521.half - 1, P65521.half]
    t = np.arange(65521, dtype=np.int64)
    bad += [x for x in spot if int(fault_mask(x, t, 0, Mode.POS_ZERO, P65521).sum()) != abs(int(decode_array(x, P65521)))]
    elapsed = time.perf_counter() - t0
    report(1, "untruncated fault count equals |x|", not bad and elapsed < 10, f"509 values at p=509, {len(spot)} at p=65521, {len(bad)} mismatches, {elapsed:.1f}s")


def test_acceptance_2_truncation_faults_exact():
    t0 = time.perf_counter()
    mismatches = 0
    checked = 0
    for mode in Mode:
        for k in (0, 2, 4, 6):
            for xr in range(509):
                x = int(decode_array(xr, P509))
                extra = exhaustive_trunc_count(x, k, mode, P509)
                inside = (0 < x < 2**k) if mode == Mode.POS_ZERO else (-(2**k) < x < 0)
                expect = conditioned_trunc_count(x, k, mode, P509) if inside else 0
                if inside and expect == 0:
                    mismatches += 1
                mismatches += extra != expect
                checked += 1
    elapsed = time.perf_counter() - t0
    report(2, "truncation faults only in range with exact conditioned count", mismatches == 0 and elapsed < 30, f"{checked} cases, {mismatches} mismatches, {elapsed:.1f}s")


def test_acceptance_3_fault_curve_at_full_scale():
    t0 = time.perf_counter()
    inside = monte_carlo_fault_rate(2**17, 18, Mode.POS_ZERO, BIG, samples=10**6, seed=0)
    ok = abs(inside.rate - 0.5) <= 0.002
    worst = 0.0
    for x in (10 * 2**18, -(2**19), 2**24, -(2**26), 2**28, 300_000_000):
        r = monte_carlo_fault_rate(x, 18, Mode.POS_ZERO, BIG, samples=10**6, seed=1)
        expect = p_sign_fault(x, BIG)
        sigma = math.sqrt(expect * (1 - expect) / r.samples)
        worst = max(worst, abs(r.rate - expect) / sigma)
    ok = ok and worst <= 3
    elapsed = time.perf_counter() - t0
    report(3, "Monte-Carlo fault rate at p=2138816513, k=18", ok and elapsed < 60, f"rate(2^17)={inside.rate:.5f}, worst out-of-range deviation {worst:.2f} sigma, {elapsed:.1f}s")


def test_acceptance_4_garbling_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    mismatches = 0
    evaluations = 0
    for _ in range(1000):
        n_in = int(rng.integers(1, 17))
        c = random_circuit(rng, n_in, int(rng.integers(1, 65)))
        gc, enc, dec = garble(c, int(rng.integers(1 << 62)))
        values = np.arange(1 << n_in) if n_in <= 10 else rng.integers(0, 1 << n_in, size=100)
        width_a = len(c.inputs["a"])
        expect = eval_batch(c, {"a": values & ((1 << width_a) - 1), "b": values >> width_a})
        for v, want in zip(values, expect):
            mismatches += bits_to_int(decode(evaluate(gc, enc.encode(split_bits(c, int(v)))), dec)) != want
            evaluations += 1
    xs = np.arange(509)
    for variant, k in ((Variant.RELU_FULL, 0), (Variant.SIGN_NAIVE, 0), (Variant.SIGN_STOCH, 0), (Variant.SIGN_STOCH, 3)):
        spec = SignCircuitSpec(P509.m, k, Mode.POS_ZERO, variant)
        c = synth(spec, P509)
        n_masks = 200 if k == 0 else 50
        for client, r in rng.integers(0, 509, size=(n_masks, 2)):
            gc, enc, dec = garble(c, int(rng.integers(1 << 62)))
            per_x = [gc_input_values(spec, P509, (x - int(client)) % 509, int(client), int(r)) for x in range(509)]
            expect = eval_batch(c, {name: np.array([v[name] for v in per_x]) for name in c.inputs})
            for x in xs:
                got = bits_to_int(decode(evaluate(gc, enc.encode(assign(c, per_x[x]))), dec))
                mismatches += got != expect[x]
                evaluations += 1
    elapsed = time.perf_counter() - t0
    report(4, "decode(eval(garble)) equals plain evaluation", mismatches == 0 and elapsed < 120, f"{evaluations} evaluations, {mismatches} mismatches, {elapsed:.1f}s")


def test_acceptance_5_protocol_matches_simulator():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    x = rng.integers(0, BIG.p, size=1000)
    relu_layer = Model([ReLU()], (1000,), BIG)
    cfg = SessionConfig(relu=StochasticReluConfig(12, Mode.POS_ZERO), variant=Variant.SIGN_STOCH)
    run = private_inference(relu_layer, x, cfg)
    trace = run.client_material.mask_trace(BIG)
    sim = stochastic_relu_sim(x, cfg.relu, params=BIG, mask=trace[0])
    relu_mismatch = int((run.logits != sim).sum())
    relu_mismatch += int((infer_stochastic(relu_layer, x, cfg.relu, masks=trace)[0] != sim).sum())

    model = gen_model(THREE_LAYER, seed=5)
    inputs = encode_array(random_inputs(model, 100, seed=6))
    plain = infer_plain(model, inputs)
    full_mismatch = 0
    for i, xi in enumerate(inputs):
        cfg_full = SessionConfig(relu=StochasticReluConfig(0), variant=Variant.RELU_FULL, client_seed=3 * i, server_seed=3 * i + 1, dealer_seed=3 * i + 2)
        full_mismatch += int((private_inference(model, xi, cfg_full).logits != plain[i]).any())
    elapsed = time.perf_counter() - t0
    ok = relu_mismatch == 0 and full_mismatch == 0 and elapsed < 300
    report(5, "two-party protocol equals simulator and plaintext", ok, f"{relu_mismatch}/1000 stochastic ReLU mismatches, {full_mismatch}/100 ReluFull inference mismatches, {elapsed:.1f}s")


def test_acceptance_6_garbled_size_ordering(tmp_path):
    out = tmp_path / "gc.csv"
    assert main(["bench-gc", "--m", "31", "--k", "0..24", "--out", str(out)]) == 0
    rows = read_csv(out)
    consistent = all(r["est_bytes"] == r["measured_garbled_bytes"] for r in rows)
    size = {(r["variant"], int(r["k"])): int(r["measured_garbled_bytes"]) for r in rows}
    relu, naive, stoch, trunc = size[("relu-full", 0)], size[("sign-naive", 0)], size[("sign-stoch", 0)], size[("sign-stoch", 19)]
    ratio = relu / trunc
    ok = consistent and relu > naive > stoch > trunc and ratio >= 3
    report(6, "garbled size ordering and cost model", ok, f"{relu} > {naive} > {stoch} > {trunc} bytes, baseline/truncated = {ratio:.2f}x, model exact: {consistent}")


def test_acceptance_7_online_cost_ordering():
    model = gen_model("in:1x8x8,conv:4x3/s1/p1,relu,pool:2,flatten,fc:16,relu,fc:10", seed=7)
    x = encode_array(random_inputs(model, 1, seed=8)[0])
    stats = {}
    for variant, k in ((Variant.RELU_FULL, 0), (Variant.SIGN_NAIVE, 0), (Variant.SIGN_STOCH, 12)):
        times = []
        for rep in range(5):
            cfg = SessionConfig(relu=StochasticReluConfig(k), variant=variant, client_seed=rep, server_seed=rep + 10, dealer_seed=rep + 20)
            run = private_inference(model, x, cfg)
            times.append(max(run.client.online_seconds, run.server.online_seconds))
        stats[variant] = (run.client.transcript.total_bytes("online"), statistics.median(times))
    b = [stats[v][0] for v in (Variant.RELU_FULL, Variant.SIGN_NAIVE, Variant.SIGN_STOCH)]
    t = [stats[v][1] for v in (Variant.RELU_FULL, Variant.SIGN_NAIVE, Variant.SIGN_STOCH)]
    ok = b[0] > b[1] > b[2] and t[0] > t[1] > t[2]
    report(7, "online bytes and time ReluFull > SignNaive > SignStoch(k=12)", ok, f"bytes {b[0]} > {b[1]} > {b[2]}, median seconds {t[0]:.3f} > {t[1]:.3f} > {t[2]:.3f}")


def test_acceptance_8_accuracy_against_truncation(tmp_path):
    assert main(["gen-task", "--seed", "0", "--n", "1000", "--out", str(tmp_path)]) == 0
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--model", str(tmp_path / "model"), "--dataset", str(tmp_path / "data"), "--k-range", "0..12", "--mode", "both", "--out", str(out)]) == 0
    rows = read_csv(out)
    model = load_model(tmp_path / "model")
    x, y = load_dataset(tmp_path / "data")
    xr = encode_array(x, model.params)
    plain_acc = float((predict(model, xr) == y).mean())

    record: list[ReluRecord] = []
    infer_stochastic(model, xr, StochasticReluConfig(0), record=record)
    mags = np.abs(np.concatenate([decode_array(r.pre, model.params).ravel() for r in record]))
    mags = mags[mags > 0]
    k_safe = int(math.floor(math.log2(np.percentile(mags, 10))))
    k_broken = int(math.ceil(math.log2(np.median(mags))))

    ok = True
    notes = []
    for mode in ("poszero", "negpass"):
        mine = sorted((r for r in rows if r["mode"] == mode), key=lambda r: int(r["k"]))
        rates = [float(r["fault_rate"]) for r in mine]
        acc = {int(r["k"]): float(r["accuracy"]) for r in mine}
        monotone = all(a <= b for a, b in zip(rates, rates[1:]))
        close = all(abs(acc[k] - plain_acc) <= 0.01 for k in acc if k < k_safe)
        degraded = all(acc[k] < plain_acc - 0.05 for k in acc if k >= k_broken)
        ok = ok and monotone and close and degraded
        notes.append(f"{mode}: monotone={monotone}, acc k<{k_safe} within 1%={close}, acc k>={k_broken} degraded={degraded} (k={k_broken}: {acc[k_broken]:.3f})")
    report(8, "accuracy and fault rate against truncated bits", ok, f"plaintext acc {plain_acc:.3f}; " + "; ".join(notes))
