"""Experiment runners. Each takes a validated config and an output directory,
writes CSV traces there and returns a JSON-ready summary dict."""

import csv
import math
import time
from pathlib import Path

import numpy as np

from .. import stats, video
from .._accel import backend_name
from ..channel_sim import run_closed_loop, run_experiment
from ..erasure import CodeParams, decode_array, encode_array
from ..transport import HEADER_LEN
from .config import ExperimentConfig


def _r(x, nd=4):
    if x is None:
        return None
    x = float(x)
    return round(x, nd) if math.isfinite(x) else None


def _finite(x):
    x = np.asarray(x, dtype=np.float64)
    return x[np.isfinite(x)]


def _acf1(series):
    try:
        return float(stats.acf(series, 1)[1])
    except ValueError:
        return None


def _geometry(p) -> video.SliceGeometry:
    return video.SliceGeometry(int(p["width_mb"]), int(p["height_mb"]), int(p["slices"]),
                               float(p["fps"]), int(p["period"]))


# -- order-statistic gain -------------------------------------------------------


def theory_gain(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    k, n, q = cfg.code.k, cfg.code.k + cfg.code.m, p["p"]
    base = stats.GaussianCdf(p["mean_ms"], p["std_ms"])
    unc = stats.OrderStatisticCdf(base, k, k)
    cod = stats.OrderStatisticCdf(base, k, n)

    rng = np.random.default_rng(cfg.seed)
    blocks = int(p["blocks"])
    mc_unc = rng.normal(base.mean, base.std, (blocks, k)).max(axis=1)
    mc_cod = np.sort(rng.normal(base.mean, base.std, (blocks, n)), axis=1)[:, k - 1]
    e_unc, e_cod = stats.EmpiricalCdf(mc_unc), stats.EmpiricalCdf(mc_cod)

    stats.write_cdf_csv(out / "cdf_uncoded_mc.csv", e_unc)
    stats.write_cdf_csv(out / "cdf_coded_mc.csv", e_cod)
    grid = np.linspace(base.mean - 2 * base.std, base.mean + 5 * base.std, 281)
    with open(out / "cdf_analytic.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "uncoded", "coded"])
        w.writerows((f"{x:.4f}", f"{a:.6f}", f"{b:.6f}")
                    for x, a, b in zip(grid, unc.cdf(grid), cod.cdf(grid)))
    return {
        "k": k, "n": n, "p": q, "blocks": blocks,
        "uncoded_quantile_ms_analytic": _r(unc.quantile(q)),
        "coded_quantile_ms_analytic": _r(cod.quantile(q)),
        "gain_ms_analytic": _r(stats.gain_at(q, unc, cod)),
        "uncoded_quantile_ms_mc": _r(e_unc.quantile(q)),
        "coded_quantile_ms_mc": _r(e_cod.quantile(q)),
        "gain_ms_mc": _r(stats.gain_at(q, e_unc, e_cod)),
        "sup_distance_uncoded": _r(stats.sup_distance(unc, mc_unc), 6),
        "sup_distance_coded": _r(stats.sup_distance(cod, mc_cod), 6),
    }


# -- link simulations -----------------------------------------------------------


def _run(sim):
    if sim.rate_control is not None:
        return run_closed_loop(sim)[0]
    return run_experiment(sim)


def simulate(cfg: ExperimentConfig, out: Path) -> dict:
    """Single-link packet latency against multi-link coded block latency."""
    p = cfg.params
    single = _run(cfg.sim_config(links=cfg.links[:1], k=1, m=0))
    multi = _run(cfg.sim_config())
    lat1 = _finite(single.latency_ms)
    latb = _finite(multi.block_latency_ms)
    lag = int(p["max_lag"])
    single.write_packets_csv(out / "single_packets.csv")
    multi.write_packets_csv(out / "packets.csv")
    multi.write_blocks_csv(out / "blocks.csv")
    stats.write_acf_csv(out / "acf_single.csv", stats.acf(lat1, lag))
    stats.write_acf_csv(out / "acf_multi.csv", stats.acf(latb, lag))
    best = int(p["best_count"])
    return {
        "links": len(cfg.links), "k": cfg.code.k, "m": cfg.code.m,
        "single_packets": int(lat1.size), "blocks": int(latb.size),
        "undecodable_blocks": int(np.isnan(multi.block_latency_ms).sum()),
        "single_acf1": _r(_acf1(lat1)), "multi_acf1": _r(_acf1(latb)),
        "single_acf1_best": _r(_acf1(stats.best_subset(lat1, best))),
        "multi_acf1_best": _r(_acf1(stats.best_subset(latb, best))),
        "single_p95_ms": _r(np.percentile(lat1, 95)), "multi_p95_ms": _r(np.percentile(latb, 95)),
    }


def hypothetical_single_link(cfg: ExperimentConfig, i: int) -> np.ndarray:
    """Uncoded latency of a k-packet block if link ``i`` carried it alone.

    The link runs by itself at its own rate; every k consecutive packet
    latencies form one block whose latency is their maximum.
    """
    ln = cfg.links[i]
    pkt = cfg.code.symbol_len + HEADER_LEN
    sim = cfg.sim_config(links=(ln,), k=1, m=0,
                         data_rate_bps=ln.rate_bps * cfg.code.symbol_len / pkt,
                         seed=cfg.seed + int(cfg.params["calibration_seed_offset"]) + i)
    lat = _run(sim).latency_ms
    k = cfg.code.k
    n = lat.size // k * k
    return _finite(lat[:n].reshape(-1, k).max(axis=1))


def coded_cdf(cfg: ExperimentConfig, out: Path) -> dict:
    q = cfg.params["p"]
    tr = _run(cfg.sim_config())
    coded = _finite(tr.block_latency_ms)
    c = stats.EmpiricalCdf(coded)
    stats.write_cdf_csv(out / "cdf_coded.csv", c)
    tr.write_blocks_csv(out / "blocks.csv")
    hyp = []
    for i in range(len(cfg.links)):
        h = stats.EmpiricalCdf(hypothetical_single_link(cfg, i))
        stats.write_cdf_csv(out / f"cdf_single_link{i}.csv", h)
        hyp.append(h)
    hyp_q = [float(h.quantile(q)) for h in hyp]
    best = int(np.argmin(hyp_q))
    return {
        "p": q, "k": cfg.code.k, "n": cfg.code.k + cfg.code.m, "blocks": int(coded.size),
        "coded_quantile_ms": _r(c.quantile(q)),
        "single_link_quantile_ms": [_r(x) for x in hyp_q],
        "gain_vs_best_single_ms": _r(stats.gain_at(q, hyp[best], c)),
        "coded_below_all_single": bool(c.quantile(q) < min(hyp_q)),
    }


def modem_count(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    rows = []
    lats = []
    for count in range(1, int(p["max_links"]) + 1):
        b = _finite(_run(cfg.sim_config(links=(cfg.links[0],) * count)).block_latency_ms)
        lats.append(b)
        rows.append({"links": count, "mean_ms": float(b.mean()), "var_ms2": float(b.var()),
                     "p95_ms": float(np.percentile(b, 95)), "blocks": int(b.size)})
    hi = max(float(np.percentile(b, 99.5)) for b in lats)
    lo = min(float(b.min()) for b in lats)
    for row, b in zip(rows, lats):
        stats.write_histogram_csv(out / f"hist_links{row['links']}.csv",
                                  *stats.histogram(b, int(p["bins"]), (lo, hi)))
    with open(out / "modem_count.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["links", "mean_ms", "var_ms2", "p95_ms", "blocks"])
        w.writerows((r["links"], f"{r['mean_ms']:.4f}", f"{r['var_ms2']:.4f}",
                     f"{r['p95_ms']:.4f}", r["blocks"]) for r in rows)
    means = [r["mean_ms"] for r in rows]
    var = [r["var_ms2"] for r in rows]
    summary = {"per_count": [{k: _r(v) if isinstance(v, float) else v for k, v in r.items()}
                             for r in rows],
               "variance_non_increasing": bool(all(b <= a for a, b in zip(var, var[1:])))}
    if len(means) >= 2:
        summary["mean_delta_1_to_2_ms"] = _r(means[0] - means[1])
    if len(means) >= 4:
        summary["mean_delta_3_to_4_ms"] = _r(means[2] - means[3])
    return summary


def rate_step(cfg: ExperimentConfig, out: Path) -> dict:
    """Closed-loop response of one link to the capacity steps of its profile."""
    ln = cfg.links[0]
    if ln.kind != "piecewise" or len(ln.starts_ms) < 3:
        raise ValueError("rate-step needs a piecewise link with a drop and a restore step")
    sim = cfg.sim_config(links=(ln,))
    if sim.rate_control is None:
        raise ValueError("rate-step needs a rate_control section")
    tr, log = run_closed_loop(sim)
    win = sim.rate_control.window_ms
    tgt = log.target_bps[:, 0]
    drop_w, restore_w = int(ln.starts_ms[1] // win), int(ln.starts_ms[2] // win)
    low, high = ln.rates_bps[1] * ln.scale, ln.rates_bps[2] * ln.scale
    below = np.flatnonzero(tgt[drop_w:restore_w] < low)
    reach = np.flatnonzero(tgt[restore_w:] >= cfg.params["reach_frac"] * high)
    with open(out / "rate_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_end_us", "capacity_bps", "measured_bps", "target_bps", "command"])
        w.writerows((int(t), f"{c:.0f}", f"{mz:.0f}", f"{g:.0f}", cmd[0].name)
                    for t, c, mz, g, cmd in zip(log.window_end_us, log.capacity_bps[:, 0],
                                                log.measured_bps[:, 0], tgt, log.commands))
    return {
        "window_ms": win, "target_before_drop_bps": _r(tgt[drop_w - 1], 0),
        "windows_to_fall_below": int(below[0] + 1) if below.size else None,
        "windows_to_reach": int(reach[0] + 1) if reach.size else None,
        "reach_frac": cfg.params["reach_frac"], "padding_packets": log.padding_packets,
        "p99_latency_ms": _r(np.percentile(_finite(tr.latency_ms), 99)),
    }


# -- erasure code benchmark -----------------------------------------------------


def _timed(fn, min_time):
    fn()  # warm up (and compile)
    reps, t0 = 0, time.perf_counter()
    while True:
        fn()
        reps += 1
        dt = time.perf_counter() - t0
        if dt >= min_time:
            return dt / reps


def bench_crs(cfg: ExperimentConfig, out: Path) -> dict:
    """Encode/decode throughput in Mbit/s of source data; decoding loses m data symbols."""
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k, m in cfg.params["configs"]:
        params = CodeParams(int(k), int(m), cfg.code.symbol_len)
        data = rng.integers(0, 256, (params.k, params.symbol_len), dtype=np.uint8)
        code = encode_array(data, params)
        keep = np.arange(min(params.m, params.k), params.n)[: params.k]
        bits = params.k * params.symbol_len * 8
        t_enc = _timed(lambda: encode_array(data, params), cfg.params["min_time_s"])
        t_dec = _timed(lambda: decode_array(keep, code[keep], params), cfg.params["min_time_s"])
        rows.append((params.k, params.m, params.symbol_len, bits / t_enc / 1e6, bits / t_dec / 1e6))
    with open(out / "bench_crs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "m", "symbol_len", "encode_mbps", "decode_mbps"])
        w.writerows((k, m, s, f"{e:.1f}", f"{d:.1f}") for k, m, s, e, d in rows)
    return {"backend": backend_name(),
            "rows": [{"k": k, "m": m, "symbol_len": s, "encode_mbps": _r(e, 1),
                      "decode_mbps": _r(d, 1)} for k, m, s, e, d in rows]}


# -- video pipeline -------------------------------------------------------------


def intra_refresh(cfg: ExperimentConfig, out: Path) -> dict:
    g = _geometry(cfg.params)
    period = g.refresh_period_mb
    with open(out / "refresh.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slice_counter", "columns"])
        for c in range(2 * period):
            w.writerow([c, " ".join(map(str, video.intra_refresh_columns(c, g)))])
    complete = all(np.all(video.refresh_counts(d + 1, g) == 1) for d in range(period))
    return {"width_mb": g.frame_width_mb, "period": period, "every_column_once_per_period": complete,
            "recovery_time_s": _r(video.recovery_time(period, g.fps)),
            "recovery_time_half_period_s": _r(video.recovery_time(max(1, period // 2), g.fps))}


def pingpong(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    g = _geometry(p)
    n = int(p["n_slices"])
    proc = np.full(n, p["processing_factor"] * g.t_slice)
    if p["processing_jitter"] > 0:
        rng = np.random.default_rng(cfg.seed)
        proc *= 1.0 + rng.uniform(-p["processing_jitter"], p["processing_jitter"], n)
    summary = {"t_slice_ms": _r(g.t_slice * 1e3), "processing_factor": p["processing_factor"]}
    for name, enc in (("single", 1), ("dual", 2)):
        s = video.simulate_pingpong(g, enc, proc, n)
        s.write_csv(out / f"schedule_{name}.csv")
        summary[name] = {"buffers": s.max_buffers_used, "deadline_misses": s.deadline_misses,
                         "budget_ms": _r(s.budget * 1e3),
                         "max_latency_ms": _r(s.latency.max() * 1e3),
                         "backlog_growing": bool(n > 1 and np.all(np.diff(s.backlog) > 0))}
    return summary


def qp_table(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    if p["samples"]:
        samples = video.read_qp_samples(p["samples"])
    else:
        samples = video.synthetic_qp_samples(np.random.default_rng(cfg.seed), reps=int(p["reps"]))
        video.write_qp_samples(out / "qp_samples.csv", samples)
    table = video.build_qp_table(samples)
    video.write_qp_table_csv(out / "qp_table.csv", table)
    picks = {str(t): list(video.select_qp(table, float(t))) for t in p["targets"]}
    return {"samples": len(samples), "pairs": len(table.samples), "entries": len(table),
            "min_bytes": _r(table.entries[0].size_bytes, 1),
            "max_bytes": _r(table.entries[-1].size_bytes, 1), "select": picks}


def _synthetic_frames(rng, frames, h, w):
    y, x = np.mgrid[0:h, 0:w]
    out = np.empty((frames, h, w), dtype=np.uint8)
    for f in range(frames):
        img = 128 + 60 * np.sin((x + 3 * f) / 17.0) * np.cos((y - 2 * f) / 23.0)
        out[f] = np.clip(img + rng.normal(0, 4, (h, w)), 0, 255)
    return out


def psnr(cfg: ExperimentConfig, out: Path) -> dict:
    """Slice-loss concealment quality on raw frames (synthetic when no files are given)."""
    p = cfg.params
    g = _geometry(p)
    rng = np.random.default_rng(cfg.seed)
    w, h = int(p["width_px"]), int(p["height_px"])
    if p["reference"]:
        ref = video.read_raw_frames(p["reference"], w, h)
        rx = video.read_raw_frames(p["received"] or p["reference"], w, h)
    else:
        ref = _synthetic_frames(rng, int(p["frames"]), h, w)
        noise = rng.normal(0, p["noise_std"], ref.shape)
        rx = np.clip(ref + noise, 0, 255).astype(np.uint8)
    if p["drops"]:
        drops = np.loadtxt(p["drops"], delimiter=",", dtype=np.int64, ndmin=2).astype(bool)
    else:
        drops = rng.random((ref.shape[0], g.slices_per_frame)) < p["drop_prob"]
    per, avg = video.conceal_and_psnr(ref, rx, drops, g)
    with open(out / "psnr.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame", "dropped_slices", "psnr_db"])
        wr.writerows((f, int(drops[f].sum()), f"{v:.4f}" if math.isfinite(v) else "inf")
                     for f, v in enumerate(per))
    return {"frames": int(ref.shape[0]), "dropped_slices": int(drops.sum()),
            "average_psnr_db": _r(avg), "min_psnr_db": _r(np.min(per))}


RUNNERS = {
    "theory-gain": theory_gain, "simulate": simulate, "coded-cdf": coded_cdf,
    "modem-count": modem_count, "rate-step": rate_step, "bench-crs": bench_crs,
    "intra-refresh": intra_refresh, "pingpong": pingpong, "qp-table": qp_table, "psnr": psnr,
}
