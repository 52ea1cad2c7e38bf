"""Experiment pipelines behind the ``run`` and ``compare`` CLI verbs.

Every kind writes CSV files plus ``manifest.json`` and ``summary.txt`` into
its output directory and returns a :class:`Manifest` carrying the headline
numbers.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import __version__
from .analytic_dos import chain_from_geometry, model_residual, solve_fixed_point
from .energy import (Battery, DutyCycle, cpu_share, cycle_energy, lifetime_ratio, message_timing,
                     messages_per_active_period, messages_to_depletion)
from .errors import MismatchedScenarios, ValidationError
from .frame_security import SecurityLevel, aes_blocks, address_node, as_level, node_address, unsecure_frame, \
    AclEntry
from .attacks import xor_recover
from .localization import localize, throughput_variation
from .mac_sim import Simulation, link_key, mean_throughput, run, throughput_series
from .mac_sim.trace import load_summary_csv
from .scenario import Scenario

KINDS = ("per_packet_cost", "lifetime", "dos_network", "analytic_sweep", "localization", "countermeasure_ab",
         "replay_demo", "nonce_reuse_demo")


@dataclass
class Manifest:
    kind: str
    scenario: str
    seeds: list[int]
    out_dir: Path
    files: list[str] = field(default_factory=list)
    headline: dict = field(default_factory=dict)
    lines: list[str] = field(default_factory=list)
    data: dict = field(default_factory=dict)  # in-memory results, not serialized

    def add(self, path: Path):
        self.files.append(str(Path(path).relative_to(self.out_dir)))

    def summary_text(self) -> str:
        head = [f"{self.kind} on {self.scenario} (seeds {', '.join(map(str, self.seeds))})"]
        return "\n".join(head + self.lines) + "\n"

    def write(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "summary.txt").write_text(self.summary_text(), encoding="utf-8")
        self.add(self.out_dir / "summary.txt")
        meta = {"kind": self.kind, "scenario": self.scenario, "seeds": self.seeds, "files": sorted(self.files),
                "headline": self.headline, "ghostsim_version": __version__,
                "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        (self.out_dir / "manifest.json").write_text(json.dumps(meta, indent=2, default=_jsonable) + "\n",
                                                    encoding="utf-8")


def _jsonable(v):
    if isinstance(v, (set, tuple)):
        return list(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return path


# -- shared helpers -----------------------------------------------------------

def drain_rate(trace, node: int, start: float, end: float) -> float:
    """Mean power (W) drawn by ``node`` over ``[start, end]`` from the energy ledger."""
    total = 0.0
    for t, nid, state, _cur, joules, _rem, dur in trace.energy:
        if nid != node or state == "recharge":
            continue
        lo, hi = t - dur, t
        if dur <= 0:
            if start < t <= end:
                total += joules
            continue
        overlap = min(hi, end) - max(lo, start)
        if overlap > 0:
            total += joules * overlap / dur
    return total / (end - start)


def subtree(paths, node: int) -> list[int]:
    """Sources whose route passes through (or starts at) ``node``."""
    return sorted(p[0] for p in paths if node in p[:-1])


def relay_load(paths, node: int) -> int:
    return sum(1 for p in paths if node in p[1:-1])


def pick_victim(scenario: Scenario, rule, position) -> int:
    """Resolve a victim rule: a node id, ``nearest`` or ``busiest-relay`` (within comm range)."""
    topo = scenario.topology
    if isinstance(rule, int):
        return rule
    cands = [n for n in topo.ids if n != topo.gateway]
    dist = {n: math.dist(topo.positions[n], position) for n in cands}
    if rule == "nearest":
        return min(cands, key=lambda n: (dist[n], n))
    if rule == "busiest-relay":
        paths = topo_paths(scenario)
        near = [n for n in cands if dist[n] <= topo.comm_range] or [min(cands, key=lambda n: (dist[n], n))]
        return max(near, key=lambda n: (relay_load(paths, n), -dist[n], -n))
    raise ValidationError(f"unknown victim rule {rule!r}")


def topo_paths(scenario: Scenario):
    from .mac_sim.topology import all_paths

    return all_paths(scenario.topology)


def with_attacker(scenario: Scenario, position=None, victim=None, **changes) -> Scenario:
    out = scenario.copy()
    if not out.attackers:
        raise ValidationError("scenario has no [[attacker]] section")
    a = out.attackers[0]
    if position is not None:
        a.position = tuple(map(float, position))
    if victim is not None:
        a.targets = [victim]
    for k, v in changes.items():
        setattr(a, k, v)
    return out


def set_levels(scenario: Scenario, level: int, nodes=None) -> Scenario:
    out = scenario.copy()
    for n in (nodes if nodes is not None else list(out.nodes)):
        out.nodes[n] = dataclasses.replace(out.nodes[n], security_level=int(level))
    return out


def _write_trace(manifest: Manifest, trace, sub: str, enabled: bool):
    if not enabled:
        return
    for p in trace.write(manifest.out_dir / sub):
        manifest.add(p)


# -- per-packet cost ----------------------------------------------------------

def _victim_setup(scenario: Scenario):
    sec = scenario.section("lifetime")
    if not scenario.attackers:
        raise ValidationError("scenario has no [[attacker]] section")
    victim = int(sec.get("victim", scenario.attackers[0].targets[0]))
    return victim, sec


def measure_frame_cost(scenario: Scenario, level: int, payload_len: int, frames: int = 10) -> dict:
    """Drive ``frames`` bogus frames into the victim and read timings and charge off the trace."""
    victim, _ = _victim_setup(scenario)
    period = scenario.nodes[victim].duty.T if scenario.nodes[victim].duty else 0.1
    sim_end = frames * period
    att = set_levels(with_attacker(scenario, level=int(level), payload_len=int(payload_len), rendezvous=True,
                                   rate_model="constant", rate=1.0 / period), level, [victim])
    base = att.copy(attackers=[])
    tr = run(att, 1, sim_end=sim_end)
    tb = run(base, 1, sim_end=sim_end)
    starts = {r.tx_id: r.time_s for r in tr.records if r.event == "tx_start" and r.node >= 1000}
    rx = [(r.time_s - starts[r.tx_id]) for r in tr.records if r.event == "rx_frame" and r.node == victim]
    dec0 = {r.tx_id: r.time_s for r in tr.records if r.event == "decrypt_start" and r.node == victim}
    dec = [r.time_s - dec0[r.tx_id] for r in tr.records if r.event == "decrypt_end" and r.node == victim]
    n = len(dec)
    extra_j = (tr.summary[victim]["energy_J"] - tb.summary[victim]["energy_J"]) / n
    return {"t_rx": sum(rx) / len(rx), "t_dec": sum(dec) / n, "frames": n, "energy_per_frame_J": extra_j}


def exp_per_packet_cost(scenario: Scenario, seeds, m: Manifest, traces: bool):
    sec = scenario.section("per_packet_cost")
    payloads = [int(p) for p in sec.get("payloads", range(10, 101, 10))]
    levels = [int(v) for v in sec.get("levels", range(1, 8))]
    victim, _ = _victim_setup(scenario)
    profile = scenario.nodes[victim].profile
    rows, table = [], {}
    for level in levels:
        lv = as_level(level)
        for L in payloads:
            meas = measure_frame_cost(scenario, level, L)
            timing = message_timing(L, scenario.data_rate, lv, scenario.cost_model)
            share = cpu_share(dataclasses.replace(timing, t_rx=meas["t_rx"], t_dec=meas["t_dec"]), profile)
            table[(level, L)] = dict(meas, cpu_share=share)
            rows.append((L, level, lv.suite, lv.mic_len * 8, aes_blocks(lv, L), meas["t_rx"], meas["t_dec"],
                         meas["energy_per_frame_J"], share))
    p = write_csv(m.out_dir / "per_packet_cost.csv",
                  ("payload_len", "level", "suite", "mic_bits", "aes_blocks", "t_rx_s", "t_dec_s",
                   "energy_per_frame_J", "cpu_share"), rows)
    m.add(p)
    m.data["table"] = table
    key = (6, 60) if (6, 60) in table else next(iter(table))
    m.headline = {"cpu_share_ccm64_60B": table[key]["cpu_share"]}
    m.lines.append(f"CPU share of receive energy, level {key[0]} at {key[1]} bytes: {table[key]['cpu_share']:.1%}")
    for level in levels:
        if (level, 60) in table:
            m.lines.append(f"  level {level} ({as_level(level).label}): t_dec {table[(level, 60)]['t_dec'] * 1e3:.2f} ms")


# -- lifetime -----------------------------------------------------------------

def exp_lifetime(scenario: Scenario, seeds, m: Manifest, traces: bool):
    victim, sec = _victim_setup(scenario)
    levels = [int(v) for v in sec.get("levels", [4, 2, 6])]
    payload = int(sec.get("payload_len", scenario.attackers[0].payload_len))
    rate = float(sec.get("attack_rate", scenario.attackers[0].mean_rate))
    sleep_cost = bool(sec.get("sleep_cost", True))
    radio_dec = bool(sec.get("radio_during_decrypt", False))
    cfg = scenario.nodes[victim]
    duty, profile = cfg.duty or DutyCycle(), cfg.profile
    rows, results = [], {}
    for seed in seeds:
        t0 = time.perf_counter()
        base = run(scenario.copy(attackers=[]), seed, fast_forward=True, stop_nodes=[victim], record_energy=traces)
        L0 = base.summary[victim]["lifetime_s"]
        _write_trace(m, base, f"seed{seed}/baseline", traces)
        for level in levels:
            lv = as_level(level)
            sc = set_levels(with_attacker(scenario, level=level, payload_len=payload), level, [victim])
            tr = run(sc, seed, fast_forward=True, stop_nodes=[victim], record_energy=traces)
            _write_trace(m, tr, f"seed{seed}/level{level}", traces)
            L = tr.summary[victim]["lifetime_s"]
            timing = message_timing(payload, scenario.data_rate, lv, scenario.cost_model)
            n_p = messages_per_active_period(duty, timing, rate)
            ratio_an = lifetime_ratio(duty, timing, n_p, profile, sleep_cost=sleep_cost,
                                      radio_during_decrypt=radio_dec)
            ratio_lit = lifetime_ratio(duty, timing, n_p, profile)
            e_p = cycle_energy(duty, timing, n_p, profile, radio_during_decrypt=radio_dec).e_p
            battery = Battery(cfg.battery_ah, None, cfg.battery_threshold_ah, profile.voltage)
            m_an = messages_to_depletion(battery, e_p) * n_p
            m_sim = tr.count(victim, "decrypt_end")
            drained_j = tr.summary[victim]["energy_J"]
            ratio_sim = L / L0 if L and L0 else None
            results[(seed, level)] = dict(L=L, L0=L0, ratio_sim=ratio_sim, ratio_analytic=ratio_an,
                                          ratio_literal=ratio_lit, m_analytic=m_an, m_sim=m_sim, e_p=e_p,
                                          drained_J=drained_j, t_dec=timing.t_dec, t_rx=timing.t_rx)
            rows.append((seed, level, lv.suite, L0, L, ratio_sim, ratio_an, ratio_lit, timing.t_rx, timing.t_dec,
                         e_p, m_an, m_sim, drained_j))
        results[(seed, "wall_s")] = time.perf_counter() - t0
    m.add(write_csv(m.out_dir / "lifetime.csv",
                    ("seed", "level", "suite", "baseline_lifetime_s", "lifetime_s", "ratio_sim", "ratio_analytic",
                     "ratio_literal", "t_rx_s", "t_dec_s", "cycle_energy_J", "m_analytic", "m_sim",
                     "drained_J"), rows))
    m.data["results"] = results
    seed = seeds[0]
    m.headline = {f"ratio_level{lv}": results[(seed, lv)]["ratio_sim"] for lv in levels}
    for lv in levels:
        r = results[(seed, lv)]
        m.lines.append(f"level {lv} ({as_level(lv).suite}): L/L0 simulated {r['ratio_sim']:.2%}, "
                       f"analytic {r['ratio_analytic']:.2%}, depletion after {r['m_sim']} frames")


# -- DoS network --------------------------------------------------------------

def _dos_window(scenario: Scenario, sec: dict):
    start = min((a.start for a in scenario.attackers), default=0.0)
    lo = start + float(sec.get("warmup", 10.0))
    return lo, scenario.sim_end


def exp_dos_network(scenario: Scenario, seeds, m: Manifest, traces: bool):
    sec = scenario.section("dos_network")
    pos = scenario.attackers[0].position
    victim = pick_victim(scenario, sec.get("victim", "busiest-relay"), pos)
    sc = with_attacker(scenario, victim=victim)
    lo, hi = _dos_window(sc, sec)
    window = float(sec.get("window", 10.0))
    var_rows, series_rows, per_seed = [], [], {}
    for seed in seeds:
        base = run(sc.copy(attackers=[]), seed, record_energy=True)
        att = run(sc, seed, record_energy=True)
        _write_trace(m, base, f"seed{seed}/baseline", traces)
        _write_trace(m, att, f"seed{seed}/attack", traces)
        b, a = mean_throughput(base, lo, hi), mean_throughput(att, lo, hi)
        dS = throughput_variation(b, a).delta
        per_seed[seed] = {"baseline": b, "attack": a, "dS": dS, "paths": base.paths}
        for n in sorted(b):
            db, da = drain_rate(base, n, lo, hi), drain_rate(att, n, lo, hi)
            var_rows.append((seed, n, b[n], a.get(n, 0.0), dS.get(n), db, da,
                             100.0 * (da - db) / db if db > 0 else None))
        for name, tr in (("baseline", base), ("attack", att)):
            for n, s in throughput_series(tr, window, end=sc.sim_end).items():
                for k, v in enumerate(s):
                    series_rows.append((seed, name, k * window, n, v))
    m.add(write_csv(m.out_dir / "variation.csv", ("seed", "node", "S_baseline_pps", "S_attack_pps", "dS_pct",
                                                   "drain_baseline_W", "drain_attack_W", "dDrain_pct"), var_rows))
    m.add(write_csv(m.out_dir / "throughput_series.csv", ("seed", "run", "window_start_s", "node", "pps"),
                    series_rows))
    m.data.update(per_seed=per_seed, victim=victim, window=(lo, hi))
    dS = per_seed[seeds[0]]["dS"]
    relayed = [n for n in subtree(per_seed[seeds[0]]["paths"], victim) if n != victim]
    mean_rel = sum(dS[n] for n in relayed) / len(relayed) if relayed else float("nan")
    m.headline = {"victim": victim, "relayed_sources": relayed, "mean_dS_relayed_pct": mean_rel}
    m.lines.append(f"victim node {victim}; sources relayed by it: {relayed or 'none'}")
    m.lines.append(f"mean throughput change of relayed sources: {mean_rel:+.1f}%")
    worst = sorted(dS.items(), key=lambda kv: kv[1])[:5]
    m.lines.append("largest drops: " + ", ".join(f"{n}:{d:+.1f}%" for n, d in worst))


# -- analytic sweep -----------------------------------------------------------

def exp_analytic_sweep(scenario: Scenario, seeds, m: Manifest, traces: bool):
    sec = scenario.section("analytic")
    grid = [float(g) for g in sec.get("p_att_grid", [round(0.02 * i, 2) for i in range(11)])]
    radius = float(sec.get("radius", scenario.topology.comm_range))
    params = {k: sec[k] for k in ("gen_rate", "packet_slots", "mac_be") if k in sec}
    cases = [int(c) for c in sec.get("cases", [1])]
    rows, sol = [], {}
    for case in cases:
        where = sec.get(f"attacker_case{case}", scenario.attackers[0].position if scenario.attackers else None)
        spec = chain_from_geometry(scenario.topology.positions, radius, tuple(where),
                                   gateway=scenario.topology.gateway, **params)
        base = None
        for pa in grid:
            fp = solve_fixed_point(spec.with_attack_rate(pa))
            if base is None:
                base = solve_fixed_point(spec.with_attack_rate(0.0)).throughput()
            sol[(case, pa)] = fp
            res = model_residual(spec.with_attack_rate(pa), fp)
            for n, s in sorted(fp.nodes.items()):
                d = 100.0 * (s.S - base[n]) / base[n] if base[n] > 0 else 0.0
                rows.append((case, pa, n, int(n in spec.interfered), s.tau, s.alpha, s.rho, s.p, s.p_s, s.S, d,
                             fp.iterations, res))
        m.data.setdefault("specs", {})[case] = spec
    m.add(write_csv(m.out_dir / "analytic.csv", ("case", "p_att", "node", "interfered", "tau", "alpha", "rho", "p",
                                                  "p_s", "S", "dS_pct", "iterations", "residual"), rows))
    m.data["solutions"] = sol
    worst = max(fp.residual for fp in sol.values())
    m.headline = {"max_residual": worst, "points": len(sol)}
    m.lines.append(f"{len(sol)} fixed points solved, worst residual {worst:.2e}")
    for case in cases:
        hi = sol[(case, grid[-1])].throughput()
        lo = sol[(case, grid[0])].throughput()
        m.lines.append(f"case {case}: S at p_att={grid[0]:g} -> {grid[-1]:g}: "
                       + ", ".join(f"{n}:{lo[n]:.4f}->{hi[n]:.4f}" for n in sorted(hi)))


# -- localization -------------------------------------------------------------

def exp_localization(scenario: Scenario, seeds, m: Manifest, traces: bool):
    sec = scenario.section("localization")
    dsec = scenario.section("dos_network")
    placements = [tuple(map(float, p)) for p in sec.get("placements", [scenario.attackers[0].position])]
    kw = dict(delta=float(sec.get("delta", 5.0)), delta_prime=float(sec.get("delta_prime", 10.0)),
              radius=float(sec.get("radius", scenario.topology.interference_range)),
              min_group_size=int(sec.get("min_group_size", 2)))
    lo, hi = _dos_window(scenario, dsec)
    rows, errors, timings = [], {}, {}
    for seed in seeds:
        base = run(scenario.copy(attackers=[]), seed, record_energy=False)
        b = mean_throughput(base, lo, hi)
        _write_trace(m, base, f"seed{seed}/baseline", traces)
        for i, where in enumerate(placements):
            t0 = time.perf_counter()
            victim = pick_victim(scenario, dsec.get("victim", "busiest-relay"), where)
            sc = with_attacker(scenario, position=where, victim=victim)
            att = run(sc, seed, record_energy=False)
            _write_trace(m, att, f"seed{seed}/placement{i}", traces)
            dS = throughput_variation(b, mean_throughput(att, lo, hi)).delta
            res = localize(base.paths, dS, scenario.topology.positions, **kw)
            err = res.error(where)
            errors[(seed, i)] = err
            timings[(seed, i)] = time.perf_counter() - t0
            est = res.best or (None, None)
            rows.append((seed, i, where[0], where[1], victim, est[0], est[1], err, len(res.suspects),
                         " ".join(map(str, sorted(res.suspects))),
                         ";".join(" ".join(map(str, g)) for g in res.groups)))
    m.add(write_csv(m.out_dir / "localization.csv",
                    ("seed", "placement", "attacker_x", "attacker_y", "victim", "estimate_x", "estimate_y",
                     "error_m", "n_suspects", "suspects", "groups"), rows))
    found = [e for e in errors.values() if e is not None]
    mean_err = sum(found) / len(found) if found else None
    m.data.update(errors=errors, timings=timings)
    m.headline = {"mean_error_m": mean_err, "localized": len(found), "runs": len(errors)}
    m.lines.append(f"localized {len(found)}/{len(errors)} placements, mean error "
                   + (f"{mean_err:.1f} m" if mean_err is not None else "n/a"))


# -- countermeasure A/B -------------------------------------------------------

def exp_countermeasure_ab(scenario: Scenario, seeds, m: Manifest, traces: bool):
    sec = scenario.section("countermeasure_ab")
    dsec = scenario.section("dos_network")
    level = int(sec.get("security_level", 7))
    start = float(sec.get("attack_start", scenario.attackers[0].start))
    settle = float(sec.get("settle", 10.0))
    window = float(sec.get("window", 10.0))
    pos = scenario.attackers[0].position
    victim = pick_victim(scenario, sec.get("victim", dsec.get("victim", "busiest-relay")), pos)
    sc = set_levels(with_attacker(scenario, victim=victim, level=level, start=start), level)
    variants = {
        "baseline": sc.copy(attackers=[]),
        "attack": sc,
        "blacklist": sc.copy(countermeasures=dataclasses.replace(sc.countermeasures, blacklist=True)),
    }
    rows, series_rows, out = [], [], {}
    for seed in seeds:
        traces_ = {name: run(v, seed) for name, v in variants.items()}
        for name, tr in traces_.items():
            _write_trace(m, tr, f"seed{seed}/{name}", traces)
        adds = [r.time_s for r in traces_["blacklist"].records if r.event == "blacklist_add" and r.node == victim]
        t_bl = adds[0] if adds else None
        lo = (t_bl if t_bl is not None else start) + settle
        hi = sc.sim_end
        paths = traces_["baseline"].paths
        srcs = subtree(paths, victim)
        res = {}
        for name, tr in traces_.items():
            thr = mean_throughput(tr, lo, hi, nodes=srcs)
            res[name] = {"throughput": sum(thr.values()), "drain_W": drain_rate(tr, victim, lo, hi)}
            for k, v in enumerate(_summed_series(tr, window, srcs, sc.sim_end)):
                series_rows.append((seed, name, k * window, v, drain_rate(tr, victim, k * window,
                                                                           (k + 1) * window)))
            rows.append((seed, name, victim, lo, hi, res[name]["throughput"], res[name]["drain_W"]))
        res["blacklist_add_s"] = t_bl
        out[seed] = res
    m.add(write_csv(m.out_dir / "countermeasure_ab.csv",
                    ("seed", "variant", "victim", "window_start_s", "window_end_s", "victim_throughput_pps",
                     "victim_drain_W"), rows))
    m.add(write_csv(m.out_dir / "countermeasure_series.csv",
                    ("seed", "variant", "window_start_s", "victim_throughput_pps", "victim_drain_W"), series_rows))
    r = out[seeds[0]]
    recovery = r["blacklist"]["throughput"] / r["baseline"]["throughput"] if r["baseline"]["throughput"] else None
    m.data.update(results=out, victim=victim, sources=srcs)
    m.headline = {"victim": victim, "blacklist_add_s": r["blacklist_add_s"], "recovery": recovery,
                  "drain_ratio": r["blacklist"]["drain_W"] / r["baseline"]["drain_W"]}
    when = f"{r['blacklist_add_s']:.2f} s" if r["blacklist_add_s"] is not None else "never"
    m.lines.append(f"victim {victim} (relays {len(srcs) - 1} sources); attacker blacklisted at {when}")
    m.lines.append(f"throughput through victim: baseline {r['baseline']['throughput']:.3f}, attack "
                   f"{r['attack']['throughput']:.3f}, blacklist {r['blacklist']['throughput']:.3f} pkt/s "
                   f"(recovery {recovery:.1%})")
    m.lines.append(f"victim drain: baseline {r['baseline']['drain_W'] * 1e3:.3f} mW, attack "
                   f"{r['attack']['drain_W'] * 1e3:.3f} mW, blacklist {r['blacklist']['drain_W'] * 1e3:.3f} mW")


def _summed_series(trace, window, nodes, end):
    series = throughput_series(trace, window, end=end, nodes=nodes)
    if not series:
        return []
    return [float(sum(s[k] for s in series.values())) for k in range(len(next(iter(series.values()))))]


# -- post-depletion demos -----------------------------------------------------

def _replay_counts(trace, victim: int) -> dict:
    replays = {r.tx_id for r in trace.records if r.event == "tx_start" and r.detail == "replay"}
    at_victim = [r for r in trace.records if r.node == victim and r.tx_id in replays]
    return {
        "replays_sent": len(replays),
        "replays_accepted": sum(r.event == "rx_ok" for r in at_victim),
        "replays_rejected": sum(r.event == "rx_replay_reject" for r in at_victim),
        "integrity_fail": sum(r.event == "rx_integrity_fail" for r in at_victim),
        "held": sum(r.event == "rx_challenge_hold" for r in at_victim),
        "reboots": trace.count(victim, "reboot"),
    }


def exp_replay_demo(scenario: Scenario, seeds, m: Manifest, traces: bool):
    victim = int(scenario.section("replay_demo").get("victim", scenario.attackers[0].targets[0]))
    cm = scenario.countermeasures
    variants = {
        "none": scenario.copy(countermeasures=dataclasses.replace(cm, challenge_response=False,
                                                                  rekey_on_reboot=False)),
        "challenge_rekey": scenario.copy(countermeasures=dataclasses.replace(cm, challenge_response=True,
                                                                             rekey_on_reboot=True)),
    }
    rows, out = [], {}
    for seed in seeds:
        for name, sc in variants.items():
            tr = run(sc, seed)
            _write_trace(m, tr, f"seed{seed}/{name}", traces)
            c = _replay_counts(tr, victim)
            out[(seed, name)] = c
            rows.append((seed, name, victim, c["reboots"], c["replays_sent"], c["replays_accepted"],
                         c["replays_rejected"], c["integrity_fail"], c["held"]))
    m.add(write_csv(m.out_dir / "replay.csv", ("seed", "variant", "victim", "reboots", "replays_sent",
                                               "replays_accepted", "replays_rejected", "integrity_fail",
                                               "held_for_challenge"), rows))
    m.data["results"] = out
    s = seeds[0]
    m.headline = {"accepted_without": out[(s, "none")]["replays_accepted"],
                  "accepted_with": out[(s, "challenge_rekey")]["replays_accepted"]}
    m.lines.append(f"replayed frames accepted without countermeasures: {out[(s, 'none')]['replays_accepted']} "
                   f"of {out[(s, 'none')]['replays_sent']}")
    m.lines.append(f"replayed frames accepted with challenge-response + rekey: "
                   f"{out[(s, 'challenge_rekey')]['replays_accepted']} of {out[(s, 'challenge_rekey')]['replays_sent']}")


def exp_nonce_reuse_demo(scenario: Scenario, seeds, m: Manifest, traces: bool):
    sec = scenario.section("nonce_reuse_demo")
    victim = int(sec.get("victim", scenario.attackers[0].targets[0]))
    level = int(sec.get("level", 4))
    sc = set_levels(scenario, level, [victim])
    sc = sc.copy(countermeasures=dataclasses.replace(sc.countermeasures, challenge_response=False,
                                                     rekey_on_reboot=False, persist_counters=False))
    rows, pairs = [], []
    for seed in seeds:
        sim = Simulation(sc, seed)
        tr = sim.run()
        _write_trace(m, tr, f"seed{seed}", traces)
        reboot = next((r.time_s for r in tr.records if r.event == "reboot" and r.node == victim), None)
        if reboot is None:
            raise ValidationError(f"victim {victim} never rebooted within sim_end")
        caps = [c for a in sim.attackers for c in a.state.captures if address_node(c.src) == victim]
        before = {(c.dst, c.frame_counter): c for c in caps if c.time < reboot}
        after = [c for c in caps if c.time > reboot and (c.dst, c.frame_counter) in before]
        for c2 in after:
            c1 = before[(c2.dst, c2.frame_counter)]
            f1, f2 = c1.frame(), c2.frame()
            if len(f1.payload) != len(f2.payload):
                continue
            peer = address_node(c1.dst)
            key = link_key(victim, peer)
            p1 = unsecure_frame(key, AclEntry(node_address(victim), key), f1).payload
            p2 = unsecure_frame(key, AclEntry(node_address(victim), key), f2).payload
            rec = xor_recover(f1.payload, f2.payload)
            expect = bytes(a ^ b for a, b in zip(p1, p2))
            pairs.append(rec == expect)
            rows.append((seed, c1.frame_counter, peer, c1.time, c2.time, f1.payload.hex(), f2.payload.hex(),
                         rec.hex(), expect.hex(), int(rec == expect)))
    m.add(write_csv(m.out_dir / "nonce_reuse.csv", ("seed", "frame_counter", "receiver", "t_before_s", "t_after_s",
                                                    "c1", "c2", "c1_xor_c2", "p1_xor_p2", "exact"), rows))
    m.data["pairs"] = pairs
    m.data["rows"] = rows
    exact = bool(pairs) and all(pairs)
    m.headline = {"pairs": len(pairs), "all_exact": exact}
    m.lines.append(f"{len(pairs)} ciphertext pairs share a keystream after the reboot; "
                   f"c1 xor c2 == p1 xor p2 for all: {exact}")
    if rows:
        m.lines.append(f"first pair (counter {rows[0][1]}): {rows[0][7][:32]}...")


EXPERIMENTS: dict[str, Callable] = {
    "per_packet_cost": exp_per_packet_cost,
    "lifetime": exp_lifetime,
    "dos_network": exp_dos_network,
    "analytic_sweep": exp_analytic_sweep,
    "localization": exp_localization,
    "countermeasure_ab": exp_countermeasure_ab,
    "replay_demo": exp_replay_demo,
    "nonce_reuse_demo": exp_nonce_reuse_demo,
}


def run_experiment(kind: str, scenario: Scenario, seeds=None, out_dir=".", *, traces: bool = True) -> Manifest:
    """Run one experiment kind and write its files, ``manifest.json`` and ``summary.txt``."""
    if kind not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    if kind != "analytic_sweep" and not scenario.attackers:
        raise ValidationError(f"{kind} needs an [[attacker]] section in scenario {scenario.name!r}")
    seeds = [int(s) for s in (seeds if seeds is not None else scenario.seeds)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = Manifest(kind, scenario.name, seeds, out)
    EXPERIMENTS[kind](scenario, seeds, m, traces)
    m.write()
    return m


# -- compare ------------------------------------------------------------------

def _find_summary(path) -> Path:
    p = Path(path)
    if p.is_file():
        return p
    direct = p / "summary.csv"
    if direct.exists():
        return direct
    found = sorted(p.rglob("summary.csv"))
    if len(found) != 1:
        raise FileNotFoundError(f"{path}: expected exactly one summary.csv, found {len(found)}")
    return found[0]


def compare_runs(dir_a, dir_b, out_dir=None) -> list[tuple]:
    """Per-node throughput and drain-rate change of run B relative to run A."""
    a, b = load_summary_csv(_find_summary(dir_a)), load_summary_csv(_find_summary(dir_b))
    if set(a) != set(b):
        raise MismatchedScenarios(f"node sets differ: {sorted(set(a) ^ set(b))}")
    rows = []
    for n in sorted(a):
        sa, sb = a[n].get("throughput_pps") or 0.0, b[n].get("throughput_pps") or 0.0
        ca, cb = a[n].get("mean_current_mA"), b[n].get("mean_current_mA")
        dS = 100.0 * (sb - sa) / sa if sa else (0.0 if sb == sa else None)
        dE = 100.0 * (cb - ca) / ca if ca else (0.0 if ca is not None and cb == ca else None)
        rows.append((n, sa, sb, dS, ca, cb, dE))
    if out_dir is not None:
        write_csv(Path(out_dir) / "compare.csv", ("node", "S_a_pps", "S_b_pps", "dS_pct", "current_a_mA",
                                                  "current_b_mA", "dDrain_pct"), rows)
    return rows
