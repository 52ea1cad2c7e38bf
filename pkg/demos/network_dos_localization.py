"""A ghost attacker parked next to a busy relay in a 38-node field, and finding it again
from nothing but per-node throughput."""

from ghostsim.experiments import pick_victim, subtree, with_attacker
from ghostsim.localization import localize, throughput_variation
from ghostsim.mac_sim import mean_throughput, run
from ghostsim.scenario import parse_scenario

sc = parse_scenario("sec6_dos38")
where = sc.attackers[0].position
victim = pick_victim(sc, "busiest-relay", where)
attacked = with_attacker(sc, victim=victim)
print(f"{len(sc.nodes) - 1} sensors, gateway at {sc.topology.positions[sc.topology.gateway]}, "
      f"attacker at {where} aiming at relay {victim}")

base = run(sc.copy(attackers=[]), 1, record_energy=False)   # ~10 s each
att = run(attacked, 1, record_energy=False)

lo, hi = attacked.attackers[0].start + 10.0, sc.sim_end      # skip the first 10 s of the attack
S0, S1 = mean_throughput(base, lo, hi), mean_throughput(att, lo, hi)
dS = throughput_variation(S0, S1).delta

relayed = [n for n in subtree(base.paths, victim) if n != victim]
print(f"relay {victim} forwards for {relayed}")
for n in sorted(dS, key=dS.get)[:6]:
    print(f"  node {n:>2}: {S0[n]:.3f} -> {S1[n]:.3f} pkt/s ({dS[n]:+.1f}%)")

res = localize(base.paths, dS, sc.topology.positions, radius=sc.topology.interference_range)
print(f"\nsuspects {sorted(res.suspects)}")
for g, est in zip(res.groups, res.estimates):
    print(f"  group {g} -> ({est[0]:.1f}, {est[1]:.1f})")
if res.best:
    print(f"estimate is {res.error(where):.1f} m from the attacker")
