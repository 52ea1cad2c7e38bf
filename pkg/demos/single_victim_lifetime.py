"""How much battery life one ghost attacker takes from a single duty-cycled node."""

import dataclasses

from ghostsim.energy import (DutyCycle, PowerProfile, cpu_share, cycle_energy, lifetime_ratio, message_timing,
                             messages_per_active_period)
from ghostsim.frame_security import SecurityLevel
from ghostsim.mac_sim import run
from ghostsim.scenario import parse_scenario

sc = parse_scenario("sec6_victim")
victim = sc.attackers[0].targets[0]
duty, prof = sc.nodes[victim].duty, sc.nodes[victim].profile
print(f"victim {victim}: awake {duty.tau * 1e3:.0f} ms every {duty.T * 1e3:.0f} ms, "
      f"{sc.nodes[victim].battery_ah} Ah")

# cost of one 60-byte bogus frame per suite
for level in (4, 2, 6):
    t = message_timing(60, sc.data_rate, level, sc.cost_model)
    print(f"  {SecurityLevel(level).label:<15} rx {t.t_rx * 1e3:5.2f} ms  decrypt {t.t_dec * 1e3:5.2f} ms  "
          f"cpu share {cpu_share(t, prof):.1%}")

# closed form: attacker at 10 frames/s lands one frame per active window
t = message_timing(60, sc.data_rate, 6, sc.cost_model)
n_p = messages_per_active_period(duty, t, 10.0)
idle = cycle_energy(duty, t, 0, prof).e_p
busy = cycle_energy(duty, t, n_p, prof, radio_during_decrypt=False).e_p
print(f"\nenergy per cycle: idle {idle * 1e6:.1f} uJ, attacked {busy * 1e6:.1f} uJ ({busy / idle:.1f}x)")

# same question asked of the event simulator, with sleep spans fast-forwarded
base = run(sc.copy(attackers=[]), 1, fast_forward=True, stop_nodes=[victim], record_energy=False)
L0 = base.summary[victim]["lifetime_s"]
print(f"no attack: {L0 / 86400:.0f} days")
for level in (4, 2, 6):
    ghost = dataclasses.replace(sc.attackers[0], level=level)
    attacked = sc.copy(attackers=[ghost]).with_node_overrides([victim], security_level=level)
    tr = run(attacked, 1, fast_forward=True, stop_nodes=[victim], record_energy=False)
    L = tr.summary[victim]["lifetime_s"]
    tm = message_timing(60, sc.data_rate, level, sc.cost_model)
    an = lifetime_ratio(duty, tm, n_p, prof, sleep_cost=True, radio_during_decrypt=False)
    print(f"  {SecurityLevel(level).label:<15} {L / 86400:6.1f} days  L/L0 sim {L / L0:.2%}  closed form {an:.2%}")
