"""Round a fractional flow and split it into agent routes.

Run with ``python3 demos/decompose_routes.py [out.dot]``.  The first network
has three unit routes where a careless split gives energies {20, 24, 16}
instead of the balanced {20, 20, 20}; the second is a fractional flow that
must be rounded first.
"""

import sys

from ctas.flows import FlowNetwork, cover_flow, round_flow, to_dot

S, U = "start", "terminal"


def three_routes() -> FlowNetwork:
    edges = [(S, "m1", 6), ("m1", "m3", 6), (S, "m2", 4), ("m2", "m3", 4), ("m3", "m4", 4), ("m4", U, 4),
             ("m3", "m5", 6), ("m5", U, 6), (S, "m6", 10), ("m6", U, 10)]
    return FlowNetwork({(a, b): 1.0 for a, b, _ in edges}, {(a, b): float(c) for a, b, c in edges}, species="v1")


def fractional() -> FlowNetwork:
    flows = {(S, "m1"): 1.4, (S, "m2"): 0.6, ("m1", "m2"): 0.5, ("m1", U): 0.9, ("m2", U): 1.1}
    costs = {(S, "m1"): 2.0, (S, "m2"): 5.0, ("m1", "m2"): 1.0, ("m1", U): 3.0, ("m2", U): 2.0}
    return FlowNetwork(flows, costs, species="v2")


def main():
    dot = []
    for net in (three_routes(), fractional()):
        rounded = round_flow(net)
        cover = cover_flow(rounded)
        print(f"species {net.species}: flow {net.total_flow():g} -> {rounded.total_flow():g}, "
              f"energy {net.energy():.2f} -> {rounded.energy():.2f}")
        for r in cover.routes:
            print(f"  agent {r.individual}: {' -> '.join(r.nodes)}  (energy {r.energy:g})")
        print(f"  largest route energy {cover.max_energy:g} [{cover.status}]")
        dot.append(to_dot(rounded, cover.routes, name=net.species))
    if len(sys.argv) > 1:
        with open(sys.argv[1], "w") as fh:
            fh.write("".join(dot))


if __name__ == "__main__":
    main()
