#!/usr/bin/env python3
"""Convert a MATPOWER radial distribution case (kW loads, ohm impedances) into
the byzgrid case format.

Impedances are divided by Z_base = V_base^2 / S_base with the case's own
baseMVA (1 MVA for the distribution cases), so r and x are per unit on 1000 kVA.
Voltage limits VMIN/VMAX are squared. The substation voltage is fixed at its
set point. Line flows are bounded by +/-5000 kW / kVAr.

Prosumer roles and trading pairs are not part of MATPOWER. They come from a
role table (``--roles``: lines ``bus role p_desired``, MATPOWER bus numbers,
role in buyer/seller) or, without a table, from a deterministic rule over the
loaded buses in breadth-first order: every 4th loaded bus starting at the
1st is a buyer, every 4th starting at the 3rd a seller with a generation of
1.2x its load; each buyer trades with the two sellers closest in index.

Usage: matpower_to_case.py case15da.m [--roles roles.txt] > ieee15.case
"""
import argparse
import re
import sys
from collections import deque

FLOW_LIMIT = 5000.0


def matrix(text, name):
    m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % name, text, re.S)
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(t) for t in line.split()])
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("mfile")
    ap.add_argument("--roles")
    args = ap.parse_args()
    text = open(args.mfile).read()
    base_mva = float(re.search(r"mpc\.baseMVA\s*=\s*([\d.]+)", text).group(1))
    bus = matrix(text, "bus")
    branch = matrix(text, "branch")
    vbase_kv = bus[0][9]
    zbase = (vbase_kv * 1e3) ** 2 / (base_mva * 1e6)

    ids = [int(b[0]) for b in bus]
    root = next(int(b[0]) for b in bus if int(b[1]) == 3)
    adj = {i: [] for i in ids}
    for br in branch:
        f, t = int(br[0]), int(br[1])
        adj[f].append(t)
        adj[t].append(f)
    order, seen, dq = [], {root}, deque([root])
    while dq:
        u = dq.popleft()
        order.append(u)
        for w in sorted(adj[u]):
            if w not in seen:
                seen.add(w)
                dq.append(w)
    new = {old: k for k, old in enumerate(order)}
    by_id = {int(b[0]): b for b in bus}

    roles = {}
    if args.roles:
        for line in open(args.roles):
            line = line.split("#")[0].split()
            if line and line[1] in ("buyer", "seller"):
                roles[new[int(line[0])]] = (line[1], float(line[2]))
    else:
        loaded = [new[o] for o in order if by_id[o][2] > 0]
        for k, b in enumerate(loaded):
            load = by_id[order[b]][2]
            if k % 4 == 0:
                roles[b] = ("buyer", load)
            elif k % 4 == 2:
                roles[b] = ("seller", -1.2 * load)

    print("# converted from %s by tools/matpower_to_case.py" % args.mfile.split("/")[-1])
    print("# bus ids are breadth-first positions; matpower bus = %s" %
          " ".join("%d:%d" % (new[o], o) for o in order))
    print("[bus]")
    print("# id v_min v_max p_min p_max q_min q_max p_desired")
    for o in order:
        b = by_id[o]
        i = new[o]
        pd, qd = b[2], b[3]
        vmin, vmax = b[12] ** 2, b[11] ** 2
        if o == root:
            print(f"{i} 1 1 {-FLOW_LIMIT:g} {FLOW_LIMIT:g} {-FLOW_LIMIT:g} {FLOW_LIMIT:g} 0")
        elif i in roles and roles[i][0] == "buyer":
            want = roles[i][1]
            print(f"{i} {vmin:.4f} {vmax:.4f} 0 {1.5 * want:g} {qd:g} {qd:g} {want:g}")
        elif i in roles and roles[i][0] == "seller":
            want = roles[i][1]
            print(f"{i} {vmin:.4f} {vmax:.4f} {1.5 * want:g} 0 0 0 {want:g}")
        else:
            print(f"{i} {vmin:.4f} {vmax:.4f} {pd:g} {pd:g} {qd:g} {qd:g} 0")
    print()
    print("[line]")
    print("# from to r x P_min P_max Q_min Q_max")
    for br in branch:
        f, t = new[int(br[0])], new[int(br[1])]
        if f > t:
            f, t = t, f
        print(f"{f} {t} {br[2] / zbase:.8g} {br[3] / zbase:.8g} "
              f"{-FLOW_LIMIT:g} {FLOW_LIMIT:g} {-FLOW_LIMIT:g} {FLOW_LIMIT:g}")
    print()
    print("[trade]")
    print("# buyer seller")
    buyers = sorted(i for i, r in roles.items() if r[0] == "buyer")
    sellers = sorted(i for i, r in roles.items() if r[0] == "seller")
    pairs = set()
    if args.roles:
        for line in open(args.roles):
            parts = line.split("#")[0].split()
            if len(parts) == 3 and parts[1] == "pair":
                pairs.add((new[int(parts[0])], new[int(parts[2])]))
    else:
        for b in buyers:
            near = sorted(sellers, key=lambda s: (abs(s - b), s))[:2]
            for s in near:
                pairs.add((b, s))
    for b, s in sorted(pairs):
        print(b, s)


if __name__ == "__main__":
    sys.exit(main())
