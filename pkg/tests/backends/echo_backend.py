"""Scripted JSON-lines backend answering dispatch, act and traversability requests.

dispatch       echoes the NEXT line of the graph context
act            pure pursuit toward the waypoint carried in the observation
traversability halts when the target passage is seen obstructed

Fault flags: --sleep S (delay every reply), --die-after N (exit after N
replies), --stale (send a reply with a wrong id first), --garbage (reply
with a non-JSON line), --tcp PORT (serve one TCP client instead of stdio).
"""

import argparse
import json
import math
import socket
import sys
import time


def answer(msg: dict) -> dict:
    kind = msg.get("type")
    if kind == "dispatch":
        nxt = next(l for l in msg["graph_context"].splitlines() if l.startswith("NEXT "))
        words = nxt.split()
        if words[1] == "go_to_goal":
            ma = {"kind": "go_to_goal", "target_passage": None, "instruction_text": msg["instruction"]}
        else:
            ma = {"kind": "traverse_to_passage", "target_passage": words[2],
                  "instruction_text": f"walk through {words[2]}"}
        return {"macro_action": ma}
    if kind == "act":
        o = msg["observation"]
        x, y, h = o["pose"]["x"], o["pose"]["y"], o["pose"]["heading"]
        tgt = o["target"]
        if math.hypot(tgt["x"] - x, tgt["y"] - y) <= o["waypoint_tol"]:
            return {"action": "Stop"}
        wp = o["waypoint"]
        err = math.atan2(wp["y"] - y, wp["x"] - x) - h
        err = math.atan2(math.sin(err), math.cos(err))
        if abs(err) <= math.radians(22.5):
            return {"action": "Forward"}
        return {"action": "TurnLeft" if err > 0 else "TurnRight"}
    if kind == "traversability":
        pid = msg.get("target_passage")
        seen = [p for p in msg["observation"]["visible_passages"] if p["id"] == pid]
        blocked = bool(seen and seen[0]["obstructed"])
        return {"halt": blocked, "confidence": 0.9 if blocked else 0.1,
                "blocked_passage": pid if blocked else None}
    return {"error": f"unknown request type {kind!r}"}


def serve(rfile, wfile, args):
    sent = 0
    for line in rfile:
        if not line.strip():
            continue
        msg = json.loads(line)
        if args.sleep:
            time.sleep(args.sleep)
        if args.stale:
            wfile.write(json.dumps({"id": -1, "action": "Stop", "halt": True}) + "\n")
        if args.garbage:
            wfile.write("this is not json\n")
            wfile.flush()
            continue
        reply = answer(msg)
        reply["id"] = msg.get("id")
        wfile.write(json.dumps(reply) + "\n")
        wfile.flush()
        sent += 1
        if args.die_after is not None and sent >= args.die_after:
            return


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sleep", type=float, default=0.0)
    ap.add_argument("--die-after", type=int)
    ap.add_argument("--stale", action="store_true")
    ap.add_argument("--garbage", action="store_true")
    ap.add_argument("--tcp", type=int)
    args = ap.parse_args()
    if args.tcp is None:
        serve(sys.stdin, sys.stdout, args)
        return
    with socket.create_server(("127.0.0.1", args.tcp)) as srv:
        print(srv.getsockname()[1], flush=True)
        conn, _ = srv.accept()
        with conn:
            serve(conn.makefile("r"), conn.makefile("w"), args)


if __name__ == "__main__":
    main()
