#!/usr/bin/env python3
"""Writes the demo3 fixtures: scenario (on-time and late), dispatch list,
service config and the expected finished-goods export.

Run from anywhere; output goes next to this file. The finished-goods
export is derived here from the script alone and then kept frozen.
"""
import json
import math
from pathlib import Path

HERE = Path(__file__).resolve().parent
OUT = HERE / "demo3"

T0 = 1_362_556_800_000_000  # 2013-03-06T08:00:00Z
MIN = 60_000_000
RADIUS = 3.6
CYCLE = 500_000

DATA_POINTS = [
    ("DP1", "WC-IN", (10, 10)),
    ("DP2", "WC-CUT", (30, 10)),
    ("DP3", "WC-ASM", (50, 10)),
    ("DP4", "WC-PNT", (70, 10)),
    ("DP5", "WC-UPH", (70, 30)),
    ("DP6", "WC-PCK", (50, 30)),
    ("DP7", "WC-EXIT", (30, 30)),
]
DP_OF = {wc: dp for dp, wc, _ in DATA_POINTS}
XY = {dp: xy for dp, _, xy in DATA_POINTS}
BASE_PORT = 5084

ROUTES = {
    "R-1": ["WC-CUT", "WC-ASM", "WC-PNT", "WC-PCK"],
    "R-2": ["WC-CUT", "WC-ASM", "WC-UPH", "WC-PCK"],
}
# planned window of step k (1-based), minutes after T0
PLAN = {
    "R-1": lambda k: (15 * (k - 1) + 1, 15 * k - 1),
    "R-2": lambda k: (15 * (k - 1) + 6, 15 * k + 4),
}

# order code, kind, product code, route, ticket, start offset (min),
# product serial, product exit (min on time, min late)
ORDERS = [
    ("SO-1001", "customer", "P-77", "R-1", "T-1", 0, 1, 60, 60),
    ("SO-1002", "customer", "P-78", "R-2", "T-2", 5, 1, 65, 94),
    ("MTS-2001", "make_to_stock", "P-77", "R-1", "T-3", 1, 2, 61, 61),
]
KITTING = (10, -5)
PRODUCT_START = (40, 45)


def num(code):
    return int(code.split("-")[-1])


def op_xy(dp):
    x, y = XY[dp]
    return (x, 2) if y == 10 else (x, 38)


def ticket_script(tag, route, offset):
    wps = []
    for k, wc in enumerate(ROUTES[route], start=1):
        dp = DP_OF[wc]
        a = offset + 15 * (k - 1)
        wps.append({"tag": tag, "data_point": dp, "arrive_time_us": T0 + a * MIN, "depart_time_us": T0 + (a + 2) * MIN})
        x, y = op_xy(dp)
        wps.append({"tag": tag, "position": [x, y], "arrive_time_us": T0 + (a + 3) * MIN,
                    "depart_time_us": T0 + (a + 12) * MIN})
    return wps


def scenario(late):
    tags, script = [], []
    for code, kind, prod, route, ticket, offset, serial, exit_on, exit_late in ORDERS:
        tags.append({"tag_ref": ticket, "initial_xy": list(KITTING), "kind": "build_ticket", "order_kind": kind,
                     "order_id": num(code), "product_id": num(prod), "route_id": num(route),
                     "ticket_id": num(ticket)})
        script += ticket_script(ticket, route, offset)
    for code, kind, prod, route, ticket, offset, serial, exit_on, exit_late in ORDERS:
        ref = f"{prod}#{serial}"
        tags.append({"tag_ref": ref, "initial_xy": list(PRODUCT_START), "kind": "product", "order_kind": kind,
                     "order_id": num(code), "product_id": num(prod), "serial": serial})
        at = exit_late if late else exit_on
        script.append({"tag": ref, "data_point": "DP7", "arrive_time_us": T0 + at * MIN,
                       "depart_time_us": T0 + (at + 1) * MIN})
    dps = [{"data_point_id": dp, "work_center_id": wc, "antenna_xy": list(xy),
            "listen_endpoint": f"127.0.0.1:{BASE_PORT + i}"} for i, (dp, wc, xy) in enumerate(DATA_POINTS)]
    return {"data_points": dps, "tags": tags, "script": script,
            "noise": {"drop_probability": 0.0, "duplicate_probability": 0.0, "rssi_mean_dbm": -58,
                      "rssi_jitter_db": 2.0, "rng_seed": 7},
            "clock": {"start_us": T0, "cycle_us": CYCLE}}


def dispatch_xml():
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<DispatchList date="2013-03-06" plant="MOBICA-1">']
    for rid, wcs in ROUTES.items():
        lines.append(f'  <Route id="{rid}">')
        for k, wc in enumerate(wcs, start=1):
            s, e = PLAN[rid](k)
            lines.append(f'    <Step seq="{k}" workCenter="{wc}" plannedStart="{T0 + s * MIN}" plannedEnd="{T0 + e * MIN}"/>')
        lines.append("  </Route>")
    for code, kind, prod, route, ticket, *_ in ORDERS:
        xml_kind = "customer" if kind == "customer" else "make-to-stock"
        lines.append(f'  <Order id="{code}" type="{xml_kind}">')
        lines.append(f'    <Product id="{prod}" qty="1"/>')
        lines.append(f'    <RouteRef id="{route}"/>')
        lines.append(f'    <Ticket id="{ticket}"/>')
        lines.append("  </Order>")
    lines.append("</DispatchList>")
    return "\n".join(lines) + "\n"


def finished_goods_xml():
    items = sorted((T0 + exit_on * MIN, serial, prod, code) for code, _, prod, _, _, _, serial, exit_on, _ in ORDERS)
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<FinishedGoods plant="MOBICA-1">']
    for at, serial, prod, code in items:
        lines.append(f'  <Item order="{code}" product="{prod}" serial="{serial}" exitedAt="{at}"/>')
    lines.append("</FinishedGoods>")
    return "\n".join(lines) + "\n"


def service_config():
    return {
        "api_listen": "127.0.0.1:8080",
        "data_points": [{"data_point_id": dp, "work_center_id": wc, "reader_endpoint": f"127.0.0.1:{BASE_PORT + i}"}
                        for i, (dp, wc, _) in enumerate(DATA_POINTS)],
        "exit_data_point_id": "DP7",
        "presence_timeout_s": 10,
        "delay_grace_s": 300,
        "log_path": "sfc-events.log",
        "dispatch_file": "dispatch.xml",
        "clock": "wall",
    }


# ---- geometry check: every zone entry must be one the script intends ----

def position(doc, tag, t):
    tg = next(x for x in doc["tags"] if x["tag_ref"] == tag)
    wps = [w for w in doc["script"] if w["tag"] == tag]
    pt = lambda w: tuple(w["position"]) if "position" in w else XY[w["data_point"]]
    if not wps or t < wps[0]["arrive_time_us"]:
        return tuple(tg["initial_xy"])
    for prev, w in zip([None] + wps, wps):
        if t < w["arrive_time_us"]:
            f = (t - prev["depart_time_us"]) / (w["arrive_time_us"] - prev["depart_time_us"])
            (x0, y0), (x1, y1) = pt(prev), pt(w)
            return (x0 + (x1 - x0) * f, y0 + (y1 - y0) * f)
        if t < w["depart_time_us"]:
            return pt(w)
    return None


def check_geometry(doc):
    end = max(w["depart_time_us"] for w in doc["script"]) + MIN
    for tag in doc["tags"]:
        ref = tag["tag_ref"]
        wanted = {w["data_point"] for w in doc["script"] if w["tag"] == ref and "data_point" in w}
        t = T0
        while t <= end:
            p = position(doc, ref, t)
            if p is not None:
                for dp, _, (x, y) in DATA_POINTS:
                    if math.hypot(p[0] - x, p[1] - y) <= RADIUS and dp not in wanted:
                        raise SystemExit(f"{ref} strays into {dp} at {t}")
            t += CYCLE


def main():
    OUT.mkdir(exist_ok=True)
    for late, name in [(False, "scenario.json"), (True, "scenario-late.json")]:
        doc = scenario(late)
        check_geometry(doc)
        (OUT / name).write_text(json.dumps(doc, indent=2) + "\n")
    (OUT / "dispatch.xml").write_text(dispatch_xml())
    (OUT / "finished_goods.golden.xml").write_text(finished_goods_xml())
    (OUT / "service.json").write_text(json.dumps(service_config(), indent=2) + "\n")


if __name__ == "__main__":
    main()
