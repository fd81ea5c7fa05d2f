#!/usr/bin/env python3
"""Independent corpus statistics over feed.jsonl and cpe_dictionary.jsonl.

Writes expected_stats.json. Only CPE strings in canonical 2.3 form are
recognised; everything else counts as malformed and is ignored.
"""
import itertools
import json
import re
from pathlib import Path

HERE = Path(__file__).resolve().parent
CVE = re.compile(r"^CVE-\d{4}-\d{4,}$")
PARTS = "aoh"


def valid_cpe(s):
    f = s.split(":")
    return len(f) == 13 and f[0] == "cpe" and f[1] == "2.3" and f[2] in PARTS


def clean(node):
    """Node with malformed matches removed; None when nothing is left."""
    matches = [m for m in node.get("cpe_match", []) if valid_cpe(m["cpe23Uri"])]
    children = [c for c in (clean(c) for c in node.get("children", [])) if c is not None]
    if not matches and not children:
        return None
    return {"matches": matches, "children": children}


def subtree(node):
    yield from node["matches"]
    for c in node["children"]:
        yield from subtree(c)


def mixed(node):
    flags = {m["vulnerable"] for m in subtree(node)}
    return flags == {True, False}


def innermost_mixed(node):
    if not mixed(node):
        return []
    below = [n for c in node["children"] for n in innermost_mixed(c)]
    return below if below else [node]


def main():
    records = {}
    for line in (HERE / "feed.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        item = json.loads(line)
        cid = item["cve"]["CVE_data_meta"]["ID"]
        if not CVE.match(cid):
            continue
        desc = item["cve"]["description"]["description_data"][0]["value"]
        if desc.startswith("** REJECT **"):
            continue
        nodes = [n for n in (clean(n) for n in item["configurations"]["nodes"]) if n is not None]
        records[cid] = nodes

    total = len(records)
    with_cpe = specific = firmware = same_vendor = 0
    pairs = {f"{v}:{c}": 0 for v in PARTS for c in PARTS}
    referenced = set()
    for nodes in records.values():
        all_matches = [m for n in nodes for m in subtree(n)]
        referenced.update(m["cpe23Uri"] for m in all_matches)
        if not all_matches:
            continue
        with_cpe += 1
        if any(n["children"] or any(not m["vulnerable"] for m in subtree(n)) for n in nodes):
            specific += 1
        for top in nodes:
            for ro in innermost_mixed(top):
                ms = list(subtree(ro))
                vul = [m["cpe23Uri"].split(":") for m in ms if m["vulnerable"]]
                ctx = [m["cpe23Uri"].split(":") for m in ms if not m["vulnerable"]]
                for v, c in itertools.product(vul, ctx):
                    pairs[f"{v[2]}:{c[2]}"] += 1
                    firmware += "firmware" in v[4]
                    same_vendor += v[3] == c[3]

    names = set()
    for line in (HERE / "cpe_dictionary.jsonl").read_text().splitlines():
        if line.strip() and valid_cpe(json.loads(line)["cpe23Uri"]):
            names.add(json.loads(line)["cpe23Uri"])
    unused = len(names - referenced)
    pair_total = sum(pairs.values())

    def frac(a, b):
        return a / b if b else 0.0

    stats = {
        "total_cves": total,
        "cves_with_valid_cpe": with_cpe,
        "cpe_usage_fraction": frac(with_cpe, total),
        "dictionary_names": len(names),
        "unused_dictionary_names": unused,
        "unused_dictionary_fraction": frac(unused, len(names)),
        "config_specific_cves": specific,
        "config_specific_fraction": frac(specific, with_cpe),
        "runningon_pair_counts": pairs,
        "runningon_pairs_total": pair_total,
        "firmware_pairs": firmware,
        "firmware_fraction": frac(firmware, pair_total),
        "same_vendor_pairs": same_vendor,
        "same_vendor_config_fraction": frac(same_vendor, pair_total),
    }
    (HERE / "expected_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
