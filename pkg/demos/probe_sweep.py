"""A small Martinet sweep across the singular plane, exported as CSV and JSON."""
import json
import sys

from srlab.probe import default_config, export, run_probe

out = sys.argv[1] if len(sys.argv) > 1 else "martinet_probe"
report = run_probe(default_config("martinet"))
export(report, "csv", out + ".csv")
export(report, "json", out + ".json")
for r in report.rows:
    print(r["y"], f"d={r['distance']:.4f}", "corank", r["corank"], "goh_rank", r["goh_rank"], r["lipschitz_class"])
print(json.dumps(report.aggregates, indent=2))
