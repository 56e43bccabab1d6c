"""Run reports: latency percentiles, CPI stacks, power, PCIe and storage accounting."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import BUCKETS
from .critical import ENTRY_BYTES, MAP_ENTRY_BYTES, CriticalConfig
from .errors import ConfigError
from .isa import NUM_REGS, OpClass
from .regpred import GEN_ENTRY_BYTES, IN_ENTRY_BYTES, STATE_ENTRY_BYTES, RegPredConfig

REPORT_FILES = ("summary.txt", "latency.csv", "cpi.csv", "regions.csv", "pcie.csv", "power.csv")


def percentile(values, q: float) -> float:
    """Nearest-rank percentile (q in (0, 100])."""
    xs = np.sort(np.asarray(values, dtype=float))
    if xs.size == 0:
        return 0.0
    rank = max(1, int(math.ceil(q / 100.0 * xs.size)))
    return float(xs[rank - 1])


@dataclass
class PowerModel:
    core_static_w: float = 5.0        # per core
    cache_static_w: float = 1.0       # per core
    nic_static_w: float = 2.0
    dram_static_w: float = 3.0
    l1_access_nj: float = 0.05
    l2_access_nj: float = 0.2
    llc_access_nj: float = 1.0
    dram_access_nj: float = 15.0
    nic_inst_nj: float = 0.1
    pcie_byte_nj: float = 0.02
    cargo_overhead_w: float = 0.4

    def validate(self) -> None:
        for k, v in asdict(self).items():
            if v < 0:
                raise ConfigError(k, "must be >= 0")


def storage_report(critical: Optional[CriticalConfig] = None,
                   regpred: Optional[RegPredConfig] = None) -> dict:
    """Bytes of on-core state needed by region identification and value prediction."""
    c = critical or CriticalConfig()
    r = regpred or RegPredConfig()
    context = c.cache_entries * ENTRY_BYTES + NUM_REGS * MAP_ENTRY_BYTES
    state = NUM_REGS * STATE_ENTRY_BYTES
    predictor = r.in_entries * IN_ENTRY_BYTES + r.gen_entries * GEN_ENTRY_BYTES
    total = context + state + predictor
    return {"context_bytes": context, "register_state_bytes": state,
            "predictor_bytes": predictor, "total_bytes": total, "total_kib": total / 1024}


def classify_region(region) -> dict:
    mix = {"ALU": 0, "I-LD": 0, "D-LD": 0, "Other": 0}
    for ins in region.instructions:
        if ins.kind == OpClass.LOAD:
            mix["D-LD" if ins.dependent and not ins.context_root else "I-LD"] += 1
        elif ins.kind in (OpClass.ALU, OpClass.REGMOVE):
            mix["ALU"] += 1
        else:
            mix["Other"] += 1
    return mix


@dataclass
class Report:
    summary: dict = field(default_factory=dict)
    latency_rows: list = field(default_factory=list)
    cpi_rows: list = field(default_factory=list)
    region_rows: list = field(default_factory=list)
    pcie_rows: list = field(default_factory=list)
    power_rows: list = field(default_factory=list)


def _config_fingerprint(cfg) -> dict:
    out = {}
    for section in ("core", "cache", "dram", "pcie", "nic", "critical", "regpred", "workload"):
        for k, v in asdict(getattr(cfg, section)).items():
            out[f"config.{section}.{k}"] = v.value if hasattr(v, "value") else v
    return out


# keys allowed to differ between a baseline and a CARGO run
_CARGO_KEYS = {"config.nic.offload_enable", "config.critical.enable",
               "config.regpred.force_unresolved"}


def finalize(run, power: Optional[PowerModel] = None) -> Report:
    power = power or PowerModel()
    power.validate()
    cfg = run.config
    rep = Report()
    s = rep.summary
    lat = run.latencies()
    n = len(lat)
    dur_s = run.duration_ns * 1e-9
    s["cargo_enabled"] = int(cfg.cargo_enabled)
    s["requests_completed"] = n
    s["requests_dropped"] = run.dropped
    s["duration_ns"] = run.duration_ns
    s["latency_mean_ns"] = float(lat.mean()) if n else 0.0
    s["latency_p50_ns"] = percentile(lat, 50)
    s["latency_p99_ns"] = percentile(lat, 99)
    s["latency_max_ns"] = float(lat.max()) if n else 0.0
    s["queue_mean_ns"] = float(np.mean([r.queue_ns for r in run.log])) if n else 0.0
    s["core_mean_ns"] = float(np.mean([r.core_ns for r in run.log])) if n else 0.0
    s["throughput_rps"] = n / dur_s if dur_s else 0.0
    s["utilization"] = run.utilization
    ll = run.littles_law()
    s["little_population"] = ll["population"]
    s["little_lambda_w"] = ll["lambda_w"]
    s["little_rel_error"] = ll["rel_error"]

    st = run.core.stack
    s["cycles_total"] = st.total
    s["instructions"] = st.instructions
    s["memory_share"] = st.memory_share
    cpi = st.cpi()
    for b in BUCKETS:
        rep.cpi_rows.append({"bucket": b, "cycles": st.cycles[b], "cpi": cpi[b],
                             "share": st.normalized()[b]})

    mem = run.mem
    lv = mem.level_totals()
    for name in ("L1", "L2", "LLC"):
        s[f"{name.lower()}_accesses"] = lv[name].accesses
        s[f"{name.lower()}_misses"] = lv[name].misses
    s["l1_miss_rate"] = lv["L1"].misses / lv["L1"].accesses if lv["L1"].accesses else 0.0
    s["dram_accesses"] = mem.dram_accesses
    peak = mem.dram.peak_bytes_per_ns * run.duration_ns
    s["dram_bw_utilization"] = mem.dram_bytes / peak if peak else 0.0
    s["nic_fills"] = mem.nic_fills
    s["merged_fills"] = mem.merged_fills

    ledger = mem.pcie_ledger(run.duration_ns)
    for cat in ("state", "request", "data"):
        rep.pcie_rows.append({"category": cat, "bytes": ledger[f"{cat}_bytes"],
                              "pct": ledger[f"{cat}_pct"]})
        s[f"pcie_{cat}_pct"] = ledger[f"{cat}_pct"]

    ns = run.nic.stats
    s["nic_offloads"] = ns.offloads
    s["nic_loads_issued"] = ns.loads_issued
    s["nic_incorrect_rate"] = ns.incorrect_rate
    s["nic_failed_unknown_rate"] = ns.failed_rate
    s["nic_insts_per_offload"] = ns.instructions_per_offload
    s["nic_region_insts_per_offload"] = (ns.executed_instructions / ns.offloads
                                         if ns.offloads else 0.0)
    s["nic_loads_per_offload"] = ns.loads_issued / ns.offloads if ns.offloads else 0.0
    s["nic_packets_in"] = ns.packets_in
    s["nic_packets_dropped"] = ns.dropped
    s["regions_emitted"] = len(run.regions)
    s["regions_withheld"] = sum(e.withheld for e in run.engines)

    seen = {}
    for r in run.regions:
        seen.setdefault(r.region_id, r)
    sizes = []
    for rid, r in sorted(seen.items()):
        mix = classify_region(r)
        k = len(r.instructions)
        sizes.append(k)
        rep.region_rows.append({"region_id": rid, "executions": run.region_executions.get(rid, 0),
                                "instructions": k,
                                **{f"frac_{m}": mix[m] / k for m in mix}})
    s["region_mean_size"] = float(np.mean(sizes)) if sizes else 0.0

    cores = cfg.core.cores
    e_dyn = {
        "l1": lv["L1"].accesses * power.l1_access_nj,
        "l2": lv["L2"].accesses * power.l2_access_nj,
        "llc": lv["LLC"].accesses * power.llc_access_nj,
        "dram": mem.dram_accesses * power.dram_access_nj,
        "nic": (ns.executed_instructions + ns.user_routine_instructions) * power.nic_inst_nj,
        "pcie": (ledger["state_bytes"] + ledger["request_bytes"] + ledger["data_bytes"])
        * power.pcie_byte_nj,
    }
    static_w = {"core": power.core_static_w * cores, "cache": power.cache_static_w * cores,
                "nic": power.nic_static_w, "dram": power.dram_static_w,
                "cargo": power.cargo_overhead_w if cfg.cargo_enabled else 0.0}
    energy = {k: v * dur_s for k, v in static_w.items()}
    for k, v in e_dyn.items():
        energy[f"{k}_dynamic"] = v * 1e-9
    total_j = sum(energy.values())
    for k, v in energy.items():
        rep.power_rows.append({"component": k, "energy_j": v,
                               "watts": v / dur_s if dur_s else 0.0})
    s["energy_j"] = total_j
    s["power_w"] = total_j / dur_s if dur_s else 0.0
    s["efficiency_rpj"] = n / total_j if total_j else 0.0

    sto = storage_report(cfg.critical, cfg.regpred)
    for k, v in sto.items():
        s[f"storage_{k}"] = v

    for r in run.log:
        rep.latency_rows.append({"request_id": r.request_id, "core": r.core,
                                 "nic_ns": r.nic_ns, "pcie_ns": r.pcie_ns,
                                 "queue_ns": r.queue_ns, "core_ns": r.core_ns,
                                 "total_ns": r.total_ns})
    s.update(_config_fingerprint(cfg))
    return rep


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, rows: list, fields: list) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def write_report(rep: Report, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "summary.txt").open("w") as fh:
        for k, v in rep.summary.items():
            fh.write(f"{k} = {_fmt(v)}\n")
    _write_csv(out / "latency.csv", rep.latency_rows,
               ["request_id", "core", "nic_ns", "pcie_ns", "queue_ns", "core_ns", "total_ns"])
    _write_csv(out / "cpi.csv", rep.cpi_rows, ["bucket", "cycles", "cpi", "share"])
    _write_csv(out / "regions.csv", rep.region_rows,
               ["region_id", "executions", "instructions", "frac_ALU", "frac_I-LD",
                "frac_D-LD", "frac_Other"])
    _write_csv(out / "pcie.csv", rep.pcie_rows, ["category", "bytes", "pct"])
    _write_csv(out / "power.csv", rep.power_rows, ["component", "energy_j", "watts"])


def _parse_value(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    if v in ("True", "False"):
        return v == "True"
    return None if v == "None" else v


def read_summary(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "summary.txt"
    out = {}
    for line in p.read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = _parse_value(v)
    return out


class ConfigMismatchError(ValueError):
    def __init__(self, diff: dict):
        lines = [f"{k}: {a!r} != {b!r}" for k, (a, b) in sorted(diff.items())]
        super().__init__("reports use different configurations:\n  " + "\n  ".join(lines))
        self.diff = diff


def compare(baseline: dict, candidate: dict) -> dict:
    """Ratio candidate/baseline for every shared numeric metric.

    A latency ratio below 1 means the candidate is faster; a throughput or
    bandwidth ratio above 1 means the candidate moves more.  Missing or zero
    baseline values give NaN.
    """
    diff = {}
    for k in set(baseline) | set(candidate):
        if k.startswith("config.") and k not in _CARGO_KEYS:
            a, b = baseline.get(k), candidate.get(k)
            if a != b:
                diff[k] = (a, b)
    if diff:
        raise ConfigMismatchError(diff)
    out = {}
    for k, a in baseline.items():
        if k.startswith("config.") or k == "cargo_enabled" or k not in candidate:
            continue
        b = candidate[k]
        if isinstance(a, bool) or not isinstance(a, (int, float)) \
                or not isinstance(b, (int, float)):
            continue
        if a == 0:
            out[k] = 1.0 if b == 0 else math.nan
        else:
            out[k] = b / a
    return out


def improvement_split(baseline: dict, candidate: dict) -> dict:
    """Shares of the mean-latency reduction coming from queueing and core time."""
    dq = baseline["queue_mean_ns"] - candidate["queue_mean_ns"]
    dc = baseline["core_mean_ns"] - candidate["core_mean_ns"]
    tot = dq + dc
    if tot == 0:
        return {"queue_share": 0.0, "core_share": 0.0}
    return {"queue_share": dq / tot, "core_share": dc / tot}


def format_compare(ratios: dict) -> str:
    lines = ["# ratio = candidate / baseline (latency < 1 is better; throughput > 1 is better)"]
    for k in sorted(ratios):
        lines.append(f"{k} = {ratios[k]!r}")
    return "\n".join(lines) + "\n"
