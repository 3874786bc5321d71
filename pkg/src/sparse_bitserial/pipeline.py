"""End-to-end runs: ingest -> validate -> quantize -> encode -> plan -> simulate -> report.

Every artifact of a run is built in a staging directory next to the output
directory and moved into place file by file with ``os.replace`` once all
stages succeed. A failing stage removes the staging directory, so no partial
outputs survive. All randomness comes from explicit seeds.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (BUNDLED_DIR, ArchConfig, FixedTensor, NetworkSpec, load_arch, load_network,
                   read_weight_file, validate_network, weight_file_bytes)
from .dataflow import RIF, RWF, dram_traffic, layer_bit_counts, weight_bits_for
from .encoder import EncodedLayer, decode_layer, encode_layer, encoded_layer_bytes
from .metrics import compare_runs, energy_report
from .quantizer import QuantStats, quantize_tensor
from .reference import conv_golden, relu_pool
from .systolic import NetworkRun, WorkloadMode, simulate_network

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
MODES = {"16b": 16, "8b": 8}


class StageError(Exception):
    """Failure inside one pipeline stage; ``code`` is the process exit status."""

    def __init__(self, stage: str, message: str, code: int = EXIT_RUNTIME):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message
        self.code = code


# ---------------------------------------------------------------------------
# weight generation


@dataclass(frozen=True)
class NnzbProfile:
    """Target distribution of nonzero-bit counts: ``probs[k]`` = P(NNZB == k)."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or (p < 0).any() or p.sum() <= 0:
            raise ValueError("NNZB profile needs nonnegative weights with a positive sum")

    @classmethod
    def point(cls, k: int) -> "NnzbProfile":
        return cls(tuple(1.0 if i == k else 0.0 for i in range(k + 1)))

    @classmethod
    def parse(cls, text: str) -> "NnzbProfile":
        """``"3"`` puts all mass at NNZB 3; ``"0,1,2,1"`` gives relative weights per NNZB."""
        parts = [x for x in text.split(",") if x.strip()]
        if len(parts) == 1 and "." not in parts[0]:
            return cls.point(int(parts[0]))
        return cls(tuple(float(x) for x in parts))


def parse_distribution(text: str):
    """``uniform`` or ``nnzb:<profile>`` (see :meth:`NnzbProfile.parse`)."""
    if text == "uniform":
        return "uniform"
    if text.startswith("nnzb:"):
        return NnzbProfile.parse(text[5:])
    raise ValueError(f"unknown distribution {text!r}; use 'uniform' or 'nnzb:<k or weights>'")


def _profiled(n: int, bits: int, profile: NnzbProfile, rng: np.random.Generator) -> np.ndarray:
    # k distinct positions among the bits - 1 magnitude bits, plus a random sign
    p = np.asarray(profile.probs, dtype=float)
    if p[bits:].any():
        raise ValueError(f"NNZB above {bits - 1} impossible at {bits}-bit precision")
    p = p[:bits]
    k = rng.choice(p.size, size=n, p=p / p.sum())
    # random permutation of bit indices per weight; keep the first k
    order = np.argsort(rng.random((n, bits - 1)), axis=1)
    keep = np.arange(bits - 1)[None, :] < k[:, None]
    mag = ((keep.astype(np.int64)) << order).sum(axis=1)
    sign = rng.integers(0, 2, size=n)
    return np.where(sign == 1, -mag, mag)


def gen_weights(net: NetworkSpec, seed: int, distribution="uniform") -> list[FixedTensor]:
    """Deterministic random weights for every layer of ``net``.

    ``distribution`` is ``"uniform"`` (every representable value equally
    likely) or an :class:`NnzbProfile`.
    """
    if isinstance(distribution, str):
        distribution = parse_distribution(distribution)
    rng = np.random.default_rng(seed)
    out = []
    for layer in net.layers:
        bits = layer.precision
        n = layer.n_weights
        if distribution == "uniform":
            data = rng.integers(-(1 << (bits - 1)), 1 << (bits - 1), size=n,
                                dtype=np.int16 if bits == 16 else np.int8)
        else:
            data = np.concatenate([_profiled(min(1 << 18, n - s), bits, distribution, rng)
                                   for s in range(0, n, 1 << 18)]) if n else np.zeros(0, np.int64)
        out.append(FixedTensor(layer.weight_dims, bits, data))
    return out


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class RunManifest:
    network: str                    # YAML path or bundled network name
    out: str
    weights: str | None = None      # weight file ...
    seed: int | None = None         # ... or generator seed (exactly one of the two)
    arch: str | None = None
    mode: str | None = None         # "16b" / "8b"; None keeps the config's precision
    n_max: int | None = None        # overrides every layer's NNZB cap
    workload: str = "balanced"
    ifm_seed: int = 0
    distribution: str = "uniform"

    def __post_init__(self):
        if (self.weights is None) == (self.seed is None):
            raise ValueError("manifest needs exactly one weight source: a weight file or a seed")
        if self.mode is not None and self.mode not in MODES:
            raise ValueError(f"mode must be one of {sorted(MODES)}")
        WorkloadMode.parse(self.workload)

    def to_dict(self) -> dict:
        """Manifest fields minus the output location, so outputs do not depend on where they land."""
        d = asdict(self)
        d.pop("out")
        return d


def resolve_network(ref: str) -> NetworkSpec:
    path = Path(ref)
    if path.suffix in (".yaml", ".yml") or path.exists():
        return load_network(path)
    bundled = BUNDLED_DIR / f"{ref}.yaml"
    if bundled.exists():
        return load_network(bundled)
    raise FileNotFoundError(f"network {ref!r} is neither a file nor a bundled config")


def apply_mode(net: NetworkSpec, mode: str | None, n_max: int | None) -> NetworkSpec:
    precision = MODES[mode] if mode is not None else None
    if precision is None and n_max is None:
        return net
    return net.with_overrides(precision=precision, n_nzb_max=n_max)


# ---------------------------------------------------------------------------
# serialization helpers (deterministic byte output)


def csv_bytes(rows: Sequence[dict]) -> bytes:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue().encode()


def json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def tensor_hash(t: FixedTensor) -> str:
    h = hashlib.sha256()
    h.update(repr((tuple(t.dims), t.bitwidth)).encode())
    h.update(t.data.astype("<i8").tobytes())
    return h.hexdigest()


class Staging:
    """Collect output files in a private directory; publish atomically or discard."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.created = not self.out.exists()
        self.out.mkdir(parents=True, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise PermissionError(f"output directory {self.out} is not writable")
        self.dir = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        self.files: list[str] = []

    def write(self, rel: str, data: bytes) -> None:
        path = self.dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.files.append(rel)

    def publish(self) -> list[Path]:
        done = []
        for rel in self.files:
            dst = self.out / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self.dir / rel, dst)
            done.append(dst)
        shutil.rmtree(self.dir, ignore_errors=True)
        return done

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)
        if self.created and not any(self.out.iterdir()):
            self.out.rmdir()


def write_atomic(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# ---------------------------------------------------------------------------
# stages


@dataclass
class PipelineResult:
    network: NetworkSpec
    arch: ArchConfig
    quantized: list[FixedTensor]
    stats: list[QuantStats]
    encoded: list[EncodedLayer]
    run: NetworkRun
    baseline: NetworkRun
    ofm_hashes: list[dict] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)


@contextmanager
def _stage(name: str, code: int = EXIT_RUNTIME):
    """Re-raise any failure inside the block as a StageError tagged ``name``."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}", code) from exc


def ingest(m: RunManifest) -> tuple[NetworkSpec, ArchConfig, list[FixedTensor]]:
    with _stage("ingest", EXIT_VALIDATION):
        net = apply_mode(resolve_network(m.network), m.mode, m.n_max)
        arch = load_arch(m.arch)
        if m.weights is not None:
            if not Path(m.weights).is_file():
                raise FileNotFoundError(f"weight file {m.weights} not found")
            weights = read_weight_file(m.weights, net)
        else:
            weights = None
    with _stage("validate", EXIT_VALIDATION):
        diags = validate_network(net, arch)
        if diags:
            raise ValueError("; ".join(str(d) for d in diags))
    if weights is None:
        with _stage("ingest", EXIT_VALIDATION):
            weights = gen_weights(net, m.seed, m.distribution)
    return net, arch, weights


def functional_check(net: NetworkSpec, run: NetworkRun, encoded: Sequence[EncodedLayer]) -> list[dict]:
    """Hash simulator and reference OFMs per layer; raise on any mismatch."""
    rows = []
    for i, (layer, enc, x, ofm) in enumerate(zip(net.layers, encoded, run.ifms, run.ofms)):
        ref = relu_pool(conv_golden(x, decode_layer(enc), layer), layer)
        sim_h, ref_h = tensor_hash(ofm), tensor_hash(ref)
        rows.append({"layer": i, "name": layer.name, "simulator": sim_h, "reference": ref_h,
                     "match": sim_h == ref_h})
        if sim_h != ref_h:
            raise AssertionError(f"layer {i} ({layer.name}): simulator OFM differs from reference")
    return rows


def _plan_rows(net: NetworkSpec, run: NetworkRun) -> list[dict]:
    """One row per layer: tiling, chosen dataflow and the traffic of both dataflows."""
    rows = []
    for i, (layer, plan) in enumerate(zip(net.layers, run.plans)):
        wbits = weight_bits_for(layer, encoded=run.mode != WorkloadMode.DENSE.value)
        ifm, wts, ofm = layer_bit_counts(layer, plan, wbits)
        row = {"layer": i, "name": layer.name, "kind": layer.kind, "precision": layer.precision,
               "n_nzb_max": layer.n_nzb_max, "t_ic": plan.t_ic, "t_oc": plan.t_oc,
               "t_wi": plan.t_wi, "t_hi": plan.t_hi, "spatial_tiles": plan.n_spatial,
               "dataflow": plan.dataflow, "ifm_bits_once": ifm, "weight_bits_once": wts, "ofm_bits": ofm}
        for df in (RIF, RWF):
            t = dram_traffic(layer, plan, df, wbits)
            row.update({f"{df.lower()}_{k}": v for k, v in t.to_row().items()})
        rows.append(row)
    return rows


def run_pipeline(m: RunManifest, functional: bool = True) -> PipelineResult:
    """Execute every stage for one manifest and publish the artifacts.

    Raises :class:`StageError` (already carrying the exit code) on failure,
    after removing any partial output.
    """
    try:
        staging = Staging(Path(m.out))
    except OSError as exc:
        raise StageError("ingest", f"output directory: {exc}", EXIT_VALIDATION) from exc
    try:
        net, arch, weights = ingest(m)
        mode = WorkloadMode.parse(m.workload)

        with _stage("quantize"):
            quantized, stats = [], []
            for i, (layer, w) in enumerate(zip(net.layers, weights)):
                q, st = quantize_tensor(w, layer.n_nzb_max, i)
                quantized.append(q)
                stats.append(st)
            del weights
            staging.write("quantized_weights.sbw", weight_file_bytes(quantized))
            staging.write("quant_stats.csv", csv_bytes([{"name": L.name, **s.to_row()}
                                                       for L, s in zip(net.layers, stats)]))

        with _stage("encode"):
            encoded = [encode_layer(q, layer.n_nzb_max) for layer, q in zip(net.layers, quantized)]
            for i, (layer, enc) in enumerate(zip(net.layers, encoded)):
                staging.write(f"encoded/layer{i:03d}_{layer.name or 'layer'}.sbel", encoded_layer_bytes(enc))

        with _stage("simulate"):
            run = simulate_network(net, encoded, arch, mode, functional=functional, seed=m.ifm_seed)
            baseline = simulate_network(net, encoded, arch, WorkloadMode.DENSE) \
                if mode is not WorkloadMode.DENSE else run

        with _stage("plan"):
            staging.write("plan.csv", csv_bytes(_plan_rows(net, run)))

        hashes = []
        if functional:
            with _stage("check"):
                hashes = functional_check(net, run, encoded)
                staging.write("ofm_hashes.json", json_bytes(hashes))

        with _stage("report"):
            precision = net.layers[0].precision
            cyc_rows = []
            for r_run in ((run, baseline) if baseline is not run else (run,)):
                for layer_rep, traffic in zip(r_run.layers, r_run.traffic):
                    cyc_rows.append({**layer_rep.to_row(), **traffic.to_row()})
                tot = r_run.total
                cyc_rows.append({**tot.to_row(), "layer": "total", **r_run.total_traffic.to_row()})
            staging.write("cycles.csv", csv_bytes(cyc_rows))
            staging.write("cycles.json", json_bytes(cyc_rows))
            en_run = energy_report(run.total, run.total_traffic, arch, precision, net.name)
            en_base = energy_report(baseline.total, baseline.total_traffic, arch, precision, net.name)
            energy_rows = [{"workload": run.mode, **en_run.to_dict()},
                           {"workload": baseline.mode, **en_base.to_dict()}]
            staging.write("energy.csv", csv_bytes(energy_rows))
            staging.write("energy.json", json_bytes(energy_rows))
            ratio = compare_runs((run.total, en_run), (baseline.total, en_base))
            report = {"workload": run.mode, "baseline": baseline.mode, **ratio.to_row()}
            staging.write("report.csv", csv_bytes([report]))
            staging.write("report.json", json_bytes(report))
            staging.write("manifest.json", json_bytes(m.to_dict()))

        files = staging.publish()
    except StageError:
        staging.discard()
        raise
    except BaseException as exc:
        staging.discard()
        raise StageError("pipeline", f"{type(exc).__name__}: {exc}") from exc
    return PipelineResult(net, arch, quantized, stats, encoded, run, baseline, hashes, files)
