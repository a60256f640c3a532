"""Command-line front end: ``compute``, ``sweep`` and ``verify``.

Configs are JSON documents; complex numbers are written as ``[re, im]`` (a
bare number is read as real).  Example::

    {
      "hamiltonian_s": [0, 1],
      "hamiltonian_b": [0, 1],
      "beta": 1.0,
      "extension": {"kind": "qubit-family", "alpha": [1, 0], "gamma_phase": [1, 0]},
      "battery": {"kind": "pure", "amplitudes": [0.7071067811865476, 0.7071067811865476]},
      "optimizer": {"restarts": 4, "max_iters": 1000, "seed": 0},
      "output": {"format": "csv"}
    }

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 capability error (dimension caps, unsupported zero-temperature setups).
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import __version__, thermo, verify
from .channel import IsometricExtension, apply_extension, qubit_isometry, random_energy_preserving_unitary
from .entangle import CapabilityError, SearchConfig
from .qcore import DensityOperator, partial_trace, random_density, random_pure
from .retrieval import OptimizerConfig, assistance_gap, eof_battery_reference, optimize_joint, weak_closed_form
from .thermo import INFINITE, Hamiltonian, UnsupportedConfigurationError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CAPABILITY = 0, 1, 2, 3
WORKERS_ENV = "QBCHARGE_WORKERS"
MAX_JOINT_DIM = 64  # d_s * d_b * d_R
NORM_TOL = 1e-9

COLUMNS = [
    "config_hash", "seed", "beta", "alpha", "battery_desc",
    "w_weak_raw", "w_weak_rescaled", "w_weak_clamped",
    "w_strong_raw", "w_strong_rescaled", "gap",
    "eof_sR", "e_sigma", "f_sigma", "converged_weak", "converged_strong",
    # appended after the fixed set; never reordered ahead of it
    "w_weak_closed_form", "w_joint_raw", "version",
]
VERIFY_COLUMNS = ["check_name", "instances", "failures", "worst_margin", "tolerance", "seed", "passed"]
SWEEP_PARAMS = ("beta", "alpha", "angle", "p")


class ConfigError(ValueError):
    def __init__(self, message: str, path: Sequence[Any] = (), line: int | None = None):
        self.path = tuple(path)
        self.line = line
        where = ".".join(str(p) for p in self.path) or "<root>"
        loc = f" (line {line})" if line is not None else ""
        super().__init__(f"config error at {where}{loc}: {message}")


def _locate(text: str, path: Sequence[Any]) -> int | None:
    """Best-effort line number of a key path in the JSON source."""
    if not text:
        return None
    pos = 0
    for key in path:
        if isinstance(key, str):
            m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
            if m is None:
                return None
            pos = m.start()
    return text.count("\n", 0, pos) + 1


@dataclass
class RunConfig:
    hamiltonian_s: Hamiltonian
    hamiltonian_b: Hamiltonian
    beta: float
    extension: dict
    battery: dict
    optimizer: OptimizerConfig
    output_format: str
    output_path: str | None
    data: dict

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class _Validator:
    def __init__(self, text: str):
        self.text = text

    def fail(self, path, message):
        raise ConfigError(message, path, _locate(self.text, path))

    def number(self, value, path, *, minimum=None, allow_inf=False) -> float:
        if allow_inf and value in ("inf", "infinity", "Infinity"):
            return INFINITE
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        x = float(value)
        if not math.isfinite(x):
            self.fail(path, "must be finite")
        if minimum is not None and x < minimum:
            self.fail(path, f"must be >= {minimum}, got {x!r}")
        return x

    def integer(self, value, path, *, minimum=None) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}, got {value}")
        return value

    def complex_(self, value, path) -> complex:
        if isinstance(value, list):
            if len(value) != 2:
                self.fail(path, "complex values are written as [re, im]")
            return complex(self.number(value[0], path), self.number(value[1], path))
        return complex(self.number(value, path))

    def vector(self, value, path, dim) -> np.ndarray:
        if not isinstance(value, list) or len(value) != dim:
            self.fail(path, f"expected a list of {dim} complex entries")
        return np.array([self.complex_(v, [*path, i]) for i, v in enumerate(value)])

    def mapping(self, value, path, allowed) -> dict:
        if not isinstance(value, dict):
            self.fail(path, "expected an object")
        extra = sorted(set(value) - set(allowed))
        if extra:
            self.fail([*path, extra[0]], f"unknown key; allowed: {', '.join(allowed)}")
        return value


def parse_config(data: Any, text: str = "") -> RunConfig:
    v = _Validator(text)
    top = v.mapping(data, [], ["hamiltonian_s", "hamiltonian_b", "beta", "extension", "battery",
                               "optimizer", "output"])
    for key in ("beta", "extension", "battery"):
        if key not in top:
            v.fail([key], "missing required key")

    hams = {}
    for key in ("hamiltonian_s", "hamiltonian_b"):
        energies = top.get(key, [0.0, 1.0])
        if not isinstance(energies, list) or len(energies) < 2:
            v.fail([key], "expected a list of at least two energies")
        values = [v.number(e, [key, i]) for i, e in enumerate(energies)]
        if any(b < a for a, b in zip(values, values[1:])):
            v.fail([key], "energies must be listed in ascending order (they fix the basis order)")
        hams[key] = Hamiltonian(values)
    hs, hb = hams["hamiltonian_s"], hams["hamiltonian_b"]

    beta = v.number(top["beta"], ["beta"], minimum=0.0, allow_inf=True)
    if beta == 0.0:
        v.fail(["beta"], "beta = 0 leaves the free energy undefined")

    ext = v.mapping(top["extension"], ["extension"], ["kind", "alpha", "gamma_phase", "seed"])
    kind = ext.get("kind")
    if kind == "qubit-family":
        if list(hs.energies) != [0.0, 1.0] or list(hb.energies) != [0.0, 1.0]:
            v.fail(["extension", "kind"], "qubit-family needs hamiltonian_s = hamiltonian_b = [0, 1]")
        if "alpha" not in ext:
            v.fail(["extension", "alpha"], "missing required key")
        alpha = v.complex_(ext["alpha"], ["extension", "alpha"])
        if abs(alpha) > 1 + 1e-12:
            v.fail(["extension", "alpha"], f"|alpha| = {abs(alpha)!r} exceeds 1")
        phase = v.complex_(ext.get("gamma_phase", 1.0), ["extension", "gamma_phase"])
        if abs(abs(phase) - 1) > 1e-10:
            v.fail(["extension", "gamma_phase"], "must have unit modulus")
    elif kind == "random-block":
        v.integer(ext.get("seed"), ["extension", "seed"], minimum=0)
    else:
        v.fail(["extension", "kind"], f"expected 'qubit-family' or 'random-block', got {kind!r}")

    _validate_battery(v, top["battery"], hs.dim)

    opt = v.mapping(top.get("optimizer", {}), ["optimizer"],
                    ["restarts", "max_iters", "tol", "outcomes_b", "outcomes_R", "seed"])
    kwargs = {}
    for key in ("restarts", "max_iters", "seed", "outcomes_b", "outcomes_R"):
        if opt.get(key) is not None:
            kwargs[key] = v.integer(opt[key], ["optimizer", key], minimum=0 if key == "seed" else 1)
    if "tol" in opt:
        kwargs["tol"] = v.number(opt["tol"], ["optimizer", "tol"])
        if kwargs["tol"] <= 0:
            v.fail(["optimizer", "tol"], "must be > 0")
    for key, d in (("outcomes_b", hb.dim), ("outcomes_R", hb.dim)):
        if kwargs.get(key, 0) > d * d:
            v.fail(["optimizer", key], f"at most d^2 = {d * d} rank-one outcomes are needed")

    out = v.mapping(top.get("output", {}), ["output"], ["format", "path"])
    fmt = out.get("format", "csv")
    if fmt not in ("csv", "json"):
        v.fail(["output", "format"], "expected 'csv' or 'json'")
    path = out.get("path")
    if path is not None and not isinstance(path, str):
        v.fail(["output", "path"], "expected a string")

    return RunConfig(hs, hb, beta, ext, top["battery"], OptimizerConfig(**kwargs), fmt, path, data)


def _validate_battery(v: _Validator, bat, d: int) -> None:
    bat = v.mapping(bat, ["battery"], ["kind", "amplitudes", "eigenvalues", "eigenvectors", "purity", "seed"])
    kind = bat.get("kind")
    if kind == "pure":
        amp = v.vector(bat.get("amplitudes"), ["battery", "amplitudes"], d)
        norm = float(np.linalg.norm(amp))
        if abs(norm - 1) > NORM_TOL:
            v.fail(["battery", "amplitudes"], f"not normalized (norm {norm!r})")
    elif kind == "mixed":
        vals = bat.get("eigenvalues")
        if not isinstance(vals, list) or not 1 <= len(vals) <= d:
            v.fail(["battery", "eigenvalues"], f"expected between 1 and {d} eigenvalues")
        p = np.array([v.number(x, ["battery", "eigenvalues", i], minimum=0.0) for i, x in enumerate(vals)])
        if abs(p.sum() - 1) > NORM_TOL:
            v.fail(["battery", "eigenvalues"], f"must sum to 1 (sum {p.sum()!r})")
        vecs = bat.get("eigenvectors")
        if not isinstance(vecs, list) or len(vecs) != len(vals):
            v.fail(["battery", "eigenvectors"], "need one eigenvector per eigenvalue")
        m = np.array([v.vector(x, ["battery", "eigenvectors", i], d) for i, x in enumerate(vecs)])
        if np.abs(m.conj() @ m.T - np.eye(len(vals))).max() > NORM_TOL:
            v.fail(["battery", "eigenvectors"], "eigenvectors must be orthonormal")
    elif kind == "random":
        v.integer(bat.get("seed"), ["battery", "seed"], minimum=0)
        purity = bat.get("purity", "mixed")
        if purity not in ("pure", "mixed"):
            x = v.number(purity, ["battery", "purity"])
            if not 1 / d - 1e-12 <= x <= 1 + 1e-12:
                v.fail(["battery", "purity"], f"purity must lie in [1/{d}, 1]")
    else:
        v.fail(["battery", "kind"], f"expected 'pure', 'mixed' or 'random', got {kind!r}")


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from None
    return parse_config(data, text)


def build_battery(bat: dict, d: int) -> DensityOperator:
    kind = bat["kind"]
    if kind == "pure":
        amp = np.array([_as_complex(x) for x in bat["amplitudes"]])
        return DensityOperator(np.outer(amp, amp.conj()))
    if kind == "mixed":
        vecs = np.array([[_as_complex(x) for x in vec] for vec in bat["eigenvectors"]])
        p = np.asarray(bat["eigenvalues"], dtype=float)
        return DensityOperator((vecs.T * p) @ vecs.conj())
    rng = np.random.default_rng(bat["seed"])
    purity = bat.get("purity", "mixed")
    if purity == "pure":
        return random_pure(d, rng).to_density()
    if purity == "mixed":
        return random_density(d, rng)
    # p |psi><psi| + (1 - p) I/d has purity p^2 (1 - 1/d) + 1/d
    p = math.sqrt(max(0.0, (float(purity) - 1 / d) / (1 - 1 / d)))
    psi = random_pure(d, rng).to_density().matrix
    return DensityOperator(p * psi + (1 - p) * np.eye(d) / d)


def _as_complex(x) -> complex:
    return complex(x[0], x[1]) if isinstance(x, list) else complex(x)


def build_extension(cfg: RunConfig) -> IsometricExtension:
    ext = cfg.extension
    if ext["kind"] == "qubit-family":
        return qubit_isometry(_as_complex(ext["alpha"]), cfg.beta, _as_complex(ext.get("gamma_phase", 1.0)))
    ds, db = cfg.hamiltonian_s.dim, cfg.hamiltonian_b.dim
    if ds * db * db > MAX_JOINT_DIM:
        raise CapabilityError(f"d_s * d_b * d_R = {ds * db * db} exceeds {MAX_JOINT_DIM}")
    u = random_energy_preserving_unitary(cfg.hamiltonian_s, cfg.hamiltonian_b, ext["seed"])
    return IsometricExtension(u, cfg.beta)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, complex):
        return repr(x.real) if x.imag == 0 else repr(x).strip("()")
    if isinstance(x, float):
        return repr(x)
    return str(x)


def compute_record(cfg: RunConfig) -> dict:
    ext = build_extension(cfg)
    rho = build_battery(cfg.battery, cfg.hamiltonian_s.dim)
    sigma_s = partial_trace(apply_extension(ext, rho), [0])
    e = thermo.energy(sigma_s, ext.hs)
    f = thermo.free_energy(sigma_s, ext.hs, ext.beta)
    g = assistance_gap(ext, rho, cfg.optimizer)
    joint = optimize_joint(ext, rho, cfg.optimizer,
                           warm_start=(g.strong.achieving_povm_b, g.strong.achieving_povm_R))
    try:
        eof = eof_battery_reference(ext, rho)
    except CapabilityError:
        eof = None
    try:
        closed = weak_closed_form(ext, rho, SearchConfig(restarts=2, seed=cfg.optimizer.seed))
    except CapabilityError:
        closed = None
    alpha = _as_complex(cfg.extension["alpha"]) if cfg.extension["kind"] == "qubit-family" else None
    return {
        "config_hash": cfg.config_hash,
        "seed": cfg.optimizer.seed,
        "beta": float(cfg.beta),
        "alpha": alpha,
        "battery_desc": json.dumps(cfg.battery, sort_keys=True, separators=(",", ":")),
        "w_weak_raw": g.weak.value_raw,
        "w_weak_rescaled": g.weak.value_rescaled,
        "w_weak_clamped": g.weak.value_clamped,
        "w_strong_raw": g.strong.value_raw,
        "w_strong_rescaled": g.strong.value_rescaled,
        "gap": g.gap,
        "eof_sR": eof,
        "e_sigma": e,
        "f_sigma": f,
        "converged_weak": g.weak.converged,
        "converged_strong": g.strong.converged,
        "w_weak_closed_form": closed,
        "w_joint_raw": joint.value_raw,
        "version": __version__,
    }


def apply_sweep(data: dict, param: str, raw_value: str) -> dict:
    """Copy of ``data`` with one sweep parameter set; the result is re-validated by the caller."""
    out = copy.deepcopy(data)
    path = ["--sweep", param]
    try:
        if param == "beta":
            out["beta"] = "inf" if raw_value.strip() in ("inf", "infinity") else float(raw_value)
        elif param == "alpha":
            if not isinstance(out.get("extension"), dict) or out["extension"].get("kind") != "qubit-family":
                raise ConfigError("sweeping alpha needs a qubit-family extension", path)
            z = complex(raw_value.strip().replace("i", "j"))
            out["extension"]["alpha"] = [z.real, z.imag]
        elif param == "angle":
            theta = float(raw_value)
            d = len(out.get("hamiltonian_s", [0, 1]))
            amp = [0.0] * d
            amp[0], amp[1] = math.cos(theta), math.sin(theta)
            out["battery"] = {"kind": "pure", "amplitudes": amp}
        elif param == "p":
            p = float(raw_value)
            bat = out.get("battery", {})
            if bat.get("kind") != "pure" or len(bat.get("amplitudes", [])) != 2:
                raise ConfigError("sweeping p needs a pure qubit battery to mix with its complement", path)
            a, b = (_as_complex(x) for x in bat["amplitudes"])
            perp = [-b.conjugate(), a.conjugate()]
            out["battery"] = {
                "kind": "mixed",
                "eigenvalues": [p, 1 - p],
                "eigenvectors": [[[a.real, a.imag], [b.real, b.imag]],
                                 [[z.real, z.imag] for z in perp]],
            }
        else:
            raise ConfigError(f"unknown sweep parameter; choose from {', '.join(SWEEP_PARAMS)}", path)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse value {raw_value!r}", path) from None
    return out


def write_records(records: list[dict], columns: list[str], fmt: str, path: str | None) -> None:
    if fmt == "json":
        def conv(x):
            if isinstance(x, complex):
                return [x.real, x.imag]
            if isinstance(x, float) and not math.isfinite(x):
                return repr(x)
            return x
        text = json.dumps([{c: conv(r.get(c)) for c in columns} for r in records], indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in records:
            w.writerow([_fmt(r.get(c)) for c in columns])
        text = buf.getvalue()
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        data = copy.deepcopy(cfg.data)
        data.setdefault("optimizer", {})["seed"] = args.seed
        cfg = parse_config(data)
    return cfg


def _output(args, cfg: RunConfig) -> tuple[str, str | None]:
    return args.format or cfg.output_format, args.out or cfg.output_path


def cmd_compute(args) -> int:
    cfg = _load(args)
    fmt, path = _output(args, cfg)
    record = compute_record(cfg)
    write_records([record], COLUMNS, fmt, path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    param, raw = args.sweep
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter; choose from {', '.join(SWEEP_PARAMS)}", ["--sweep"])
    values = [x for x in (s.strip() for s in raw.split(",")) if x]
    if not values:
        raise ConfigError("empty values list", ["--sweep", param])
    configs = [parse_config(apply_sweep(cfg.data, param, x)) for x in values]
    workers = args.workers or _default_workers()
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(configs))) as pool:
            records = list(pool.map(compute_record, configs))
    else:
        records = [compute_record(c) for c in configs]
    fmt, path = _output(args, cfg)
    write_records(records, COLUMNS, fmt, path)
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(verify.CHECKS) if args.suite == "all" else [s.strip() for s in args.suite.split(",")]
    unknown = [x for x in names if x not in verify.CHECKS]
    if unknown:
        raise ConfigError(f"unknown check {unknown[0]!r}; choose from {', '.join(verify.CHECKS)} or all",
                          ["--suite"])
    if args.instances < 1:
        raise ConfigError("must be >= 1", ["--instances"])
    seed = 0 if args.seed is None else args.seed
    workers = args.workers or _default_workers()
    reports = verify.run_suite(names, args.instances, seed, workers=workers)

    width = max(len(r.check_name) for r in reports)
    print(f"{'check':<{width}}  {'n':>5}  {'fail':>5}  {'worst_margin':>14}  {'tolerance':>10}  result")
    for r in reports:
        print(f"{r.check_name:<{width}}  {r.instances:>5}  {r.failures:>5}  {r.worst_margin:>14.6e}  "
              f"{r.tolerance:>10.1e}  {'PASS' if r.passed else 'FAIL'}")

    if args.out is not None:
        rows = [{"check_name": r.check_name, "instances": r.instances, "failures": r.failures,
                 "worst_margin": r.worst_margin, "tolerance": r.tolerance, "seed": r.seed,
                 "passed": r.passed} for r in reports]
        if args.format == "json":
            for row, r in zip(rows, reports):
                row["details"] = r.details
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(json.dumps(rows, indent=2) + "\n")
        else:
            write_records(rows, VERIFY_COLUMNS, "csv", args.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output file (default: config output.path, else stdout)")
    common.add_argument("--format", choices=["csv", "json"], help="output format (default csv)")
    common.add_argument("--workers", type=int, default=None,
                        help=f"worker processes (default: ${WORKERS_ENV} or the number of cores)")
    common.add_argument("--seed", type=int, default=None, help="overrides the optimizer / suite seed")

    p = argparse.ArgumentParser(prog="qbcharge", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("compute", parents=[common], help="optimize one configuration")
    sw = sub.add_parser("sweep", parents=[common], help="one record per value of a parameter")
    sw.add_argument("--sweep", nargs=2, metavar=("PARAM", "V1,V2,..."), required=True,
                    help=f"parameter in {{{', '.join(SWEEP_PARAMS)}}} and comma-separated values")
    ver = sub.add_parser("verify", parents=[common], help="run the property checks")
    ver.add_argument("--suite", default="all", help=f"all, or comma-separated from {', '.join(verify.CHECKS)}")
    ver.add_argument("--instances", type=int, default=100, help="instances per check (default 100)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    handlers = {"compute": cmd_compute, "sweep": cmd_sweep, "verify": cmd_verify}
    try:
        if args.workers is not None and args.workers < 1:
            raise ConfigError("must be >= 1", ["--workers"])
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CapabilityError, UnsupportedConfigurationError) as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY


if __name__ == "__main__":
    sys.exit(main())
