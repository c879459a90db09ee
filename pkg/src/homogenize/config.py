"""INI-style run configuration: schema, defaults, overrides and object construction.

Every section and key is listed in :data:`SCHEMA`; anything else is rejected
with a message naming the offending key.  Values are strings in the file and
parsed here.  Matrices are written row by row, rows separated by ``;`` and
entries by ``,`` (``2, 0; 0, 3``).  Epsilon lists accept fractions (``1/8``).
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .lattice import (PeriodicCoefficient, SymbolOperator, checkerboard_coefficient,
                      constant_coefficient, layered_coefficient, product_sinusoid_coefficient,
                      tabulated_coefficient)


class ConfigError(ValueError):
    pass


SCHEMA = {
    "coefficient": {"kind": "layered", "m": "", "matrix": "", "mean": "2.0", "amplitude": "1.0",
                    "axis": "0", "low": "1.0", "high": "4.0", "path": ""},
    "symbol": {"kind": "gradient", "dim": "2", "weights": "", "matrices": ""},
    "domain": {"shape": "unit-square", "eps1": "0.5"},
    "cell": {"resolution": "256", "method": "auto"},
    "source": {"kind": "manufactured", "seed": "0", "modes": "4"},
    "sweep": {"eps_list": "1/8, 1/16, 1/32, 1/64", "mesh_ratio": "16", "range": "eps0",
              "precond": "amg", "audit": "false", "eps": "1/16"},
    "bands": {"check": "e_l2", "e_l2": "0.9, 1.15", "e_h1corr": "0.4, 0.75",
              "e_full": "0.8, inf", "w_l2": "0.8, inf", "audit_max": "0.2"},
    "output": {"dir": "out", "cache": ""},
}

COEFFICIENT_KINDS = ("constant", "layered", "product-sinusoid", "checkerboard", "tabulated")


def bundled_configs() -> dict:
    """Name -> path of the configs shipped with the package."""
    root = resources.files("homogenize") / "configs"
    return {p.name: Path(str(p)) for p in root.iterdir() if p.name.endswith(".cfg")}


@dataclass
class RunConfig:
    raw: dict
    path: str | None = None

    def get(self, section, key) -> str:
        return self.raw[section][key]

    # ---------------------------------------------------------- typed access
    def number(self, section, key, kind=float):
        text = self.get(section, key)
        try:
            return kind(Fraction(text)) if kind is float else kind(text)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{section}.{key}: cannot parse {text!r} as {kind.__name__}") from None

    def flag(self, section, key) -> bool:
        text = self.get(section, key).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}: expected a boolean, got {text!r}")

    def floats(self, section, key) -> list:
        text = self.get(section, key)
        try:
            return [float("inf") if t.strip() == "inf" else float(Fraction(t.strip()))
                    for t in text.split(",") if t.strip()]
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{section}.{key}: cannot parse {text!r} as a list of numbers") from None

    def matrix(self, section, key) -> np.ndarray:
        text = self.get(section, key)
        try:
            rows = [[complex(t.replace(" ", "")) for t in r.split(",")] for r in text.split(";")]
            a = np.array(rows)
        except ValueError:
            raise ConfigError(f"{section}.{key}: cannot parse matrix {text!r}") from None
        if a.ndim != 2:
            raise ConfigError(f"{section}.{key}: ragged matrix {text!r}")
        return a.real if np.all(a.imag == 0) else a

    # ---------------------------------------------------------- builders
    def symbol(self) -> SymbolOperator:
        kind = self.get("symbol", "kind")
        d = self.number("symbol", "dim", int)
        if kind == "gradient":
            w = self.floats("symbol", "weights") or None
            if w is not None and len(w) != d:
                raise ConfigError(f"symbol.weights: expected {d} values")
            return SymbolOperator.gradient(d, w)
        if kind == "matrices":
            blocks = [b for b in self.get("symbol", "matrices").split("|") if b.strip()]
            if len(blocks) != d:
                raise ConfigError(f"symbol.matrices: expected {d} blocks separated by '|'")
            mats = []
            for blk in blocks:
                rows = [[complex(t) for t in r.split(",")] for r in blk.split(";")]
                mats.append(rows)
            a = np.array(mats)
            return SymbolOperator(a.real if np.all(a.imag == 0) else a)
        raise ConfigError(f"symbol.kind: unknown symbol {kind!r} (gradient or matrices)")

    def coefficient(self, m: int | None = None) -> PeriodicCoefficient:
        kind = self.get("coefficient", "kind")
        if self.get("coefficient", "m"):
            m = self.number("coefficient", "m", int)
        m = m or 2
        if kind == "constant":
            c = self.matrix("coefficient", "matrix") if self.get("coefficient", "matrix") \
                else np.eye(m)
            return constant_coefficient(c)
        if kind == "layered":
            return layered_coefficient(m, self.number("coefficient", "mean"),
                                       self.number("coefficient", "amplitude"),
                                       self.number("coefficient", "axis", int))
        if kind == "product-sinusoid":
            return product_sinusoid_coefficient(m, self.number("coefficient", "mean"),
                                                self.number("coefficient", "amplitude"))
        if kind == "checkerboard":
            return checkerboard_coefficient(m, self.number("coefficient", "low"),
                                            self.number("coefficient", "high"))
        if kind == "tabulated":
            path = Path(self.get("coefficient", "path"))
            if self.path and not path.is_absolute():
                path = Path(self.path).parent / path
            return tabulated_coefficient(path)
        raise ConfigError(f"coefficient.kind: unknown coefficient {kind!r} "
                          f"(one of {', '.join(COEFFICIENT_KINDS)})")

    def problem(self):
        """(symbol, coefficient) with shapes checked against each other."""
        try:
            b = self.symbol()
            g = self.coefficient(b.m)
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from exc
        if g.m != b.m:
            raise ConfigError(f"coefficient is {g.m}x{g.m} but the symbol has m = {b.m}")
        return b, g

    def sweep_config(self):
        from .harness import SweepConfig

        b, g = self.problem()
        shape = self.get("domain", "shape")
        if shape not in ("unit-square", "unit-disk"):
            raise ConfigError(f"domain.shape: unknown shape {shape!r}")
        precond = self.get("sweep", "precond")
        if precond not in ("amg", "jacobi", "direct"):
            raise ConfigError(f"sweep.precond: unknown preconditioner {precond!r}")
        cfg = SweepConfig(
            coefficient=g, symbol=b, eps_list=self.floats("sweep", "eps_list"), shape=shape,
            source=self.get("source", "kind"), seed=self.number("source", "seed", int),
            modes=self.number("source", "modes", int),
            mesh_ratio=self.number("sweep", "mesh_ratio", int),
            cell_resolution=self.number("cell", "resolution", int),
            cell_method=self.get("cell", "method"), eps1=self.number("domain", "eps1"),
            eps_range=self.get("sweep", "range"), precond=precond,
            audit=self.flag("sweep", "audit"))
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def bands(self):
        checks = [c.strip() for c in self.get("bands", "check").split(",") if c.strip()]
        bands = {}
        for name in ("e_l2", "e_h1corr", "e_full", "w_l2"):
            vals = self.floats("bands", name)
            if len(vals) != 2:
                raise ConfigError(f"bands.{name}: expected 'low, high'")
            bands[name] = tuple(vals)
        allowed = set(bands) | {"ordering", "audit"}
        for c in checks:
            if c not in allowed:
                raise ConfigError(f"bands.check: unknown band {c!r}")
        return checks, bands, self.number("bands", "audit_max")


def _apply(raw: dict, section: str, key: str, value: str, origin: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"{origin}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{origin}: unknown key '{section}.{key}'")
    raw[section][key] = value.strip()


def load_config(path=None, overrides=()) -> RunConfig:
    """Read a config file (optional) on top of the defaults and apply ``section.key=value`` overrides."""
    raw = {s: dict(keys) for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                _apply(raw, section, key, value, str(path))
    for item in overrides:
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        _apply(raw, section, key, value, "--set")
    return RunConfig(raw, str(path) if path is not None else None)
