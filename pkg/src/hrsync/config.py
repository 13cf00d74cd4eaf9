"""Experiment files: a sectioned ``key = value`` format read with configparser.

Grammar (one experiment per file; ``#`` and ``;`` start comments)::

    [parameters]        a b alpha beta q r c J d p    all required
    [mesh]              dimension = 1 | 2             required
                        extent = L  (1-D)  or  extents = Lx Ly
                        resolution = N  or  Nx Ny     nodes per axis, required
    [partition]         m = 1                         default 1
                        segments = x-:1 x+:2          optional, see below
    [initial]           all = <field spec>            default "constant 0 0 0"
                        neuron<k> = <field spec>      overrides ``all`` for neuron k
                        seed = <u64>                  required when a spec is random
                        target_norm2 = 4.5 | 100Q     optional rescaling of all fields
    [step]              scheme = imex-cnab | imex-euler   default imex-cnab
                        dt, t_end                     required
                        sample_every = 1
                        implicit_cubic = false
                        reaction = true
    [outputs]           timeseries = timeseries.csv
                        summary = summary.json
                        tail_fraction = 0.2
                        fit_window = 0.5
    [convergence]       study = temporal | spatial
                        levels = 4
                        reference_factor = 64

Field specs (neuron 0 is the central neuron)::

    constant U V W
    cosine k A U V W      u = U + A prod_axes cos(k pi x / L), v = V, w = W
    random lo hi          u, v, w uniform on [lo, hi], numpy PCG64 from ``seed``

Segments are whitespace separated ``side:label`` or ``side[start,end]:label``
with ``side`` one of x- x+ y- y+ (or left right bottom top) and ``start,end``
a half-open coordinate range along the side.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field

from .integrator import SCHEMES, StepConfig
from .model import PARAMETER_NAMES, ParameterError, Parameters, validate_parameters

__all__ = ["ConfigError", "FieldSpec", "RunSpec", "parse_config", "load_config"]


class ConfigError(ValueError):
    """Invalid experiment file; the message names the line and key."""


_SECTIONS = {
    "parameters": set(PARAMETER_NAMES),
    "mesh": {"dimension", "extent", "extents", "resolution"},
    "partition": {"m", "segments"},
    "initial": None,  # checked separately (neuron<k>)
    "step": {"scheme", "dt", "t_end", "sample_every", "implicit_cubic", "reaction"},
    "outputs": {"timeseries", "summary", "tail_fraction", "fit_window"},
    "convergence": {"study", "levels", "reference_factor"},
}
_INITIAL_KEYS = {"all", "seed", "target_norm2"}
_SEGMENT = re.compile(r"^(?P<side>[a-z+-]+)(\[(?P<a>[^,\]]+),(?P<b>[^\]]+)\])?:(?P<label>\d+)$")


@dataclass(frozen=True)
class FieldSpec:
    kind: str                  # constant | cosine | random
    values: tuple[float, ...]

    def text(self) -> str:
        return " ".join([self.kind] + [repr(v) for v in self.values])


@dataclass(frozen=True)
class RunSpec:
    params: Parameters
    dimension: int
    extents: tuple[float, ...]
    resolution: tuple[int, ...]
    m: int
    segments: tuple | None
    initial: tuple[FieldSpec, ...]          # one per neuron, central first
    seed: int | None
    target_norm2: str | None
    step: StepConfig
    timeseries: str = "timeseries.csv"
    summary: str = "summary.json"
    tail_fraction: float = 0.2
    fit_window: float = 0.5
    study: str | None = None
    levels: int = 4
    reference_factor: int = 64
    extra: dict = field(default_factory=dict, compare=False)

    def with_seed(self, seed: int) -> "RunSpec":
        from dataclasses import replace
        return replace(self, seed=int(seed))

    def resolved(self) -> dict:
        """Plain nested mapping of every setting, defaults included."""
        return {
            "parameters": self.params.as_dict(),
            "mesh": {"dimension": self.dimension, "extents": list(self.extents),
                     "resolution": list(self.resolution)},
            "partition": {"m": self.m,
                          "segments": None if self.segments is None
                          else [list(s) for s in self.segments]},
            "initial": {"neurons": [s.text() for s in self.initial], "seed": self.seed,
                        "target_norm2": self.target_norm2},
            "step": asdict(self.step),
            "outputs": {"timeseries": self.timeseries, "summary": self.summary,
                        "tail_fraction": self.tail_fraction, "fit_window": self.fit_window},
            "convergence": {"study": self.study, "levels": self.levels,
                            "reference_factor": self.reference_factor},
        }


class _Reader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"syntax error: {exc}") from None
        self.cp = cp

    def line(self, section: str, key: str | None = None) -> int | None:
        cur = None
        for no, raw in enumerate(self.lines, 1):
            s = raw.strip()
            if s.startswith("[") and s.endswith("]"):
                cur = s[1:-1].strip()
                if key is None and cur == section:
                    return no
            elif cur == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
                return no
        return None

    def fail(self, section: str, key: str | None, msg: str):
        no = self.line(section, key)
        where = f"line {no}: " if no else ""
        name = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{where}{name}: {msg}")

    def has(self, section: str, key: str) -> bool:
        return self.cp.has_section(section) and key in self.cp[section]

    def raw(self, section: str, key: str, default=None, required=False):
        if self.has(section, key):
            return self.cp[section][key].strip()
        if required:
            if not self.cp.has_section(section):
                raise ConfigError(f"missing section [{section}] (needed for required key '{key}')")
            self.fail(section, None, f"missing required key '{key}'")
        return default

    def num(self, section, key, conv=float, default=None, required=False):
        v = self.raw(section, key, default=None, required=required)
        if v is None:
            return default
        try:
            return conv(v)
        except ValueError:
            self.fail(section, key, f"cannot parse {v!r} as {conv.__name__}")

    def nums(self, section, key, conv=float, required=False):
        v = self.raw(section, key, required=required)
        if v is None:
            return None
        try:
            return tuple(conv(x) for x in v.split())
        except ValueError:
            self.fail(section, key, f"cannot parse {v!r} as a list of {conv.__name__}")

    def flag(self, section, key, default: bool) -> bool:
        if not self.has(section, key):
            return default
        try:
            return self.cp[section].getboolean(key)
        except ValueError:
            self.fail(section, key, "expected true/false")


def _field_spec(rd: _Reader, key: str, text: str) -> FieldSpec:
    parts = text.split()
    counts = {"constant": 3, "cosine": 5, "random": 2}
    if not parts or parts[0] not in counts:
        rd.fail("initial", key, f"unknown field spec {text!r} (constant | cosine | random)")
    kind = parts[0]
    if len(parts) - 1 != counts[kind]:
        rd.fail("initial", key, f"'{kind}' takes {counts[kind]} numbers, got {len(parts) - 1}")
    try:
        vals = tuple(float(x) for x in parts[1:])
    except ValueError:
        rd.fail("initial", key, f"non-numeric value in {text!r}")
    if kind == "cosine" and (vals[0] != int(vals[0]) or vals[0] < 0):
        rd.fail("initial", key, "cosine mode index must be a nonnegative integer")
    if kind == "random" and not vals[0] < vals[1]:
        rd.fail("initial", key, "random needs lo < hi")
    return FieldSpec(kind, vals)


def parse_config(text: str) -> RunSpec:
    """Parse and validate an experiment file; raises :class:`ConfigError`."""
    rd = _Reader(text)
    cp = rd.cp
    for sec in cp.sections():
        if sec not in _SECTIONS:
            rd.fail(sec, None, "unknown section")
        allowed = _SECTIONS[sec]
        for key in cp[sec]:
            ok = (key in _INITIAL_KEYS or re.fullmatch(r"neuron\d+", key)) if allowed is None \
                else key in allowed
            if not ok:
                rd.fail(sec, key, "unknown key")

    if not cp.has_section("parameters"):
        raise ConfigError("missing section [parameters]")
    for name in PARAMETER_NAMES:
        rd.raw("parameters", name, required=True)
    raw_params = {name: rd.num("parameters", name) for name in PARAMETER_NAMES}
    try:
        params = validate_parameters(raw_params)
    except ParameterError as exc:
        key = next((k for k in PARAMETER_NAMES if str(exc).startswith(k + " ")), None)
        rd.fail("parameters", key, str(exc))

    dim = rd.num("mesh", "dimension", int, required=True)
    if dim not in (1, 2):
        rd.fail("mesh", "dimension", "must be 1 or 2")
    if rd.has("mesh", "extent") and rd.has("mesh", "extents"):
        rd.fail("mesh", "extents", "give either 'extent' or 'extents', not both")
    ext_key = "extents" if rd.has("mesh", "extents") else "extent"
    extents = rd.nums("mesh", ext_key, required=True)
    res = rd.nums("mesh", "resolution", int, required=True)
    for key, vals in ((ext_key, extents), ("resolution", res)):
        if len(vals) != dim:
            rd.fail("mesh", key, f"expected {dim} value(s), got {len(vals)}")
    if any(not e > 0 for e in extents):
        rd.fail("mesh", ext_key, "extents must be > 0")
    if any(n < 3 for n in res):
        rd.fail("mesh", "resolution", "need at least 3 nodes per axis")

    m = rd.num("partition", "m", int, default=1)
    if m < 0:
        rd.fail("partition", "m", "must be >= 0")
    if dim == 1 and m > 2:
        rd.fail("partition", "m", "1-D supports m ≤ 2")
    if dim == 2 and m > 4 and not rd.has("partition", "segments"):
        rd.fail("partition", "m", "m > 4 in 2-D needs explicit segments")
    segments = None
    seg_text = rd.raw("partition", "segments")
    if seg_text is not None:
        segs = []
        for tok in seg_text.split():
            mt = _SEGMENT.match(tok)
            if not mt:
                rd.fail("partition", "segments", f"cannot parse segment {tok!r}")
            label = int(mt["label"])
            if label > m:
                rd.fail("partition", "segments", f"label {label} exceeds m={m}")
            if mt["a"] is not None:
                try:
                    segs.append((mt["side"], label, float(mt["a"]), float(mt["b"])))
                except ValueError:
                    rd.fail("partition", "segments", f"bad range in {tok!r}")
            else:
                segs.append((mt["side"], label))
        segments = tuple(segs)

    default = _field_spec(rd, "all", rd.raw("initial", "all", default="constant 0 0 0"))
    specs = []
    if cp.has_section("initial"):
        for key in cp["initial"]:
            if key.startswith("neuron") and int(key[6:]) > m:
                rd.fail("initial", key, f"neuron index exceeds m={m}")
    for k in range(m + 1):
        txt = rd.raw("initial", f"neuron{k}")
        specs.append(default if txt is None else _field_spec(rd, f"neuron{k}", txt))
    seed = rd.num("initial", "seed", int)
    if seed is not None and not 0 <= seed < 2 ** 64:
        rd.fail("initial", "seed", "must be an unsigned 64-bit integer")
    if any(s.kind == "random" for s in specs) and seed is None:
        rd.fail("initial", None, "random initial data needs an explicit 'seed'")
    target = rd.raw("initial", "target_norm2")
    if target is not None:
        t = target[:-1] if target.endswith("Q") else target
        try:
            ok = float(t) > 0
        except ValueError:
            ok = False
        if not ok:
            rd.fail("initial", "target_norm2", "expected a positive number, optionally suffixed by Q")

    scheme = rd.raw("step", "scheme", default="imex-cnab")
    if scheme not in SCHEMES:
        rd.fail("step", "scheme", f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
    try:
        step = StepConfig(dt=rd.num("step", "dt", required=True),
                          t_end=rd.num("step", "t_end", required=True),
                          scheme=scheme,
                          sample_every=rd.num("step", "sample_every", int, default=1),
                          reaction=rd.flag("step", "reaction", True),
                          implicit_cubic=rd.flag("step", "implicit_cubic", False))
        step.n_steps
    except ValueError as exc:
        rd.fail("step", None, str(exc))

    tail = rd.num("outputs", "tail_fraction", default=0.2)
    fitw = rd.num("outputs", "fit_window", default=0.5)
    for key, v in (("tail_fraction", tail), ("fit_window", fitw)):
        if not 0 < v <= 1:
            rd.fail("outputs", key, "must be in (0, 1]")
    study = rd.raw("convergence", "study")
    if study is not None and study not in ("temporal", "spatial"):
        rd.fail("convergence", "study", "must be 'temporal' or 'spatial'")
    levels = rd.num("convergence", "levels", int, default=4)
    if levels < 3:
        rd.fail("convergence", "levels", "need at least 3 levels")
    ref = rd.num("convergence", "reference_factor", int, default=64)
    if ref < 2:
        rd.fail("convergence", "reference_factor", "must be >= 2")

    return RunSpec(params=params, dimension=dim, extents=tuple(extents), resolution=tuple(res),
                   m=m, segments=segments, initial=tuple(specs), seed=seed,
                   target_norm2=target, step=step,
                   timeseries=rd.raw("outputs", "timeseries", default="timeseries.csv"),
                   summary=rd.raw("outputs", "summary", default="summary.json"),
                   tail_fraction=tail, fit_window=fitw, study=study, levels=levels,
                   reference_factor=ref)


def load_config(path) -> RunSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
