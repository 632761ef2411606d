"""Volumes on disk, preprocessing, phantoms and dataset splits."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, FormatError

VOLUME_MAGIC = b"TABSVOL1"
VOLUME_VERSION = 1
SEMANTICS = ("raw_t1", "tissue_probs", "labels", "mask")
_HEADER = struct.Struct("<7I")
_MAX_PAYLOAD = 1 << 34


@dataclass
class Volume:
    """A ``[C, dx, dy, dz]`` float32 grid plus header metadata."""

    values: np.ndarray
    semantics: str = "raw_t1"
    provenance: str = ""
    site: str = ""
    subject: str = ""
    timepoint: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim == 3:
            v = v[None]
        if v.ndim != 4:
            raise ConfigurationError(f"volume values must be 3-d or 4-d, got shape {v.shape}")
        self.values = np.ascontiguousarray(v)
        if self.semantics not in SEMANTICS:
            raise ConfigurationError(f"unknown semantics {self.semantics!r}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape[1:])

    def metadata(self) -> dict:
        return {"provenance": self.provenance, "site": self.site,
                "subject": self.subject, "timepoint": self.timepoint}

    def with_values(self, values: np.ndarray, **changes) -> "Volume":
        return replace(self, values=values, **changes)


@dataclass(frozen=True)
class VolumeHeader:
    channels: int
    dims: tuple[int, int, int]
    semantics: str
    metadata: dict
    payload_offset: int


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write a whole file via a temporary sibling and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_volume(v: Volume) -> bytes:
    meta = json.dumps(v.metadata(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = _HEADER.pack(VOLUME_VERSION, v.channels, *v.dims, 0, SEMANTICS.index(v.semantics))
    payload = v.values.astype("<f4", copy=False).tobytes(order="C")
    return VOLUME_MAGIC + head + struct.pack("<I", len(meta)) + meta + payload


def save_volume(v: Volume, path) -> None:
    atomic_write_bytes(path, encode_volume(v))


def _parse_header(buf: bytes, where: str) -> VolumeHeader:
    if len(buf) < 8 or buf[:8] != VOLUME_MAGIC:
        raise FormatError(f"{where}: bad magic at offset 0 (expected {VOLUME_MAGIC!r})")
    end = 8 + _HEADER.size + 4
    if len(buf) < end:
        raise FormatError(f"{where}: truncated header, expected {end} bytes, got {len(buf)}")
    version, channels, dx, dy, dz, dtype, sem = _HEADER.unpack_from(buf, 8)
    if version != VOLUME_VERSION:
        raise FormatError(f"{where}: unsupported version {version} at offset 8")
    if dtype != 0:
        raise FormatError(f"{where}: unsupported dtype code {dtype} at offset 28")
    if sem >= len(SEMANTICS):
        raise FormatError(f"{where}: unknown semantics code {sem} at offset 32")
    if min(channels, dx, dy, dz) == 0:
        raise FormatError(f"{where}: zero extent in header at offset 12")
    if channels * dx * dy * dz * 4 > _MAX_PAYLOAD:
        raise FormatError(f"{where}: dimensions {channels}x{dx}x{dy}x{dz} overflow payload limit")
    (meta_len,) = struct.unpack_from("<I", buf, end - 4)
    if len(buf) < end + meta_len:
        raise FormatError(
            f"{where}: truncated metadata at offset {end}, expected {meta_len} bytes, "
            f"got {len(buf) - end}"
        )
    try:
        meta = json.loads(buf[end:end + meta_len].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{where}: unreadable metadata at offset {end}") from exc
    return VolumeHeader(channels, (dx, dy, dz), SEMANTICS[sem], meta, end + meta_len)


def inspect_volume(path) -> VolumeHeader:
    """Read only the header of a volume file."""
    with open(path, "rb") as fh:
        head = fh.read(8 + _HEADER.size + 4)
        if len(head) == 8 + _HEADER.size + 4:
            (meta_len,) = struct.unpack_from("<I", head, len(head) - 4)
            head += fh.read(min(meta_len, 1 << 20))
    return _parse_header(head, str(path))


def decode_volume(buf: bytes, where: str = "<bytes>") -> Volume:
    hdr = _parse_header(buf, where)
    count = hdr.channels * int(np.prod(hdr.dims))
    expected = hdr.payload_offset + 4 * count
    if len(buf) != expected:
        raise FormatError(
            f"{where}: payload length mismatch at offset {hdr.payload_offset}: "
            f"expected {expected} bytes total, got {len(buf)}"
        )
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=hdr.payload_offset)
    values = values.reshape((hdr.channels,) + hdr.dims).astype(np.float32)
    m = hdr.metadata
    return Volume(values, hdr.semantics, m.get("provenance", ""), m.get("site", ""),
                  m.get("subject", ""), m.get("timepoint", ""))


def load_volume(path) -> Volume:
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"{path}: no such volume file") from exc
    return decode_volume(buf, str(path))


# -- preprocessing ------------------------------------------------------------------

def mip_mask(volumes: list[Volume], threshold: float = 0.0) -> Volume:
    """Voxelwise maximum over all scans (and channels), thresholded: ``max > threshold``."""
    if not volumes:
        raise DataError("mip_mask: no volumes given")
    dims = volumes[0].dims
    peak = np.full(dims, -np.inf, dtype=np.float32)
    for v in volumes:
        if v.dims != dims:
            raise ConfigurationError(f"mip_mask: volume dims {v.dims} differ from {dims}")
        np.maximum(peak, v.values.max(axis=0), out=peak)
    return Volume((peak > threshold).astype(np.float32), "mask", provenance="mip")


def _crop_window(extent: int, target: int, lo: int | None, hi: int | None) -> int:
    if lo is None:
        start = (extent - target) // 2
    else:
        start = (lo + hi + 1 - target) // 2
        start = min(max(start, hi + 1 - target), lo)
    return min(max(start, 0), extent - target)


def pad_crop(v: Volume, target: int, dataset_mask: Volume) -> Volume:
    """Bring every spatial axis to ``target`` voxels without cutting masked anatomy."""
    if dataset_mask.dims != v.dims:
        raise ConfigurationError(f"pad_crop: mask dims {dataset_mask.dims} != volume dims {v.dims}")
    occupied = dataset_mask.values[0] > 0
    values = v.values
    for axis, extent in enumerate(v.dims):
        other = tuple(a for a in range(3) if a != axis)
        hits = np.flatnonzero(occupied.any(axis=other))
        lo, hi = (int(hits[0]), int(hits[-1])) if hits.size else (None, None)
        if lo is not None and hi - lo + 1 > target:
            raise DataError(
                f"pad_crop: mask spans {hi - lo + 1} voxels on axis {axis}, exceeds target {target}"
            )
        ax = axis + 1
        if extent < target:
            before = (target - extent) // 2
            pad = [(0, 0)] * 4
            pad[ax] = (before, target - extent - before)
            values = np.pad(values, pad)
            occupied = np.pad(occupied, pad[1:])
        elif extent > target:
            start = _crop_window(extent, target, lo, hi)
            values = np.take(values, range(start, start + target), axis=ax)
            occupied = np.take(occupied, range(start, start + target), axis=axis)
    return v.with_values(values)


def normalize_intensity(v: Volume) -> Volume:
    """Linearly map the volume's minimum to -1 and maximum to 1."""
    x = v.values.astype(np.float64)
    if not np.isfinite(x).all():
        raise DataError("normalize_intensity: volume contains non-finite values")
    lo, hi = x.min(), x.max()
    if not hi > lo:
        raise DataError("normalize_intensity: constant volume cannot be normalized")
    out = (x - lo) / (hi - lo) * 2.0 - 1.0
    return v.with_values(out.astype(np.float32))


# -- phantoms -----------------------------------------------------------------------

_LOGISTIC_SPAN = 2.0 * math.log(9.0)


@dataclass(frozen=True)
class PhantomSpec:
    """Nested-ellipsoid head.

    Semi-axes are in voxels and describe an average subject at ``atrophy=0``;
    when omitted they are derived from ``size``.  ``boundary_softness`` is the
    10-90% width of each logistic tissue boundary.
    """

    size: int = 32
    seed: int = 0
    atrophy: float = 0.0
    head_axes: tuple[float, float, float] | None = None
    gm_axes: tuple[float, float, float] | None = None
    wm_axes: tuple[float, float, float] | None = None
    ventricle_axes: tuple[float, float, float] | None = None
    boundary_softness: float = 1.0

    def resolved_axes(self) -> dict[str, np.ndarray]:
        n = self.size
        head = np.array(self.head_axes or (0.44 * n, 0.38 * n, 0.42 * n))
        gm = np.array(self.gm_axes or tuple(0.88 * head))
        wm = np.array(self.wm_axes or tuple(0.62 * head))
        vent = np.array(self.ventricle_axes or (0.10 * n, 0.06 * n, 0.08 * n))
        return {"head": head, "gm": gm, "wm": wm, "ventricles": vent}


def _check_nested(axes: dict[str, np.ndarray]) -> None:
    order = ["ventricles", "wm", "gm", "head"]
    for inner, outer in zip(order, order[1:]):
        if np.any(axes[inner] >= axes[outer]):
            raise ConfigurationError(f"phantom geometry not nested: {inner} is not inside {outer}")
    if np.any(axes["ventricles"] <= 0):
        raise ConfigurationError("phantom semi-axes must be positive")


def subject_geometry(spec: PhantomSpec) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Per-subject semi-axes (after seed jitter and atrophy) and the common center."""
    if spec.size % 16 or spec.size < 16:
        raise ConfigurationError(f"phantom size {spec.size} must be a positive multiple of 16")
    if not 0.0 <= spec.atrophy <= 1.0:
        raise ConfigurationError(f"atrophy {spec.atrophy} outside [0, 1]")
    if spec.boundary_softness <= 0:
        raise ConfigurationError("boundary_softness must be positive")
    base = spec.resolved_axes()
    _check_nested(base)
    rng = np.random.default_rng(spec.seed)
    scale = rng.uniform(0.95, 1.03, size=3)
    inner = rng.uniform(0.97, 1.03, size=3)
    center = (spec.size - 1) / 2.0 + rng.uniform(-0.5, 0.5, size=3)
    a = spec.atrophy
    axes = {
        "head": base["head"] * scale,
        "gm": base["gm"] * scale * (1.0 - 0.09 * a),
        "wm": base["wm"] * scale * inner * (1.0 - 0.04 * a),
        "ventricles": base["ventricles"] * scale * inner * (1.0 + 0.8 * a),
    }
    _check_nested(axes)
    return axes, center


def _ellipsoid_distance(grid: np.ndarray, center: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """First-order signed distance (voxels) to an axis-aligned ellipsoid surface."""
    rel = grid - center[:, None, None, None]
    scaled = rel / axes[:, None, None, None]
    level = np.sum(scaled * scaled, axis=0) - 1.0
    grad = 2.0 * np.sqrt(np.sum((rel / axes[:, None, None, None] ** 2) ** 2, axis=0))
    return level / np.maximum(grad, 1e-12)


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, Volume]:
    """Soft GM/WM/CSF probability maps and the hard head mask for one subject."""
    axes, center = subject_geometry(spec)
    n = spec.size
    grid = np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64),) * 3, indexing="ij"))
    tau = spec.boundary_softness / _LOGISTIC_SPAN

    def inside(name: str) -> np.ndarray:
        d = _ellipsoid_distance(grid, center, axes[name])
        return 0.5 * (1.0 - np.tanh(d / (2.0 * tau)))  # logistic(-d/tau), overflow-free

    rel = (grid - center[:, None, None, None]) / axes["head"][:, None, None, None]
    head = np.sum(rel * rel, axis=0) <= 1.0
    g, w, v = inside("gm"), inside("wm"), inside("ventricles")
    gm = g * (1.0 - w)
    wm = g * w * (1.0 - v)
    csf = (1.0 - g) + g * w * v
    probs = np.stack([gm, wm, csf]) * head
    meta = dict(provenance=f"phantom seed={spec.seed} atrophy={spec.atrophy:.6g}")
    gt = Volume(probs.astype(np.float32), "tissue_probs", **meta)
    mask = Volume(head.astype(np.float32), "mask", **meta)
    return gt, mask


@dataclass(frozen=True)
class SiteParams:
    site: str = "siteA"
    tissue_means: tuple[float, float, float] = (0.55, 0.85, 0.20)
    noise_sigma: float = 0.02
    bias_amplitude: float = 0.05
    bias_wavelength: float = 2.0  # in units of the field of view
    gain: float = 1.0

    def validate(self) -> "SiteParams":
        m = self.tissue_means
        if len(set(m)) != 3:
            raise ConfigurationError(f"{self.site}: tissue means must be pairwise distinct")
        if self.noise_sigma < 0 or self.bias_amplitude < 0:
            raise ConfigurationError(f"{self.site}: noise and bias amplitude must be >= 0")
        if self.bias_amplitude >= 1:
            raise ConfigurationError(f"{self.site}: bias amplitude must be < 1 to keep the field positive")
        if self.bias_wavelength <= 0 or self.gain <= 0:
            raise ConfigurationError(f"{self.site}: bias wavelength and gain must be positive")
        return self


SITE_PRESETS: dict[str, SiteParams] = {
    "siteA": SiteParams("siteA", (0.55, 0.85, 0.20), 0.02, 0.05, 2.0, 1.0),
    "siteB": SiteParams("siteB", (0.50, 0.80, 0.25), 0.03, 0.10, 1.5, 1.2),
    "siteC": SiteParams("siteC", (0.60, 0.82, 0.30), 0.05, 0.15, 1.0, 0.8),
    "siteD": SiteParams("siteD", (0.52, 0.83, 0.22), 0.03, 0.08, 1.5, 1.1),
}

# atrophy ranges emulate each cohort's age span; siteD is younger on average
SITE_ATROPHY: dict[str, tuple[float, float]] = {
    "siteA": (0.0, 1.0), "siteB": (0.0, 0.8), "siteC": (0.0, 0.9), "siteD": (0.0, 0.6),
}


def site_params(name: str) -> SiteParams:
    try:
        return SITE_PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown site {name!r}; choose from {sorted(SITE_PRESETS)}") from None


def bias_field(dims: tuple[int, int, int], site: SiteParams, seed: int) -> np.ndarray:
    """Smooth positive multiplicative field ``1 + amplitude * (mixture of 3 cosines in [-1, 1])``."""
    rng = np.random.default_rng([seed, 0xB1A5])
    coords = [np.arange(n, dtype=np.float64) / n for n in dims]
    grid = np.meshgrid(*coords, indexing="ij")
    field_ = np.zeros(dims)
    weights = rng.dirichlet(np.ones(3))
    for wgt in weights:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        phase = rng.uniform(0, 2 * np.pi)
        arg = sum(d * g for d, g in zip(direction, grid)) * (2 * np.pi / site.bias_wavelength)
        field_ += wgt * np.cos(arg + phase)
    return 1.0 + site.bias_amplitude * field_


def render_scan(gt: Volume, site: SiteParams, noise_seed: int) -> Volume:
    """Simulate a skull-stripped T1w acquisition of ``gt`` at ``site``.

    ``gain * (bias * sum_t p_t * mean_t + noise)`` inside the head; zero outside.
    """
    site.validate()
    probs = gt.values.astype(np.float64)
    if probs.shape[0] != 3:
        raise ConfigurationError("render_scan: ground truth must have 3 tissue channels")
    head = probs.sum(axis=0) > 0
    signal = np.tensordot(np.asarray(site.tissue_means, dtype=np.float64), probs, axes=(0, 0))
    signal = signal * bias_field(gt.dims, site, noise_seed)
    if site.noise_sigma:
        rng = np.random.default_rng([noise_seed, 0x5EED])
        signal = signal + site.noise_sigma * rng.standard_normal(gt.dims)
    scan = np.where(head, site.gain * signal, 0.0)
    return Volume(scan[None].astype(np.float32), "raw_t1",
                  provenance=f"render noise_seed={noise_seed}", site=site.site,
                  subject=gt.subject, timepoint=gt.timepoint)


# -- splitting ----------------------------------------------------------------------

def split_sizes(n: int) -> tuple[int, int, int]:
    train, val = (3 * n) // 5, n // 5
    return train, val, n - train - val


def _controlled_round(expected: np.ndarray, row_totals: list[int], col_totals: list[int]) -> np.ndarray:
    """Round a matrix to floor/ceil entries matching integer row and column totals."""
    base = np.floor(expected + 1e-9).astype(int)
    row_need = np.array(row_totals) - base.sum(axis=1)
    col_need = np.array(col_totals) - base.sum(axis=0)
    fractional = expected - base > 1e-9

    def search(row: int, col_left: np.ndarray):
        if row == len(row_totals):
            return [] if not col_left.any() else None
        options = [j for j in range(expected.shape[1]) if fractional[row, j] and col_left[j] > 0]
        options.sort(key=lambda j: -(expected[row, j] - base[row, j]))
        for combo in itertools.combinations(options, int(row_need[row])):
            left = col_left.copy()
            left[list(combo)] -= 1
            rest = search(row + 1, left)
            if rest is not None:
                return [combo] + rest
        return None

    picks = search(0, col_need.copy())
    if picks is None:
        raise DataError("split: no integer allocation matches the requested totals")
    for row, combo in enumerate(picks):
        base[row, list(combo)] += 1
    return base


def split_dataset(subjects: list[tuple[str, float]], seed: int = 0, bins: int = 5
                  ) -> tuple[list[str], list[str], list[str]]:
    """Stratified 3:1:1 train/validation/test split over quantile bins of the covariate."""
    n = len(subjects)
    if n == 0:
        raise DataError("split_dataset: no subjects")
    ids = [s for s, _ in subjects]
    if len(set(ids)) != n:
        raise DataError("split_dataset: duplicate subject ids")
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(n)
    order = sorted(range(n), key=lambda i: (subjects[i][1], tiebreak[i]))
    groups = [list(g) for g in np.array_split(np.array(order, dtype=int), bins)]
    sizes = split_sizes(n)
    expected = np.array([[len(g) * s / n for s in sizes] for g in groups])
    alloc = _controlled_round(expected, [len(g) for g in groups], list(sizes))
    out: tuple[list[str], list[str], list[str]] = ([], [], [])
    for g, counts in zip(groups, alloc):
        members = [g[i] for i in rng.permutation(len(g))]
        cuts = np.cumsum(counts)
        for part, lo, hi in zip(out, [0, *cuts[:-1]], cuts):
            part.extend(ids[i] for i in members[lo:hi])
    return tuple(sorted(part, key=ids.index) for part in out)


# -- dataset directories ------------------------------------------------------------

MANIFEST = "manifest.csv"
MANIFEST_FIELDS = ["subject", "site", "atrophy", "timepoints", "gt_file", "scan_files"]


@dataclass
class SubjectRecord:
    subject: str
    site: str
    atrophy: float
    gt_file: str
    scan_files: list[str] = field(default_factory=list)


def write_phantom_dataset(out_dir, count: int, size: int, site: str, seed: int,
                          atrophy_range: tuple[float, float] | None = None,
                          retest: bool = False) -> list[SubjectRecord]:
    """Generate ``count`` phantom subjects for one site and write volumes plus manifest."""
    if count < 1:
        raise ConfigurationError("--count must be >= 1")
    params = site_params(site)
    lo, hi = atrophy_range or SITE_ATROPHY[site]
    if not 0 <= lo <= hi <= 1:
        raise ConfigurationError(f"atrophy range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0xA7])
    atrophies = rng.uniform(lo, hi, size=count)
    geometry_seeds = rng.integers(0, 2**31 - 1, size=count)
    noise_seeds = rng.integers(0, 2**31 - 1, size=(count, 2))
    timepoints = ["t1", "t2"] if retest else ["t1"]
    records = []
    for i in range(count):
        sid = f"{site}-{i:04d}"
        a = round(float(atrophies[i]), 6)
        spec = PhantomSpec(size=size, seed=int(geometry_seeds[i]), atrophy=a)
        gt, _ = generate_phantom(spec)
        gt.site, gt.subject = site, sid
        gt_name = f"{sid}_gt.tvol"
        save_volume(gt, out / gt_name)
        scans = []
        for t, tp in enumerate(timepoints):
            gt.timepoint = tp
            scan = render_scan(gt, params, int(noise_seeds[i, t]))
            name = f"{sid}_{tp}.tvol"
            save_volume(scan, out / name)
            scans.append(name)
        records.append(SubjectRecord(sid, site, a, gt_name, scans))
    write_manifest(out, records)
    return records


def write_manifest(out_dir, records: list[SubjectRecord]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)
    for r in records:
        writer.writerow([r.subject, r.site, f"{r.atrophy:.6f}", len(r.scan_files),
                         r.gt_file, ";".join(r.scan_files)])
    atomic_write_text(Path(out_dir) / MANIFEST, buf.getvalue())


def read_manifest(data_dir) -> list[SubjectRecord]:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise DataError(f"{data_dir}: missing {MANIFEST}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise FormatError(f"{path}: unexpected columns {reader.fieldnames}")
        return [SubjectRecord(row["subject"], row["site"], float(row["atrophy"]), row["gt_file"],
                              [s for s in row["scan_files"].split(";") if s])
                for row in reader]


@dataclass
class Sample:
    """Model-ready pair: normalized ``[1,N,N,N]`` scan and ``[3,N,N,N]`` target."""

    subject: str
    timepoint: str
    image: np.ndarray
    target: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.target.sum(axis=0) > 0


def load_samples(data_dir, subjects: list[str] | None = None, target: int | None = None,
                 timepoint: int = 0) -> list[Sample]:
    """Load, pad/crop (guided by the dataset's MIP mask) and normalize scans."""
    data_dir = Path(data_dir)
    records = read_manifest(data_dir)
    if subjects is not None:
        wanted = set(subjects)
        records = [r for r in records if r.subject in wanted]
    pairs = []
    for r in records:
        if timepoint >= len(r.scan_files):
            raise DataError(f"{r.subject}: no scan for timepoint index {timepoint}")
        pairs.append((r, load_volume(data_dir / r.scan_files[timepoint]),
                      load_volume(data_dir / r.gt_file)))
    if not pairs:
        return []
    mask = None
    if target is not None and any(s.dims != (target,) * 3 for _, s, _ in pairs):
        mask = mip_mask([s for _, s, _ in pairs])
    samples = []
    for r, scan, gt in pairs:
        if mask is not None:
            scan, gt = pad_crop(scan, target, mask), pad_crop(gt, target, mask)
        samples.append(Sample(r.subject, scan.timepoint or f"t{timepoint + 1}",
                              normalize_intensity(scan).values, gt.values))
    return samples
