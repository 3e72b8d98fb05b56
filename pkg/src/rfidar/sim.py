"""Synthetic wearable-RFID reading traces.

Each (antenna, body part) pair carries a sinusoid-plus-noise RSS process
whose base level comes from a log-distance curve with an orientation loss,
and whose modulation depends on the activity. Body parts can shadow the
line of sight (body -20 dB, arm/leg -10 dB, complete loss below a power
threshold). Only the antenna whose dwell slot is active reads tags.
"""
from __future__ import annotations

import configparser
import csv
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .model import (
    DEFAULT_ACTIVITIES,
    DEFAULT_LAYOUT,
    RSS_CEILING_DBM,
    RSS_FLOOR_DBM,
    BodyLayout,
    Trace,
    write_layout_manifest,
)
from .stream import write_trace

log = logging.getLogger(__name__)

BLOCKERS = ("none", "body", "arm", "leg")
BLOCKAGE_DB = {"none": 0.0, "body": 20.0, "arm": 10.0, "leg": 10.0}
# below these transmit powers the blocker absorbs the signal completely
BLOCKING_POWER_DBM = {"none": -np.inf, "body": 20.0, "arm": 12.5, "leg": 15.0}
_BLOCK_DB = np.array([BLOCKAGE_DB[b] for b in BLOCKERS])
_BLOCK_PWR = np.array([BLOCKING_POWER_DBM[b] for b in BLOCKERS])
BLOCKAGE_EVENT_S = 0.5


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class RssModel:
    power_dbm: float = 25.0
    ref_loss_db: float = 76.0  # path loss at 1 m
    path_loss_exponent: float = 2.0
    angle_loss_db: float = 10.0  # extra loss at 90 degrees tag-antenna angle
    noise_sigma_db: float = 2.0
    floor_dbm: float = RSS_FLOOR_DBM

    def base_rss(self, distance_m, angle_deg=0.0):
        d = np.maximum(np.asarray(distance_m, dtype=float), 0.05)
        ang = np.deg2rad(np.asarray(angle_deg, dtype=float))
        return (self.power_dbm - self.ref_loss_db - 10 * self.path_loss_exponent * np.log10(d)
                - self.angle_loss_db * (1 - np.cos(ang)))


@dataclass(frozen=True, eq=False)
class ActivityProfile:
    """Per (antenna, body part) RSS process parameters for one activity; arrays are n_ant x n_part."""

    name: str
    base_rss_dbm: np.ndarray
    amplitude_db: np.ndarray
    frequency_hz: np.ndarray
    phase_rad: np.ndarray
    phase_jitter: np.ndarray
    blockage_rate: np.ndarray
    blocker: np.ndarray  # index into BLOCKERS
    miss_probability: np.ndarray

    def __post_init__(self):
        if np.any(self.frequency_hz < 0):
            raise ScenarioError(f"{self.name}: frequencies must be >= 0")
        if np.any((self.miss_probability < 0) | (self.miss_probability > 1)):
            raise ScenarioError(f"{self.name}: miss_probability must lie in [0, 1]")


@dataclass(frozen=True)
class DwellSchedule:
    dwell_s: tuple[float, ...] = (2.0, 2.0, 2.0, 2.0)
    order: tuple[int, ...] = (0, 1, 2, 3)
    readings_per_second: float = 50.0

    @property
    def cycle_s(self) -> float:
        return float(sum(self.dwell_s[a] for a in self.order))

    def active_antenna(self, t_s) -> np.ndarray:
        """Antenna id whose dwell slot covers time ``t_s`` (seconds)."""
        dw = np.array([self.dwell_s[a] for a in self.order])
        edges = np.cumsum(dw)
        pos = np.mod(np.asarray(t_s, dtype=float), self.cycle_s)
        slot = np.minimum(np.searchsorted(edges, pos, side="right"), len(dw) - 1)
        return np.asarray(self.order)[slot]


def _emit(model: RssModel, base, amp, freq, phase, blocker, blocked, miss, t, rng,
          offset=0.0):
    """Vectorised RSS draw; returns (rss, detected)."""
    n = np.size(t)
    noise = rng.normal(0.0, 1.0, n) * model.noise_sigma_db
    u = rng.random(n)
    blocker = np.asarray(blocker)
    blocked = np.asarray(blocked, dtype=bool)
    shadow = np.where(blocked, _BLOCK_DB[blocker], 0.0)
    mu = base + offset + amp * np.sin(2 * np.pi * freq * t + phase) - shadow + noise
    absorbed = blocked & (model.power_dbm < _BLOCK_PWR[blocker])
    detected = ~absorbed & (mu >= model.floor_dbm) & (u >= miss)
    rss = np.clip(np.round(mu, 2), model.floor_dbm, RSS_CEILING_DBM)
    return rss, detected


def rss_sample(model: RssModel, profile: ActivityProfile, antenna: int, tag: int, t: float,
               rng: np.random.Generator, *, layout: BodyLayout = DEFAULT_LAYOUT,
               blocked: bool = False, phase: float | None = None,
               offset_db: float = 0.0) -> float | None:
    """One reading attempt; ``None`` when the tag is not detected."""
    p = layout.tag_to_part[tag]
    ph = profile.phase_rad[antenna, p] if phase is None else phase
    rss, ok = _emit(model, profile.base_rss_dbm[antenna, p], profile.amplitude_db[antenna, p],
                    profile.frequency_hz[antenna, p], ph, profile.blocker[antenna, p], blocked,
                    profile.miss_probability[antenna, p], np.array([t]), rng, offset_db)
    return float(rss[0]) if ok[0] else None


def _blockage_timeline(profile: ActivityProfile, duration_s: float, rng, res_s: float = 0.01):
    n_a, n_p = profile.blocker.shape
    n_bins = int(np.ceil(duration_s / res_s)) + 1
    grid = np.zeros((n_a, n_p, n_bins), dtype=bool)
    span = int(round(BLOCKAGE_EVENT_S / res_s))
    for a in range(n_a):
        for p in range(n_p):
            rate = profile.blockage_rate[a, p]
            if profile.blocker[a, p] == 0 or rate <= 0:
                continue
            k = rng.poisson(rate * duration_s)
            for s in (rng.random(k) * duration_s / res_s).astype(int):
                grid[a, p, s:s + span] = True
    return grid


def simulate_activity(profiles: Mapping[str, ActivityProfile], activity: str, duration_s: float,
                      schedule: DwellSchedule = DwellSchedule(), seed=0, *,
                      model: RssModel = RssModel(), layout: BodyLayout = DEFAULT_LAYOUT,
                      tag_offset_db: np.ndarray | None = None, subject_offset_db: float = 0.0,
                      subject_scale: float = 1.0, subject: int | None = None,
                      freq_spread: float = 0.05) -> Trace:
    """Generate one labelled trace of ``duration_s`` seconds.

    Attempts arrive on a jittered 1/rate grid; each picks a tag uniformly
    among those in range of the dwelling antenna.
    """
    if activity not in profiles:
        raise ScenarioError(f"unknown activity {activity!r}")
    if duration_s <= 0:
        raise ScenarioError("duration_s must be > 0")
    prof = profiles[activity]
    rng = np.random.default_rng(seed)
    n_a, n_t = layout.num_antennas, layout.num_tags
    part = np.asarray(layout.tag_to_part)
    slot = np.array([layout.tags_of_part(p).index(t) for t, p in enumerate(layout.tag_to_part)])
    if tag_offset_db is None:
        tag_offset_db = np.zeros((n_a, layout.tags_per_part))
    tag_base = prof.base_rss_dbm[:, part] + tag_offset_db[:, slot] + subject_offset_db  # n_a x n_t

    global_phase = rng.uniform(0, 2 * np.pi)
    freq_scale = 1.0 + freq_spread * rng.standard_normal()
    jitter = rng.standard_normal(prof.phase_jitter.shape) * prof.phase_jitter
    blocked_grid = _blockage_timeline(prof, duration_s, rng)

    rate = schedule.readings_per_second
    n = int(round(rate * duration_s))
    t = (np.arange(n) + rng.random(n)) / rate
    ant = schedule.active_antenna(t)
    in_range = tag_base >= model.floor_dbm
    n_in = in_range.sum(axis=1)
    pick = rng.random(n)
    tag = np.full(n, -1)
    for a in range(n_a):
        sel = ant == a
        if n_in[a] == 0 or not sel.any():
            continue
        choices = np.flatnonzero(in_range[a])
        tag[sel] = choices[np.minimum((pick[sel] * n_in[a]).astype(int), n_in[a] - 1)]
    keep = tag >= 0
    t, ant, tag = t[keep], ant[keep], tag[keep]
    p = part[tag]
    bins = np.minimum((t / 0.01).astype(int), blocked_grid.shape[2] - 1)
    rss, ok = _emit(model, tag_base[ant, tag], subject_scale * prof.amplitude_db[ant, p],
                    freq_scale * prof.frequency_hz[ant, p],
                    global_phase + prof.phase_rad[ant, p] + jitter[ant, p],
                    prof.blocker[ant, p], blocked_grid[ant, p, bins],
                    prof.miss_probability[ant, p], t, rng)
    ms = np.floor(t * 1000).astype(np.int64)
    order = np.lexsort((tag, ant, ms))
    order = order[ok[order]]
    return Trace(ms[order], ant[order], tag[order], rss[order], label=activity, subject=subject)


# -- scenarios ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Motion:
    """Activity-specific per-part motion parameters (length n_part arrays)."""

    distance_scale: np.ndarray
    amplitude_db: np.ndarray
    frequency_hz: np.ndarray
    phase_jitter: float = 0.3
    blockage_rate: float = 0.1
    miss_probability: float = 0.1


@dataclass(frozen=True, eq=False)
class Scenario:
    layout: BodyLayout
    activities: tuple[str, ...]
    motions: dict
    distance_m: np.ndarray  # n_ant x n_part, neutral posture
    angle_deg: np.ndarray
    coupling: np.ndarray  # how strongly each part's motion modulates each antenna
    blocker: np.ndarray  # n_ant x n_part indices into BLOCKERS
    part_phase_rad: np.ndarray
    tag_offset_db: np.ndarray  # n_ant x tags_per_part
    model: RssModel = field(default_factory=RssModel)
    schedule: DwellSchedule = field(default_factory=DwellSchedule)
    subjects: int = 4
    instances_per_class: int = 8
    duration_s: float = 60.0
    subject_offset_db: float = 5.0
    subject_scale_spread: float = 0.2
    freq_spread: float = 0.05


def build_profiles(scenario: Scenario) -> dict[str, ActivityProfile]:
    out = {}
    n_a = scenario.layout.num_antennas
    for name in scenario.activities:
        m = scenario.motions[name]
        shape = scenario.distance_m.shape
        base = scenario.model.base_rss(scenario.distance_m * m.distance_scale[None, :],
                                       scenario.angle_deg)
        out[name] = ActivityProfile(
            name=name,
            base_rss_dbm=base,
            amplitude_db=scenario.coupling * m.amplitude_db[None, :],
            frequency_hz=np.tile(m.frequency_hz, (n_a, 1)),
            phase_rad=np.tile(scenario.part_phase_rad, (n_a, 1)),
            phase_jitter=np.full(shape, m.phase_jitter),
            blockage_rate=np.full(shape, m.blockage_rate),
            blocker=scenario.blocker,
            miss_probability=np.full(shape, m.miss_probability),
        )
    return out


def _floats(section, key, n, where):
    try:
        vals = [float(v) for v in section[key].split(",")]
    except KeyError:
        raise ScenarioError(f"[{where}] missing key '{key}'") from None
    except ValueError:
        raise ScenarioError(f"[{where}] {key}: expected comma-separated numbers") from None
    if n is not None and len(vals) != n:
        raise ScenarioError(f"[{where}] {key}: expected {n} values, got {len(vals)}")
    return np.array(vals)


def _matrix(cp, section, prefix, layout, conv=float):
    sec = cp[section]
    rows = []
    for name in layout.antennas:
        key = f"{prefix}.{name}"
        if key not in sec:
            raise ScenarioError(f"[{section}] missing key '{key}'")
        vals = [v.strip() for v in sec[key].split(",")]
        if len(vals) != layout.num_parts:
            raise ScenarioError(f"[{section}] {key}: expected {layout.num_parts} values")
        try:
            rows.append([conv(v) for v in vals])
        except ValueError as e:
            raise ScenarioError(f"[{section}] {key}: {e}") from None
    return np.array(rows)


def _blocker_code(name: str) -> int:
    if name not in BLOCKERS:
        raise ValueError(f"unknown blocker {name!r}, expected one of {BLOCKERS}")
    return BLOCKERS.index(name)


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    """Parse the INI scenario format (see ``data/default_scenario.ini`` for the schema)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ScenarioError(str(e)) from None
    for sec in ("scenario", "geometry"):
        if sec not in cp:
            raise ScenarioError(f"{source}: missing section [{sec}]")
    sc = cp["scenario"]

    def num(key, default, conv=float):
        try:
            return conv(sc.get(key, str(default)))
        except ValueError:
            raise ScenarioError(f"[scenario] {key}: not a number") from None

    if "layout" in cp:
        lay = cp["layout"]
        layout = BodyLayout.uniform(
            [a.strip() for a in lay.get("antennas", "").split(",") if a.strip()],
            [p.strip() for p in lay.get("parts", "").split(",") if p.strip()],
            int(lay.get("tags_per_part", "4")))
    else:
        layout = DEFAULT_LAYOUT
    activities = tuple(a.strip() for a in sc.get("activities", ",".join(DEFAULT_ACTIVITIES))
                       .split(",") if a.strip())
    if not activities:
        raise ScenarioError("[scenario] activities: empty")
    model = RssModel(
        power_dbm=num("power_dbm", 25.0),
        ref_loss_db=num("ref_loss_db", 76.0),
        path_loss_exponent=num("path_loss_exponent", 2.0),
        angle_loss_db=num("angle_loss_db", 10.0),
        noise_sigma_db=num("noise_sigma_db", 2.0),
    )
    dwell = num("dwell_s", 2.0)
    schedule = DwellSchedule(tuple([dwell] * layout.num_antennas),
                             tuple(range(layout.num_antennas)),
                             num("readings_per_second", 50.0))
    geo = cp["geometry"]
    n_p = layout.num_parts
    motions = {}
    for name in activities:
        sec_name = f"activity.{name}"
        if sec_name not in cp:
            raise ScenarioError(f"{source}: missing section [{sec_name}]")
        s = cp[sec_name]
        try:
            motions[name] = Motion(
                _floats(s, "distance_scale", n_p, sec_name),
                _floats(s, "amplitude_db", n_p, sec_name),
                _floats(s, "frequency_hz", n_p, sec_name),
                float(s.get("phase_jitter", "0.3")),
                float(s.get("blockage_rate", "0.1")),
                float(s.get("miss_probability", "0.1")),
            )
        except ValueError as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"[{sec_name}] {e}") from None
    scenario = Scenario(
        layout=layout,
        activities=activities,
        motions=motions,
        distance_m=_matrix(cp, "geometry", "distance", layout),
        angle_deg=_matrix(cp, "geometry", "angle", layout),
        coupling=_matrix(cp, "geometry", "coupling", layout),
        blocker=_matrix(cp, "geometry", "blocker", layout, _blocker_code).astype(int),
        part_phase_rad=_floats(geo, "part_phase_rad", n_p, "geometry"),
        tag_offset_db=_matrix_tags(geo, layout),
        model=model,
        schedule=schedule,
        subjects=num("subjects", 4, int),
        instances_per_class=num("instances_per_class", 8, int),
        duration_s=num("duration_s", 60.0),
        subject_offset_db=num("subject_offset_db", 5.0),
        subject_scale_spread=num("subject_scale_spread", 0.2),
        freq_spread=num("freq_spread", 0.05),
    )
    validate_scenario(scenario)
    return scenario


def _matrix_tags(geo, layout):
    rows = []
    for name in layout.antennas:
        key = f"tag_offset_db.{name}"
        if key in geo:
            rows.append(_floats(geo, key, layout.tags_per_part, "geometry"))
        else:
            rows.append(np.zeros(layout.tags_per_part))
    return np.array(rows)


def validate_scenario(s: Scenario) -> None:
    if s.subjects < 1:
        raise ScenarioError("[scenario] subjects: must be >= 1")
    if s.instances_per_class < 0:
        raise ScenarioError("[scenario] instances_per_class: must be >= 0")
    if s.duration_s <= 0:
        raise ScenarioError("[scenario] duration_s: must be > 0")
    if s.model.power_dbm not in (20.0, 25.0, 30.0):
        log.info("transmit power %.1f dBm outside the measured levels 20/25/30", s.model.power_dbm)
    if s.subject_offset_db < 0 or s.subject_scale_spread < 0:
        raise ScenarioError("[scenario] subject variation spreads must be >= 0")
    if np.any(s.distance_m <= 0):
        raise ScenarioError("[geometry] distance: must be > 0")
    for name, m in s.motions.items():
        if not 0 <= m.miss_probability <= 1:
            raise ScenarioError(f"[activity.{name}] miss_probability: must lie in [0, 1]")
        if np.any(m.frequency_hz < 0):
            raise ScenarioError(f"[activity.{name}] frequency_hz: must be >= 0")
        if m.blockage_rate < 0:
            raise ScenarioError(f"[activity.{name}] blockage_rate: must be >= 0")


def load_scenario(path: str | Path | None = None) -> Scenario:
    """Load a scenario file; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("rfidar.data").joinpath("default_scenario.ini").read_text()
        return parse_scenario(text, "default_scenario.ini")
    return parse_scenario(Path(path).read_text(), str(path))


def default_scenario_text() -> str:
    return resources.files("rfidar.data").joinpath("default_scenario.ini").read_text()


# -- datasets -----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRow:
    file: str
    activity: str
    subject: int
    seed: int


def subject_params(scenario: Scenario, seed: int) -> list[tuple[float, float]]:
    """(RSS offset dB, modulation scale) per subject, drawn once per subject."""
    out = []
    for s in range(scenario.subjects):
        rng = np.random.default_rng([seed, 0x5B, s])
        off = rng.uniform(-scenario.subject_offset_db, scenario.subject_offset_db)
        scale = 1.0 + rng.uniform(-scenario.subject_scale_spread, scenario.subject_scale_spread)
        out.append((float(off), float(scale)))
    return out


def instance_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def simulate_dataset(scenario: Scenario, seed: int = 42) -> list[tuple[Trace, ManifestRow]]:
    """All instances in memory, ordered subject-major, then activity, then repetition."""
    profiles = build_profiles(scenario)
    subj = subject_params(scenario, seed)
    out = []
    idx = 0
    for s, (off, scale) in enumerate(subj):
        for act in scenario.activities:
            for rep in range(scenario.instances_per_class):
                iseed = instance_seed(seed, idx)
                trace = simulate_activity(
                    profiles, act, scenario.duration_s, scenario.schedule, iseed,
                    model=scenario.model, layout=scenario.layout,
                    tag_offset_db=scenario.tag_offset_db, subject_offset_db=off,
                    subject_scale=scale, subject=s, freq_spread=scenario.freq_spread)
                name = f"traces/{idx:04d}_{act}_s{s}_r{rep}.csv"
                out.append((trace, ManifestRow(name, act, s, iseed)))
                idx += 1
    return out


def generate_dataset(scenario: Scenario, out_dir: str | Path, seed: int = 42,
                     scenario_text: str | None = None) -> list[ManifestRow]:
    """Write one trace file per instance plus ``manifest.csv`` and ``layout.txt``."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    rows = []
    for trace, row in simulate_dataset(scenario, seed):
        write_trace(out / row.file, trace,
                    header=f"activity={row.activity} subject={row.subject} seed={row.seed}")
        rows.append(row)
    write_manifest(out / "manifest.csv", rows)
    write_layout_manifest(scenario.layout, out / "layout.txt")
    if scenario_text is not None:
        (out / "scenario.ini").write_text(scenario_text)
    return rows


def write_manifest(path: str | Path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "activity", "subject", "seed"])
        for r in rows:
            w.writerow([r.file, r.activity, r.subject, r.seed])


def read_manifest(path: str | Path) -> list[ManifestRow]:
    with open(path, newline="") as fh:
        return [ManifestRow(r["file"], r["activity"], int(r["subject"]), int(r["seed"]))
                for r in csv.DictReader(fh)]
