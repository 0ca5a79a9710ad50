"""Deterministic synthetic selfie-capture corpora.

Bona fide traces follow a fixed capture template: the phone is raised
toward vertical before capture (acc z drops), held still for about a
second, then tilted back toward horizontal (a negative gyro-x burst) before
motion variability grows while the user waits.  Attack proxies drop or
displace that template.  The generator is a test fixture, not a model of
human motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .seeds import DEFAULT_SEED, derive_seed
from .trace import MotionTrace, write_corpus

G = 9.81
FS_HZ = 50.0
PERIOD_MS = 20
DECIMALS = 7
DURATION_S = 10.5
LEVER_ARM_M = 0.3

SHIFT_RANGE_MS = (1500, 3000)
DEFAULT_ATTACK_COUNTS = (6, 11, 18)  # stationary, handheld, temporal shift
# window bounds the shift must respect so shifted traces stay usable
_MIN_PRE_S = 1.0
_MIN_POST_S = 3.0


class InfeasibleTimingError(ValueError):
    pass


@dataclass(frozen=True)
class MotionProfile:
    """Per-participant handling style. Angles in degrees, durations in seconds."""

    participant_id: int | None = None
    base_pitch: float = 40.0
    roll: float = 0.0
    raise_from: float = 12.0  # pitch deficit right after the camera opens
    raise_s: float = 0.6
    tilt_up: float = 25.0
    tilt_up_s: float = 1.2
    hold_s: float = 1.0
    tilt_back: float = 35.0
    tilt_back_s: float = 0.7
    sway_amp: float = 2.0
    sway_hz: float = 0.8
    wait_amp: float = 4.0
    wait_ramp_s: float = 1.5
    heading: float = 0.0
    field_ut: float = 45.0
    inclination: float = 65.0
    acc_noise: float = 0.05
    gyr_noise: float = 0.01
    mag_noise: float = 0.3
    timing_jitter_ms: int = 2
    camera_open_s: float = 0.5
    variability: float = 0.08  # relative per-sequence spread of template parameters
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        for name in ("raise_s", "tilt_up_s", "hold_s", "tilt_back_s", "wait_ramp_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("acc_noise", "gyr_noise", "mag_noise", "variability", "sway_amp", "wait_amp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.timing_jitter_ms < 0 or self.timing_jitter_ms >= PERIOD_MS // 2:
            raise ValueError("timing_jitter_ms must lie in [0, 10)")

    def noiseless(self) -> "MotionProfile":
        return replace(self, acc_noise=0.0, gyr_noise=0.0, mag_noise=0.0, timing_jitter_ms=0,
                       sway_amp=0.0, wait_amp=0.0, variability=0.0)


def random_profile(participant_id, seed=DEFAULT_SEED) -> MotionProfile:
    rng = np.random.default_rng(derive_seed(seed, 11, participant_id or 0))
    base_pitch = rng.uniform(40, 60)
    raise_from = rng.uniform(5, 20)
    raise_s = rng.uniform(0.4, 0.9)
    tilt_up = rng.uniform(15, 30)
    # the phone ends up tilted back but still hand-held, well clear of lying flat
    tilt_back = rng.uniform(0.3, 0.5) * (base_pitch + tilt_up)
    return MotionProfile(
        participant_id=participant_id,
        base_pitch=base_pitch,
        roll=rng.uniform(-12, 12),
        raise_from=raise_from,
        raise_s=raise_s,
        tilt_up=tilt_up,
        tilt_up_s=rng.uniform(0.8, 1.6),
        hold_s=rng.uniform(0.85, 1.2),
        tilt_back=tilt_back,
        tilt_back_s=rng.uniform(0.45, 0.9),
        sway_amp=rng.uniform(0.8, 3.5),
        sway_hz=rng.uniform(0.4, 1.4),
        wait_amp=rng.uniform(2.0, 5.0),
        wait_ramp_s=rng.uniform(1.0, 2.0),
        heading=rng.uniform(0, 360),
        field_ut=rng.uniform(38, 55),
        inclination=rng.uniform(60, 72),
        acc_noise=rng.uniform(0.03, 0.09),
        gyr_noise=rng.uniform(0.006, 0.02),
        mag_noise=0.3,
        camera_open_s=rng.uniform(0.3, 0.8),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# smooth angle programs with analytic first and second derivatives

def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10 - 15 * u + 6 * u * u), 30 * u ** 2 * (1 - u) ** 2, 60 * u * (1 - u) * (1 - 2 * u)


class _Angle:
    def __init__(self, t, value=0.0):
        self.t = t
        self.v = np.full_like(t, value)
        self.d1 = np.zeros_like(t)
        self.d2 = np.zeros_like(t)

    def ramp(self, start, duration, amount):
        s, ds, dds = _smoothstep((self.t - start) / duration)
        self.v += amount * s
        self.d1 += amount * ds / duration
        self.d2 += amount * dds / duration ** 2

    def oscillate(self, envelope, amps, freqs, phases):
        e, de, dde = envelope
        for a, f, p in zip(amps, freqs, phases):
            w = 2 * math.pi * f
            s, c = np.sin(w * self.t + p), np.cos(w * self.t + p)
            self.v += a * e * s
            self.d1 += a * (de * s + e * w * c)
            self.d2 += a * (dde * s + 2 * de * w * c - e * w * w * s)


def _window_env(t, on_start, on_s, off_start, off_s):
    s1, d1, dd1 = _smoothstep((t - on_start) / on_s)
    s2, d2, dd2 = _smoothstep((t - off_start) / off_s)
    d1, dd1 = d1 / on_s, dd1 / on_s ** 2
    d2, dd2 = d2 / off_s, dd2 / off_s ** 2
    g, dg, ddg = 1 - s2, -d2, -dd2
    return s1 * g, d1 * g + s1 * dg, dd1 * g + 2 * d1 * dg + s1 * ddg


def _ramp_env(t, start, duration):
    s, d, dd = _smoothstep((t - start) / duration)
    return s, d / duration, dd / duration ** 2


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = 1
    R[..., 1, 1], R[..., 1, 2] = c, -s
    R[..., 2, 1], R[..., 2, 2] = s, c
    return R


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 1, 1] = 1
    R[..., 0, 0], R[..., 0, 2] = c, s
    R[..., 2, 0], R[..., 2, 2] = -s, c
    return R


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 2, 2] = 1
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    return R


def _render(t_s, pitch: _Angle, roll: _Angle, yaw: _Angle, profile: MotionProfile, rng, *,
            acc_noise, gyr_noise, mag_noise):
    """Sensor channels for a device with orientation Rz(yaw) Rx(pitch) Ry(roll)."""
    th, ph, ps = (np.radians(a.v) for a in (pitch, roll, yaw))
    dth, dph, dps = (np.radians(a.d1) for a in (pitch, roll, yaw))
    ddth = np.radians(pitch.d2)
    Rx, Ry, Rz = _rot_x(th), _rot_y(ph), _rot_z(ps)
    R = Rz @ Rx @ Ry  # device -> world
    Rt = np.swapaxes(R, -1, -2)

    grav = G * Rt[..., :, 2]
    inc = math.radians(profile.inclination)
    b_world = profile.field_ut * np.array([0.0, math.cos(inc), -math.sin(inc)])
    mag = Rt @ b_world

    ez = np.array([0.0, 0.0, 1.0])
    ex = np.array([1.0, 0.0, 0.0])
    RyT = np.swapaxes(Ry, -1, -2)
    RxT = np.swapaxes(Rx, -1, -2)
    gyr = (np.einsum("tij,tjk,k->ti", RyT, RxT, ez) * dps[:, None]
           + np.einsum("tij,j->ti", RyT, ex) * dth[:, None])
    gyr[:, 1] += dph

    T = len(t_s)
    lacc = np.zeros((T, 3))
    lacc[:, 1] = LEVER_ARM_M * ddth
    if acc_noise > 0:
        lacc += rng.normal(0.0, acc_noise, size=(T, 3))
    acc = grav + lacc
    if gyr_noise > 0:
        gyr = gyr + rng.normal(0.0, gyr_noise, size=(T, 3))
    if mag_noise > 0:
        mag = mag + rng.normal(0.0, mag_noise, size=(T, 3))
    return np.round(np.concatenate([acc, gyr, mag, lacc, grav], axis=1), DECIMALS)


def _timestamps(n, jitter_ms, rng):
    ts = PERIOD_MS * np.arange(n, dtype=np.int64)
    if jitter_ms > 0 and n > 2:
        ts[1:-1] += rng.integers(-jitter_ms, jitter_ms + 1, size=n - 2)
    return ts


def _vary(value, rel, rng):
    return value * (1.0 + rel * rng.standard_normal()) if rel > 0 else value


def gen_bonafide(profile: MotionProfile, duration_s=DURATION_S, capture_at_s=4.0, seed=DEFAULT_SEED,
                 trace_id="bonafide") -> MotionTrace:
    """One bona fide capture following the profile's template."""
    p = profile
    rng = np.random.default_rng(derive_seed(seed, 21))
    v = p.variability
    raise_s = abs(_vary(p.raise_s, v, rng))
    tilt_up_s = abs(_vary(p.tilt_up_s, v, rng))
    hold_s = abs(_vary(p.hold_s, v, rng))
    back_s = abs(_vary(p.tilt_back_s, v, rng))
    tilt_up = _vary(p.tilt_up, v, rng)
    tilt_back = _vary(p.tilt_back, v, rng)
    open_s = abs(_vary(p.camera_open_s, v, rng))

    t_up = capture_at_s - tilt_up_s
    t_back = capture_at_s + hold_s
    t_wait = t_back + back_s
    if not 0 <= open_s < open_s + raise_s <= t_up:
        raise InfeasibleTimingError("camera opening and raise do not fit before the tilt-up")
    if t_wait > duration_s:
        raise InfeasibleTimingError("capture template extends past the end of the trace")

    n = int(round(duration_s * FS_HZ))
    ts = _timestamps(n, p.timing_jitter_ms, rng)
    t = ts / 1000.0

    pitch = _Angle(t, p.base_pitch - p.raise_from)
    pitch.ramp(open_s, raise_s, p.raise_from)
    pitch.ramp(t_up, tilt_up_s, tilt_up)
    pitch.ramp(t_back, back_s, -tilt_back)
    roll = _Angle(t, p.roll)
    yaw = _Angle(t, p.heading)

    def waves(k, lo, hi):
        return rng.uniform(lo, hi, k), rng.uniform(0, 2 * math.pi, k)

    if p.sway_amp > 0:
        sway = _window_env(t, open_s, raise_s, t_up - 0.4, 0.4)
        freqs, phases = waves(2, 0.8, 1.2)
        pitch.oscillate(sway, p.sway_amp * np.array([1.0, 0.4]), p.sway_hz * freqs, phases)
        freqs, phases = waves(2, 0.8, 1.2)
        roll.oscillate(sway, 0.5 * p.sway_amp * np.array([1.0, 0.3]), p.sway_hz * freqs, phases)
    if p.wait_amp > 0:
        wait = _ramp_env(t, t_wait + 0.2, p.wait_ramp_s)
        for angle, scale in ((pitch, 1.0), (roll, 0.6), (yaw, 0.8)):
            freqs, phases = waves(3, 0.3, 2.0)
            angle.oscillate(wait, scale * p.wait_amp * np.array([1.0, 0.5, 0.3]), freqs, phases)

    samples = _render(t, pitch, roll, yaw, p, rng, acc_noise=p.acc_noise, gyr_noise=p.gyr_noise,
                      mag_noise=p.mag_noise)
    return MotionTrace(
        trace_id=trace_id,
        participant_id=p.participant_id,
        samples=samples,
        timestamps_ms=ts,
        camera_open_ms=int(round(open_s * 1000)),
        capture_ms=int(round(capture_at_s * 1000)),
    )


def _events(rng, duration_s):
    open_ms = int(rng.integers(300, 900))
    capture_ms = int(rng.integers(3600, 4400))
    return open_ms, min(capture_ms, int(duration_s * 1000) - 3500)


def gen_attack(profile: MotionProfile, kind: str, seed=DEFAULT_SEED, duration_s=DURATION_S,
               capture_at_s=4.0, trace_id=None) -> MotionTrace:
    """Attack proxy of type ``stationary``, ``handheld`` or ``temporal_shift``.

    ``temporal_shift`` is :func:`gen_bonafide` with the same arguments and
    only ``capture_ms`` moved by 1.5-3 s.
    """
    trace_id = trace_id or f"{kind}"
    if kind == "temporal_shift":
        twin = gen_bonafide(profile, duration_s, capture_at_s, seed, trace_id=trace_id)
        rng = np.random.default_rng(derive_seed(seed, 31))
        shift = int(rng.integers(SHIFT_RANGE_MS[0], SHIFT_RANGE_MS[1] + 1))
        sign = 1 if rng.integers(2) == 1 else -1
        start, end = int(twin.timestamps_ms[0]), int(twin.timestamps_ms[-1])

        def fits(c):
            return (c >= twin.camera_open_ms and c - start >= _MIN_PRE_S * 1000
                    and end - c >= _MIN_POST_S * 1000)

        capture = twin.capture_ms + sign * shift
        if not fits(capture):
            capture = twin.capture_ms - sign * shift
        if not fits(capture):
            raise InfeasibleTimingError(f"no feasible {shift} ms shift inside a {duration_s} s trace")
        return replace(twin, label="attack", attack_type="temporal_shift", capture_ms=capture,
                       participant_id=None)

    rng = np.random.default_rng(derive_seed(seed, 41))
    n = int(round(duration_s * FS_HZ))
    ts = _timestamps(n, profile.timing_jitter_ms, rng)
    t = ts / 1000.0
    open_ms, capture_ms = _events(rng, duration_s)

    if kind == "stationary":
        pitch = _Angle(t, rng.uniform(0.0, 3.0))
        roll = _Angle(t, rng.uniform(-2.0, 2.0))
        yaw = _Angle(t, profile.heading)
        samples = _render(t, pitch, roll, yaw, profile, rng, acc_noise=0.005, gyr_noise=0.001,
                          mag_noise=0.05)
    elif kind == "handheld":
        pitch = _Angle(t, rng.uniform(55.0, 80.0))
        roll = _Angle(t, rng.uniform(-8.0, 8.0))
        yaw = _Angle(t, profile.heading)
        env = (np.ones_like(t), np.zeros_like(t), np.zeros_like(t))
        for angle, scale in ((pitch, 1.0), (roll, 0.6), (yaw, 0.5)):
            freqs = rng.uniform(0.2, 1.2, 3)
            phases = rng.uniform(0, 2 * math.pi, 3)
            angle.oscillate(env, scale * rng.uniform(1.0, 3.0) * np.array([1.0, 0.5, 0.25]), freqs, phases)
        samples = _render(t, pitch, roll, yaw, profile, rng, acc_noise=max(profile.acc_noise, 0.03),
                          gyr_noise=max(profile.gyr_noise, 0.008), mag_noise=profile.mag_noise)
    else:
        raise ValueError(f"unknown attack kind {kind!r}")
    return MotionTrace(trace_id=trace_id, participant_id=None, samples=samples, timestamps_ms=ts,
                       camera_open_ms=open_ms, capture_ms=capture_ms, label="attack", attack_type=kind)


def _capture_time(rng):
    return round(float(rng.uniform(3.6, 4.4)), 3)


def corpus_traces(n_participants=30, seqs_per_participant=12, attack_counts=DEFAULT_ATTACK_COUNTS,
                  seed=DEFAULT_SEED) -> list[MotionTrace]:
    """All traces of a synthetic corpus, bona fide first, in recording order."""
    n_stat, n_hand, n_shift = attack_counts
    traces = []
    for pid in range(1, n_participants + 1):
        profile = random_profile(pid, seed)
        for s in range(1, seqs_per_participant + 1):
            rng = np.random.default_rng(derive_seed(seed, 1, pid, s))
            traces.append(gen_bonafide(profile, capture_at_s=_capture_time(rng),
                                       seed=derive_seed(seed, 2, pid, s), trace_id=f"p{pid:02d}_s{s:02d}"))

    # proxies come from people outside the enrolled population
    outsiders = [random_profile(1000 + i, seed) for i in range(5)]
    for i in range(n_stat):
        traces.append(gen_attack(outsiders[i % 2], "stationary", seed=derive_seed(seed, 3, i),
                                 trace_id=f"stationary_{i + 1:02d}"))
    for i in range(n_hand):
        traces.append(gen_attack(outsiders[i % 2], "handheld", seed=derive_seed(seed, 4, i),
                                 trace_id=f"handheld_{i + 1:02d}"))
    for i in range(n_shift):
        profile = outsiders[2 + i % 3]
        twin_seed = derive_seed(seed, 5, i)
        rng = np.random.default_rng(derive_seed(seed, 6, i))
        traces.append(gen_attack(profile, "temporal_shift", seed=twin_seed, capture_at_s=_capture_time(rng),
                                 trace_id=f"shift_{i + 1:02d}"))
    return traces


def shift_twins(n_shift=DEFAULT_ATTACK_COUNTS[2], seed=DEFAULT_SEED) -> list[MotionTrace]:
    """Unshifted bona fide originals of the corpus's temporal-shift proxies."""
    outsiders = [random_profile(1000 + i, seed) for i in range(5)]
    twins = []
    for i in range(n_shift):
        rng = np.random.default_rng(derive_seed(seed, 6, i))
        twins.append(gen_bonafide(outsiders[2 + i % 3], capture_at_s=_capture_time(rng),
                                  seed=derive_seed(seed, 5, i), trace_id=f"shift_{i + 1:02d}"))
    return twins


def gen_corpus(out_dir, n_participants=30, seqs_per_participant=12, attack_counts=DEFAULT_ATTACK_COUNTS,
               seed=DEFAULT_SEED) -> Path:
    """Write a synthetic corpus in the canonical directory format."""
    out_dir = Path(out_dir)
    write_corpus(out_dir, corpus_traces(n_participants, seqs_per_participant, attack_counts, seed))
    return out_dir
