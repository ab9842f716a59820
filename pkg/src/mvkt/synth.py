"""Deterministic synthetic 12-lead generator with a lead-local pathology.

Three latent channels carry periodic P/QRS/T Gaussian bumps. A fixed 12x3
mixing matrix projects them onto leads; leads 0-5 barely see latent channel 2,
so the ST offset of label 1 (applied to channel 2 only) is nearly invisible
there. Labels:

0. tachycardia: heart rate drawn from [120, 160] bpm instead of [50, 110]
1. ST offset of -0.2 on latent channel 2
2. T waves inverted in every latent channel
3. one extra QRS bump at a random phase
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .signal import DatasetManifest, EcgRecord, build_manifest, stratified_folds

LABEL_NAMES = ["TACHY", "ST_LEADLOCAL", "T_INV", "EXTRA_QRS"]
N_LATENT = 3
HIDDEN_COMPONENT = 2

# wave centers as a fraction of the RR interval, widths in seconds
P_PHASE, QRS_PHASE, T_PHASE = 0.15, 0.30, 0.55
P_WIDTH, QRS_WIDTH, T_WIDTH = 0.025, 0.012, 0.04
# per latent channel amplitudes of (P, QRS, T)
WAVE_AMPLITUDES = np.array(
    [
        [0.15, 1.00, 0.30],
        [0.10, -0.70, 0.25],
        [0.08, 0.50, 0.35],
    ]
)


@dataclass
class SynthConfig:
    n_records: int = 2500
    n_leads: int = 12
    length: int = 1000
    sampling_rate_hz: int = 100
    n_classes: int = 4
    label_prevalence: list[float] = field(default_factory=lambda: [0.3, 0.3, 0.3, 0.3])
    noise_sigma: float = 0.1
    mixing_seed: int = 7
    record_seed: int = 11
    hidden_weight_max: float = 0.05
    st_offset: float = -0.2
    fold_seed: int = 0

    def validate(self) -> None:
        if self.n_records < 0:
            raise ValueError("n_records must be >= 0")
        if self.n_leads != 12:
            raise ValueError("synthetic packs are 12-lead")
        if self.n_classes != 4 or len(self.label_prevalence) != 4:
            raise ValueError("synthetic packs have exactly 4 labels")
        if self.length <= 0 or self.sampling_rate_hz <= 0:
            raise ValueError("length and sampling_rate_hz must be positive")
        if not all(0.0 <= p <= 1.0 for p in self.label_prevalence):
            raise ValueError("label prevalences must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.hidden_weight_max <= 1.0:
            raise ValueError("hidden_weight_max must lie in [0, 1]")

    def to_json(self) -> dict:
        return asdict(self)


def mixing_matrix(seed: int, hidden_weight_max: float = 0.05) -> np.ndarray:
    """12x3 unit-row mixing matrix; rows 0-5 weight the hidden channel by <= bound."""
    rng = np.random.default_rng(seed)
    A = np.empty((12, N_LATENT))
    for r in range(12):
        if r < 6:
            w = rng.uniform(0.6, 1.0) * hidden_weight_max * rng.choice([-1.0, 1.0])
            other = rng.standard_normal(2)
            other *= np.sqrt(1.0 - w * w) / np.linalg.norm(other)
            A[r] = [other[0], other[1], w]
        else:
            row = rng.standard_normal(N_LATENT)
            # visible leads carry the hidden channel with a substantial weight
            row[HIDDEN_COMPONENT] = np.sign(row[HIDDEN_COMPONENT] or 1.0) * max(
                abs(row[HIDDEN_COMPONENT]), 1.0
            )
            A[r] = row / np.linalg.norm(row)
    return A


@dataclass
class BeatParams:
    """Label-independent random draws for one record."""

    rate_u: float
    phase0: float
    amp_jitter: np.ndarray  # [3] multiplicative jitter per latent channel
    extra_phase_u: float


def draw_beat_params(rng: np.random.Generator) -> BeatParams:
    return BeatParams(
        rate_u=float(rng.uniform()),
        phase0=float(rng.uniform()),
        amp_jitter=rng.uniform(0.85, 1.15, size=N_LATENT),
        extra_phase_u=float(rng.uniform()),
    )


def _bump(t: np.ndarray, centers: np.ndarray, width: float) -> np.ndarray:
    if centers.size == 0:
        return np.zeros_like(t)
    return np.exp(-0.5 * ((t[:, None] - centers[None, :]) / width) ** 2).sum(axis=1)


def latent_signals(
    labels, params: BeatParams, length: int, fs: int, st_offset: float = -0.2
) -> np.ndarray:
    """Noise-free latent channels [3, length] for one record."""
    labels = np.asarray(labels)
    lo, hi = (120.0, 160.0) if labels[0] else (50.0, 110.0)
    bpm = lo + params.rate_u * (hi - lo)
    rr = 60.0 / bpm
    t = np.arange(length) / fs
    duration = length / fs

    starts = (np.arange(-1, int(np.ceil(duration / rr)) + 1) - params.phase0) * rr
    p_c = starts + P_PHASE * rr
    qrs_c = starts + QRS_PHASE * rr
    t_c = starts + T_PHASE * rr
    if labels[3]:
        qrs_extra = np.array([params.extra_phase_u * duration])
    else:
        qrs_extra = np.array([])

    p = _bump(t, p_c, P_WIDTH)
    qrs = _bump(t, qrs_c, QRS_WIDTH) + _bump(t, qrs_extra, QRS_WIDTH)
    tw = _bump(t, t_c, T_WIDTH)
    t_sign = -1.0 if labels[2] else 1.0

    amps = WAVE_AMPLITUDES * params.amp_jitter[:, None]
    latent = amps[:, 0:1] * p + amps[:, 1:2] * qrs + t_sign * amps[:, 2:3] * tw

    if labels[1]:
        # ST segment: from the end of QRS to the end of the T wave
        st = np.zeros(length)
        for q, tc in zip(qrs_c, t_c):
            st[(t >= q + 2.5 * QRS_WIDTH) & (t <= tc + 1.5 * T_WIDTH)] = 1.0
        latent[HIDDEN_COMPONENT] += st_offset * st
    return latent


def record_rngs(record_seed: int, n: int):
    """Per-record independent streams: (labels, beat shape, noise)."""
    seqs = np.random.SeedSequence(record_seed).spawn(n)
    out = []
    for s in seqs:
        lab, shape, noise = s.spawn(3)
        out.append(
            (np.random.default_rng(lab), np.random.default_rng(shape), np.random.default_rng(noise))
        )
    return out


def synth_record(
    config: SynthConfig, A: np.ndarray, rid: str, labels, params: BeatParams, noise_rng=None
) -> EcgRecord:
    latent = latent_signals(labels, params, config.length, config.sampling_rate_hz, config.st_offset)
    leads = A @ latent
    if config.noise_sigma > 0 and noise_rng is not None:
        leads = leads + config.noise_sigma * noise_rng.standard_normal(leads.shape)
    return EcgRecord(rid, config.sampling_rate_hz, leads.astype(np.float32), np.asarray(labels))


def synth_generate(config: SynthConfig) -> tuple[DatasetManifest, list[EcgRecord]]:
    config.validate()
    A = mixing_matrix(config.mixing_seed, config.hidden_weight_max)
    prevalence = np.asarray(config.label_prevalence)
    records = []
    width = max(5, len(str(config.n_records)))
    for i, (lab_rng, shape_rng, noise_rng) in enumerate(record_rngs(config.record_seed, config.n_records)):
        labels = (lab_rng.uniform(size=4) < prevalence).astype(np.uint8)
        params = draw_beat_params(shape_rng)
        records.append(synth_record(config, A, f"syn{i:0{width}d}", labels, params, noise_rng))
    if len(records) >= 10:
        folds = stratified_folds([r.labels for r in records], k=10, seed=config.fold_seed)
    else:
        folds = [i % 10 + 1 for i in range(len(records))]
    manifest = build_manifest(records, LABEL_NAMES, folds)
    if not records:
        manifest.sampling_rate_hz = config.sampling_rate_hz
        manifest.n_leads = config.n_leads
        manifest.length = config.length
    return manifest, records
