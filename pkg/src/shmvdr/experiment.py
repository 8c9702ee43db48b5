"""End-to-end experiments: simulate, transform, enhance, evaluate, report."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import scipy
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import __version__
from .audio import write_wav
from .baseline import (FLAG_BEAM_DEGENERATE, FLAG_ZERO_BEAM, BaselineFilters, baseline_filters,
                       doa_from_positions, tf_oracle_psd)
from .enhancer import (FLAG_DEGENERATE, FLAG_ZERO_REFERENCE, BankSet, build_banks, estimate_rehc_batch,
                       oracle_interference_psd, psd_per_bin, source_psd, transfer_functions)
from .linalg import DEFAULT_LOADING
from .metrics import (MetricReport, ObservationSet, evaluate, observation_points, pointwise_error_map,
                      pressures, write_pgm, write_png, write_report_csv)
from .scene import (STREAM_REHC_NOISE, STREAM_REHC_WHITE_NOISE, STREAM_SENSOR_NOISE, STREAM_WHITE_SOURCE,
                    SceneConfig, convolve_rirs, load_dry_signal, noise_power_for, power, rng_for,
                    scale_to_snr, sensor_noise, simulate_array_rirs)
from .specfun import sh_count
from .transforms import (FLAG_BESSEL_GUARD, FLAG_ILL_CONDITIONED, BandPlan, SHTensor, band_plan, band_to_tf,
                         istft, read_shtensor, sht_band, sht_operators, stft_band, write_shtensor)

log = logging.getLogger(__name__)

METHODS = ("proposed", "proposed-accurate-rehc", "baseline")
METHOD_ALIASES = {"both": ("proposed", "baseline"), "all": METHODS}

REASONS = {
    FLAG_BESSEL_GUARD: "bessel-zero-guard",
    FLAG_ILL_CONDITIONED: "ill-conditioned-sht",
    FLAG_DEGENERATE: "degenerate-constraint",
    FLAG_ZERO_REFERENCE: "zero-reference",
    FLAG_BEAM_DEGENERATE: "degenerate-steering",
    FLAG_ZERO_BEAM: "zero-beam-output",
}


def reasons(flags: int) -> list[str]:
    return [name for bit, name in REASONS.items() if flags & bit]


class BandConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    f_low: float = Field(300.0, gt=0)
    f_high: float = Field(3400.0, gt=0)

    @model_validator(mode="after")
    def _order(self):
        if self.f_high <= self.f_low:
            raise ValueError("f_high must exceed f_low")
        return self


class Sweep(BaseModel):
    model_config = ConfigDict(extra="forbid")

    param: Literal["t60", "snr_db"]
    values: list[float] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _finite(self):
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("sweep values must be finite")
        return self


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scene: SceneConfig = SceneConfig()
    method: Literal["proposed", "proposed-accurate-rehc", "baseline", "both", "all"] = "both"
    band: BandConfig = BandConfig()
    sweep: Optional[Sweep] = None
    outputs: str = "out"
    frames_for_metrics: int = Field(15, ge=1)
    frame_selection: Literal["top-energy", "first"] = "top-energy"
    frame_size: int = Field(16384, ge=64)
    hop: Optional[int] = None
    observation: Literal["sphere107", "plane441"] = "sphere107"
    sweet_radius: Optional[float] = Field(None, gt=0)
    loading: float = Field(DEFAULT_LOADING, ge=0)
    rehc_frames: int = Field(15, ge=1, description="length of the desired-only segment in STFT frames")

    @property
    def methods(self) -> tuple[str, ...]:
        return METHOD_ALIASES.get(self.method, (self.method,))

    @property
    def hop_size(self) -> int:
        return self.hop or self.frame_size // 4

    @property
    def r_s(self) -> float:
        return self.sweet_radius or self.scene.array.radius

    @property
    def rehc_samples(self) -> int:
        return (self.rehc_frames - 1) * self.hop_size + self.frame_size

    def scenes(self) -> list[tuple[Optional[float], SceneConfig]]:
        if self.sweep is None:
            return [(None, self.scene)]
        out = []
        for v in self.sweep.values:
            if self.sweep.param == "t60":
                room = self.scene.room.model_copy(update={"t60": v})
                out.append((v, self.scene.model_copy(update={"room": room})))
            else:
                out.append((v, self.scene.model_copy(update={"snr_db": v})))
        return out


def preset(name: str) -> ExperimentSpec:
    if name == "paper-default":
        return ExperimentSpec()
    raise ValueError(f"unknown preset {name!r}")


def spec_hash(spec: ExperimentSpec) -> str:
    """Digest of the settings that shape the results; the output directory is left out."""
    blob = json.dumps(spec.model_dump(mode="json", exclude={"outputs"}), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ------------------------------------------------------------ simulation ---

@dataclass
class Simulation:
    """Everything the later stages need, all as float64 arrays."""

    dry_desired: np.ndarray
    dry_interference: np.ndarray  # already scaled to the configured SNR
    rirs_desired: np.ndarray
    rirs_interference: np.ndarray
    d: np.ndarray
    v: np.ndarray
    u: np.ndarray
    rehc_mix: np.ndarray  # desired-only segment plus sensor noise
    rehc_white_mix: np.ndarray  # same, with a white-noise source at the desired position
    noise_power: float

    def save(self, path) -> None:
        np.savez(path, **{k: np.asarray(v) for k, v in self.__dict__.items()})

    @classmethod
    def load(cls, path) -> "Simulation":
        with np.load(path) as z:
            kw = {k: z[k] for k in z.files}
        kw["noise_power"] = float(kw["noise_power"])
        return cls(**kw)


def _desired_stream(scene: SceneConfig, n_est: int, n: int) -> np.ndarray:
    """Dry desired signal covering the estimation segment followed by the mixture segment.

    Files shorter than ``n_est + n`` samples are reused from their start for
    the estimation segment.
    """
    fs = scene.sample_rate
    full = load_dry_signal(scene.desired.signal, fs, (n_est + n) / fs)
    if scene.desired.signal.startswith("synthetic:") or np.any(full[n_est:] != 0):
        return full
    head = load_dry_signal(scene.desired.signal, fs, n / fs)
    return np.concatenate([np.resize(head, n_est), head])


def simulate(scene: SceneConfig, rehc_samples: int, threads: int = 1) -> Simulation:
    """Simulate the desired-only estimation segment and the mixture that follows it.

    The desired source plays continuously, so the mixture segment carries the
    reverberant tail of the estimation segment. The white-noise segment used
    for accurate coefficients is a separate playback at the desired position.
    """
    fs = scene.sample_rate
    geom = scene.geometry()
    n = int(round(scene.duration * fs))
    stream = _desired_stream(scene, rehc_samples, n)
    dry_d = stream[rehc_samples:]
    dry_v = scale_to_snr(dry_d, load_dry_signal(scene.interference.signal, fs, scene.duration), scene.snr_db)
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        rirs_d = simulate_array_rirs(scene.room, scene.desired.position, geom, fs, executor=pool)
        rirs_v = simulate_array_rirs(scene.room, scene.interference.position, geom, fs, executor=pool)
    d_all = convolve_rirs(stream, rirs_d)
    d, d_est = d_all[:, rehc_samples:], d_all[:, :rehc_samples]
    v = convolve_rirs(dry_v, rirs_v)
    sigma2 = noise_power_for(d, scene.ssnr_db)
    u = sensor_noise(d.shape, sigma2, scene.seed, STREAM_SENSOR_NOISE)

    shape = (geom.Q, rehc_samples)
    rehc_mix = d_est + sensor_noise(shape, sigma2, scene.seed, STREAM_REHC_NOISE)
    white = rng_for(scene.seed, STREAM_WHITE_SOURCE).standard_normal(rehc_samples) * math.sqrt(power(dry_d))
    rehc_white = convolve_rirs(white, rirs_d) + sensor_noise(shape, sigma2, scene.seed, STREAM_REHC_WHITE_NOISE)
    return Simulation(dry_d, dry_v, rirs_d, rirs_v, d, v, u, rehc_mix, rehc_white, sigma2)


# ------------------------------------------------------------ processing ---

@dataclass
class MethodOutput:
    name: str
    est: SHTensor
    res_d: SHTensor
    res_v: SHTensor
    res_u: SHTensor
    flags: np.ndarray
    banks: Optional[BankSet] = None
    filters: Optional[BaselineFilters] = None


@dataclass
class Processed:
    spec: ExperimentSpec
    scene: SceneConfig
    band: BandPlan
    frames: np.ndarray  # metric frames (chronological)
    all_frames: int
    true_d: SHTensor
    true_v: SHTensor
    true_u: SHTensor
    methods: dict = field(default_factory=dict)
    center_audio: dict = field(default_factory=dict)


def select_frames(energy: np.ndarray, count: int, rule: str = "top-energy") -> np.ndarray:
    count = min(count, len(energy))
    if rule == "first":
        return np.arange(count)
    order = np.argsort(-energy, kind="stable")[:count]
    return np.sort(order)


def _center_signal(sh_data: np.ndarray, band: BandPlan, spec: ExperimentSpec, n: int) -> np.ndarray:
    """Pressure at the array centre, ``c_00 / sqrt(4 pi)``, resynthesised to time."""
    x = sh_data[:, :, :1] / math.sqrt(4 * math.pi)
    tf = band_to_tf(x, band, spec.frame_size, spec.hop_size, spec.scene.sample_rate, n)
    return istft(tf)[0]


def process(spec: ExperimentSpec, scene: SceneConfig, sim: Simulation, audio: bool = True) -> Processed:
    """Transforms, PSDs, relative coefficients and every requested method."""
    fs, F, H = scene.sample_rate, spec.frame_size, spec.hop_size
    geom = scene.geometry()
    band = band_plan(geom.radius, F, fs, scene.room.c, spec.band.f_low, spec.band.f_high)
    if band.L_max > geom.Q:
        raise ValueError(f"band needs {band.L_max} coefficients but the array has {geom.Q} capsules")
    ops = sht_operators(geom, band)

    D = stft_band(sim.d, band, F, H, fs)
    V = stft_band(sim.v, band, F, H, fs)
    U = stft_band(sim.u, band, F, H, fs)
    d_sh, v_sh, u_sh = (sht_band(a, geom, band, ops) for a in (D, V, U))
    x_sh = d_sh + v_sh + u_sh
    sht_flags = d_sh.flags.copy()

    energy = np.sum(np.abs(D) ** 2, axis=(1, 2))
    frames = select_frames(energy, spec.frames_for_metrics, spec.frame_selection)
    log.info("metric frames (%s): %s", spec.frame_selection, frames.tolist())

    atf_v = transfer_functions(sim.rirs_interference, F)[band.bins]
    sv = source_psd(sim.dry_interference, F, H, fs)[band.bins]
    R_v = oracle_interference_psd(atf_v, sv, ops, band)
    R_u = psd_per_bin(u_sh)
    R_vu = R_v + R_u

    out = Processed(spec, scene, band, frames, D.shape[0], d_sh.select_frames(frames),
                    v_sh.select_frames(frames), u_sh.select_frames(frames))
    n = sim.d.shape[1]
    sel = lambda t: t.select_frames(frames)  # noqa: E731

    for name in spec.methods:
        if name in ("proposed", "proposed-accurate-rehc"):
            seg = sim.rehc_mix if name == "proposed" else sim.rehc_white_mix
            est_sh = sht_band(stft_band(seg, band, F, H, fs), geom, band, ops)
            h, zflags = estimate_rehc_batch(psd_per_bin(est_sh), band)
            banks = build_banks(R_vu, h, band, spec.loading, zflags | sht_flags)
            est = banks.apply(x_sh)
            mo = MethodOutput(name, sel(est), sel(banks.apply(d_sh)), sel(banks.apply(v_sh)),
                              sel(banks.apply(u_sh)), banks.flags, banks=banks)
            if audio:
                out.center_audio[name] = _center_signal(est.data, band, spec, n)
        elif name == "baseline":
            doa = doa_from_positions(scene.array.center, scene.desired.position)
            noise_pow = np.mean(np.abs(U) ** 2, axis=(0, 2))
            R_tf = tf_oracle_psd(atf_v, sv, noise_pow)
            X = D + V + U
            filt = baseline_filters(X, R_tf, doa, geom, band, spec.loading)
            flags = filt.flags | sht_flags
            to_sh = lambda a: sht_band(filt.apply(a), geom, band, ops)  # noqa: E731
            est = to_sh(X)
            est.flags |= flags
            comps = [to_sh(a) for a in (D, V, U)]
            for c in comps:
                c.flags |= flags
            mo = MethodOutput(name, sel(est), *(sel(c) for c in comps), flags, filters=filt)
            if audio:
                out.center_audio[name] = _center_signal(est.data, band, spec, n)
        else:
            raise ValueError(f"unknown method {name!r}")
        out.methods[name] = mo
        log.info("%s: %d flagged bins", name, int(np.count_nonzero(mo.flags)))

    if audio:
        out.center_audio["mixture"] = _center_signal(x_sh.data, band, spec, n)
        out.center_audio["desired"] = _center_signal(d_sh.data, band, spec, n)
    return out


def evaluate_processed(p: Processed, obs: Optional[ObservationSet] = None) -> dict[str, MetricReport]:
    obs = obs or observation_points(p.spec.observation, p.spec.r_s)
    return {name: evaluate(name, p.true_d, p.true_v, m.est, m.res_d, m.res_v, m.res_u, obs)
            for name, m in p.methods.items()}


# ---------------------------------------------------------------- output ---

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def flagged_bins(p: Processed) -> list[dict]:
    rows = []
    for name, m in p.methods.items():
        for i in np.flatnonzero(m.flags):
            rows.append({"method": name, "bin": int(p.band.bins[i]), "freq_hz": float(p.band.freqs[i]),
                         "flags": int(m.flags[i]), "reasons": reasons(int(m.flags[i]))})
    return rows


def write_diagnostics(path, p: Processed, method: str) -> None:
    m = p.methods[method]
    cond = p.true_d.meta.get("condition", np.zeros(len(p.band)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["bin", "freq_hz", "order", "sht_condition", "flags", "reasons"])
        for i in range(len(p.band)):
            w.writerow([int(p.band.bins[i]), f"{p.band.freqs[i]:.4f}", int(p.band.orders[i]),
                        f"{float(cond[i]):.6g}", int(m.flags[i]), ";".join(reasons(int(m.flags[i])))])


def save_tensors(outdir: Path, p: Processed) -> list[Path]:
    files = []
    extra = {"scene": p.scene.model_dump(mode="json")}
    for key, t in (("true_d", p.true_d), ("true_v", p.true_v), ("true_u", p.true_u)):
        files.append(outdir / f"{key}.shtc")
        write_shtensor(files[-1], t, extra)
    for name, m in p.methods.items():
        for key in ("est", "res_d", "res_v", "res_u"):
            files.append(outdir / f"{name}_{key}.shtc")
            write_shtensor(files[-1], getattr(m, key), {**extra, "method": name})
    return files


def load_tensors(indir: Path) -> tuple[dict, dict]:
    """Read the containers written by :func:`save_tensors`: ``(truth, methods)``."""
    indir = Path(indir)
    truth = {k: read_shtensor(indir / f"{k}.shtc")[0] for k in ("true_d", "true_v", "true_u")}
    methods = {}
    for name in METHODS:
        if (indir / f"{name}_est.shtc").exists():
            methods[name] = {k: read_shtensor(indir / f"{name}_{k}.shtc")[0]
                             for k in ("est", "res_d", "res_v", "res_u")}
    return truth, methods


def write_manifest(path, spec: ExperimentSpec, seeds: list[int], flags: list[dict], files: list[Path],
                   extra: Optional[dict] = None) -> None:
    manifest = {
        "config": spec.model_dump(mode="json"),
        "config_sha256": spec_hash(spec),
        "seeds": seeds,
        "flagged_bins": flags,
        "versions": {"shmvdr": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": {f.name: _sha256(f) for f in sorted(files)},
    }
    manifest.update(extra or {})
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_summary_table(path, columns: list[str], label: str, summaries: list[dict]) -> None:
    """Rows: methods; column groups: sweep values x (Error, SDR, NR)."""
    methods = list(summaries[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        heads = [f"{label}={c} {m}" if c else m for c in columns for m in ("Error (dB)", "SDR (dB)", "NR (dB)")]
        w.writerow(["method"] + heads)
        for name in methods:
            row = [name]
            for s in summaries:
                agg = s[name]
                row += [f"{agg['error_db']:.2f}", f"{agg['sdr_db']:.2f}", f"{agg['nr_db']:.2f}"]
            w.writerow(row)


@dataclass
class RunResult:
    outdir: Path
    summaries: list[dict]
    reports: list[dict]
    processed: list[Processed]
    files: list[Path]


def run(spec: ExperimentSpec, outdir=None, threads: int = 1, save_tensors_flag: bool = False,
        keep_processed: bool = False) -> RunResult:
    """Full pipeline for every scene of the spec; writes CSVs, WAVs, tables and a manifest."""
    outdir = Path(outdir or spec.outputs)
    outdir.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    summaries, all_reports, kept, flags = [], [], [], []
    labels = []
    for value, scene in spec.scenes():
        tag = "" if value is None else f"_{spec.sweep.param}={value:g}"
        labels.append(f"{value:g}" if value is not None else "")
        sim = simulate(scene, spec.rehc_samples, threads)
        p = process(spec, scene, sim)
        reports = evaluate_processed(p)
        all_reports.append(reports)
        summaries.append({k: r.aggregate() for k, r in reports.items()})
        flags += [dict(f, scene=tag.lstrip("_") or "base") for f in flagged_bins(p)]

        files.append(outdir / f"metrics{tag}.csv")
        write_report_csv(files[-1], reports.values())
        for name in p.methods:
            files.append(outdir / f"diagnostics_{name}{tag}.csv")
            write_diagnostics(files[-1], p, name)
        for name, sig in p.center_audio.items():
            files.append(outdir / f"center_{name}{tag}.wav")
            write_wav(files[-1], scene.sample_rate, sig)
        if save_tensors_flag:
            sub = outdir / f"tensors{tag}"
            sub.mkdir(exist_ok=True)
            files += save_tensors(sub, p)
        if keep_processed:
            kept.append(p)
        del sim

    if spec.sweep is not None:
        label = "T60" if spec.sweep.param == "t60" else "SNR"
        files.append(outdir / f"table_{spec.sweep.param}.csv")
        write_summary_table(files[-1], labels, label, summaries)
    else:
        files.append(outdir / "summary.csv")
        write_summary_table(files[-1], [""], "", summaries)
    seeds = [spec.scene.seed]
    write_manifest(outdir / "manifest.json", spec, seeds, flags, files)
    return RunResult(outdir, summaries, all_reports, kept, files)


# ---------------------------------------------------------- staged runs ---

def _single_scene(spec: ExperimentSpec) -> SceneConfig:
    if spec.sweep is not None:
        raise ValueError("staged commands take a single scene; use 'run' for sweeps")
    return spec.scene


def stage_simulate(spec: ExperimentSpec, outdir, threads: int = 1) -> list[Path]:
    """Simulate once and cache the result for later ``enhance`` calls."""
    scene = _single_scene(spec)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sim = simulate(scene, spec.rehc_samples, threads)
    files = [outdir / "simulation.npz", outdir / "mixture.wav", outdir / "experiment.json"]
    sim.save(files[0])
    write_wav(files[1], scene.sample_rate, sim.d + sim.v + sim.u)
    files[2].write_text(spec.model_dump_json(indent=2) + "\n")
    write_manifest(outdir / "manifest.json", spec, [scene.seed], [], files, {"stage": "simulate"})
    return files


def load_stage_spec(indir) -> ExperimentSpec:
    return ExperimentSpec.model_validate_json(Path(indir, "experiment.json").read_text())


def stage_enhance(indir, outdir, spec: Optional[ExperimentSpec] = None) -> list[Path]:
    """Transform and enhance a cached simulation; writes SH containers and centre-pressure WAVs."""
    indir, outdir = Path(indir), Path(outdir)
    spec = spec or load_stage_spec(indir)
    scene = _single_scene(spec)
    outdir.mkdir(parents=True, exist_ok=True)
    p = process(spec, scene, Simulation.load(indir / "simulation.npz"))
    files = save_tensors(outdir, p)
    for name in p.methods:
        files.append(outdir / f"diagnostics_{name}.csv")
        write_diagnostics(files[-1], p, name)
    for name, sig in p.center_audio.items():
        files.append(outdir / f"center_{name}.wav")
        write_wav(files[-1], scene.sample_rate, sig)
    files.append(outdir / "experiment.json")
    files[-1].write_text(spec.model_dump_json(indent=2) + "\n")
    write_manifest(outdir / "manifest.json", spec, [scene.seed], flagged_bins(p), files, {"stage": "enhance"})
    return files


def evaluate_tensors(truth: dict, methods: dict, obs: ObservationSet) -> dict[str, MetricReport]:
    return {name: evaluate(name, truth["true_d"], truth["true_v"], t["est"], t["res_d"], t["res_v"], t["res_u"], obs)
            for name, t in methods.items()}


def stage_evaluate(indir, outdir) -> dict[str, MetricReport]:
    """Metrics from the containers written by :func:`stage_enhance`."""
    indir, outdir = Path(indir), Path(outdir)
    spec = load_stage_spec(indir)
    if not (indir / "true_d.shtc").exists():
        raise FileNotFoundError(f"no enhanced tensors in {indir}; run 'enhance' first")
    outdir.mkdir(parents=True, exist_ok=True)
    truth, methods = load_tensors(indir)
    if not methods:
        raise FileNotFoundError(f"no enhanced tensors in {indir}")
    reports = evaluate_tensors(truth, methods, observation_points(spec.observation, spec.r_s))
    files = [outdir / "metrics.csv", outdir / "summary.csv"]
    write_report_csv(files[0], reports.values())
    write_summary_table(files[1], [""], "", [{k: r.aggregate() for k, r in reports.items()}])
    write_manifest(outdir / "manifest.json", spec, [spec.scene.seed], [], files, {"stage": "evaluate"})
    return reports


# ---------------------------------------------------------- reproduction ---

def field_maps(p: Processed, freq: float = 1500.0) -> dict:
    """Real-part pressure and error maps on the 21 x 21 plane at one frame and bin for the fig2 panels."""
    obs = observation_points("plane441", p.spec.r_s)
    kidx = p.band.index_of(freq)
    tsel = int(np.argmax(np.sum(np.abs(p.true_d.data[:, kidx, :]) ** 2, axis=-1)))

    def at(sh: SHTensor) -> np.ndarray:
        one = SHTensor(sh.data[tsel:tsel + 1, kidx:kidx + 1], _sub_band(p.band, kidx))
        full = pressures(one, obs, only_inside=False)[0, 0]
        return np.where(obs.inside, full, np.nan).reshape(obs.grid_shape)

    x = p.true_d.data + p.true_v.data + p.true_u.data
    maps = {"mixed": at(p.true_d.with_data(x)), "desired": at(p.true_d)}
    for name in ("proposed", "baseline"):
        if name in p.methods:
            est = at(p.methods[name].est)
            maps[f"{name}_estimate"] = est
            maps[f"{name}_error"] = pointwise_error_map(maps["desired"], est)
    maps["_frame"] = int(p.frames[tsel])
    maps["_freq"] = float(p.band.freqs[kidx])
    maps["_inside"] = obs.inside.reshape(obs.grid_shape)
    return maps


def _sub_band(band: BandPlan, i: int) -> BandPlan:
    s = slice(i, i + 1)
    return BandPlan(band.bins[s], band.freqs[s], band.k[s], band.orders[s], band.f_low, band.f_high)


def mean_plane_error(maps: dict, method: str) -> float:
    err = maps[f"{method}_error"][maps["_inside"]]
    return float(np.nanmean(err))


def write_field_panels(outdir: Path, maps: dict) -> list[Path]:
    files = []
    scale = np.nanmax(np.abs(np.real(maps["desired"])))
    order = ["mixed", "desired", "proposed_estimate", "proposed_error", "baseline_estimate", "baseline_error"]
    for i, key in enumerate(order):
        vals = maps[key]
        if key.endswith("error"):
            lo, hi, img = -40.0, 0.0, vals
        else:
            lo, hi, img = -scale, scale, np.real(vals)
        img = np.flipud(img)  # +y up
        stem = outdir / f"fig2_{chr(ord('a') + i)}_{key}"
        write_pgm(stem.with_suffix(".pgm"), img, lo, hi)
        write_png(stem.with_suffix(".png"), img, lo, hi)
        files += [stem.with_suffix(".pgm"), stem.with_suffix(".png")]
    return files


def write_curves(path, band: BandPlan, reports: dict) -> None:
    per = {k: r.per_bin() for k, r in reports.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        names = list(reports)
        w.writerow(["bin", "freq_hz"] + [f"{n}_{m}" for n in names for m in ("error_db", "sdr_db", "nr_db")])
        for i in range(len(band)):
            row = [int(band.bins[i]), f"{band.freqs[i]:.4f}"]
            for n in names:
                row += [f"{per[n][m][i]:.6f}" for m in ("error_db", "sdr_db", "nr_db")]
            w.writerow(row)


def plot_curves(path, band: BandPlan, reports: dict, width: int = 900, panel_h: int = 220) -> None:
    """Three stacked line plots (Error, SDR, NR vs frequency) rendered with Pillow."""
    from PIL import Image, ImageDraw

    colors = {"proposed": (220, 30, 30), "proposed-accurate-rehc": (20, 160, 40), "baseline": (30, 60, 220)}
    per = {k: r.per_bin() for k, r in reports.items()}
    img = Image.new("RGB", (width, 3 * panel_h), "white")
    dr = ImageDraw.Draw(img)
    f = band.freqs
    fx = lambda v: 50 + (v - f[0]) / (f[-1] - f[0]) * (width - 70)  # noqa: E731
    for pi, metric in enumerate(("error_db", "sdr_db", "nr_db")):
        top = pi * panel_h
        vals = np.concatenate([per[n][metric] for n in per])
        lo, hi = np.nanpercentile(vals, 1), np.nanpercentile(vals, 99)
        hi = hi if hi > lo else lo + 1
        fy = lambda v: top + panel_h - 25 - (v - lo) / (hi - lo) * (panel_h - 45)  # noqa: E731
        dr.rectangle([50, top + 20, width - 20, top + panel_h - 25], outline="black")
        dr.text((55, top + 5), f"{metric}  [{lo:.1f}, {hi:.1f}] dB", fill="black")
        # proposed drawn last so it stays visible where curves overlap
        for name in sorted(per, key=lambda n: -METHODS.index(n) if n in METHODS else 1):
            y = np.clip(per[name][metric], lo, hi)
            pts = [(fx(a), fy(b)) for a, b in zip(f, y) if np.isfinite(b)]
            if len(pts) > 1:
                dr.line(pts, fill=colors.get(name, (0, 0, 0)), width=1)
    img.save(path)


def reproduce(figure: str, outdir, threads: int = 1, base: Optional[ExperimentSpec] = None) -> RunResult:
    """Regenerate one of the reported figures/tables from the paper-default preset."""
    base = base or preset("paper-default")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if figure == "table1":
        spec = base.model_copy(update={"method": "both", "sweep": Sweep(param="t60", values=[0.0, 0.2, 0.4]),
                                       "scene": base.scene.model_copy(update={"snr_db": 0.0})})
        return run(spec, outdir, threads)
    if figure == "table2":
        room = base.scene.room.model_copy(update={"t60": 0.2})
        spec = base.model_copy(update={"method": "both", "sweep": Sweep(param="snr_db", values=[5.0, 0.0, -5.0]),
                                       "scene": base.scene.model_copy(update={"room": room})})
        return run(spec, outdir, threads)
    if figure in ("fig2", "fig3"):
        method = "both" if figure == "fig2" else "all"
        spec = base.model_copy(update={"method": method, "sweep": None})
        res = run(spec, outdir, threads, keep_processed=True)
        p = res.processed[0]
        if figure == "fig2":
            maps = field_maps(p, 1500.0)
            files = write_field_panels(outdir, maps)
            summary = {m: mean_plane_error(maps, m) for m in ("proposed", "baseline")}
            (outdir / "fig2_summary.json").write_text(json.dumps(
                {"frame": maps["_frame"], "freq_hz": maps["_freq"], "mean_error_db": summary},
                indent=2, sort_keys=True) + "\n")
            files.append(outdir / "fig2_summary.json")
        else:
            reports = res.reports[0]
            files = [outdir / "fig3_curves.csv", outdir / "fig3_curves.png"]
            write_curves(files[0], p.band, reports)
            plot_curves(files[1], p.band, reports)
        res.files += files
        write_manifest(outdir / "manifest.json", spec, [spec.scene.seed], flagged_bins(p), res.files,
                       {"figure": figure})
        return res
    raise ValueError(f"unknown figure {figure!r}")
