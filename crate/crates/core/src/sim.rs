//! Analytic motion patterns and the synthetic IMU front end: noisy, biased,
//! possibly asynchronous gyro/accel streams with exact ground truth.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::GpoError;
use crate::imu::{AccelSample, BiasState, GyroSample};

/// One per-axis sinusoid `amp * sin(2*pi*freq_hz*t + phase)`.
#[derive(Clone, Copy, Debug)]
pub struct Sinusoid {
    pub amp: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        self.amp * (2.0 * std::f64::consts::PI * self.freq_hz * t + self.phase).sin()
    }
}

/// Analytic ground-truth signal: per-axis angular-velocity and body-frame
/// acceleration sinusoids.
#[derive(Clone, Copy, Debug)]
pub struct MotionPattern {
    pub gyro_axes: [Sinusoid; 3],
    pub accel_axes: [Sinusoid; 3],
}

impl MotionPattern {
    /// True body angular velocity at `t` (rad/s).
    pub fn omega(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.gyro_axes[i].eval(t))
    }

    /// True body-frame specific force at `t` (m/s^2), gravity excluded.
    pub fn body_accel(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.accel_axes[i].eval(t))
    }

    pub fn max_freq_hz(&self) -> f64 {
        self.gyro_axes
            .iter()
            .chain(self.accel_axes.iter())
            .map(|s| s.freq_hz)
            .fold(0.0, f64::max)
    }

    pub fn zero() -> Self {
        let z = Sinusoid {
            amp: 0.0,
            freq_hz: 0.0,
            phase: 0.0,
        };
        MotionPattern {
            gyro_axes: [z; 3],
            accel_axes: [z; 3],
        }
    }

    /// Gentle motion: rates up to 0.5 rad/s, accelerations up to 0.5 m/s^2,
    /// frequencies at or below 0.5 Hz.
    pub fn slow() -> Self {
        MotionPattern {
            gyro_axes: [
                Sinusoid { amp: 0.5, freq_hz: 0.5, phase: 0.0 },
                Sinusoid { amp: 0.4, freq_hz: 0.3, phase: 1.0 },
                Sinusoid { amp: 0.3, freq_hz: 0.2, phase: 2.0 },
            ],
            accel_axes: [
                Sinusoid { amp: 0.5, freq_hz: 0.5, phase: 0.5 },
                Sinusoid { amp: 0.4, freq_hz: 0.25, phase: 1.5 },
                Sinusoid { amp: 0.3, freq_hz: 0.15, phase: 2.5 },
            ],
        }
    }

    /// Aggressive motion: rates up to 4 rad/s, accelerations up to 8 m/s^2,
    /// frequencies at or below 2 Hz.
    pub fn fast() -> Self {
        MotionPattern {
            gyro_axes: [
                Sinusoid { amp: 4.0, freq_hz: 2.0, phase: 0.0 },
                Sinusoid { amp: 3.0, freq_hz: 1.3, phase: 1.0 },
                Sinusoid { amp: 2.0, freq_hz: 0.7, phase: 2.0 },
            ],
            accel_axes: [
                Sinusoid { amp: 8.0, freq_hz: 2.0, phase: 0.5 },
                Sinusoid { amp: 6.0, freq_hz: 1.1, phase: 1.5 },
                Sinusoid { amp: 4.0, freq_hz: 0.6, phase: 2.5 },
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<Self, GpoError> {
        match name {
            "slow" => Ok(Self::slow()),
            "fast" => Ok(Self::fast()),
            other => Err(GpoError::InvalidSpec(format!("unknown pattern '{other}'"))),
        }
    }
}

/// Sample-clock description for the two sensors.
#[derive(Clone, Copy, Debug)]
pub struct SamplingSpec {
    pub gyro_rate_hz: f64,
    pub accel_rate_hz: f64,
    /// Uniform timestamp jitter half-width in seconds.
    pub jitter: f64,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn synchronous(rate_hz: f64, seed: u64) -> Self {
        SamplingSpec {
            gyro_rate_hz: rate_hz,
            accel_rate_hz: rate_hz,
            jitter: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), GpoError> {
        if self.gyro_rate_hz <= 0.0 || self.accel_rate_hz <= 0.0 {
            return Err(GpoError::InvalidSpec("sample rates must be positive".into()));
        }
        let min_period = (1.0 / self.gyro_rate_hz).min(1.0 / self.accel_rate_hz);
        if self.jitter < 0.0 || self.jitter >= min_period / 2.0 {
            return Err(GpoError::InvalidSpec(
                "timestamp jitter must be below half the sample period".into(),
            ));
        }
        Ok(())
    }
}

/// Additive corruption of the true signals.
#[derive(Clone, Copy, Debug)]
pub struct CorruptionSpec {
    pub gyro_std: f64,
    pub accel_std: f64,
    pub bias: BiasState,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn noiseless() -> Self {
        CorruptionSpec {
            gyro_std: 0.0,
            accel_std: 0.0,
            bias: BiasState::default(),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), GpoError> {
        if self.gyro_std < 0.0 || self.accel_std < 0.0 || !self.bias.is_finite() {
            return Err(GpoError::InvalidSpec("corruption spec invalid".into()));
        }
        Ok(())
    }
}

/// A simulated measurement set plus its ground-truth handle.
#[derive(Clone, Debug)]
pub struct SimulatedImu {
    pub gyro: Vec<GyroSample>,
    pub accel: Vec<AccelSample>,
    pub truth: MotionPattern,
    pub window: (f64, f64),
}

// SplitMix64, used to derive independent per-purpose and per-trial seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_times(
    start: f64,
    end: f64,
    rate_hz: f64,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let period = 1.0 / rate_hz;
    let mut times = vec![start];
    let mut i = 1u64;
    loop {
        let nominal = start + i as f64 * period;
        if nominal > end + 1e-12 {
            break;
        }
        // Draw even when jitter is zero so the time grid and downstream noise
        // draws stay aligned across jitter settings of the same seed.
        let offset: f64 = rng.gen_range(-1.0..=1.0) * jitter;
        let t = nominal + offset;
        if t <= end {
            times.push(t);
        }
        i += 1;
    }
    times
}

/// Generates the two measurement streams over `window` from an analytic
/// pattern. Gravity is excluded from the accelerometer model: the samples
/// are body-frame specific force plus bias plus white noise.
pub fn simulate(
    pattern: &MotionPattern,
    window: (f64, f64),
    sampling: &SamplingSpec,
    corruption: &CorruptionSpec,
) -> Result<SimulatedImu, GpoError> {
    let (start, end) = window;
    if !(start.is_finite() && end.is_finite()) || end <= start {
        return Err(GpoError::InvalidWindow(start, end));
    }
    sampling.validate()?;
    corruption.validate()?;
    let min_rate = sampling.gyro_rate_hz.min(sampling.accel_rate_hz);
    if pattern.max_freq_hz() > min_rate / 5.0 {
        return Err(GpoError::InvalidSpec(
            "pattern is not band-limited to a fifth of the sample rate".into(),
        ));
    }

    let mut jitter_rng_g = ChaCha8Rng::seed_from_u64(mix_seed(sampling.seed, 1));
    let mut jitter_rng_a = ChaCha8Rng::seed_from_u64(mix_seed(sampling.seed, 2));
    let mut noise_rng_g = ChaCha8Rng::seed_from_u64(mix_seed(corruption.seed, 3));
    let mut noise_rng_a = ChaCha8Rng::seed_from_u64(mix_seed(corruption.seed, 4));

    let gyro_times = sample_times(start, end, sampling.gyro_rate_hz, sampling.jitter, &mut jitter_rng_g);
    let accel_times = sample_times(start, end, sampling.accel_rate_hz, sampling.jitter, &mut jitter_rng_a);

    let mut gyro = Vec::with_capacity(gyro_times.len());
    for t in gyro_times {
        let n = Vector3::from_fn(|_, _| {
            let x: f64 = StandardNormal.sample(&mut noise_rng_g);
            x * corruption.gyro_std
        });
        gyro.push(GyroSample {
            t,
            w: pattern.omega(t) + corruption.bias.gyro + n,
        });
    }
    let mut accel = Vec::with_capacity(accel_times.len());
    for t in accel_times {
        let n = Vector3::from_fn(|_, _| {
            let x: f64 = StandardNormal.sample(&mut noise_rng_a);
            x * corruption.accel_std
        });
        accel.push(AccelSample {
            t,
            a: pattern.body_accel(t) + corruption.bias.accel + n,
        });
    }

    Ok(SimulatedImu {
        gyro,
        accel,
        truth: *pattern,
        window,
    })
}

/// One batch of corrupted streams per noise level: `trials` independent
/// seeded trials each, with the level applied as a multiplier on the base
/// standard deviations. Trials share their clock and unit noise realization
/// across levels (common random numbers), so the sweep isolates the effect
/// of the magnitude itself.
pub fn noise_sweep(
    pattern: &MotionPattern,
    window: (f64, f64),
    sampling: &SamplingSpec,
    base: &CorruptionSpec,
    levels: &[f64],
    trials: usize,
) -> Result<Vec<Vec<SimulatedImu>>, GpoError> {
    if levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(GpoError::InvalidSpec("noise levels must be ascending".into()));
    }
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut batch = Vec::with_capacity(trials);
        for trial in 0..trials {
            let sampling_t = SamplingSpec {
                seed: mix_seed(sampling.seed, trial as u64),
                ..*sampling
            };
            let corruption_t = CorruptionSpec {
                gyro_std: base.gyro_std * level,
                accel_std: base.accel_std * level,
                bias: base.bias,
                seed: mix_seed(base.seed, trial as u64),
            };
            batch.push(simulate(pattern, window, &sampling_t, &corruption_t)?);
        }
        out.push(batch);
    }
    Ok(out)
}

// --- CSV interchange -------------------------------------------------------
//
// gyro files:  header `t,wx,wy,wz`, one sample per row, SI units;
// accel files: header `t,ax,ay,az`. Lines starting with `#` are ignored.

fn write_stream_csv<W: Write>(
    mut w: W,
    header: &str,
    rows: impl Iterator<Item = (f64, Vector3<f64>)>,
) -> Result<(), GpoError> {
    writeln!(w, "{header}")?;
    for (t, v) in rows {
        writeln!(w, "{},{},{},{}", t, v.x, v.y, v.z)?;
    }
    Ok(())
}

pub fn write_gyro_csv(path: &Path, samples: &[GyroSample]) -> Result<(), GpoError> {
    let f = std::fs::File::create(path)?;
    write_stream_csv(f, "t,wx,wy,wz", samples.iter().map(|s| (s.t, s.w)))
}

pub fn write_accel_csv(path: &Path, samples: &[AccelSample]) -> Result<(), GpoError> {
    let f = std::fs::File::create(path)?;
    write_stream_csv(f, "t,ax,ay,az", samples.iter().map(|s| (s.t, s.a)))
}

fn read_stream_csv(path: &Path, expect_header: &str) -> Result<Vec<(f64, Vector3<f64>)>, GpoError> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                break line;
            }
            None => return Err(GpoError::Csv("missing header row".into())),
        }
    };
    if header.trim() != expect_header {
        return Err(GpoError::Csv(format!(
            "expected header '{expect_header}', found '{header}'"
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(GpoError::Csv(format!("expected 4 fields, got '{trimmed}'")));
        }
        let mut vals = [0.0; 4];
        for (i, field) in fields.iter().enumerate() {
            vals[i] = field
                .trim()
                .parse::<f64>()
                .map_err(|e| GpoError::Csv(format!("bad number '{field}': {e}")))?;
        }
        out.push((vals[0], Vector3::new(vals[1], vals[2], vals[3])));
    }
    Ok(out)
}

pub fn read_gyro_csv(path: &Path) -> Result<Vec<GyroSample>, GpoError> {
    Ok(read_stream_csv(path, "t,wx,wy,wz")?
        .into_iter()
        .map(|(t, w)| GyroSample { t, w })
        .collect())
}

pub fn read_accel_csv(path: &Path) -> Result<Vec<AccelSample>, GpoError> {
    Ok(read_stream_csv(path, "t,ax,ay,az")?
        .into_iter()
        .map(|(t, a)| AccelSample { t, a })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec_100hz(seed: u64) -> SamplingSpec {
        SamplingSpec::synchronous(100.0, seed)
    }

    #[test]
    fn zero_pattern_zero_corruption_gives_zero_streams() {
        let sim = simulate(
            &MotionPattern::zero(),
            (0.0, 1.0),
            &spec_100hz(1),
            &CorruptionSpec::noiseless(),
        )
        .unwrap();
        assert_eq!(sim.gyro.len(), 101);
        assert!(sim.gyro.iter().all(|s| s.w == Vector3::zeros()));
        assert!(sim.accel.iter().all(|s| s.a == Vector3::zeros()));
    }

    #[test]
    fn noiseless_samples_equal_signal_exactly() {
        let pattern = MotionPattern::fast();
        let sim = simulate(&pattern, (0.5, 1.5), &spec_100hz(2), &CorruptionSpec::noiseless())
            .unwrap();
        for s in &sim.gyro {
            assert_eq!(s.w, pattern.omega(s.t));
        }
        for s in &sim.accel {
            assert_eq!(s.a, pattern.body_accel(s.t));
        }
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let pattern = MotionPattern::fast();
        let sampling = SamplingSpec {
            gyro_rate_hz: 100.0,
            accel_rate_hz: 73.0,
            jitter: 1e-3,
            seed: 42,
        };
        let corruption = CorruptionSpec {
            gyro_std: 1e-3,
            accel_std: 1e-3,
            bias: BiasState::default(),
            seed: 43,
        };
        let a = simulate(&pattern, (0.0, 2.0), &sampling, &corruption).unwrap();
        let b = simulate(&pattern, (0.0, 2.0), &sampling, &corruption).unwrap();
        assert_eq!(a.gyro.len(), b.gyro.len());
        for (x, y) in a.gyro.iter().zip(&b.gyro) {
            assert_eq!(x.t.to_bits(), y.t.to_bits());
            assert_eq!(x.w, y.w);
        }
        for (x, y) in a.accel.iter().zip(&b.accel) {
            assert_eq!(x.t.to_bits(), y.t.to_bits());
            assert_eq!(x.a, y.a);
        }
    }

    #[test]
    fn jittered_times_strictly_increasing() {
        let sampling = SamplingSpec {
            gyro_rate_hz: 100.0,
            accel_rate_hz: 73.0,
            jitter: 1e-3,
            seed: 7,
        };
        let sim = simulate(
            &MotionPattern::slow(),
            (0.0, 3.0),
            &sampling,
            &CorruptionSpec::noiseless(),
        )
        .unwrap();
        assert!(sim.gyro.windows(2).all(|w| w[1].t > w[0].t));
        assert!(sim.accel.windows(2).all(|w| w[1].t > w[0].t));
        assert!(sim.gyro.iter().all(|s| s.t >= 0.0 && s.t <= 3.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad_jitter = SamplingSpec {
            gyro_rate_hz: 100.0,
            accel_rate_hz: 100.0,
            jitter: 6e-3,
            seed: 0,
        };
        assert!(simulate(
            &MotionPattern::zero(),
            (0.0, 1.0),
            &bad_jitter,
            &CorruptionSpec::noiseless()
        )
        .is_err());
        // 2 Hz signal content needs at least 10 Hz sampling
        let slow_clock = SamplingSpec::synchronous(9.0, 0);
        assert!(simulate(
            &MotionPattern::fast(),
            (0.0, 1.0),
            &slow_clock,
            &CorruptionSpec::noiseless()
        )
        .is_err());
    }

    #[test]
    fn sweep_level_zero_is_noiseless_and_trials_differ() {
        let base = CorruptionSpec {
            gyro_std: 1e-5,
            accel_std: 1e-5,
            bias: BiasState::default(),
            seed: 5,
        };
        let pattern = MotionPattern::slow();
        let batches = noise_sweep(&pattern, (0.0, 0.5), &spec_100hz(6), &base, &[0.0, 1.0], 3)
            .unwrap();
        for sim in &batches[0] {
            for s in &sim.gyro {
                assert_eq!(s.w, pattern.omega(s.t));
            }
        }
        // same trial, different level: identical times, scaled noise
        let noiseless = &batches[0][1];
        let noisy = &batches[1][1];
        assert_eq!(noiseless.gyro[3].t.to_bits(), noisy.gyro[3].t.to_bits());
        assert!(noisy.gyro[3].w != noiseless.gyro[3].w);
        // different trials at the same level differ in noise
        assert!(batches[1][0].gyro[3].w != batches[1][1].gyro[3].w);
    }

    #[test]
    fn sweep_is_common_random_numbers_across_levels() {
        let base = CorruptionSpec {
            gyro_std: 1e-4,
            accel_std: 1e-4,
            bias: BiasState::default(),
            seed: 9,
        };
        let pattern = MotionPattern::slow();
        let batches =
            noise_sweep(&pattern, (0.0, 0.5), &spec_100hz(1), &base, &[1.0, 10.0], 2).unwrap();
        let lo = &batches[0][0];
        let hi = &batches[1][0];
        for (a, b) in lo.gyro.iter().zip(&hi.gyro) {
            let noise_lo = a.w - pattern.omega(a.t);
            let noise_hi = b.w - pattern.omega(b.t);
            assert_relative_eq!(noise_hi, noise_lo * 10.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn csv_round_trip_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let sim = simulate(
            &MotionPattern::fast(),
            (0.0, 0.3),
            &spec_100hz(3),
            &CorruptionSpec {
                gyro_std: 1e-4,
                accel_std: 1e-4,
                bias: BiasState::default(),
                seed: 4,
            },
        )
        .unwrap();
        let gpath = dir.path().join("gyro.csv");
        let apath = dir.path().join("accel.csv");
        write_gyro_csv(&gpath, &sim.gyro).unwrap();
        write_accel_csv(&apath, &sim.accel).unwrap();

        // inject a comment line to check it is skipped
        let mut contents = std::fs::read_to_string(&gpath).unwrap();
        contents = format!("# generated for round-trip test\n{contents}");
        std::fs::write(&gpath, contents).unwrap();

        let gyro = read_gyro_csv(&gpath).unwrap();
        let accel = read_accel_csv(&apath).unwrap();
        assert_eq!(gyro.len(), sim.gyro.len());
        for (a, b) in gyro.iter().zip(&sim.gyro) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.w, b.w);
        }
        assert_eq!(accel.len(), sim.accel.len());

        // missing header is an error
        std::fs::write(&gpath, "0.0,1,2,3\n").unwrap();
        assert!(read_gyro_csv(&gpath).is_err());
    }
}
