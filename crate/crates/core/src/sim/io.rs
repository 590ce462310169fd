//! Trajectory files.
//!
//! Binary part (little-endian):
//!
//! ```text
//! magic     4 bytes  "TACM"
//! version   u32      = 1
//! channels  u32
//! rate_hz   f32
//! length    u64      number of timesteps T
//! samples   T × channels f32, channel-interleaved
//! ```
//!
//! Labels live next to it in `<basename>.json`:
//! `{"version":1,"phases":[{"start","end","kind"}],"events":[{"t","kind"}]}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Event, LabeledTrajectory, PhaseSpan};
use crate::checkpoint::ByteReader;
use crate::{Error, Result};

pub const TRAJECTORY_MAGIC: [u8; 4] = *b"TACM";
pub const TRAJECTORY_VERSION: u32 = 1;

/// Label sidecar document. Segmentation results use the same schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub version: u32,
    pub phases: Vec<PhaseSpan>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl Sidecar {
    pub fn new(phases: Vec<PhaseSpan>, events: Vec<Event>) -> Self {
        Self {
            version: TRAJECTORY_VERSION,
            phases,
            events,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub(crate) fn encode(traj: &LabeledTrajectory) -> Result<Vec<u8>> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    traj.validate()?;
    let mut out = Vec::with_capacity(24 + traj.samples.len() * 4);
    out.extend_from_slice(&TRAJECTORY_MAGIC);
    out.extend_from_slice(&TRAJECTORY_VERSION.to_le_bytes());
    out.extend_from_slice(&(traj.channels as u32).to_le_bytes());
    out.extend_from_slice(&traj.rate_hz.to_le_bytes());
    out.extend_from_slice(&(traj.len() as u64).to_le_bytes());
    for v in &traj.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<LabeledTrajectory> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != TRAJECTORY_MAGIC {
        return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"TACM\"")));
    }
    let version = r.u32("version")?;
    if version != TRAJECTORY_VERSION {
        return Err(Error::Version {
            found: version,
            expected: TRAJECTORY_VERSION,
        });
    }
    let ch_at = r.offset();
    let channels = r.u32("channels")? as usize;
    if channels == 0 {
        return Err(r.error_at(ch_at, "zero channels".into()));
    }
    let rate_at = r.offset();
    let rate_hz = r.f32("rate")?;
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(r.error_at(rate_at, format!("invalid rate {rate_hz}")));
    }
    let len_at = r.offset();
    let len = r.u64("length")? as usize;
    let n = len
        .checked_mul(channels)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| r.error_at(len_at, "length overflows".into()))?;
    let raw = r.take(n, "samples")?;
    if r.remaining() != 0 {
        return Err(r.error_at(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    let samples = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(LabeledTrajectory {
        samples,
        channels,
        rate_hz,
        phases: Vec::new(),
        events: Vec::new(),
    })
}

/// Writes `path` and its label sidecar.
pub fn write_trajectory(traj: &LabeledTrajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(traj)?;
    let sidecar = Sidecar::new(traj.phases.clone(), traj.events.clone());
    std::fs::write(path, bytes)?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a trajectory; a missing sidecar yields an unlabeled trajectory.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<LabeledTrajectory> {
    let path = path.as_ref();
    let mut traj = decode(&std::fs::read(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        let sc: Sidecar = serde_json::from_slice(&std::fs::read(&side)?)?;
        if sc.version != TRAJECTORY_VERSION {
            return Err(Error::Version {
                found: sc.version,
                expected: TRAJECTORY_VERSION,
            });
        }
        traj.phases = sc.phases;
        traj.events = sc.events;
        traj.validate()?;
        if traj.events.iter().any(|e| e.t >= traj.len()) {
            return Err(Error::Config("event index beyond trajectory end".into()));
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, ScenarioConfig, ScenarioKind};

    #[test]
    fn roundtrip_bit_identical() {
        let t = generate(&ScenarioConfig {
            kind: ScenarioKind::SequentialButtons,
            channels: 2,
            duration_s: 12.0,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.tacm");
        write_trajectory(&t, &p).unwrap();
        let back = read_trajectory(&p).unwrap();
        assert_eq!(back.samples.len(), t.samples.len());
        assert!(back.samples.iter().zip(&t.samples).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back, t);
    }

    #[test]
    fn truncated_is_parse_error() {
        let t = generate(&ScenarioConfig::default()).unwrap();
        let b = encode(&t).unwrap();
        for cut in [0, 2, 7, 20, b.len() - 3] {
            assert!(matches!(decode(&b[..cut]), Err(Error::Parse { .. })), "cut {cut}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let t = generate(&ScenarioConfig::default()).unwrap();
        let mut b = encode(&t).unwrap();
        b[4] = 2;
        assert!(matches!(decode(&b), Err(Error::Version { found: 2, .. })));
        b[1] = 0;
        assert!(matches!(decode(&b), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn empty_rejected() {
        let t = LabeledTrajectory {
            samples: vec![],
            channels: 1,
            rate_hz: 100.0,
            phases: vec![],
            events: vec![],
        };
        assert!(matches!(encode(&t), Err(Error::Empty(_))));
    }
}
