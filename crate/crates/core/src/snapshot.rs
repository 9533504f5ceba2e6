//! Trajectory storage: sampled `(t, u, v)` records and a binary format.
//!
//! The file layout is little-endian throughout: an eight-byte magic
//! `KSSNAP01`, the grid descriptor hash, the cell count, the record count,
//! then each record as its time followed by the density and signal values.
//! The grid hash makes a snapshot self-identifying; loading one against a
//! differently laid out grid fails instead of silently misreading.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{KsError, Result};
use crate::geometry::{Field, Grid};
use crate::stepper::StateSnapshot;

const MAGIC: &[u8; 8] = b"KSSNAP01";

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Time-ordered samples of one run on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid_id: u64,
    cell_count: usize,
    records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn new(grid: &Grid) -> Trajectory {
        Trajectory { grid_id: grid.id(), cell_count: grid.cell_count(), records: Vec::new() }
    }

    pub fn grid_id(&self) -> u64 {
        self.grid_id
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn push(&mut self, state: &StateSnapshot) -> Result<()> {
        if state.u.grid_id() != self.grid_id || state.v.grid_id() != self.grid_id {
            return Err(KsError::GridMismatch { field: state.u.grid_id(), grid: self.grid_id });
        }
        if !state.t.is_finite() {
            return Err(KsError::SnapshotFormat(format!("non-finite record time {}", state.t)));
        }
        if let Some(last) = self.records.last() {
            if state.t <= last.t {
                return Err(KsError::SnapshotFormat(format!(
                    "records must advance in time, got {} after {}",
                    state.t, last.t
                )));
            }
        }
        self.records.push(TrajectoryRecord {
            t: state.t,
            u: state.u.values().to_vec(),
            v: state.v.values().to_vec(),
        });
        Ok(())
    }

    /// Rebuilds a stepper state from record `index`; the grid must be the
    /// one the trajectory was sampled on.
    pub fn state_at(&self, grid: &Grid, index: usize) -> Result<StateSnapshot> {
        if grid.id() != self.grid_id {
            return Err(KsError::GridMismatch { field: grid.id(), grid: self.grid_id });
        }
        let rec = self.records.get(index).ok_or_else(|| {
            KsError::InsufficientData(format!(
                "record {index} out of range, trajectory holds {}",
                self.records.len()
            ))
        })?;
        Ok(StateSnapshot {
            t: rec.t,
            step_index: index as u64,
            u: Field::from_values(grid, rec.u.clone())?,
            v: Field::from_values(grid, rec.v.clone())?,
        })
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(MAGIC)?;
        sink.write_all(&self.grid_id.to_le_bytes())?;
        sink.write_all(&(self.cell_count as u64).to_le_bytes())?;
        sink.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for rec in &self.records {
            sink.write_all(&rec.t.to_le_bytes())?;
            for &x in &rec.u {
                sink.write_all(&x.to_le_bytes())?;
            }
            for &x in &rec.v {
                sink.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Trajectory> {
        let mut magic = [0u8; 8];
        source.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(KsError::SnapshotFormat(format!(
                "bad magic {:02x?}, expected {MAGIC:02x?}",
                magic
            )));
        }
        let grid_id = read_u64(&mut source)?;
        let cell_count = read_u64(&mut source)? as usize;
        let record_count = read_u64(&mut source)? as usize;
        if cell_count == 0 || cell_count > 1 << 32 {
            return Err(KsError::SnapshotFormat(format!("implausible cell count {cell_count}")));
        }
        if record_count > 1 << 32 {
            return Err(KsError::SnapshotFormat(format!(
                "implausible record count {record_count}"
            )));
        }
        let mut records = Vec::with_capacity(record_count.min(1 << 20));
        let mut last_t = f64::NEG_INFINITY;
        for _ in 0..record_count {
            let t = read_f64(&mut source)?;
            if !t.is_finite() || t <= last_t {
                return Err(KsError::SnapshotFormat(format!(
                    "record times must be finite and increasing, got {t} after {last_t}"
                )));
            }
            last_t = t;
            let u = read_doubles(&mut source, cell_count)?;
            let v = read_doubles(&mut source, cell_count)?;
            records.push(TrajectoryRecord { t, u, v });
        }
        // A trailing byte means the header lied about the record count.
        let mut probe = [0u8; 1];
        match source.read(&mut probe) {
            Ok(0) => {}
            Ok(_) => {
                return Err(KsError::SnapshotFormat(
                    "trailing bytes after the declared records".into(),
                ))
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Trajectory { grid_id, cell_count, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut sink = BufWriter::new(file);
        self.write_to(&mut sink)?;
        sink.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Trajectory> {
        let file = File::open(path)?;
        Trajectory::read_from(BufReader::new(file))
    }
}

fn truncated(e: std::io::Error) -> KsError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        KsError::SnapshotFormat("file truncated".into())
    } else {
        e.into()
    }
}

fn read_u64<R: Read>(source: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    source.read_exact(&mut buf).map_err(truncated)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(source: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(source)?))
}

fn read_doubles<R: Read>(source: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    source.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, Domain};
    use std::f64::consts::PI;

    fn state(grid: &Grid, t: f64, scale: f64) -> StateSnapshot {
        StateSnapshot {
            t,
            step_index: 0,
            u: Field::new(grid, |x| scale * (1.0 + 0.3 * x[0].cos())),
            v: Field::new(grid, |x| scale * (1.0 + 0.1 * x[0].sin())),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let grid = build_grid(&Domain::Interval { a: 0.0, b: PI }, &[24]).unwrap();
        let mut traj = Trajectory::new(&grid);
        traj.push(&state(&grid, 0.0, 1.0)).unwrap();
        traj.push(&state(&grid, 0.5, 1.7)).unwrap();
        traj.push(&state(&grid, 1.0, 0.3)).unwrap();

        let mut bytes = Vec::new();
        traj.write_to(&mut bytes).unwrap();
        let back = Trajectory::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, traj);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.snaps");
        traj.save(&path).unwrap();
        assert_eq!(Trajectory::load(&path).unwrap(), traj);
    }

    #[test]
    fn push_enforces_grid_and_time_order() {
        let grid = build_grid(&Domain::Interval { a: 0.0, b: PI }, &[24]).unwrap();
        let other = build_grid(&Domain::Interval { a: 0.0, b: PI }, &[32]).unwrap();
        let mut traj = Trajectory::new(&grid);
        traj.push(&state(&grid, 0.0, 1.0)).unwrap();
        assert!(traj.push(&state(&grid, 0.0, 1.0)).is_err());
        assert!(traj.push(&state(&other, 1.0, 1.0)).is_err());
        let restored = traj.state_at(&grid, 0).unwrap();
        assert_eq!(restored.u.values(), traj.records()[0].u.as_slice());
        assert!(traj.state_at(&other, 0).is_err());
        assert!(traj.state_at(&grid, 5).is_err());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let grid = build_grid(&Domain::Interval { a: 0.0, b: PI }, &[8]).unwrap();
        let mut traj = Trajectory::new(&grid);
        traj.push(&state(&grid, 0.0, 1.0)).unwrap();
        let mut bytes = Vec::new();
        traj.write_to(&mut bytes).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        assert!(Trajectory::read_from(bad_magic.as_slice()).is_err());

        let truncated = &bytes[..bytes.len() - 5];
        assert!(Trajectory::read_from(truncated).is_err());

        let mut padded = bytes.clone();
        padded.push(0);
        assert!(Trajectory::read_from(padded.as_slice()).is_err());

        assert!(Trajectory::read_from(&b"KSSNAP99"[..]).is_err());
    }
}
