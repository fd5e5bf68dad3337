//! Little-endian dataset archive.
//!
//! ```text
//! header : magic "FLHBDSET" | version u32 | n_t u32 | rows u32 | cols u32
//!          | Q u32 | K u32 | sample count u64 | seed u64
//! record : user_id u32 | label u32 | rows*cols*3 f32, row-major (row, col, channel)
//! ```
//!
//! Records appear in generation order: user, then realization, then noisy copy.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{GeneratedDataset, Sample};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FLHBDSET";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub n_t: u32,
    pub rows: u32,
    pub cols: u32,
    pub q_classes: u32,
    pub k_users: u32,
    pub sample_count: u64,
    pub seed: u64,
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn write_archive<W: Write>(data: &GeneratedDataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(u32_of(data.n_t, "n_t")?)?;
    w.write_u32::<LittleEndian>(u32_of(data.rows, "rows")?)?;
    w.write_u32::<LittleEndian>(u32_of(data.cols, "cols")?)?;
    w.write_u32::<LittleEndian>(u32_of(data.q_classes, "Q")?)?;
    w.write_u32::<LittleEndian>(u32_of(data.k_users, "K")?)?;
    w.write_u64::<LittleEndian>(data.sample_count() as u64)?;
    w.write_u64::<LittleEndian>(data.seed)?;
    let plane = data.rows * data.cols;
    for s in data.per_user.iter().flatten() {
        w.write_u32::<LittleEndian>(u32_of(s.user_id, "user_id")?)?;
        w.write_u32::<LittleEndian>(u32_of(s.label, "label")?)?;
        for i in 0..plane {
            for ch in 0..3 {
                w.write_f32::<LittleEndian>(s.x[ch * plane + i] as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("archive is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_header<R: Read>(r: &mut R) -> Result<ArchiveHeader> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset archive (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported archive version {version}")));
    }
    let mut field = || r.read_u32::<LittleEndian>().map_err(truncated);
    let (n_t, rows, cols, q_classes, k_users) = (field()?, field()?, field()?, field()?, field()?);
    let sample_count = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let seed = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let header = ArchiveHeader {
        n_t,
        rows,
        cols,
        q_classes,
        k_users,
        sample_count,
        seed,
    };
    if rows == 0 || cols == 0 || u64::from(rows) * u64::from(cols) != u64::from(n_t) {
        return Err(Error::Format(format!(
            "grid {rows}x{cols} does not hold {n_t} antennas"
        )));
    }
    if q_classes == 0 || k_users == 0 {
        return Err(Error::Format("header declares zero classes or users".into()));
    }
    Ok(header)
}

pub fn read_archive<R: Read>(mut r: R) -> Result<GeneratedDataset> {
    let h = read_header(&mut r)?;
    let plane = (h.rows * h.cols) as usize;
    let mut per_user: Vec<Vec<Sample>> = vec![Vec::new(); h.k_users as usize];
    let mut buf = vec![0f32; 3 * plane];
    for id in 0..h.sample_count {
        let user_id = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let label = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if user_id == 0 || user_id > h.k_users as usize {
            return Err(Error::Format(format!("record {id}: user {user_id} out of range")));
        }
        if label == 0 || label > h.q_classes as usize {
            return Err(Error::Format(format!("record {id}: label {label} out of range")));
        }
        r.read_f32_into::<LittleEndian>(&mut buf).map_err(truncated)?;
        let mut x = vec![0.0; 3 * plane];
        for i in 0..plane {
            for ch in 0..3 {
                x[ch * plane + i] = f64::from(buf[3 * i + ch]);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("record {id}: non-finite tensor entry")));
        }
        per_user[user_id - 1].push(Sample {
            x,
            label,
            user_id,
            id,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(GeneratedDataset {
        n_t: h.n_t as usize,
        rows: h.rows as usize,
        cols: h.cols as usize,
        q_classes: h.q_classes as usize,
        k_users: h.k_users as usize,
        seed: h.seed,
        per_user,
    })
}

pub fn save(data: &GeneratedDataset, path: &Path) -> Result<()> {
    write_archive(data, BufWriter::new(File::create(path)?))
}

pub fn load(path: &Path) -> Result<GeneratedDataset> {
    read_archive(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, DatasetSpec};

    fn spec() -> DatasetSpec {
        DatasetSpec {
            n_realizations: 3,
            g_noisy_copies: 2,
            k_users: 2,
            ..DatasetSpec::default()
        }
    }

    fn rounded(mut d: GeneratedDataset) -> GeneratedDataset {
        for s in d.per_user.iter_mut().flatten() {
            s.x.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        }
        d
    }

    #[test]
    fn round_trip_matches_f32_rounding() {
        let data = generate(&spec()).unwrap();
        let mut bytes = Vec::new();
        write_archive(&data, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 48 + 12 * (8 + 48 * 4));
        let back = read_archive(bytes.as_slice()).unwrap();
        assert_eq!(back, rounded(data));
    }

    #[test]
    fn header_echoes_dataset() {
        let data = generate(&spec()).unwrap();
        let mut bytes = Vec::new();
        write_archive(&data, &mut bytes).unwrap();
        let h = read_header(&mut bytes.as_slice()).unwrap();
        assert_eq!(
            h,
            ArchiveHeader {
                n_t: 16,
                rows: 4,
                cols: 4,
                q_classes: 16,
                k_users: 2,
                sample_count: 12,
                seed: 1,
            }
        );
    }

    #[test]
    fn corrupted_archives_are_rejected() {
        let data = generate(&spec()).unwrap();
        let mut bytes = Vec::new();
        write_archive(&data, &mut bytes).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_archive(bad_magic.as_slice()), Err(Error::Format(_))));

        let mut bad_version = bytes.clone();
        bad_version[8] = 9;
        assert!(matches!(read_archive(bad_version.as_slice()), Err(Error::Format(_))));

        let mut bad_grid = bytes.clone();
        bad_grid[16] = 5;
        assert!(matches!(read_archive(bad_grid.as_slice()), Err(Error::Format(_))));

        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(read_archive(short), Err(Error::Format(_))));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_archive(long.as_slice()), Err(Error::Format(_))));

        let mut bad_label = bytes.clone();
        bad_label[48 + 4] = 99;
        assert!(matches!(read_archive(bad_label.as_slice()), Err(Error::Format(_))));
    }
}
