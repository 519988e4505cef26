//! Binary dataset container and CSV metadata sidecar.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! header:  b"GPB1" | version u32 | sample_rate u32 | channels u32 | episodes u32
//! record:  episode_id u64 | fault_type u8 | line u8 | loc f64 | t_inception f64
//!          | t_clearing f64 | seed u64 | line_lengths_km 4*f64 | load_level f64
//!          | source_impedance_pu 3*f64 | k0 f64 | fault_resistance_pu f64
//!          | dc_time_constant_s f64 | noise_seed u64 | samples u32
//!          | signals channels*samples f32 (row-major, channel by channel)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::episode::{Episode, Randomization};
use super::fault::FaultType;
use super::layout::{LINE_COUNT, SUBSTATION_COUNT};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GPB1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u32,
    pub sample_rate: u32,
    pub channels: u32,
    pub episodes: u32,
}

impl ContainerHeader {
    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.version, self.sample_rate, self.channels, self.episodes] {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("file too short for header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(ContainerHeader {
            version,
            sample_rate: read_u32(r)?,
            channels: read_u32(r)?,
            episodes: read_u32(r)?,
        })
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Streaming writer; the episode count is fixed up front.
pub struct DatasetWriter {
    out: BufWriter<File>,
    header: ContainerHeader,
    written: u32,
}

impl DatasetWriter {
    pub fn create(path: &Path, sample_rate: u32, channels: u32, episodes: u32) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = ContainerHeader {
            version: FORMAT_VERSION,
            sample_rate,
            channels,
            episodes,
        };
        header.write_to(&mut out)?;
        Ok(DatasetWriter {
            out,
            header,
            written: 0,
        })
    }

    pub fn write_episode(&mut self, ep: &Episode) -> Result<()> {
        if self.written == self.header.episodes {
            return Err(Error::contract("more episodes than declared in header"));
        }
        if ep.signals.nrows() != self.header.channels as usize {
            return Err(Error::contract(format!(
                "episode {} has {} channels, container declares {}",
                ep.episode_id,
                ep.signals.nrows(),
                self.header.channels
            )));
        }
        let w = &mut self.out;
        let rz = &ep.randomization;
        w.write_all(&ep.episode_id.to_le_bytes())?;
        w.write_all(&[ep.fault_type.index() as u8, ep.faulted_line as u8])?;
        for v in [ep.location_frac, ep.t_inception, ep.t_clearing] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&ep.seed.to_le_bytes())?;
        for v in rz.line_lengths_km {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&rz.load_level.to_le_bytes())?;
        for v in rz.source_impedance_pu {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [rz.k0, rz.fault_resistance_pu, rz.dc_time_constant_s] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&rz.noise_seed.to_le_bytes())?;
        w.write_all(&(ep.signals.ncols() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(ep.signals.len() * 4);
        for v in ep.signals.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.episodes {
            return Err(Error::contract(format!(
                "declared {} episodes, wrote {}",
                self.header.episodes, self.written
            )));
        }
        self.out.flush()?;
        Ok(())
    }
}

pub struct DatasetReader {
    input: BufReader<File>,
    header: ContainerHeader,
    read: u32,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut input = BufReader::new(File::open(path)?);
        let header = ContainerHeader::read_from(&mut input)?;
        Ok(DatasetReader {
            input,
            header,
            read: 0,
        })
    }

    pub fn header(&self) -> ContainerHeader {
        self.header
    }

    fn read_episode(&mut self) -> Result<Episode> {
        let r = &mut self.input;
        let episode_id = read_u64(r)?;
        let ft = read_u8(r)?;
        let fault_type = FaultType::from_index(ft as usize)
            .ok_or_else(|| Error::Format(format!("bad fault type code {ft}")))?;
        let faulted_line = read_u8(r)? as usize;
        let location_frac = read_f64(r)?;
        let t_inception = read_f64(r)?;
        let t_clearing = read_f64(r)?;
        let seed = read_u64(r)?;
        let mut line_lengths_km = [0.0; LINE_COUNT];
        for v in line_lengths_km.iter_mut() {
            *v = read_f64(r)?;
        }
        let load_level = read_f64(r)?;
        let mut source_impedance_pu = [0.0; SUBSTATION_COUNT];
        for v in source_impedance_pu.iter_mut() {
            *v = read_f64(r)?;
        }
        let k0 = read_f64(r)?;
        let fault_resistance_pu = read_f64(r)?;
        let dc_time_constant_s = read_f64(r)?;
        let noise_seed = read_u64(r)?;
        let samples = read_u32(r)? as usize;
        let channels = self.header.channels as usize;
        let mut raw = vec![0u8; channels * samples * 4];
        r.read_exact(&mut raw)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let signals = Array2::from_shape_vec((channels, samples), data)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(Episode {
            episode_id,
            signals,
            sample_rate: self.header.sample_rate as f64,
            fault_type,
            faulted_line,
            location_frac,
            t_inception,
            t_clearing,
            seed,
            randomization: Randomization {
                line_lengths_km,
                load_level,
                source_impedance_pu,
                k0,
                fault_resistance_pu,
                dc_time_constant_s,
                noise_seed,
            },
        })
    }

    pub fn read_all(self) -> Result<Vec<Episode>> {
        self.collect()
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Episode>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read == self.header.episodes {
            return None;
        }
        self.read += 1;
        Some(self.read_episode().map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::Format("truncated episode record".into())
            }
            other => other,
        }))
    }
}

pub fn write_dataset(path: &Path, episodes: &[Episode]) -> Result<()> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::param("cannot write an empty dataset"))?;
    let mut w = DatasetWriter::create(
        path,
        first.sample_rate.round() as u32,
        first.signals.nrows() as u32,
        episodes.len() as u32,
    )?;
    for ep in episodes {
        w.write_episode(ep)?;
    }
    w.finish()
}

pub fn read_dataset(path: &Path) -> Result<Vec<Episode>> {
    DatasetReader::open(path)?.read_all()
}

pub const SIDECAR_HEADER: [&str; 7] = [
    "episode_id",
    "fault_type",
    "line",
    "loc",
    "t_inception",
    "t_clearing",
    "seed",
];

/// Append-free CSV writer for episode metadata.
pub struct SidecarWriter {
    out: csv::Writer<File>,
}

impl SidecarWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(SIDECAR_HEADER)?;
        Ok(SidecarWriter { out })
    }

    pub fn write_episode(&mut self, ep: &Episode) -> Result<()> {
        self.out.write_record([
            ep.episode_id.to_string(),
            ep.fault_type.name().to_string(),
            ep.faulted_line.to_string(),
            format!("{}", ep.location_frac),
            format!("{}", ep.t_inception),
            format!("{}", ep.t_clearing),
            ep.seed.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_sidecar(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut w = SidecarWriter::create(path)?;
    for ep in episodes {
        w.write_episode(ep)?;
    }
    w.finish()
}

/// Default sidecar location: `<dataset>.csv` next to the container.
pub fn sidecar_path(dataset: &Path) -> std::path::PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".csv");
    name.into()
}
