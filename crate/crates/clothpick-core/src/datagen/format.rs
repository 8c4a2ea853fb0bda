//! Versioned binary dataset format ("CPDS").
//!
//! Layout (integers little-endian, floats f32 little-endian):
//!   magic "CPDS" | version u32 | episode_count u32 | steps u32 |
//!   resolution u32 | channel_count u32 | channel codes (u8 each) | seed u64
//! then per episode:
//!   policy u8 | tier u8 | c_flat u32 | initial_nc f32 |
//!   nc (steps+1 × f32) | mispick (steps × u8) | actions (steps × 4 × f32) |
//!   rewards (steps × f32) | observations ((steps+1) × channels × res² × f32)

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::env::{Channel, PickPlaceAction};
use crate::error::{Error, Result};
use crate::rssm::{GridSeq, SequenceSource};

use super::PolicyKind;

const MAGIC: &[u8; 4] = b"CPDS";
const VERSION: u32 = 1;

/// One recorded 20-step trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub policy: PolicyKind,
    pub tier: u8,
    pub c_flat: u32,
    pub initial_nc: f32,
    /// steps + 1 values (before the first action through after the last).
    pub nc: Vec<f32>,
    pub mispick: Vec<bool>,
    pub actions: Vec<[f32; 4]>,
    pub rewards: Vec<f32>,
    /// (steps + 1) × channels × resolution² rescaled observation grids.
    pub observations: Vec<Vec<Vec<f32>>>,
}

/// Dataset header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub episode_count: u32,
    pub steps_per_episode: u32,
    pub resolution: u32,
    pub channels: Vec<Channel>,
    pub seed: u64,
}

/// A fully loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub episodes: Vec<EpisodeRecord>,
}

fn channel_code(ch: Channel) -> u8 {
    match ch {
        Channel::Heightfield => 0,
        Channel::Mask => 1,
    }
}

fn channel_from_code(code: u8) -> Result<Channel> {
    match code {
        0 => Ok(Channel::Heightfield),
        1 => Ok(Channel::Mask),
        other => Err(Error::Format(format!("unknown channel code {other}"))),
    }
}

/// Streaming writer: header up front, one episode at a time.
pub struct DatasetWriter {
    w: BufWriter<File>,
    header: DatasetHeader,
    written: u32,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: DatasetHeader) -> Result<DatasetWriter> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&header.episode_count.to_le_bytes())?;
        w.write_all(&header.steps_per_episode.to_le_bytes())?;
        w.write_all(&header.resolution.to_le_bytes())?;
        w.write_all(&(header.channels.len() as u32).to_le_bytes())?;
        for ch in &header.channels {
            w.write_all(&[channel_code(*ch)])?;
        }
        w.write_all(&header.seed.to_le_bytes())?;
        Ok(DatasetWriter {
            w,
            header,
            written: 0,
        })
    }

    pub fn append(&mut self, ep: &EpisodeRecord) -> Result<()> {
        let steps = self.header.steps_per_episode as usize;
        let cells = (self.header.resolution * self.header.resolution) as usize;
        let chans = self.header.channels.len();
        let ok = ep.nc.len() == steps + 1
            && ep.mispick.len() == steps
            && ep.actions.len() == steps
            && ep.rewards.len() == steps
            && ep.observations.len() == steps + 1
            && ep
                .observations
                .iter()
                .all(|f| f.len() == chans && f.iter().all(|g| g.len() == cells));
        if !ok {
            return Err(Error::Contract(format!(
                "episode {} does not match the dataset header",
                self.written
            )));
        }
        let w = &mut self.w;
        w.write_all(&[ep.policy.code()])?;
        w.write_all(&[ep.tier])?;
        w.write_all(&ep.c_flat.to_le_bytes())?;
        w.write_all(&ep.initial_nc.to_le_bytes())?;
        for v in &ep.nc {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in &ep.mispick {
            w.write_all(&[*m as u8])?;
        }
        for a in &ep.actions {
            for v in a {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in &ep.rewards {
            w.write_all(&v.to_le_bytes())?;
        }
        for frame in &ep.observations {
            for grid in frame {
                for v in grid {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.episode_count {
            return Err(Error::Contract(format!(
                "wrote {} episodes, header promised {}",
                self.written, self.header.episode_count
            )));
        }
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = DatasetWriter::create(path, dataset.header.clone())?;
    for ep in &dataset.episodes {
        w.append(ep)?;
    }
    w.finish()
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: impl Fn() -> String) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated dataset: {}", what())))
}

fn read_f32(r: &mut impl Read, what: &impl Fn() -> String) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(f32::from_le_bytes(b))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("dataset too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad dataset magic {magic:?}, expected \"CPDS\""
        )));
    }
    let mut u32buf = [0u8; 4];
    let hdr = || "header".to_string();
    read_exact_or(&mut r, &mut u32buf, hdr)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version} (expected {VERSION})"
        )));
    }
    read_exact_or(&mut r, &mut u32buf, hdr)?;
    let episode_count = u32::from_le_bytes(u32buf);
    read_exact_or(&mut r, &mut u32buf, hdr)?;
    let steps = u32::from_le_bytes(u32buf);
    read_exact_or(&mut r, &mut u32buf, hdr)?;
    let resolution = u32::from_le_bytes(u32buf);
    read_exact_or(&mut r, &mut u32buf, hdr)?;
    let channel_count = u32::from_le_bytes(u32buf) as usize;
    let mut channels = Vec::with_capacity(channel_count);
    for _ in 0..channel_count {
        let mut b = [0u8; 1];
        read_exact_or(&mut r, &mut b, hdr)?;
        channels.push(channel_from_code(b[0])?);
    }
    let mut u64buf = [0u8; 8];
    read_exact_or(&mut r, &mut u64buf, hdr)?;
    let seed = u64::from_le_bytes(u64buf);

    let header = DatasetHeader {
        episode_count,
        steps_per_episode: steps,
        resolution,
        channels: channels.clone(),
        seed,
    };

    let cells = (resolution * resolution) as usize;
    let mut episodes = Vec::with_capacity(episode_count as usize);
    for e in 0..episode_count {
        let what = move || format!("episode {e}");
        let mut b1 = [0u8; 1];
        read_exact_or(&mut r, &mut b1, what)?;
        let policy = PolicyKind::from_code(b1[0])?;
        read_exact_or(&mut r, &mut b1, what)?;
        let tier = b1[0];
        read_exact_or(&mut r, &mut u32buf, what)?;
        let c_flat = u32::from_le_bytes(u32buf);
        let initial_nc = read_f32(&mut r, &what)?;
        let mut nc = Vec::with_capacity(steps as usize + 1);
        for _ in 0..=steps {
            nc.push(read_f32(&mut r, &what)?);
        }
        let mut mispick = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            read_exact_or(&mut r, &mut b1, what)?;
            mispick.push(b1[0] != 0);
        }
        let mut actions = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let mut a = [0f32; 4];
            for v in a.iter_mut() {
                *v = read_f32(&mut r, &what)?;
            }
            actions.push(a);
        }
        let mut rewards = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            rewards.push(read_f32(&mut r, &what)?);
        }
        let mut observations = Vec::with_capacity(steps as usize + 1);
        for _ in 0..=steps {
            let mut frame = Vec::with_capacity(channels.len());
            for _ in 0..channels.len() {
                let mut grid = vec![0f32; cells];
                let mut bytes = vec![0u8; cells * 4];
                read_exact_or(&mut r, &mut bytes, what)?;
                for (v, chunk) in grid.iter_mut().zip(bytes.chunks_exact(4)) {
                    *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                }
                frame.push(grid);
            }
            observations.push(frame);
        }
        episodes.push(EpisodeRecord {
            policy,
            tier,
            c_flat,
            initial_nc,
            nc,
            mispick,
            actions,
            rewards,
            observations,
        });
    }
    Ok(Dataset { header, episodes })
}

impl SequenceSource for Dataset {
    fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    fn frames_per_episode(&self) -> usize {
        self.header.steps_per_episode as usize + 1
    }

    fn grid_seq(&self, episode: usize, start: usize, len: usize) -> GridSeq {
        let ep = &self.episodes[episode];
        let mut frames = Vec::with_capacity(len);
        let mut actions = Vec::with_capacity(len);
        let mut rewards = Vec::with_capacity(len);
        for t in 0..len {
            let frame = &ep.observations[start + t];
            frames.push(
                frame
                    .iter()
                    .map(|g| g.iter().map(|v| *v as f64).collect())
                    .collect(),
            );
            if t == 0 {
                actions.push(PickPlaceAction::new(0.0, 0.0, 0.0, 0.0));
                rewards.push(0.0);
            } else {
                let a = ep.actions[start + t - 1];
                actions.push(PickPlaceAction::new(
                    a[0] as f64,
                    a[1] as f64,
                    a[2] as f64,
                    a[3] as f64,
                ));
                rewards.push(ep.rewards[start + t - 1] as f64);
            }
        }
        GridSeq {
            resolution: self.header.resolution as usize,
            channels: self.header.channels.clone(),
            frames,
            actions,
            rewards,
        }
    }
}
