//! Photon streams and their on-disk formats.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic        [u8; 4] = "NFCS"
//! version      u16
//! tick_ns      u32
//! n_channels   u8
//! duration     u64   (ticks)
//! config_len   u32
//! config       [u8; config_len]   (JSON, may be empty)
//! per channel: count u64, then `count` u64 tick deltas (first delta from 0)
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NFCS";
pub const FORMAT_VERSION: u16 = 1;

/// Time-ordered detection events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonStream {
    pub tick_ns: u32,
    /// Acquisition length in ticks.
    pub duration: u64,
    pub n_channels: u8,
    /// Sorted arrival ticks.
    pub timestamps: Vec<u64>,
    /// Detector index of each event, parallel to `timestamps`.
    pub channels: Vec<u8>,
    /// JSON of the configuration that produced the stream, if any.
    pub config: Option<String>,
}

/// Summary carried alongside a stream file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub duration_s: f64,
    pub total_counts: u64,
    pub counts_per_channel: Vec<u64>,
    pub tick_ns: u32,
    pub config_hash: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl PhotonStream {
    /// Single-channel stream from sorted ticks.
    pub fn from_ticks(timestamps: Vec<u64>, duration: u64, tick_ns: u32) -> Result<Self> {
        let channels = vec![0; timestamps.len()];
        let s = PhotonStream { tick_ns, duration, n_channels: 1, timestamps, channels, config: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tick_ns == 0 {
            return Err(Error::data("tick_ns must be positive"));
        }
        if self.timestamps.len() != self.channels.len() {
            return Err(Error::data("timestamps and channels differ in length"));
        }
        if self.timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::data("timestamps are not sorted"));
        }
        if let Some(&last) = self.timestamps.last() {
            if last >= self.duration {
                return Err(Error::data("event after the end of the acquisition"));
            }
        }
        if self.channels.iter().any(|&c| c >= self.n_channels) {
            return Err(Error::data("channel index out of range"));
        }
        Ok(())
    }

    pub fn tick_seconds(&self) -> f64 {
        self.tick_ns as f64 * 1e-9
    }

    pub fn duration_seconds(&self) -> f64 {
        self.duration as f64 * self.tick_seconds()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn config_hash(&self) -> Option<String> {
        self.config.as_ref().map(|c| sha256_hex(c.as_bytes()))
    }

    /// Events of one detector as a single-channel stream.
    pub fn channel(&self, ch: u8) -> PhotonStream {
        let timestamps = self
            .timestamps
            .iter()
            .zip(&self.channels)
            .filter(|(_, &c)| c == ch)
            .map(|(&t, _)| t)
            .collect::<Vec<_>>();
        PhotonStream {
            tick_ns: self.tick_ns,
            duration: self.duration,
            n_channels: 1,
            channels: vec![0; timestamps.len()],
            timestamps,
            config: self.config.clone(),
        }
    }

    /// All detectors pooled into one channel.
    pub fn merged(&self) -> PhotonStream {
        PhotonStream {
            n_channels: 1,
            channels: vec![0; self.timestamps.len()],
            ..self.clone()
        }
    }

    pub fn meta(&self) -> StreamMeta {
        let mut per = vec![0u64; self.n_channels as usize];
        for &c in &self.channels {
            per[c as usize] += 1;
        }
        StreamMeta {
            duration_s: self.duration_seconds(),
            total_counts: self.timestamps.len() as u64,
            counts_per_channel: per,
            tick_ns: self.tick_ns,
            config_hash: self.config_hash(),
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.tick_ns.to_le_bytes())?;
        w.write_all(&[self.n_channels])?;
        w.write_all(&self.duration.to_le_bytes())?;
        let cfg = self.config.as_deref().unwrap_or("").as_bytes();
        let len = u32::try_from(cfg.len()).map_err(|_| Error::Format("config blob too large".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(cfg)?;
        for ch in 0..self.n_channels {
            let ticks: Vec<u64> = self
                .timestamps
                .iter()
                .zip(&self.channels)
                .filter(|(_, &c)| c == ch)
                .map(|(&t, _)| t)
                .collect();
            w.write_all(&(ticks.len() as u64).to_le_bytes())?;
            let mut prev = 0u64;
            for t in ticks {
                w.write_all(&(t - prev).to_le_bytes())?;
                prev = t;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a photon stream file (bad magic)".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported stream version {version}")));
        }
        let tick_ns = u32::from_le_bytes(read_array(&mut r)?);
        let [n_channels] = read_array::<1, _>(&mut r)?;
        let duration = u64::from_le_bytes(read_array(&mut r)?);
        let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        let config = if len == 0 {
            None
        } else {
            Some(String::from_utf8(cfg).map_err(|_| Error::Format("config blob is not UTF-8".into()))?)
        };

        let mut events: Vec<(u64, u8)> = Vec::new();
        for ch in 0..n_channels {
            let count = u64::from_le_bytes(read_array(&mut r)?);
            let mut t = 0u64;
            for _ in 0..count {
                let delta = u64::from_le_bytes(read_array(&mut r)?);
                t = t
                    .checked_add(delta)
                    .ok_or_else(|| Error::Format("tick overflow".into()))?;
                events.push((t, ch));
            }
        }
        events.sort_unstable();
        let (timestamps, channels) = events.into_iter().unzip();
        let s = PhotonStream { tick_ns, duration, n_channels, timestamps, channels, config };
        s.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(s)
    }

    /// One event per line: `time_s,channel`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_s,channel")?;
        let tick = self.tick_seconds();
        for (&t, &c) in self.timestamps.iter().zip(&self.channels) {
            writeln!(w, "{:.9e},{}", t as f64 * tick, c)?;
        }
        Ok(())
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
