//! Versioned binary checkpoints.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, a sequence of
//! sections `tag[4] | u64 length | payload`, then a CRC-32 of every
//! preceding byte.

use std::path::Path;

use crate::color::{ColorDecoder, ColorModel, DecoderShape};
use crate::error::{Error, Result};
use crate::model::SplatModel;
use crate::scene::{BandDesc, GaussianCloud, SpectralBandSet};
use crate::train::TrainConfig;

pub const MAGIC: [u8; 8] = *b"SPSPLAT\0";
pub const FORMAT_VERSION: u32 = 1;

/// A model with the iteration and configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SplatModel,
    pub iteration: u64,
    pub config: TrainConfig,
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: impl IntoIterator<Item = f64>) {
        for x in v {
            self.f64(x);
        }
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn section(&mut self, tag: &[u8; 4], body: Writer) {
        self.buf.extend_from_slice(tag);
        self.u64(body.buf.len() as u64);
        self.buf.extend_from_slice(&body.buf);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("{} section ends early", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Format(format!("length {n} too large")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format(format!("{}: invalid utf-8", self.what)))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} section has trailing bytes", self.what)));
        }
        Ok(())
    }
}

fn rows<const N: usize>(v: Vec<f64>) -> Vec<[f64; N]> {
    v.chunks_exact(N).map(|c| c.try_into().expect("exact chunk")).collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.model.check()?;
    let m = &ck.model;
    let mut w = Writer::default();
    w.buf.extend_from_slice(&MAGIC);
    w.u32(FORMAT_VERSION);

    let mut b = Writer::default();
    b.u32(m.band_set.len() as u32);
    for band in m.band_set.bands() {
        b.str(&band.name);
        b.u32(band.channel_count as u32);
        match band.wavelength_nm {
            Some(l) => {
                b.u8(1);
                b.f64(l);
            }
            None => {
                b.u8(0);
                b.f64(0.0);
            }
        }
    }
    w.section(b"BAND", b);

    let c = &m.cloud;
    let mut b = Writer::default();
    b.u64(c.len() as u64);
    b.u64(c.feature_dim as u64);
    b.f64s(c.positions.iter().flatten().copied());
    b.f64s(c.rotations.iter().flatten().copied());
    b.f64s(c.log_scales.iter().flatten().copied());
    b.f64s(c.opacity_logits.iter().copied());
    b.f64s(c.features.iter().copied());
    w.section(b"CLOU", b);

    let mut b = Writer::default();
    match &m.color {
        ColorModel::Neural(dec) => {
            let s = dec.shape();
            b.u8(0);
            for v in [s.feature_dim, s.hidden_width, s.hidden_layers, s.out_dim] {
                b.u64(v as u64);
            }
            b.u64(dec.params().len() as u64);
            b.f64s(dec.params().iter().copied());
        }
        ColorModel::PerBandSh => b.u8(1),
    }
    w.section(b"COLR", b);

    let mut b = Writer::default();
    for bg in &m.backgrounds {
        b.u64(bg.len() as u64);
        b.f64s(bg.iter().copied());
    }
    w.section(b"BKGD", b);

    let mut b = Writer::default();
    b.u64(ck.iteration);
    b.str(&ck.config.to_toml()?);
    w.section(b"META", b);

    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Truncated("file shorter than header".into()));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut sections = std::collections::BTreeMap::new();
    let mut r = Reader::new(&body[12..], "header");
    while r.pos < r.buf.len() {
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let n = r.len()?;
        sections.insert(tag, r.take(n)?);
    }
    let get = |tag: &[u8; 4], what: &'static str| {
        sections
            .get(tag)
            .map(|s| Reader::new(s, what))
            .ok_or_else(|| Error::Format(format!("missing {what} section")))
    };

    let mut r = get(b"BAND", "band")?;
    let n = r.u32()? as usize;
    let mut bands = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.str()?;
        let ch = r.u32()? as usize;
        let has = r.u8()?;
        let l = r.f64()?;
        bands.push(BandDesc::new(&name, ch, (has == 1).then_some(l)));
    }
    r.finish()?;
    let band_set = SpectralBandSet::new(bands)?;

    let mut r = get(b"CLOU", "cloud")?;
    let s = r.len()?;
    let d = r.len()?;
    let cloud = GaussianCloud {
        positions: rows(r.f64s(s.saturating_mul(3))?),
        rotations: rows(r.f64s(s.saturating_mul(4))?),
        log_scales: rows(r.f64s(s.saturating_mul(3))?),
        opacity_logits: r.f64s(s)?,
        features: r.f64s(s.saturating_mul(d))?,
        feature_dim: d,
    };
    r.finish()?;

    let mut r = get(b"COLR", "colour model")?;
    let color = match r.u8()? {
        0 => {
            let shape = DecoderShape {
                feature_dim: r.len()?,
                hidden_width: r.len()?,
                hidden_layers: r.len()?,
                out_dim: r.len()?,
            };
            let n = r.len()?;
            ColorModel::Neural(ColorDecoder::from_params(shape, r.f64s(n)?)?)
        }
        1 => ColorModel::PerBandSh,
        k => return Err(Error::Format(format!("unknown colour model tag {k}"))),
    };
    r.finish()?;

    let mut r = get(b"BKGD", "background")?;
    let mut backgrounds = Vec::with_capacity(band_set.len());
    for _ in 0..band_set.len() {
        let n = r.len()?;
        backgrounds.push(r.f64s(n)?);
    }
    r.finish()?;

    let mut r = get(b"META", "metadata")?;
    let iteration = r.u64()?;
    let config = TrainConfig::from_toml(&r.str()?)?;
    r.finish()?;

    let model = SplatModel { band_set, cloud, color, backgrounds };
    model.check()?;
    Ok(Checkpoint { model, iteration, config })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
