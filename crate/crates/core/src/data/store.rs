//! Patch tensor store.
//!
//! Layout (little endian): 4-byte magic `CGPS`, `u32` version, `u32`
//! channels, `u32` height, `u32` width, then records until end of file.
//! Each record is `u16` id length, UTF-8 id, `u8` domain (0 cloudy, 1
//! clear), `u16` label count, that many `u16` class indices, and
//! `channels * height * width` `f32` pixels in channel-major order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use super::labels::LabelSet;
use super::patch::{Domain, Patch};
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"CGPS";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;

#[derive(Debug, Clone)]
struct Entry {
    pixel_offset: u64,
    labels: LabelSet,
    domain: Domain,
}

pub struct StoreWriter {
    path: PathBuf,
    out: BufWriter<File>,
    shape: (usize, usize, usize),
}

impl StoreWriter {
    pub fn create(path: &Path, channels: usize, height: usize, width: usize) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        out.write_all(STORE_MAGIC).map_err(io)?;
        for v in [STORE_VERSION, channels as u32, height as u32, width as u32] {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            out,
            shape: (channels, height, width),
        })
    }

    pub fn write(&mut self, patch: &Patch) -> Result<()> {
        if patch.pixels.dim() != self.shape {
            return Err(Error::shape(self.shape, patch.pixels.dim()));
        }
        let io = |e| Error::io(&self.path, e);
        let id = patch.patch_id.as_bytes();
        let mut buf = Vec::with_capacity(5 + id.len() + 2 * patch.labels.len());
        buf.extend((id.len() as u16).to_le_bytes());
        buf.extend(id);
        buf.push(match patch.domain {
            Domain::Cloudy => 0,
            Domain::Clear => 1,
        });
        buf.extend((patch.labels.len() as u16).to_le_bytes());
        for l in &patch.labels {
            buf.extend(l.to_le_bytes());
        }
        self.out.write_all(&buf).map_err(io)?;
        let mut px = Vec::with_capacity(patch.pixels.len() * 4);
        for v in patch.pixels.iter() {
            px.extend(v.to_le_bytes());
        }
        self.out.write_all(&px).map_err(io)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Random-access reader over a patch store.
pub struct PatchStore {
    path: PathBuf,
    file: File,
    shape: (usize, usize, usize),
    order: Vec<String>,
    index: HashMap<String, Entry>,
}

impl PatchStore {
    pub fn open(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let bad = |r: &str| Error::ParseError(format!("{}: {r}", path.display()));
        let file = File::open(path).map_err(io)?;
        let len = file.metadata().map_err(io)?.len();
        let mut rdr = BufReader::new(file.try_clone().map_err(io)?);
        let mut head = [0u8; HEADER_LEN as usize];
        rdr.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != STORE_MAGIC {
            return Err(bad("not a patch store"));
        }
        let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
        if word(4) as u32 != STORE_VERSION {
            return Err(Error::VersionMismatch(format!(
                "patch store version {} (expected {STORE_VERSION})",
                word(4)
            )));
        }
        let shape = (word(8), word(12), word(16));
        let pixel_bytes = (shape.0 * shape.1 * shape.2 * 4) as u64;

        let mut order = Vec::new();
        let mut index = HashMap::new();
        let mut pos = HEADER_LEN;
        while pos < len {
            let mut u16buf = [0u8; 2];
            rdr.read_exact(&mut u16buf).map_err(|_| bad("truncated record"))?;
            let id_len = u16::from_le_bytes(u16buf) as usize;
            let mut id = vec![0u8; id_len];
            rdr.read_exact(&mut id).map_err(|_| bad("truncated id"))?;
            let id = String::from_utf8(id).map_err(|_| bad("id is not UTF-8"))?;
            let mut dom = [0u8; 1];
            rdr.read_exact(&mut dom).map_err(|_| bad("truncated record"))?;
            let domain = match dom[0] {
                0 => Domain::Cloudy,
                1 => Domain::Clear,
                _ => return Err(bad("bad domain tag")),
            };
            rdr.read_exact(&mut u16buf).map_err(|_| bad("truncated record"))?;
            let n_labels = u16::from_le_bytes(u16buf) as usize;
            let mut labels = LabelSet::new();
            for _ in 0..n_labels {
                rdr.read_exact(&mut u16buf).map_err(|_| bad("truncated labels"))?;
                labels.insert(u16::from_le_bytes(u16buf));
            }
            let pixel_offset = pos + 2 + id_len as u64 + 1 + 2 + 2 * n_labels as u64;
            if pixel_offset + pixel_bytes > len {
                return Err(bad("truncated pixels"));
            }
            rdr.seek(SeekFrom::Start(pixel_offset + pixel_bytes)).map_err(io)?;
            pos = pixel_offset + pixel_bytes;
            order.push(id.clone());
            index.insert(
                id,
                Entry {
                    pixel_offset,
                    labels,
                    domain,
                },
            );
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            shape,
            order,
            index,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Ids in file order.
    pub fn ids(&self) -> &[String] {
        &self.order
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn labels(&self, id: &str) -> Option<&LabelSet> {
        self.index.get(id).map(|e| &e.labels)
    }

    pub fn read(&self, id: &str) -> Result<Patch> {
        let e = self
            .index
            .get(id)
            .ok_or_else(|| Error::UnknownPatchInList(id.to_string()))?;
        let (c, h, w) = self.shape;
        let mut bytes = vec![0u8; c * h * w * 4];
        self.file
            .read_exact_at(&mut bytes, e.pixel_offset)
            .map_err(|err| Error::io(&self.path, err))?;
        let px: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Patch {
            patch_id: id.to_string(),
            pixels: Array3::from_shape_vec((c, h, w), px).expect("shape checked on open"),
            labels: e.labels.clone(),
            domain: e.domain,
        })
    }

    pub fn read_many(&self, ids: &[String]) -> Result<Vec<Patch>> {
        ids.iter().map(|id| self.read(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(id: &str, v: f32, domain: Domain) -> Patch {
        Patch {
            patch_id: id.into(),
            pixels: Array3::from_shape_fn((2, 3, 3), |(c, i, j)| v * (1 + c + i + j) as f32 / 10.0),
            labels: LabelSet::from([1, 4]),
            domain,
        }
    }

    #[test]
    fn write_then_read() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("s.bin");
        let mut w = StoreWriter::create(&p, 2, 3, 3).unwrap();
        let a = patch("a", 0.1, Domain::Clear);
        let b = patch("bb", 0.2, Domain::Cloudy);
        w.write(&a).unwrap();
        w.write(&b).unwrap();
        assert!(w.write(&Patch {
            pixels: Array3::zeros((1, 1, 1)),
            ..a.clone()
        })
        .is_err());
        w.finish().unwrap();

        let s = PatchStore::open(&p).unwrap();
        assert_eq!(s.ids(), &["a".to_string(), "bb".to_string()]);
        assert_eq!(s.read("bb").unwrap(), b);
        assert_eq!(s.read("a").unwrap(), a);
        assert!(s.read("zz").is_err());
    }

    #[test]
    fn rejects_foreign_file() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("x.bin");
        std::fs::write(&p, b"hello world, not a store").unwrap();
        assert!(PatchStore::open(&p).is_err());
    }
}
