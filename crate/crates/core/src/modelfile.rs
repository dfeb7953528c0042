//! Binary container for dictionaries and trained models.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size         field
//! 0       8            magic "DSEGDICT"
//! 8       4   u32      format version (1)
//! 12      4   u32      patch size M
//! 16      4   u32      channels
//! 20      4   u32      branching b
//! 24      4   u32      layers t
//! 28      4   u32      node count K
//! 32      4   u32      feature order tag (1 = dy, dx, channel)
//! 36      8   u64      seed
//! 44      4   u32      k-means iterations
//! 48      K   u8       node flags, 1 = non-empty, node ids 1..=K in order
//! ..      K·M²·ch f64  node centres, node id order (empty nodes all zero)
//! ..                   sections until end of file:
//!         4            tag
//!         8   u64      payload length in bytes
//!         ..           payload
//! ```
//!
//! Known sections:
//!
//! * `PROB`: dictionary probabilities. `u32` classes `C`, `u64` rows `m`,
//!   `m` bytes of empty-row flags (1 = no related image pixel), then `m·C`
//!   `f64` values row-major.
//! * `META`: UTF-8 JSON [`ModelMetadata`](crate::transfer::ModelMetadata).
//!
//! Unknown sections are skipped when reading.

use std::io::{Read, Write};

use crate::dictionary::{KMeansTree, TreeParams};
use crate::error::{Error, Result};
use crate::features::FEATURE_ORDER_DY_DX_CHANNEL;
use crate::grid::PatchShape;

pub const MAGIC: &[u8; 8] = b"DSEGDICT";
pub const FORMAT_VERSION: u32 = 1;
pub const TAG_PROBABILITIES: [u8; 4] = *b"PROB";
pub const TAG_METADATA: [u8; 4] = *b"META";

/// A tagged trailing section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub tag: [u8; 4],
    pub payload: Vec<u8>,
}

pub fn write_dictionary<W: Write>(tree: &KMeansTree, sections: &[Section], mut out: W) -> Result<()> {
    let params = tree.params();
    out.write_all(MAGIC)?;
    for v in [
        FORMAT_VERSION,
        tree.patch().size() as u32,
        tree.channels() as u32,
        params.branching as u32,
        params.layers as u32,
        tree.len() as u32,
        FEATURE_ORDER_DY_DX_CHANNEL,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&params.seed.to_le_bytes())?;
    out.write_all(&(params.iterations as u32).to_le_bytes())?;
    let flags: Vec<u8> = tree.non_empty_mask().iter().map(|&f| f as u8).collect();
    out.write_all(&flags)?;
    out.write_all(&f64s_to_bytes(tree.centres()))?;
    for s in sections {
        out.write_all(&s.tag)?;
        out.write_all(&(s.payload.len() as u64).to_le_bytes())?;
        out.write_all(&s.payload)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dictionary<R: Read>(mut input: R) -> Result<(KMeansTree, Vec<Section>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);
    if cur.take(8)? != MAGIC {
        return Err(Error::Corruption("not a dictionary file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Unsupported(format!("model format version {version}")));
    }
    let patch_size = cur.u32()? as usize;
    let channels = cur.u32()? as usize;
    let branching = cur.u32()? as usize;
    let layers = cur.u32()? as usize;
    let nodes = cur.u32()? as usize;
    let order = cur.u32()?;
    if order != FEATURE_ORDER_DY_DX_CHANNEL {
        return Err(Error::Unsupported(format!("feature order tag {order}")));
    }
    let seed = cur.u64()?;
    let iterations = cur.u32()? as usize;
    let params = TreeParams {
        branching,
        layers,
        iterations,
        seed,
    };
    let expected = params.validate()?;
    if expected != nodes {
        return Err(Error::Corruption(format!(
            "header declares {nodes} nodes, b={branching} t={layers} implies {expected}"
        )));
    }
    let patch = PatchShape::new(patch_size)?;
    if channels == 0 {
        return Err(Error::Corruption("zero channels".into()));
    }
    let non_empty = cur
        .take(nodes)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Corruption(format!("node flag {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = patch.area() * channels;
    let centres = cur.f64s(nodes * dim)?;
    let tree = KMeansTree::from_parts(params, patch, channels, centres, non_empty)?;

    let mut sections = Vec::new();
    while !cur.is_done() {
        let tag: [u8; 4] = cur.take(4)?.try_into().unwrap();
        let len = cur.u64()? as usize;
        let payload = cur.take(len)?.to_vec();
        sections.push(Section { tag, payload });
    }
    Ok((tree, sections))
}

pub(crate) fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Bounds-checked little-endian reader over a byte slice.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corruption(format!(
                    "truncated data: wanted {len} bytes at offset {}",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::Corruption("value count overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::build_tree;
    use crate::features::FeatureSet;

    fn small_tree() -> KMeansTree {
        let data: Vec<f64> = (0..40 * 9).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let fs = FeatureSet::new(9, data).unwrap();
        let params = TreeParams {
            branching: 3,
            layers: 2,
            iterations: 4,
            seed: 99,
        };
        build_tree(&fs, params, PatchShape::new(3).unwrap(), 1).unwrap()
    }

    #[test]
    fn header_layout() {
        let tree = small_tree();
        let mut buf = Vec::new();
        write_dictionary(&tree, &[], &mut buf).unwrap();
        assert_eq!(&buf[..8], b"DSEGDICT");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[28..32].try_into().unwrap()), 13);
        assert_eq!(u64::from_le_bytes(buf[36..44].try_into().unwrap()), 99);
        assert_eq!(buf.len(), 48 + 13 + 13 * 9 * 8);
    }

    #[test]
    fn roundtrip_with_sections() {
        let tree = small_tree();
        let sections = vec![
            Section {
                tag: *b"XTRA",
                payload: vec![1, 2, 3],
            },
            Section {
                tag: TAG_METADATA,
                payload: b"{}".to_vec(),
            },
        ];
        let mut buf = Vec::new();
        write_dictionary(&tree, &sections, &mut buf).unwrap();
        let (back, secs) = read_dictionary(buf.as_slice()).unwrap();
        assert_eq!(back, tree);
        assert_eq!(secs, sections);
    }

    #[test]
    fn rejects_damage() {
        let tree = small_tree();
        let mut buf = Vec::new();
        write_dictionary(&tree, &[], &mut buf).unwrap();
        assert!(matches!(
            read_dictionary(&buf[..buf.len() - 3]),
            Err(Error::Corruption(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_dictionary(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[28] = 14;
        assert!(matches!(read_dictionary(bad.as_slice()), Err(Error::Corruption(_))));
        let mut bad = buf;
        bad[8] = 2;
        assert!(matches!(read_dictionary(bad.as_slice()), Err(Error::Unsupported(_))));
    }
}
