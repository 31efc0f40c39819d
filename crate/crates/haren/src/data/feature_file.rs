//! The HRNF feature-file format.
//!
//! Layout (all multi-byte values little-endian):
//!
//! ```text
//! magic "HRNF" | u32 version | u32 L | u32 T | u32 d | f32 frame_rate
//! L*T*d f32 payload, ordered [layer][frame][dim]
//! u32 tok_frames (== T) | u32 d_tok
//! T*d_tok f32 tokenization features
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;

const MAGIC: &[u8; 4] = b"HRNF";
const FORMAT_VERSION: u32 = 1;

/// Per-segment multi-layer feature block: `m` matrices of `T` frames by
/// `d` dims, plus identifiers and the frame rate carried as metadata.
#[derive(Clone, Debug)]
pub struct LayerStack {
    layers: Vec<Mat>,
    pub frame_rate: f64,
    pub segment_id: String,
    pub subject_id: String,
}

impl LayerStack {
    pub fn new(
        layers: Vec<Mat>,
        frame_rate: f64,
        segment_id: impl Into<String>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::contract(format!(
                "a layer stack needs at least 2 layers, got {}",
                layers.len()
            )));
        }
        let (t, d) = (layers[0].rows, layers[0].cols);
        if t == 0 {
            return Err(Error::contract("layer stack with zero frames"));
        }
        for l in &layers {
            if l.rows != t || l.cols != d {
                return Err(Error::Shape {
                    op: "layer_stack",
                    lhs: vec![t, d],
                    rhs: vec![l.rows, l.cols],
                });
            }
        }
        Ok(LayerStack {
            layers,
            frame_rate,
            segment_id: segment_id.into(),
            subject_id: subject_id.into(),
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn frames(&self) -> usize {
        self.layers[0].rows
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn layer(&self, i: usize) -> &Mat {
        &self.layers[i]
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }
}

fn push_f32(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

/// Serialize a stack and its tokenization features. The payload is 32-bit;
/// callers that need a byte-exact round trip should write values that are
/// exactly representable in f32 (the synthetic generator does).
pub fn write_feature_file(path: &Path, stack: &LayerStack, tok: &Mat) -> Result<()> {
    if tok.rows != stack.frames() {
        return Err(Error::Shape {
            op: "write_feature_file",
            lhs: vec![stack.frames(), stack.dim()],
            rhs: vec![tok.rows, tok.cols],
        });
    }
    let (l, t, d) = (stack.layer_count(), stack.frames(), stack.dim());
    let mut buf = Vec::with_capacity(24 + 4 * (l * t * d + t * tok.cols));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(l as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(stack.frame_rate as f32).to_le_bytes());
    for layer in stack.layers() {
        for &v in &layer.data {
            push_f32(&mut buf, v);
        }
    }
    buf.extend_from_slice(&(tok.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(tok.cols as u32).to_le_bytes());
    for &v in &tok.data {
        push_f32(&mut buf, v);
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn need(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                message: format!(
                    "truncated while reading {what}: expected {} bytes, file has {}",
                    self.offset + n,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.need(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.need(4, what)?.try_into().unwrap()))
    }

    fn err(&self, offset: u64, message: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset,
            message,
        }
    }
}

/// Read a stack and its tokenization features back. Identifiers are not
/// stored in the file; the caller attaches them from the manifest.
pub fn read_feature_file(path: &Path) -> Result<(LayerStack, Mat)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
        path,
    };
    let magic = cur.need(4, "magic")?;
    if magic != MAGIC {
        return Err(cur.err(0, format!("bad magic {magic:?}")));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(cur.err(4, format!("unsupported format version {version}")));
    }
    let l = cur.u32("layer count")? as usize;
    let t = cur.u32("frame count")? as usize;
    let d = cur.u32("feature dim")? as usize;
    let frame_rate = cur.f32("frame rate")? as f64;
    if l < 2 || t == 0 || d == 0 {
        return Err(cur.err(8, format!("implausible dims L={l} T={t} d={d}")));
    }

    let mut layers = Vec::with_capacity(l);
    for li in 0..l {
        let start = cur.offset;
        let raw = cur.need(4 * t * d, "layer payload")?;
        let mut data = Vec::with_capacity(t * d);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(cur.err(
                    (start + 4 * i) as u64,
                    format!("non-finite value in layer {li}"),
                ));
            }
            data.push(v);
        }
        layers.push(Mat::new(t, d, data)?);
    }
    let tok_frames = cur.u32("tokenization frame count")? as usize;
    let d_tok = cur.u32("tokenization dim")? as usize;
    if tok_frames != t {
        return Err(cur.err(
            (cur.offset - 8) as u64,
            format!("tokenization frames {tok_frames} do not match stack frames {t}"),
        ));
    }
    let start = cur.offset;
    let raw = cur.need(4 * t * d_tok, "tokenization payload")?;
    let mut tok_data = Vec::with_capacity(t * d_tok);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(cur.err(
                (start + 4 * i) as u64,
                "non-finite value in tokenization features".to_string(),
            ));
        }
        tok_data.push(v);
    }
    if cur.offset != bytes.len() {
        return Err(cur.err(
            cur.offset as u64,
            format!("{} trailing bytes after payload", bytes.len() - cur.offset),
        ));
    }
    let stack = LayerStack::new(layers, frame_rate, "", "")?;
    Ok((stack, Mat::new(t, d_tok, tok_data)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f32_clean(rng: &mut ChaCha8Rng) -> f64 {
        rng.gen_range(-2.0f32..2.0f32) as f64
    }

    fn random_stack(l: usize, t: usize, d: usize, d_tok: usize) -> (LayerStack, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let layers: Vec<Mat> = (0..l)
            .map(|_| {
                Mat::new(t, d, (0..t * d).map(|_| f32_clean(&mut rng)).collect()).unwrap()
            })
            .collect();
        let tok = Mat::new(t, d_tok, (0..t * d_tok).map(|_| f32_clean(&mut rng)).collect()).unwrap();
        (
            LayerStack::new(layers, 50.0, "seg0", "subj0").unwrap(),
            tok,
        )
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (stack, tok) = random_stack(3, 7, 5, 2);
        let p1 = dir.path().join("a.hrnf");
        write_feature_file(&p1, &stack, &tok).unwrap();
        let (back, tok_back) = read_feature_file(&p1).unwrap();
        assert_eq!(back.layer_count(), 3);
        assert_eq!(back.frames(), 7);
        assert_eq!(back.dim(), 5);
        assert_eq!(back.frame_rate, 50.0);
        assert_eq!(tok_back, tok);
        for i in 0..3 {
            assert_eq!(back.layer(i), stack.layer(i));
        }
        // Writing what was read reproduces the file bit for bit.
        let p2 = dir.path().join("b.hrnf");
        write_feature_file(&p2, &back, &tok_back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn paper_scale_header_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        // 24 layers x 1024 dims with a tiny frame count keeps this fast.
        let (stack, tok) = random_stack(24, 2, 1024, 8);
        let p = dir.path().join("big.hrnf");
        write_feature_file(&p, &stack, &tok).unwrap();
        let (back, _) = read_feature_file(&p).unwrap();
        assert_eq!(back.layer_count(), 24);
        assert_eq!(back.dim(), 1024);
    }

    #[test]
    fn truncation_names_expected_and_actual_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let (stack, tok) = random_stack(2, 4, 3, 2);
        let p = dir.path().join("t.hrnf");
        write_feature_file(&p, &stack, &tok).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        let err = read_feature_file(&p).unwrap_err().to_string();
        assert!(err.contains("expected") && err.contains("file has"), "{err}");
        assert!(err.contains("byte offset"), "{err}");
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (stack, tok) = random_stack(2, 2, 2, 1);
        let p = dir.path().join("m.hrnf");
        write_feature_file(&p, &stack, &tok).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[1] = b'!';
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_feature_file(&p)
            .unwrap_err()
            .to_string()
            .contains("magic"));

        write_feature_file(&p, &stack, &tok).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_feature_file(&p)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn stack_invariants_are_enforced() {
        let a = Mat::zeros(3, 2);
        let b = Mat::zeros(4, 2);
        assert!(LayerStack::new(vec![a.clone()], 50.0, "s", "p").is_err());
        assert!(LayerStack::new(vec![a.clone(), b], 50.0, "s", "p").is_err());
        assert!(LayerStack::new(vec![a.clone(), a], 50.0, "s", "p").is_ok());
    }
}
