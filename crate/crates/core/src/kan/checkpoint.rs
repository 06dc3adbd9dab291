//! Binary and text containers for KAN parameters.
//!
//! Binary layout (little-endian): magic `KANC`, `u32` version, `u32` layer
//! count L, `L + 1` `u32` widths, `f64` a, `f64` b, `u32` G, `u32` k, then
//! each layer's parameters as `f64` in edge order.

use super::{KanLayer, KanNet};
use crate::codec::{fmt_f64s, parse_all, parse_num, ByteReader, ByteWriter, TextReader};
use crate::error::{Error, Result};
use crate::spline::SplineSpec;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KANC";
pub const CHECKPOINT_VERSION: u32 = 1;

const TEXT_HEADER: &str = "kan-checkpoint";

impl KanNet {
    pub(crate) fn write_into(&self, w: &mut ByteWriter) {
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.usize(self.layers.len());
        for &d in &self.dims {
            w.usize(d);
        }
        w.f64(self.spec.a());
        w.f64(self.spec.b());
        w.usize(self.spec.grid());
        w.usize(self.spec.degree());
        for l in &self.layers {
            w.f64s(&l.params);
        }
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let n_layers = r.usize()?;
        if n_layers == 0 || n_layers > r.remaining() / 4 {
            return Err(Error::Parse(format!("implausible layer count {n_layers}")));
        }
        let dims = (0..=n_layers).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let a = r.f64()?;
        let b = r.f64()?;
        let grid = r.usize()?;
        let degree = r.usize()?;
        let spec = SplineSpec::new(a, b, grid, degree)?;
        let stride = 2 + spec.num_basis();
        let mut layers = Vec::with_capacity(n_layers);
        for w in dims.windows(2) {
            let n = w[0]
                .checked_mul(w[1])
                .and_then(|v| v.checked_mul(stride))
                .ok_or(Error::TruncatedPayload)?;
            layers.push(KanLayer::from_params(w[0], w[1], stride, r.f64s(n)?)?);
        }
        KanNet::from_layers(spec, layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_into(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let net = Self::read_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::Parse("trailing bytes after checkpoint".into()));
        }
        Ok(net)
    }

    /// Line-oriented equivalent of the binary form.
    pub fn to_text(&self) -> String {
        let mut s = format!("{TEXT_HEADER} v{CHECKPOINT_VERSION}\n");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("dims {}\n", dims.join(" ")));
        s.push_str(&format!("domain {:?} {:?}\n", self.spec.a(), self.spec.b()));
        s.push_str(&format!("grid {}\n", self.spec.grid()));
        s.push_str(&format!("degree {}\n", self.spec.degree()));
        for (l, layer) in self.layers.iter().enumerate() {
            s.push_str(&format!("layer {l} {} {}\n", layer.d_out, layer.d_in));
            for p in 0..layer.d_out {
                for q in 0..layer.d_in {
                    s.push_str(&format!("edge {p} {q} {}\n", fmt_f64s(layer.edge(p, q))));
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::new(text);
        let head = r.record(TEXT_HEADER)?;
        let version = head
            .first()
            .and_then(|v| v.strip_prefix('v'))
            .ok_or_else(|| Error::Parse("missing version".into()))?;
        let version: u32 = parse_num(version)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let dims: Vec<usize> = parse_all(&r.record("dims")?)?;
        let dom: Vec<f64> = parse_all(&r.record("domain")?)?;
        if dom.len() != 2 {
            return Err(Error::Parse("domain needs two values".into()));
        }
        let grid: usize = parse_num(one(&r.record("grid")?)?)?;
        let degree: usize = parse_num(one(&r.record("degree")?)?)?;
        let spec = SplineSpec::new(dom[0], dom[1], grid, degree)?;
        let mut net = KanNet::zeros(&dims, spec)?;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let hdr: Vec<usize> = parse_all(&r.record("layer")?)?;
            if hdr != [l, layer.d_out, layer.d_in] {
                return Err(Error::Parse(format!("unexpected layer header {hdr:?}")));
            }
            for p in 0..layer.d_out {
                for q in 0..layer.d_in {
                    let toks = r.record("edge")?;
                    if toks.len() != 2 + layer.stride {
                        return Err(Error::FeatureLengthMismatch {
                            expected: layer.stride,
                            got: toks.len().saturating_sub(2),
                        });
                    }
                    let idx: Vec<usize> = parse_all(&toks[..2])?;
                    if idx != [p, q] {
                        return Err(Error::Parse(format!("edge out of order at {p} {q}")));
                    }
                    let vals: Vec<f64> = parse_all(&toks[2..])?;
                    layer.edge_mut(p, q).copy_from_slice(&vals);
                }
            }
        }
        Ok(net)
    }
}

fn one<'a>(toks: &[&'a str]) -> Result<&'a str> {
    match toks {
        [t] => Ok(t),
        _ => Err(Error::Parse("expected a single value".into())),
    }
}
