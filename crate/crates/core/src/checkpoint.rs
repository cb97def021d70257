//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic       8 bytes  "SNNLSTM\0"
//! version     u32      1
//! input_size  u32
//! hidden_size u32
//! output_size u32
//! head_kind   u32      0 softmax, 1 linear
//! flags       u32      bit 0: optimizer section follows the tables
//! tables      f64 × n  w_f_h w_f_x b_f_h b_f_x, then i, g, o likewise, then w_y b_y
//! optimizer   step u64, lr beta1 beta2 eps f64, first moments, second moments
//! ```
//!
//! Matrices are stored row-major. Moments follow the table order above.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::head::{Head, HeadKind};
use crate::layer::LayerParams;
use crate::model::Network;
use crate::optim::{AdamConfig, AdamState, ParamTables};

pub const MAGIC: &[u8; 8] = b"SNNLSTM\0";
pub const VERSION: u32 = 1;
const FLAG_OPTIMIZER: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let mut out = Vec::with_capacity(32 + 8 * net.parameter_count() * 3);
        out.extend_from_slice(MAGIC);
        let flags = if self.optimizer.is_some() { FLAG_OPTIMIZER } else { 0 };
        for v in [
            VERSION,
            net.input_size() as u32,
            net.hidden_size() as u32,
            net.output_size() as u32,
            net.head.kind.code(),
            flags,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (_, t) in net.tables() {
            put_f64s(&mut out, t);
        }
        if let Some(opt) = &self.optimizer {
            out.extend_from_slice(&opt.step.to_le_bytes());
            let c = opt.config;
            put_f64s(&mut out, &[c.lr, c.beta1, c.beta2, c.eps]);
            for m in opt.m.iter().chain(&opt.v) {
                put_f64s(&mut out, m);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let (input, hidden, output) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let code = r.u32()?;
        let kind = HeadKind::from_code(code)
            .ok_or_else(|| Error::format(path, format!("unknown head kind {code}")))?;
        let flags = r.u32()?;
        if flags & !FLAG_OPTIMIZER != 0 {
            return Err(Error::format(path, format!("unknown flags 0x{flags:x}")));
        }
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::format(path, "zero layer size"));
        }
        let mut network = Network {
            layer: LayerParams::zeros(input, hidden),
            head: Head::zeros(kind, hidden, output),
        };
        for (_, t) in network.tables_mut() {
            r.f64s_into(t)?;
        }
        let optimizer = if flags & FLAG_OPTIMIZER != 0 {
            let step = r.u64()?;
            let mut c = [0.0; 4];
            r.f64s_into(&mut c)?;
            let config = AdamConfig {
                lr: c[0],
                beta1: c[1],
                beta2: c[2],
                eps: c[3],
            };
            let mut state = AdamState::new(config, &network);
            state.step = step;
            for m in state.m.iter_mut().chain(state.v.iter_mut()) {
                r.f64s_into(m)?;
            }
            Some(state)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::format(
                path,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Checkpoint { network, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("truncated checkpoint at byte {}", self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s_into(&mut self, dst: &mut [f64]) -> Result<()> {
        let raw = self.take(8 * dst.len())?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::optim::adam_step;

    fn sample(with_opt: bool) -> Checkpoint {
        let mut rng = RngStream::new(21);
        let mut network = Network::init(3, 4, 2, HeadKind::Softmax, 0.3, &mut rng).unwrap();
        // awkward values that only survive a bit-exact encoding
        network.layer.gate_mut(crate::layer::Gate::Input).b_x[1] = -0.0;
        network.head.b_y[0] = f64::MIN_POSITIVE / 3.0;
        network.head.b_y[1] = 0.1 + 0.2;
        let optimizer = with_opt.then(|| {
            let mut s = AdamState::new(AdamConfig::default(), &network);
            let mut g = network.clone();
            for (_, t) in g.tables_mut() {
                t.iter_mut().for_each(|v| *v = v.sin());
            }
            adam_step(&mut s, &mut network, &g).unwrap();
            s
        });
        Checkpoint { network, optimizer }
    }

    fn bits(c: &Checkpoint) -> Vec<u64> {
        c.network
            .tables()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with_opt in [false, true] {
            let c = sample(with_opt);
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
            assert_eq!(bits(&back), bits(&c));
            assert_eq!(back.optimizer, c.optimizer);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn documented_size() {
        let c = sample(false);
        let n = c.network.parameter_count();
        assert_eq!(n, 4 * (16 + 12 + 4 + 4) + 8 + 2);
        assert_eq!(c.to_bytes().len(), 8 + 6 * 4 + 8 * n);
        let with = sample(true);
        assert_eq!(with.to_bytes().len(), 8 + 6 * 4 + 8 * n + 8 + 32 + 16 * n);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        let c = sample(true);
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap().to_bytes(), c.to_bytes());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample(false).to_bytes();
        let p = Path::new("mem");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic, p).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        let err = Checkpoint::from_bytes(&version, p).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        let mut kind = bytes;
        kind[24] = 7;
        assert!(Checkpoint::from_bytes(&kind, p).is_err());
    }
}
