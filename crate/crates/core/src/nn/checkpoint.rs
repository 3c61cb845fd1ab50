//! Binary checkpoint container. Layout (all integers little-endian):
//!
//! ```text
//! "BTCK"  u32 version  u8 scalar_bytes
//! u32 header_len  header JSON {arch, model, shape}
//! u32 n_params
//!   per param: u16 name_len, name, u8 ndim, u32 dims[ndim], values
//! u8 has_optimizer
//!   u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps
//!   per trainable param in order: m values, v values
//! ```
//!
//! Values are stored with `scalar_bytes` per entry; loading into the other
//! precision casts through `f64`.

use std::io::{Read, Write};

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::model::{Architecture, BeamNet, NetShape};
use super::param::Parameterized;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"BTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    model: ModelConfig,
    shape: NetShape,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format { kind: "checkpoint", message: message.into() }
}

fn read_values<T: Real, R: Read>(r: &mut R, n: usize, bytes: u8) -> Result<Vec<T>> {
    (0..n)
        .map(|_| {
            Ok(match bytes {
                4 => T::of(r.read_f32::<LE>()? as f64),
                _ => T::of(r.read_f64::<LE>()?),
            })
        })
        .collect()
}

pub fn write_checkpoint<T: Real, W: Write>(sink: &mut W, net: &BeamNet<T>, opt: Option<&Adam<T>>) -> Result<()> {
    let mut buf = Vec::new();
    let w = &mut buf;
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u8(T::BYTES as u8)?;
    let header = serde_json::to_vec(&Header { arch: net.arch, model: net.config.clone(), shape: net.shape })?;
    w.write_u32::<LE>(header.len() as u32)?;
    w.write_all(&header)?;

    let mut count = 0u32;
    net.visit(&mut |_| count += 1);
    w.write_u32::<LE>(count)?;
    let mut result = Ok(());
    net.visit(&mut |p| {
        if result.is_err() {
            return;
        }
        result = (|| -> Result<()> {
            w.write_u16::<LE>(p.name.len() as u16)?;
            w.write_all(p.name.as_bytes())?;
            w.write_u8(p.shape.len() as u8)?;
            for &d in &p.shape {
                w.write_u32::<LE>(d as u32)?;
            }
            for v in &p.value {
                v.write_le(w);
            }
            Ok(())
        })();
    });
    result?;

    match opt {
        Some(adam) if !adam.m.is_empty() => {
            w.write_u8(1)?;
            w.write_u64::<LE>(adam.step)?;
            for v in [adam.config.lr, adam.config.beta1, adam.config.beta2, adam.config.eps] {
                w.write_f64::<LE>(v)?;
            }
            for (m, v) in adam.m.iter().zip(&adam.v) {
                for x in m.iter().chain(v) {
                    x.write_le(w);
                }
            }
        }
        _ => w.write_u8(0)?,
    }
    sink.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(r: &mut R) -> Result<(BeamNet<T>, Option<Adam<T>>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let bytes = r.read_u8()?;
    if bytes != 4 && bytes != 8 {
        return Err(bad(format!("unsupported scalar width {bytes}")));
    }
    let header_len = r.read_u32::<LE>()? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    header.model.validate()?;

    let mut net = BeamNet::<T>::new(header.arch, &header.model, header.shape, 0);
    let count = r.read_u32::<LE>()? as usize;
    let mut expected = Vec::new();
    net.visit(&mut |p| expected.push((p.name.clone(), p.shape.clone())));
    if count != expected.len() {
        return Err(bad(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut values = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let len = r.read_u16::<LE>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let got = String::from_utf8(buf).map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndim = r.read_u8()? as usize;
        let dims = (0..ndim).map(|_| r.read_u32::<LE>().map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
        if &got != name || &dims != shape {
            return Err(bad(format!("tensor {got} {dims:?} does not match expected {name} {shape:?}")));
        }
        values.push(read_values::<T, _>(r, dims.iter().product(), bytes)?);
    }
    let mut it = values.into_iter();
    net.visit_mut(&mut |p| p.value = it.next().expect("counted above"));

    let opt = match r.read_u8()? {
        0 => None,
        1 => {
            let step = r.read_u64::<LE>()?;
            let mut c = [0.0; 4];
            for v in &mut c {
                *v = r.read_f64::<LE>()?;
            }
            let mut adam = Adam::new(AdamConfig { lr: c[0], beta1: c[1], beta2: c[2], eps: c[3] });
            adam.step = step;
            let mut lens = Vec::new();
            net.visit(&mut |p| {
                if p.trainable {
                    lens.push(p.len())
                }
            });
            for n in lens {
                adam.m.push(read_values(r, n, bytes)?);
                adam.v.push(read_values(r, n, bytes)?);
            }
            Some(adam)
        }
        other => return Err(bad(format!("bad optimizer flag {other}"))),
    };
    Ok((net, opt))
}

pub fn save<T: Real>(path: &std::path::Path, net: &BeamNet<T>, opt: Option<&Adam<T>>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, net, opt)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Real>(path: &std::path::Path) -> Result<(BeamNet<T>, Option<Adam<T>>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> BeamNet<f64> {
        BeamNet::new(
            Architecture::Enhanced,
            &ModelConfig::small(),
            NetShape { input_len: 8, n_narrow: 8, n_wide: 2 },
            9,
        )
    }

    #[test]
    fn round_trip_with_optimizer() {
        let mut n = net();
        n.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.1));
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut n);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &n, Some(&adam)).unwrap();
        assert_eq!(&buf[..4], b"BTCK");
        let (back, opt) = read_checkpoint::<f64, _>(&mut buf.as_slice()).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        n.visit(&mut |p| a.extend(p.value.clone()));
        back.visit(&mut |p| b.extend(p.value.clone()));
        assert_eq!(a, b);
        assert_eq!(opt.unwrap(), adam);
    }

    #[test]
    fn cross_precision_load_casts() {
        let n = net();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &n, None).unwrap();
        let (back, opt) = read_checkpoint::<f32, _>(&mut buf.as_slice()).unwrap();
        assert!(opt.is_none());
        assert_eq!(back.head.weight.value[0], n.head.weight.value[0] as f32);
    }

    #[test]
    fn rejects_corruption() {
        let n = net();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &n, None).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_checkpoint::<f64, _>(&mut bad_magic.as_slice()), Err(Error::Format { .. })));
        let truncated = &buf[..buf.len() / 2];
        assert!(read_checkpoint::<f64, _>(&mut &truncated[..]).is_err());
    }
}
