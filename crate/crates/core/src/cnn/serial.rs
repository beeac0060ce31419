//! Flat binary model container.
//!
//! Layout (all integers little-endian u32, all floats little-endian f64):
//!
//! ```text
//! magic  b"DMNET1"
//! u32    input patch size
//! u32    layer count
//! repeated per layer:
//!   u32  kind tag: 1 Conv, 2 ReLU, 3 MaxPool, 4 Flatten, 5 FullyConnected, 6 Softmax
//!   Conv:           u32 kernel_h, kernel_w, in_ch, out_ch, stride, pad;
//!                   f64 weights [out][ky][kx][in]; f64 bias [out]
//!   MaxPool:        u32 size, stride
//!   FullyConnected: u32 in_dim, out_dim; f64 weights [out][in]; f64 bias [out]
//!   others:         no payload
//! ```
//!
//! Reading re-validates canonical form, so a loaded file always yields a
//! well-formed network.

use super::{ConvParams, FcParams, Layer, MaxPoolParams, NetError, Network};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"DMNET1";

const TAG_CONV: u32 = 1;
const TAG_RELU: u32 = 2;
const TAG_MAXPOOL: u32 = 3;
const TAG_FLATTEN: u32 = 4;
const TAG_FC: u32 = 5;
const TAG_SOFTMAX: u32 = 6;

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), NetError> {
    let v = u32::try_from(v).map_err(|_| NetError::Format(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, values: &[f64]) -> Result<(), NetError> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32, NetError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, NetError> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub fn write_network(net: &Network, w: &mut impl Write) -> Result<(), NetError> {
    w.write_all(MAGIC)?;
    put_u32(w, net.input_patch())?;
    put_u32(w, net.layers().len())?;
    for layer in net.layers() {
        match layer {
            Layer::Conv(p) => {
                put_u32(w, TAG_CONV as usize)?;
                for v in [p.kernel_h, p.kernel_w, p.in_ch, p.out_ch, p.stride, p.pad] {
                    put_u32(w, v)?;
                }
                put_f64s(w, &p.weights)?;
                put_f64s(w, &p.bias)?;
            }
            Layer::ReLU => put_u32(w, TAG_RELU as usize)?,
            Layer::MaxPool(p) => {
                put_u32(w, TAG_MAXPOOL as usize)?;
                put_u32(w, p.size)?;
                put_u32(w, p.stride)?;
            }
            Layer::Flatten => put_u32(w, TAG_FLATTEN as usize)?,
            Layer::FullyConnected(p) => {
                put_u32(w, TAG_FC as usize)?;
                put_u32(w, p.in_dim)?;
                put_u32(w, p.out_dim)?;
                put_f64s(w, &p.weights)?;
                put_f64s(w, &p.bias)?;
            }
            Layer::Softmax => put_u32(w, TAG_SOFTMAX as usize)?,
        }
    }
    Ok(())
}

pub fn read_network(r: &mut impl Read) -> Result<Network, NetError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let input_patch = get_u32(r)? as usize;
    let count = get_u32(r)? as usize;
    if count > 4096 {
        return Err(NetError::Format(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = get_u32(r)?;
        layers.push(match tag {
            TAG_CONV => {
                let kernel_h = get_u32(r)? as usize;
                let kernel_w = get_u32(r)? as usize;
                let in_ch = get_u32(r)? as usize;
                let out_ch = get_u32(r)? as usize;
                let stride = get_u32(r)? as usize;
                let pad = get_u32(r)? as usize;
                let n = kernel_h
                    .checked_mul(kernel_w)
                    .and_then(|v| v.checked_mul(in_ch))
                    .and_then(|v| v.checked_mul(out_ch))
                    .ok_or_else(|| NetError::Format("conv shape overflow".into()))?;
                let weights = get_f64s(r, n)?;
                let bias = get_f64s(r, out_ch)?;
                Layer::Conv(ConvParams {
                    kernel_h,
                    kernel_w,
                    in_ch,
                    out_ch,
                    stride,
                    pad,
                    weights,
                    bias,
                })
            }
            TAG_RELU => Layer::ReLU,
            TAG_MAXPOOL => Layer::MaxPool(MaxPoolParams {
                size: get_u32(r)? as usize,
                stride: get_u32(r)? as usize,
            }),
            TAG_FLATTEN => Layer::Flatten,
            TAG_SOFTMAX => Layer::Softmax,
            TAG_FC => {
                let in_dim = get_u32(r)? as usize;
                let out_dim = get_u32(r)? as usize;
                let n = in_dim
                    .checked_mul(out_dim)
                    .ok_or_else(|| NetError::Format("fc shape overflow".into()))?;
                let weights = get_f64s(r, n)?;
                let bias = get_f64s(r, out_dim)?;
                Layer::FullyConnected(FcParams {
                    in_dim,
                    out_dim,
                    weights,
                    bias,
                })
            }
            other => return Err(NetError::Format(format!("unknown layer tag {other}"))),
        });
    }
    Network::new(layers, input_patch)
}

pub fn write_network_file(net: &Network, path: &Path) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_network_file(path: &Path) -> Result<Network, NetError> {
    read_network(&mut BufReader::new(File::open(path)?))
}
