//! Binary model (`NNM1`) and relevance map (`RLV1`) files. All integers are
//! little-endian `u32`, all reals little-endian `f32`.
//!
//! `NNM1`: magic, layer count, each layer as a kind tag (`u8`) followed by
//! its parameters, then every weight and bias tensor in layer order as
//! `rank, dims..., payload`. The network input shape follows as three
//! trailing `u32`s (height, width, channels).
//!
//! | tag | layer     | parameters                                   |
//! |-----|-----------|----------------------------------------------|
//! | 0   | conv2d    | kernel_h, kernel_w, filters, stride, padding (0 same, 1 valid) |
//! | 1   | maxpool2d | none                                         |
//! | 2   | relu      | none                                         |
//! | 3   | flatten   | none                                         |
//! | 4   | dense     | units                                        |
//! | 5   | softmax   | none                                         |
//!
//! `RLV1`: magic, rank, dims..., payload, start score (`f32`), target class.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lrp::{RelevanceLedger, RelevanceMap};
use crate::nn::{Layer, LayerSpec, Network, Padding, Params};
use crate::{Scalar, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"NNM1";
pub const RELEVANCE_MAGIC: &[u8; 4] = b"RLV1";

fn put_u32<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f32::from_le_bytes(b))
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&b)
        )));
    }
    Ok(())
}

fn put_tensor<W: Write, T: Scalar>(w: &mut W, t: &Tensor<T>) -> io::Result<()> {
    put_u32(w, t.rank())?;
    for &d in t.shape() {
        put_u32(w, d)?;
    }
    for &v in t.data() {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Upper bound on element counts read from files, so a corrupt header
/// cannot trigger a huge allocation.
const MAX_ELEMENTS: usize = 1 << 28;

fn get_tensor<R: Read, T: Scalar>(r: &mut R) -> Result<Tensor<T>> {
    let rank = get_u32(r)?;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("unsupported tensor rank {rank}")));
    }
    let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
    let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n > 0 && n <= MAX_ELEMENTS);
    let len = len.ok_or_else(|| Error::Format(format!("invalid tensor shape {shape:?}")))?;
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let data = bytes.chunks_exact(4).map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

fn put_spec<W: Write>(w: &mut W, spec: &LayerSpec) -> io::Result<()> {
    match *spec {
        LayerSpec::Conv2d { kernel_h, kernel_w, filters, stride, padding } => {
            w.write_all(&[0])?;
            for v in [kernel_h, kernel_w, filters, stride, matches!(padding, Padding::Valid) as usize] {
                put_u32(w, v)?;
            }
            Ok(())
        }
        LayerSpec::MaxPool2d => w.write_all(&[1]),
        LayerSpec::Relu => w.write_all(&[2]),
        LayerSpec::Flatten => w.write_all(&[3]),
        LayerSpec::Dense { units } => {
            w.write_all(&[4])?;
            put_u32(w, units)
        }
        LayerSpec::Softmax => w.write_all(&[5]),
    }
}

fn get_spec<R: Read>(r: &mut R) -> Result<LayerSpec> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(truncated)?;
    Ok(match tag[0] {
        0 => {
            let mut v = [0usize; 5];
            for slot in &mut v {
                *slot = get_u32(r)?;
            }
            let padding = match v[4] {
                0 => Padding::Same,
                1 => Padding::Valid,
                p => return Err(Error::Format(format!("unknown padding code {p}"))),
            };
            LayerSpec::Conv2d { kernel_h: v[0], kernel_w: v[1], filters: v[2], stride: v[3], padding }
        }
        1 => LayerSpec::MaxPool2d,
        2 => LayerSpec::Relu,
        3 => LayerSpec::Flatten,
        4 => LayerSpec::Dense { units: get_u32(r)? },
        5 => LayerSpec::Softmax,
        t => return Err(Error::Format(format!("unknown layer tag {t}"))),
    })
}

pub fn write_model<W: Write, T: Scalar>(mut w: W, net: &Network<T>) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    put_u32(&mut w, net.layers().len())?;
    for layer in net.layers() {
        put_spec(&mut w, &layer.spec)?;
    }
    for p in net.layers().iter().filter_map(|l| l.params.as_ref()) {
        put_tensor(&mut w, &p.weights)?;
        put_tensor(&mut w, &p.bias)?;
    }
    for d in net.input_shape() {
        put_u32(&mut w, d)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read, T: Scalar>(mut r: R) -> Result<Network<T>> {
    check_magic(&mut r, MODEL_MAGIC)?;
    let count = get_u32(&mut r)?;
    if count == 0 || count > 4096 {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let specs = (0..count).map(|_| get_spec(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(count);
    for spec in specs {
        let params = if spec.has_params() {
            Some(Params { weights: get_tensor(&mut r)?, bias: get_tensor(&mut r)? })
        } else {
            None
        };
        layers.push(Layer { spec, params });
    }
    let input = [get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?];
    Network::from_layers(input, layers).map_err(|e| Error::Format(format!("inconsistent model: {e}")))
}

pub fn model_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_model(&mut buf, net).expect("writing to a Vec cannot fail");
    buf
}

pub fn write_relevance<W: Write, T: Scalar>(mut w: W, map: &RelevanceMap<T>) -> Result<()> {
    w.write_all(RELEVANCE_MAGIC)?;
    put_tensor(&mut w, &map.values)?;
    w.write_all(&(map.start_score as f32).to_le_bytes())?;
    put_u32(&mut w, map.target_class)?;
    w.flush()?;
    Ok(())
}

/// Reads a relevance map; the ledger is not stored and comes back empty.
pub fn read_relevance<R: Read, T: Scalar>(mut r: R) -> Result<RelevanceMap<T>> {
    check_magic(&mut r, RELEVANCE_MAGIC)?;
    let values = get_tensor(&mut r)?;
    let start_score = get_f32(&mut r)? as f64;
    let target_class = get_u32(&mut r)?;
    Ok(RelevanceMap { values, target_class, start_score, ledger: RelevanceLedger::default() })
}

/// Writes `bytes` to a temporary sibling and renames it into place, so
/// readers never observe a partially written file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save_model<T: Scalar>(path: impl AsRef<Path>, net: &Network<T>) -> Result<()> {
    write_atomic(path, &model_bytes(net))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    read_model(io::BufReader::new(fs::File::open(path)?))
}

pub fn save_relevance<T: Scalar>(path: impl AsRef<Path>, map: &RelevanceMap<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_relevance(&mut buf, map)?;
    write_atomic(path, &buf)
}

pub fn load_relevance<T: Scalar>(path: impl AsRef<Path>) -> Result<RelevanceMap<T>> {
    read_relevance(io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_cover_network;

    #[test]
    fn model_header_layout() {
        let net = Network::<f32>::new([2, 2, 1], &[LayerSpec::Flatten, LayerSpec::Dense { units: 2 }, LayerSpec::Softmax])
            .unwrap();
        let bytes = model_bytes(&net);
        let mut expect = b"NNM1".to_vec();
        expect.extend(3u32.to_le_bytes());
        expect.push(3);
        expect.push(4);
        expect.extend(2u32.to_le_bytes());
        expect.push(5);
        // weights 4×2 then bias [2]
        expect.extend(2u32.to_le_bytes());
        expect.extend(4u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        expect.extend([0u8; 32]);
        expect.extend(1u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        expect.extend([0u8; 8]);
        for d in [2u32, 2, 1] {
            expect.extend(d.to_le_bytes());
        }
        assert_eq!(bytes, expect);
    }

    #[test]
    fn cover_model_roundtrip() {
        let mut net = build_cover_network::<f32>(2).unwrap();
        net.init_glorot(7);
        let bytes = model_bytes(&net);
        let back: Network<f32> = read_model(&bytes[..]).unwrap();
        assert_eq!(back, net);
        assert_eq!(model_bytes(&back), bytes);
    }

    #[test]
    fn model_errors() {
        assert!(matches!(read_model::<_, f32>(&b"NNM2"[..]), Err(Error::Format(_))));
        let net = build_cover_network::<f32>(2).unwrap();
        let bytes = model_bytes(&net);
        assert!(matches!(read_model::<_, f32>(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad_tag = bytes.clone();
        bad_tag[8] = 99;
        assert!(read_model::<_, f32>(&bad_tag[..]).is_err());
    }

    #[test]
    fn relevance_layout() {
        let map = RelevanceMap {
            values: Tensor::<f32>::new(vec![1, 2], vec![1.5, -2.0]).unwrap(),
            target_class: 1,
            start_score: 0.25,
            ledger: RelevanceLedger::default(),
        };
        let mut buf = Vec::new();
        write_relevance(&mut buf, &map).unwrap();
        let mut expect = b"RLV1".to_vec();
        for v in [2u32, 1, 2] {
            expect.extend(v.to_le_bytes());
        }
        expect.extend(1.5f32.to_le_bytes());
        expect.extend((-2.0f32).to_le_bytes());
        expect.extend(0.25f32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        assert_eq!(buf, expect);
        let back: RelevanceMap<f32> = read_relevance(&buf[..]).unwrap();
        assert_eq!(back.values, map.values);
        assert_eq!((back.target_class, back.start_score), (1, 0.25));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
