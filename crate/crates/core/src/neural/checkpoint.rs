//! `MODL` checkpoints and JSON-lines training histories.
//!
//! Layout: `MODL` | u32 version | u32 spec length | spec JSON |
//! u64 parameter count | f64 parameters | u64 statistic count | f64 statistics.
//! Integers and floats are little-endian.

use std::io::{BufRead, BufReader, Read, Write};

use super::network::Network;
use super::spec::NetworkSpec;
use super::train::EpochRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODL_MAGIC: &[u8; 4] = b"MODL";
pub const MODL_VERSION: u32 = 1;

pub fn save_model<T: Scalar, W: Write>(net: &Network<T>, mut sink: W) -> Result<()> {
    let spec = serde_json::to_vec(net.spec())?;
    sink.write_all(MODL_MAGIC)?;
    sink.write_all(&MODL_VERSION.to_le_bytes())?;
    sink.write_all(&(spec.len() as u32).to_le_bytes())?;
    sink.write_all(&spec)?;
    for blob in [net.params(), net.running_stats()] {
        sink.write_all(&(blob.len() as u64).to_le_bytes())?;
        for v in blob {
            sink.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    sink.flush()?;
    Ok(())
}

fn read_exact<R: Read>(src: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0; n];
    src.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated in {what}")))?;
    Ok(buf)
}

fn read_u64<R: Read>(src: &mut R, what: &str) -> Result<u64> {
    let b = read_exact(src, 8, what)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn read_blob<T: Scalar, R: Read>(src: &mut R, what: &str) -> Result<Vec<T>> {
    let n = read_u64(src, what)? as usize;
    let bytes = read_exact(src, n.checked_mul(8).ok_or_else(|| Error::Format("blob too large".into()))?, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect())
}

pub fn load_model<T: Scalar, R: Read>(mut source: R) -> Result<Network<T>> {
    let magic = read_exact(&mut source, 4, "magic")?;
    if magic != MODL_MAGIC {
        return Err(Error::Format("not a MODL checkpoint".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut source, 4, "version")?.try_into().expect("4 bytes"));
    if version != MODL_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(read_exact(&mut source, 4, "spec length")?.try_into().expect("4 bytes"));
    let spec: NetworkSpec = serde_json::from_slice(&read_exact(&mut source, len as usize, "spec")?)?;
    let params = read_blob(&mut source, "parameters")?;
    let running = read_blob(&mut source, "running statistics")?;
    let mut rest = Vec::new();
    source.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", rest.len())));
    }
    Network::from_parts(spec, params, running)
}

pub fn write_history<W: Write>(history: &[EpochRecord], mut sink: W) -> Result<()> {
    for rec in history {
        serde_json::to_writer(&mut sink, rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_history<R: Read>(source: R) -> Result<Vec<EpochRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(source).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::spec::{build_paper_architecture, Architecture};
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let spec = build_paper_architecture(Architecture::AmazonSketch, 5, 3).scaled(1.0 / 64.0).with_seed(7);
        let net = Network::<f64>::new(spec).unwrap();
        let mut buf = Vec::new();
        save_model(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MODL");
        let back: Network<f64> = load_model(&buf[..]).unwrap();
        assert_eq!(back, net);
        assert!(load_model::<f64, _>(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(load_model::<f64, _>(&extra[..]).is_err());
    }

    #[test]
    fn history_roundtrip() {
        let h = vec![
            EpochRecord { epoch: 0, loss: 0.7, val_loss: None },
            EpochRecord { epoch: 1, loss: 0.5, val_loss: Some(0.6) },
        ];
        let mut buf = Vec::new();
        write_history(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"epoch":0,"loss":0.7}"#);
        assert_eq!(read_history(&buf[..]).unwrap(), h);
    }
}
