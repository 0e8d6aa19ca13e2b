//! Binary checkpoints.
//!
//! Layout: an 8-byte little-endian manifest length, the JSON manifest, then a
//! blob of little-endian `f64` values. The manifest lists every tensor's name,
//! shape and byte offset into the blob. Network tensors are named
//! `encoder/<i>/{weight,bias}`, `proj/{hidden,out}/{weight,bias}` and
//! `classifier/{weight,bias}`; proxies are `proxy/<class>/<k>`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Dense, NetworkParams};
use crate::proxy::ProxyBank;
use crate::scalar::Scalar;

const FORMAT: &str = "ecl-lab-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub blob_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub network: NetworkParams<F>,
    pub proxies: Option<ProxyBank<F>>,
}

impl<F: Scalar> Checkpoint<F> {
    fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut out: Vec<(String, Vec<usize>, Vec<F>)> = self
            .network
            .tensors()
            .into_iter()
            .map(|(name, values, shape)| (name, shape, values.to_vec()))
            .collect();
        if let Some(bank) = &self.proxies {
            for c in 0..bank.counts().len() {
                for (k, row) in bank.class_proxies(c).rows().into_iter().enumerate() {
                    out.push((format!("proxy/{c}/{k}"), vec![bank.dim()], row.to_vec()));
                }
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let tensors = self.named_tensors();
        let mut entries = Vec::with_capacity(tensors.len());
        let mut blob = Vec::new();
        for (name, shape, values) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: blob.len(),
            });
            for v in values {
                blob.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            blob_bytes: blob.len(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        out.write_all(&blob)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "checkpoint",
            reason,
        };
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(bad(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let mut blob = Vec::new();
        input.read_to_end(&mut blob)?;
        if blob.len() != manifest.blob_bytes {
            return Err(bad(format!(
                "blob has {} bytes, manifest says {}",
                blob.len(),
                manifest.blob_bytes
            )));
        }
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<F>)> = BTreeMap::new();
        for entry in &manifest.tensors {
            let count: usize = entry.shape.iter().product();
            let end = entry.offset + 8 * count;
            if end > blob.len() || entry.offset % 8 != 0 {
                return Err(bad(format!("tensor {} lies outside the blob", entry.name)));
            }
            let values = blob[entry.offset..end]
                .chunks_exact(8)
                .map(|b| F::of(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))))
                .collect();
            tensors.insert(entry.name.clone(), (entry.shape.clone(), values));
        }

        let mut take_dense = |prefix: &str| -> Result<Dense<F>> {
            let (ws, wv) = tensors
                .remove(&format!("{prefix}/weight"))
                .ok_or_else(|| bad(format!("missing {prefix}/weight")))?;
            let (bs, bv) = tensors
                .remove(&format!("{prefix}/bias"))
                .ok_or_else(|| bad(format!("missing {prefix}/bias")))?;
            if ws.len() != 2 || bs.len() != 1 {
                return Err(bad(format!("{prefix}: weight must be 2-D and bias 1-D")));
            }
            Ok(Dense {
                weight: Array2::from_shape_vec((ws[0], ws[1]), wv)
                    .map_err(|e| bad(e.to_string()))?,
                bias: Array1::from_vec(bv),
            })
        };
        let mut encoder = Vec::new();
        for i in 0.. {
            if !manifest
                .tensors
                .iter()
                .any(|t| t.name == format!("encoder/{i}/weight"))
            {
                break;
            }
            encoder.push(take_dense(&format!("encoder/{i}"))?);
        }
        let network = NetworkParams {
            encoder,
            proj_hidden: take_dense("proj/hidden")?,
            proj_out: take_dense("proj/out")?,
            classifier: take_dense("classifier")?,
        };
        network.validate()?;

        let proxies = if tensors.keys().any(|k| k.starts_with("proxy/")) {
            let classes = network.shape().classes;
            let mut counts = vec![0usize; classes];
            let mut rows: Vec<Vec<F>> = Vec::new();
            for (c, count) in counts.iter_mut().enumerate() {
                while let Some((shape, v)) = tensors.remove(&format!("proxy/{c}/{count}")) {
                    if shape.len() != 1 {
                        return Err(bad(format!("proxy/{c}/{count} must be 1-D")));
                    }
                    rows.push(v);
                    *count += 1;
                }
            }
            let d = rows[0].len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(bad("proxies differ in dimension".into()));
            }
            let flat: Vec<F> = rows.into_iter().flatten().collect();
            let vectors = Array2::from_shape_vec((flat.len() / d, d), flat)
                .map_err(|e| bad(e.to_string()))?;
            Some(ProxyBank::from_vectors(&counts, vectors)?)
        } else {
            None
        };
        if let Some(name) = tensors.keys().next() {
            return Err(bad(format!("unexpected tensor {name}")));
        }
        Ok(Self { network, proxies })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkShape;

    #[test]
    fn round_trip_is_bitwise() {
        let net = NetworkParams::<f64>::init(&NetworkShape::with_defaults(3, 4), 5).unwrap();
        let bank = ProxyBank::<f64>::init(&[1, 2, 3, 7], 16, 5).unwrap();
        let ck = Checkpoint {
            network: net,
            proxies: Some(bank),
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::<f64>::read(bytes.as_slice()).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back, ck);
    }

    #[test]
    fn network_only_round_trip() {
        let net = NetworkParams::<f32>::init(&NetworkShape::with_defaults(2, 3), 1).unwrap();
        let ck = Checkpoint {
            network: net,
            proxies: None,
        };
        let back = Checkpoint::<f32>::read(ck.to_bytes().unwrap().as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let net = NetworkParams::<f64>::init(&NetworkShape::with_defaults(2, 3), 1).unwrap();
        let mut bytes = Checkpoint {
            network: net,
            proxies: None,
        }
        .to_bytes()
        .unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(Checkpoint::<f64>::read(bytes.as_slice()).is_err());
    }
}
