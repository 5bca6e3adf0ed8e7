//! Parameter checkpoints.
//!
//! Text format, one slot per two lines:
//!
//! ```text
//! AFFORDANCE-CKPT v1
//! slots <count>
//! slot <name> <dim>x<dim>...
//! <base64 of little-endian f64 values>
//! ...
//! checksum <sha256 hex of every preceding byte>
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use sha2::{Digest, Sha256};

use super::dense::DenseNet;
use crate::error::{Error, Result};

const MAGIC: &str = "AFFORDANCE-CKPT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    slots: Vec<Slot>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Shape(format!("invalid slot name {name:?}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "slot {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Shape(format!("duplicate slot {name}")));
        }
        self.slots.push(Slot { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Adds `prefix.<layer>.weight` and `prefix.<layer>.bias` for every layer.
    pub fn push_net(&mut self, prefix: &str, net: &DenseNet) -> Result<()> {
        for (i, layer) in net.layers().iter().enumerate() {
            self.push(
                format!("{prefix}.{i}.weight"),
                vec![layer.out_dim(), layer.in_dim()],
                layer.weights().to_vec(),
            )?;
            self.push(format!("{prefix}.{i}.bias"), vec![layer.out_dim()], layer.bias().to_vec())?;
        }
        Ok(())
    }

    /// Overwrites the parameters of an already-shaped network.
    pub fn load_net(&self, prefix: &str, net: &mut DenseNet) -> Result<()> {
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            for (suffix, shape, target) in [
                ("weight", vec![layer.out_dim(), layer.in_dim()], 0),
                ("bias", vec![layer.out_dim()], 1),
            ] {
                let name = format!("{prefix}.{i}.{suffix}");
                let slot = self
                    .get(&name)
                    .ok_or_else(|| Error::Shape(format!("checkpoint lacks slot {name}")))?;
                if slot.shape != shape {
                    return Err(Error::Shape(format!(
                        "slot {name} has shape {:?}, network expects {shape:?}",
                        slot.shape
                    )));
                }
                let dst = if target == 0 {
                    layer.weights_mut()
                } else {
                    layer.bias_mut()
                };
                dst.copy_from_slice(&slot.data);
            }
        }
        Ok(())
    }

    fn body(&self) -> String {
        let mut out = format!("{MAGIC}\nslots {}\n", self.slots.len());
        for slot in &self.slots {
            let dims: Vec<String> = slot.shape.iter().map(|d| d.to_string()).collect();
            let bytes: Vec<u8> = slot.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            out.push_str(&format!("slot {} {}\n", slot.name, dims.join("x")));
            out.push_str(&STANDARD.encode(bytes));
            out.push('\n');
        }
        out
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.body().as_bytes()))
    }

    pub fn to_text(&self) -> String {
        let mut out = self.body();
        out.push_str(&format!("checksum {}\n", self.checksum()));
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::format(origin, line, msg);
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&MAGIC) {
            return Err(err(1, format!("expected header {MAGIC:?}")));
        }
        let count: usize = lines
            .get(1)
            .and_then(|l| l.strip_prefix("slots "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(2, "missing slot count".into()))?;
        let mut ckpt = Checkpoint::new();
        for s in 0..count {
            let header_line = 3 + 2 * s;
            let header = lines
                .get(header_line - 1)
                .ok_or_else(|| err(header_line, "truncated checkpoint".into()))?;
            let mut parts = header.split(' ');
            let (Some("slot"), Some(name), Some(dims), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err(header_line, "malformed slot header".into()));
            };
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(header_line, format!("bad shape: {e}")))?;
            let payload = lines
                .get(header_line)
                .ok_or_else(|| err(header_line + 1, "missing slot payload".into()))?;
            let bytes = STANDARD
                .decode(payload)
                .map_err(|e| err(header_line + 1, format!("bad base64: {e}")))?;
            if bytes.len() % 8 != 0 {
                return Err(err(header_line + 1, "payload is not a whole number of f64".into()));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            ckpt.push(name, shape, data)
                .map_err(|e| err(header_line, e.to_string()))?;
        }
        let line = 3 + 2 * count;
        let stored = lines
            .get(line - 1)
            .and_then(|l| l.strip_prefix("checksum "))
            .ok_or_else(|| err(line, "missing checksum".into()))?;
        let found = ckpt.checksum();
        if stored != found {
            return Err(Error::Checksum {
                path: origin.to_path_buf(),
                expected: stored.to_string(),
                found,
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::Activation;
    use crate::rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut r = rng::seeded(3);
        let net = DenseNet::new(&[5, 7, 2], Activation::Relu, Activation::Identity, &mut r);
        let mut ckpt = Checkpoint::new();
        ckpt.push_net("trunk", &net).unwrap();
        ckpt.push("odd", vec![3], vec![f64::MIN_POSITIVE, -0.0, 1e308]).unwrap();
        let text = ckpt.to_text();
        let back = Checkpoint::from_text(&text, Path::new("x")).unwrap();
        assert_eq!(back.to_text(), text);
        let odd = back.get("odd").unwrap();
        assert_eq!(odd.data[1].to_bits(), (-0.0f64).to_bits());

        let mut other = DenseNet::new(&[5, 7, 2], Activation::Relu, Activation::Identity, &mut r);
        assert_ne!(other, net);
        back.load_net("trunk", &mut other).unwrap();
        assert_eq!(other, net);
    }

    #[test]
    fn detects_tampering_and_shape_errors() {
        let mut ckpt = Checkpoint::new();
        ckpt.push("a", vec![2], vec![1.0, 2.0]).unwrap();
        let text = ckpt.to_text();
        let other = {
            let mut c = Checkpoint::new();
            c.push("a", vec![2], vec![1.0, 3.0]).unwrap();
            c.to_text()
        };
        let payload_line = other.lines().nth(3).unwrap();
        let tampered: String = text
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 3 { payload_line } else { l })
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(
            Checkpoint::from_text(&tampered, Path::new("x")),
            Err(Error::Checksum { .. })
        ));
        assert!(ckpt.push("a", vec![1], vec![0.0]).is_err());
        assert!(ckpt.push("b", vec![3], vec![0.0]).is_err());

        let mut r = rng::seeded(0);
        let mut net = DenseNet::new(&[3, 2], Activation::Relu, Activation::Identity, &mut r);
        assert!(ckpt.load_net("missing", &mut net).is_err());
    }
}
