//! Plain-text snapshots of finite-width networks.
//!
//! Line 1 is a JSON header. Each parameter block follows as a line
//! `<name> <rows> <cols>` and then `rows` lines of `cols` whitespace-separated
//! numbers. Blocks appear in the order `a`, `b`, `W`, `z`. Numbers are written
//! in shortest round-trip exponent form, so decoding restores every bit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::finite_model::{FiniteNet, Parameterization};

pub const FORMAT: &str = "p3l-checkpoint-v1";

/// Upper bound on the entries of one block accepted by the decoder.
const MAX_BLOCK_ENTRIES: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub m1: usize,
    pub m2: usize,
    pub d: usize,
    pub alpha: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub sigma1: Activation,
    pub sigma2: Activation,
    pub seed: u64,
    pub step: usize,
}

pub fn encode(net: &FiniteNet, seed: u64, step: usize) -> String {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        m1: net.m1,
        m2: net.m2,
        d: net.d(),
        alpha: net.param.alpha(),
        beta_a: net.beta_a,
        beta_b: net.beta_b,
        sigma1: net.sigma1,
        sigma2: net.sigma2,
        seed,
        step,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    write_block(&mut out, "a", &col(&net.a));
    write_block(&mut out, "b", &col(&net.b));
    write_block(&mut out, "W", &net.w);
    write_block(&mut out, "z", &net.z);
    out
}

fn write_block(out: &mut String, name: &str, m: &DMatrix<f64>) {
    use std::fmt::Write;
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn decode(text: &str) -> Result<(CheckpointHeader, FiniteNet)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty checkpoint".into(),
    })?;
    let header: CheckpointHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.format != FORMAT {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported format {:?}", header.format),
        });
    }
    if header.m1 == 0 || header.m2 == 0 || header.d == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "widths and dimension must be positive".into(),
        });
    }
    let param = Parameterization::from_alpha(header.alpha).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if !(header.beta_a >= 0.0
        && header.beta_b >= 0.0
        && header.beta_a.is_finite()
        && header.beta_b.is_finite())
    {
        return Err(Error::Parse {
            line: 1,
            msg: "learning rates must be finite and >= 0".into(),
        });
    }
    let a = read_block(&mut lines, "a", header.m2, 1)?;
    let b = read_block(&mut lines, "b", header.m2, 1)?;
    let w = read_block(&mut lines, "W", header.m2, header.m1)?;
    let z = read_block(&mut lines, "z", header.m1, header.d)?;
    if let Some((line, rest)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Parse {
            line,
            msg: format!("trailing content {:?}", truncate(rest)),
        });
    }
    let net = FiniteNet {
        m1: header.m1,
        m2: header.m2,
        param,
        a: a.column(0).into_owned(),
        b: b.column(0).into_owned(),
        w,
        z,
        beta_a: header.beta_a,
        beta_b: header.beta_b,
        sigma1: header.sigma1,
        sigma2: header.sigma2,
    };
    Ok((header, net))
}

fn truncate(s: &str) -> String {
    s.chars().take(40).collect()
}

fn read_block<'a, I>(lines: &mut I, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let (line, head) = lines.next().ok_or_else(|| Error::Parse {
        line: 0,
        msg: format!("missing block {name}"),
    })?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    let expected = [name.to_string(), rows.to_string(), cols.to_string()];
    if parts.len() != 3 || parts.iter().zip(&expected).any(|(p, e)| p != e) {
        return Err(Error::Parse {
            line,
            msg: format!(
                "expected block header `{name} {rows} {cols}`, found {:?}",
                truncate(head)
            ),
        });
    }
    let total = rows
        .checked_mul(cols)
        .filter(|&t| t <= MAX_BLOCK_ENTRIES)
        .ok_or(Error::Parse {
            line,
            msg: format!("block {name} too large"),
        })?;
    let mut data = Vec::with_capacity(total.min(1 << 16));
    for _ in 0..rows {
        let (line, row) = lines.next().ok_or(Error::Parse {
            line,
            msg: format!("block {name} truncated"),
        })?;
        let mut count = 0;
        for tok in row.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("not a number: {:?}", truncate(tok)),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: "non-finite parameter".into(),
                });
            }
            data.push(v);
            count += 1;
        }
        if count != cols {
            return Err(Error::Parse {
                line,
                msg: format!("expected {cols} values, found {count}"),
            });
        }
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_model::{init, InitSpec, NetShape};

    fn net() -> FiniteNet {
        let shape = NetShape {
            m1: 5,
            m2: 3,
            d: 2,
            alpha: 0.5,
            beta_a: 0.25,
            beta_b: 0.5,
            sigma1: Activation::Relu,
            sigma2: Activation::Tanh,
        };
        init(shape, 42, InitSpec::default()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut n = net();
        n.b[1] = 1e-300;
        n.w[(2, 4)] = -0.1 + 0.2;
        let text = encode(&n, 42, 17);
        let (h, back) = decode(&text).unwrap();
        assert_eq!((h.seed, h.step, h.m1, h.m2, h.d), (42, 17, 5, 3, 2));
        assert_eq!(back.a, n.a);
        assert_eq!(back.b, n.b);
        assert_eq!(back.w, n.w);
        assert_eq!(back.z, n.z);
        assert_eq!(back.param, n.param);
        assert_eq!(encode(&back, 42, 17), text);
    }

    #[test]
    fn corrupted_inputs_rejected() {
        let text = encode(&net(), 1, 0);
        let lines: Vec<&str> = text.lines().collect();
        assert!(decode("").is_err());
        assert!(decode("{}").is_err());
        assert!(decode(&lines[..lines.len() - 1].join("\n")).is_err());
        assert!(decode(&text.replacen("W 3 5", "W 3 6", 1)).is_err());
        assert!(decode(&format!("{text}extra\n")).is_err());
        let bad_num = text.replacen("\na 3 1\n", "\na 3 1\nnan\n", 1);
        assert!(decode(&bad_num).is_err());
        let huge = text.replacen("\"m1\":5", "\"m1\":18446744073709551615", 1);
        assert!(decode(&huge).is_err());
    }
}
