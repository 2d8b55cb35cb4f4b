//! Minimal NPY v1.0 support: little-endian `f4`/`f8`, C order, two dimensions.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

#[derive(Debug, PartialEq)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

pub fn is_npy(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

pub fn read_npy<R: Read>(mut r: R) -> Result<Matrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::MalformedHeader(format!("read failed: {e}")))?;
    parse_npy(&bytes)
}

pub fn parse_npy(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 10 || !is_npy(bytes) {
        return Err(Error::MalformedHeader("missing NPY magic bytes".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::UnsupportedFormat(format!(
            "NPY version {major}.{minor}, only 1.0 is supported"
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    let raw = bytes
        .get(10..data_start)
        .ok_or_else(|| Error::MalformedHeader("header runs past end of file".into()))?;
    let text = std::str::from_utf8(raw)
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let header = parse_header(text)?;
    if header.shape.len() != 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{}-D array, only 2-D is supported",
            header.shape.len()
        )));
    }
    let (rows, cols) = (header.shape[0], header.shape[1]);
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
    let body = &bytes[data_start..];
    let need = count * header.dtype.size();
    if body.len() != need {
        return Err(Error::DataLength {
            rows,
            cols,
            len: body.len() / header.dtype.size(),
        });
    }
    let data: Vec<f64> = match header.dtype {
        Dtype::F8 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        Dtype::F4 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
    };
    Matrix::from_row_major(rows, cols, data)
}

/// Writes `<f8` in C order.
pub fn write_npy<W: Write>(m: &Matrix, mut w: W) -> std::io::Result<()> {
    let (rows, cols) = m.shape();
    let mut header =
        format!("{{'descr': '<f8', 'fortran_order': False, 'shape': ({rows}, {cols}), }}");
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((ALIGN - unpadded % ALIGN) % ALIGN));
    header.push('\n');
    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&(header.len() as u16).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(rows * cols * 8);
    for v in m.to_row_major() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn to_npy_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::new();
    write_npy(m, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Python literal subset used by NPY headers: a dict of strings, booleans
/// and integer tuples.
#[derive(Debug, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(bad(format!(
                "expected `{}` at byte {}",
                c as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        let q = self
            .peek()
            .filter(|&c| c == b'\'' || c == b'"')
            .ok_or_else(|| bad("expected a string"))?;
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != q {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(bad("unterminated string"));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len()
            && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_')
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("")
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'') | Some(b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                    let w = self.word();
                    let w = w.strip_suffix('L').unwrap_or(w);
                    dims.push(w.parse().map_err(|_| bad(format!("bad dimension `{w}`")))?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err(bad("expected `,` or `)` in shape")),
                    }
                }
                Ok(Value::Tuple(dims))
            }
            _ => match self.word() {
                "True" => Ok(Value::Bool(true)),
                "False" => Ok(Value::Bool(false)),
                w => Err(bad(format!("unexpected token `{w}`"))),
            },
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

fn parse_header(text: &str) -> Result<Header> {
    let mut c = Cursor {
        s: text.as_bytes(),
        pos: 0,
    };
    c.expect(b'{')?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    loop {
        if c.peek() == Some(b'}') {
            c.pos += 1;
            break;
        }
        let key = c.string()?;
        c.expect(b':')?;
        let v = c.value()?;
        match (key.as_str(), v) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            (k @ ("descr" | "fortran_order" | "shape"), _) => {
                return Err(bad(format!("wrong type for `{k}`")))
            }
            (k, _) => return Err(bad(format!("unexpected key `{k}`"))),
        }
        match c.peek() {
            Some(b',') => c.pos += 1,
            Some(b'}') => {}
            _ => return Err(bad("expected `,` or `}`")),
        }
    }
    if c.peek().is_some() {
        return Err(bad("trailing bytes after header dict"));
    }
    let descr = descr.ok_or_else(|| bad("missing `descr`"))?;
    let fortran = fortran.ok_or_else(|| bad("missing `fortran_order`"))?;
    let shape = shape.ok_or_else(|| bad("missing `shape`"))?;
    let dtype = match descr.as_str() {
        "<f8" => Dtype::F8,
        "<f4" => Dtype::F4,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "dtype `{other}`, expected <f4 or <f8"
            )))
        }
    };
    if fortran {
        return Err(Error::UnsupportedFormat("fortran_order arrays".into()));
    }
    Ok(Header { dtype, shape })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn file_with(header: &str, version: (u8, u8), body: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[version.0, version.1]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(body);
        out
    }

    fn f8_body(values: &[f64]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn header_is_aligned() {
        let bytes = to_npy_bytes(&Matrix::zeros(3, 7).unwrap());
        let hl = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hl) % 64, 0);
        assert_eq!(bytes[10 + hl - 1], b'\n');
    }

    #[test]
    fn numpy_written_header_parses() {
        // Byte-for-byte what numpy.save emits for a (2, 3) float64 array.
        let h = "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }                                                          \n";
        let bytes = file_with(h, (1, 0), &f8_body(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let m = parse_npy(&bytes).unwrap();
        assert_eq!(m.to_rows(), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
    }

    #[test]
    fn f4_is_widened() {
        let body: Vec<u8> = [0.5f32, -1.25, 3.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bytes = file_with(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2)}\n",
            (1, 0),
            &body,
        );
        assert_eq!(
            parse_npy(&bytes).unwrap().to_row_major(),
            vec![0.5, -1.25, 3.0, 4.0]
        );
    }

    #[test]
    fn rejections() {
        let ok_body = f8_body(&[0.0; 8]);
        let unsupported = [
            file_with(
                "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 2, 2), }\n",
                (1, 0),
                &ok_body,
            ),
            file_with(
                "{'descr': '<f8', 'fortran_order': False, 'shape': (8,), }\n",
                (1, 0),
                &ok_body,
            ),
            file_with(
                "{'descr': '<f8', 'fortran_order': True, 'shape': (2, 4), }\n",
                (1, 0),
                &ok_body,
            ),
            file_with(
                "{'descr': '<i8', 'fortran_order': False, 'shape': (2, 4), }\n",
                (1, 0),
                &ok_body,
            ),
            file_with(
                "{'descr': '>f8', 'fortran_order': False, 'shape': (2, 4), }\n",
                (1, 0),
                &ok_body,
            ),
            file_with(
                "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 4), }\n",
                (2, 0),
                &ok_body,
            ),
        ];
        for b in &unsupported {
            assert!(
                matches!(parse_npy(b), Err(Error::UnsupportedFormat(_))),
                "{:?}",
                parse_npy(b)
            );
        }
        let malformed = [
            b"NUMPY not really".to_vec(),
            file_with("{'descr': '<f8', 'shape': (2, 4), }\n", (1, 0), &ok_body),
            file_with(
                "{'descr': '<f8' 'fortran_order': False, 'shape': (2, 4)}\n",
                (1, 0),
                &ok_body,
            ),
            file_with(
                "{'descr': '<f8', 'fortran_order': False, 'shape': (2, x), }\n",
                (1, 0),
                &ok_body,
            ),
            file_with(
                "{'descr': '<f8', 'fortran_order': maybe, 'shape': (2, 4), }\n",
                (1, 0),
                &ok_body,
            ),
            file_with(
                "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 4), 'extra': 1}\n",
                (1, 0),
                &ok_body,
            ),
            MAGIC.iter().copied().chain([1, 0, 200, 0]).collect(),
        ];
        for b in &malformed {
            assert!(
                matches!(parse_npy(b), Err(Error::MalformedHeader(_))),
                "{:?}",
                parse_npy(b)
            );
        }
        let short = file_with(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (3, 4), }\n",
            (1, 0),
            &ok_body,
        );
        assert!(matches!(parse_npy(&short), Err(Error::DataLength { .. })));
        let nan = file_with(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 2), }\n",
            (1, 0),
            &f8_body(&[1.0, f64::NAN]),
        );
        assert!(matches!(
            parse_npy(&nan),
            Err(Error::NonFiniteValue { row: 0, col: 1 })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut r = crate::rng::seeded(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| crate::rng::standard_normal(&mut r) * 1e3).unwrap();
            let back = parse_npy(&to_npy_bytes(&m)).unwrap();
            let a: Vec<u64> = m.to_row_major().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.to_row_major().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
