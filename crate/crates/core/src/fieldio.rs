//! Binary persistence for vertex and edge fields.
//!
//! Layout: a 16-byte header — magic `RCMF`, `u8` kind (0 vertex, 1 edge),
//! `u8` dimension, `u16` reserved (zero), `u32` side length, `u32` channel
//! count — followed by little-endian `f64` values in canonical index order,
//! one contiguous block per channel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{EdgeField, TorusLattice, VertexField};

pub const MAGIC: &[u8; 4] = b"RCMF";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FieldKind {
    Vertex = 0,
    Edge = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Vertex(VertexField),
    Edge(EdgeField),
}

impl Field {
    pub fn into_vertex(self) -> Result<VertexField> {
        match self {
            Field::Vertex(v) => Ok(v),
            Field::Edge(_) => Err(Error::Format("expected a vertex field".into())),
        }
    }

    pub fn into_edge(self) -> Result<EdgeField> {
        match self {
            Field::Edge(e) => Ok(e),
            Field::Vertex(_) => Err(Error::Format("expected an edge field".into())),
        }
    }
}

fn header(kind: FieldKind, lat: &TorusLattice, channels: usize) -> Result<[u8; 16]> {
    let d = u8::try_from(lat.dim()).map_err(|_| Error::Format("dimension exceeds u8".into()))?;
    let side = u32::try_from(lat.side()).map_err(|_| Error::Format("side exceeds u32".into()))?;
    let ch = u32::try_from(channels).map_err(|_| Error::Format("channels exceed u32".into()))?;
    let mut h = [0u8; 16];
    h[0..4].copy_from_slice(MAGIC);
    h[4] = kind as u8;
    h[5] = d;
    h[8..12].copy_from_slice(&side.to_le_bytes());
    h[12..16].copy_from_slice(&ch.to_le_bytes());
    Ok(h)
}

pub fn encode_vertex(f: &VertexField) -> Result<Vec<u8>> {
    encode(FieldKind::Vertex, f.lattice(), f.channels(), f.values())
}

pub fn encode_edge(f: &EdgeField) -> Result<Vec<u8>> {
    encode(FieldKind::Edge, f.lattice(), f.channels(), f.values())
}

fn encode(kind: FieldKind, lat: &TorusLattice, channels: usize, values: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * values.len());
    out.extend_from_slice(&header(kind, lat, channels)?);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::Format("missing RCMF header".into()));
    }
    let d = bytes[5] as usize;
    let side = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let channels = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let lat = TorusLattice::new(d, side).map_err(|e| Error::Format(e.to_string()))?;
    let body = &bytes[16..];
    if !body.len().is_multiple_of(8) {
        return Err(Error::Format(
            "payload is not a whole number of f64 values".into(),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    match bytes[4] {
        0 => VertexField::from_values(&lat, channels, values)
            .map(Field::Vertex)
            .map_err(|e| Error::Format(e.to_string())),
        1 => EdgeField::from_values(&lat, channels, values)
            .map(Field::Edge)
            .map_err(|e| Error::Format(e.to_string())),
        k => Err(Error::Format(format!("unknown field kind {k}"))),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_vertex_field(path: &Path, f: &VertexField) -> Result<()> {
    write_bytes(path, &encode_vertex(f)?)
}

pub fn write_edge_field(path: &Path, f: &EdgeField) -> Result<()> {
    write_bytes(path, &encode_edge(f)?)
}

pub fn read_field(path: &Path) -> Result<Field> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let lat = TorusLattice::new(2, 3).unwrap();
        let f = EdgeField::constant(&lat, 1.5);
        let bytes = encode_edge(&f).unwrap();
        assert_eq!(&bytes[0..4], b"RCMF");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 2);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 8 * 18);
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"nope").is_err());
        let lat = TorusLattice::new(1, 4).unwrap();
        let mut bytes = encode_vertex(&VertexField::zeros(&lat, 1)).unwrap();
        bytes.pop();
        assert!(decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn vertex_fields_round_trip(d in 1usize..4, side in 2usize..5, ch in 1usize..3,
                                    vals in proptest::collection::vec(-1e6f64..1e6, 1..4)) {
            let lat = TorusLattice::new(d, side).unwrap();
            let n = lat.num_vertices() * ch;
            let values: Vec<f64> = (0..n).map(|k| vals[k % vals.len()] * k as f64).collect();
            let f = VertexField::from_values(&lat, ch, values).unwrap();
            let back = decode(&encode_vertex(&f).unwrap()).unwrap().into_vertex().unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
