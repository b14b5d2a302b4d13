//! Store import/export.
//!
//! Two encodings carry the same content: the header `{C, d, B, gamma}` and,
//! per class, the optional prototype plus buffered embeddings oldest first as
//! row-major `f64` coordinates.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   "SPHOOD01"
//! num_classes  u32
//! dim          u32
//! capacity     u32
//! ema_factor   f64
//! per class, in class order:
//!   count          u32
//!   has_prototype  u8      0 or 1
//!   prototype      dim x f64          (present iff has_prototype == 1)
//!   embeddings     count x dim x f64  (row-major, oldest first)
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::IdStore;
use crate::error::{Error, Result};
use crate::sphere::UnitVector;

const MAGIC: &[u8; 8] = b"SPHOOD01";

/// JSON shape of a store dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreFile {
    pub num_classes: usize,
    pub dim: usize,
    pub capacity: usize,
    pub ema_factor: f64,
    pub classes: Vec<ClassRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub prototype: Option<Vec<f64>>,
    pub count: usize,
    /// `count * dim` coordinates, row-major, oldest first.
    pub embeddings: Vec<f64>,
}

impl StoreFile {
    pub fn from_store(store: &IdStore) -> Self {
        let classes = (0..store.num_classes())
            .map(|c| ClassRecord {
                prototype: store.prototype(c).ok().map(|p| p.as_slice().to_vec()),
                count: store.len(c),
                embeddings: store.embeddings(c).flatten().copied().collect(),
            })
            .collect();
        StoreFile {
            num_classes: store.num_classes(),
            dim: store.dim(),
            capacity: store.capacity(),
            ema_factor: store.ema_factor(),
            classes,
        }
    }

    pub fn into_store(self) -> Result<IdStore> {
        let mut store = IdStore::new(self.num_classes, self.dim, self.capacity, self.ema_factor)?;
        if self.classes.len() != self.num_classes {
            return Err(Error::Format(format!(
                "header declares {} classes, file holds {}",
                self.num_classes,
                self.classes.len()
            )));
        }
        for (c, rec) in self.classes.into_iter().enumerate() {
            if rec.count > self.capacity {
                return Err(Error::Format(format!(
                    "class {c} holds {} embeddings, capacity is {}",
                    rec.count, self.capacity
                )));
            }
            if rec.embeddings.len() != rec.count * self.dim {
                return Err(Error::Format(format!(
                    "class {c}: expected {} coordinates, found {}",
                    rec.count * self.dim,
                    rec.embeddings.len()
                )));
            }
            for row in rec.embeddings.chunks_exact(self.dim) {
                store.insert_coords(c, row)?;
            }
            if let Some(p) = rec.prototype {
                if p.len() != self.dim {
                    return Err(Error::Format(format!("class {c}: prototype has wrong dimension")));
                }
                store.set_prototype(c, UnitVector::new(p)?)?;
            }
        }
        Ok(store)
    }
}

pub fn write_json<W: Write>(store: &IdStore, writer: W) -> Result<()> {
    serde_json::to_writer(writer, &StoreFile::from_store(store))?;
    Ok(())
}

pub fn read_json<R: Read>(reader: R) -> Result<IdStore> {
    let file: StoreFile = serde_json::from_reader(reader)?;
    file.into_store()
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{what} {x} does not fit in u32")))
}

pub fn write_binary<W: Write>(store: &IdStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&to_u32(store.num_classes(), "num_classes")?.to_le_bytes())?;
    w.write_all(&to_u32(store.dim(), "dim")?.to_le_bytes())?;
    w.write_all(&to_u32(store.capacity(), "capacity")?.to_le_bytes())?;
    w.write_all(&store.ema_factor().to_le_bytes())?;
    for c in 0..store.num_classes() {
        w.write_all(&to_u32(store.len(c), "count")?.to_le_bytes())?;
        match store.prototype(c) {
            Ok(p) => {
                w.write_all(&[1u8])?;
                for x in p.as_slice() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Err(_) => w.write_all(&[0u8])?,
        }
        for row in store.embeddings(c) {
            for x in row {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated store file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.exact()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.exact()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_binary<R: Read>(reader: R) -> Result<IdStore> {
    let mut cur = Cursor { inner: reader };
    if &cur.exact::<8>()? != MAGIC {
        return Err(Error::Format("bad magic; not a store file".into()));
    }
    let num_classes = cur.u32()?;
    let dim = cur.u32()?;
    let capacity = cur.u32()?;
    let ema_factor = cur.f64()?;
    let mut classes = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let count = cur.u32()?;
        if count > capacity {
            return Err(Error::Format(format!(
                "class {c} holds {count} embeddings, capacity is {capacity}"
            )));
        }
        let prototype = match cur.exact::<1>()?[0] {
            0 => None,
            1 => Some(cur.f64s(dim)?),
            flag => return Err(Error::Format(format!("class {c}: bad prototype flag {flag}"))),
        };
        let embeddings = cur.f64s(count * dim)?;
        classes.push(ClassRecord {
            prototype,
            count,
            embeddings,
        });
    }
    StoreFile {
        num_classes,
        dim,
        capacity,
        ema_factor,
        classes,
    }
    .into_store()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> IdStore {
        let mut s = IdStore::new(3, 2, 2, 0.9).unwrap();
        s.insert(0, &UnitVector::basis(2, 0)).unwrap();
        s.insert(0, &UnitVector::basis(2, 1)).unwrap();
        s.insert(0, &UnitVector::basis(2, 0).neg()).unwrap();
        s.insert(1, &UnitVector::basis(2, 1)).unwrap();
        s.update_prototype(1, &[0.0, 3.0]).unwrap();
        s
    }

    #[test]
    fn binary_header_layout() {
        let mut bytes = Vec::new();
        write_binary(&fixture(), &mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"SPHOOD01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 0.9);
        // class 0: 2 rows, no prototype; class 1: 1 row + prototype; class 2 empty
        let expected = 28 + (4 + 1 + 2 * 2 * 8) + (4 + 1 + 2 * 8 + 2 * 8) + (4 + 1);
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn binary_and_json_restore_eviction_order() {
        let store = fixture();
        let mut bytes = Vec::new();
        write_binary(&store, &mut bytes).unwrap();
        let back = read_binary(bytes.as_slice()).unwrap();
        let rows: Vec<_> = back.embeddings(0).collect();
        assert_eq!(rows, vec![&[0.0, 1.0][..], &[-1.0, 0.0][..]]);
        assert_eq!(back.prototype(1).unwrap().as_slice(), &[0.0, 1.0]);
        assert!(back.prototype(0).is_err());

        let mut json = Vec::new();
        write_json(&store, &mut json).unwrap();
        let back_json = read_json(json.as_slice()).unwrap();
        assert_eq!(StoreFile::from_store(&back_json), StoreFile::from_store(&store));
    }

    #[test]
    fn rejects_corrupt_files() {
        assert!(matches!(read_binary(&b"NOTSTORE"[..]), Err(Error::Format(_))));
        let mut bytes = Vec::new();
        write_binary(&fixture(), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_binary(bytes.as_slice()), Err(Error::Format(_))));

        let bad = r#"{"num_classes":2,"dim":2,"capacity":1,"ema_factor":0.5,
            "classes":[{"prototype":null,"count":1,"embeddings":[2.0,0.0]},
                       {"prototype":null,"count":0,"embeddings":[]}]}"#;
        assert!(matches!(read_json(bad.as_bytes()), Err(Error::NotUnit { .. })));
    }
}
